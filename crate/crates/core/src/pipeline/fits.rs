//! Minimal FITS reader: primary-HDU headers and simple image data.
//!
//! Headers are sequences of 2880-byte blocks holding 80-character ASCII
//! cards. A value card carries the keyword in columns 1-8 and the value
//! indicator "= " in columns 9-10; parsing stops at the END card and
//! ignores everything after the header unless image data is requested.

use std::path::Path;

use crate::error::{Error, Result};

pub const BLOCK_LEN: usize = 2880;
pub const CARD_LEN: usize = 80;
pub const CARDS_PER_BLOCK: usize = BLOCK_LEN / CARD_LEN;

#[derive(Debug, Clone, PartialEq)]
pub enum FitsValue {
    Logical(bool),
    Integer(i64),
    Real(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitsCard {
    pub keyword: String,
    pub value: FitsValue,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitsHeader {
    cards: Vec<FitsCard>,
    /// Number of 2880-byte blocks the header occupies.
    pub header_blocks: usize,
}

impl FitsHeader {
    pub fn cards(&self) -> &[FitsCard] {
        &self.cards
    }

    /// Last occurrence wins, matching the usual override semantics.
    pub fn get(&self, keyword: &str) -> Option<&FitsValue> {
        self.cards
            .iter()
            .rev()
            .find(|card| card.keyword == keyword)
            .map(|card| &card.value)
    }

    pub fn integer(&self, keyword: &str) -> Option<i64> {
        match self.get(keyword)? {
            FitsValue::Integer(v) => Some(*v),
            _ => None,
        }
    }

    pub fn real(&self, keyword: &str) -> Option<f64> {
        match self.get(keyword)? {
            FitsValue::Integer(v) => Some(*v as f64),
            FitsValue::Real(v) => Some(*v),
            _ => None,
        }
    }

    pub fn logical(&self, keyword: &str) -> Option<bool> {
        match self.get(keyword)? {
            FitsValue::Logical(v) => Some(*v),
            _ => None,
        }
    }
}

pub fn parse_fits_header(path: impl AsRef<Path>) -> Result<FitsHeader> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_header_bytes(&bytes)
}

/// Parse the primary header from raw file bytes.
pub fn parse_header_bytes(bytes: &[u8]) -> Result<FitsHeader> {
    if bytes.len() < CARD_LEN || !bytes.starts_with(b"SIMPLE  =") {
        return Err(Error::FitsFormat {
            offset: 0,
            detail: "file does not begin with a SIMPLE card".into(),
        });
    }
    let mut cards = Vec::new();
    let mut block_index = 0;
    loop {
        let block_start = block_index * BLOCK_LEN;
        let block_end = block_start + BLOCK_LEN;
        if bytes.len() < block_end {
            return Err(Error::FitsTruncated {
                detail: format!(
                    "END card not found within {} complete header blocks",
                    block_index
                ),
            });
        }
        for card_index in 0..CARDS_PER_BLOCK {
            let offset = block_start + card_index * CARD_LEN;
            let card = &bytes[offset..offset + CARD_LEN];
            if let Some(bad) = card.iter().position(|b| !(0x20..=0x7e).contains(b)) {
                return Err(Error::FitsFormat {
                    offset: offset + bad,
                    detail: format!("non-ASCII byte 0x{:02x} in header card", card[bad]),
                });
            }
            let keyword = trim_ascii_end(&card[..8]);
            if keyword == "END" {
                return Ok(FitsHeader {
                    cards,
                    header_blocks: block_index + 1,
                });
            }
            // COMMENT/HISTORY/blank cards carry no value even when their
            // text happens to start with "= ".
            if keyword.is_empty() || keyword == "COMMENT" || keyword == "HISTORY" {
                continue;
            }
            if &card[8..10] != b"= " {
                continue;
            }
            if !keyword
                .bytes()
                .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'-' || b == b'_')
            {
                return Err(Error::FitsFormat {
                    offset,
                    detail: format!("invalid keyword {keyword:?}"),
                });
            }
            if let Some(value) = parse_value_field(&card[10..], offset + 10)? {
                cards.push(FitsCard {
                    keyword: keyword.to_string(),
                    value,
                });
            }
        }
        block_index += 1;
    }
}

fn trim_ascii_end(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes)
        .expect("ASCII checked")
        .trim_end_matches(' ')
}

/// Parse the 70-character value field of a card. Returns `None` for an
/// undefined (blank) value.
fn parse_value_field(field: &[u8], field_offset: usize) -> Result<Option<FitsValue>> {
    let text = std::str::from_utf8(field).expect("ASCII checked");
    let trimmed_start = text.len() - text.trim_start_matches(' ').len();
    let body = &text[trimmed_start..];
    if body.is_empty() || body.chars().all(|c| c == ' ') {
        return Ok(None);
    }
    if body.starts_with('\'') {
        // Quoted string; '' escapes a literal quote. Trailing blanks inside
        // the quotes are not significant.
        let chars: Vec<char> = body.chars().collect();
        let mut out = String::new();
        let mut i = 1;
        loop {
            if i >= chars.len() {
                return Err(Error::FitsFormat {
                    offset: field_offset,
                    detail: "unterminated string value".into(),
                });
            }
            if chars[i] == '\'' {
                if i + 1 < chars.len() && chars[i + 1] == '\'' {
                    out.push('\'');
                    i += 2;
                    continue;
                }
                break;
            }
            out.push(chars[i]);
            i += 1;
        }
        return Ok(Some(FitsValue::Text(out.trim_end_matches(' ').to_string())));
    }
    // Unquoted value: everything up to an optional / comment.
    let value_part = match body.find('/') {
        Some(pos) => &body[..pos],
        None => body,
    };
    let token = value_part.trim();
    if token.is_empty() {
        return Ok(None);
    }
    match token {
        "T" => return Ok(Some(FitsValue::Logical(true))),
        "F" => return Ok(Some(FitsValue::Logical(false))),
        _ => {}
    }
    if let Ok(v) = token.parse::<i64>() {
        return Ok(Some(FitsValue::Integer(v)));
    }
    // FITS reals may use D for the exponent.
    let normalized = token.replace(['D', 'd'], "E");
    if let Ok(v) = normalized.parse::<f64>() {
        if v.is_finite() {
            return Ok(Some(FitsValue::Real(v)));
        }
    }
    Err(Error::FitsFormat {
        offset: field_offset,
        detail: format!("unparseable value {token:?}"),
    })
}

/// Primary-HDU image with physical values (BZERO + BSCALE applied).
#[derive(Debug, Clone)]
pub struct FitsImage {
    pub header: FitsHeader,
    pub data: Vec<f64>,
    /// Samples at the representation limit (integer data) or non-finite
    /// (floating data).
    pub clipped: usize,
}

pub fn read_primary_image(path: impl AsRef<Path>) -> Result<FitsImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_image_bytes(&bytes)
}

pub fn read_image_bytes(bytes: &[u8]) -> Result<FitsImage> {
    let header = parse_header_bytes(bytes)?;
    let bitpix = header.integer("BITPIX").ok_or_else(|| Error::FitsUnsupported {
        detail: "missing BITPIX".into(),
    })?;
    let naxis = header.integer("NAXIS").ok_or_else(|| Error::FitsUnsupported {
        detail: "missing NAXIS".into(),
    })?;
    if naxis <= 0 {
        return Err(Error::FitsUnsupported {
            detail: "no image data (NAXIS is 0)".into(),
        });
    }
    let mut samples: usize = 1;
    for axis in 1..=naxis {
        let len = header
            .integer(&format!("NAXIS{axis}"))
            .ok_or_else(|| Error::FitsUnsupported {
                detail: format!("missing NAXIS{axis}"),
            })?;
        if len <= 0 {
            return Err(Error::FitsUnsupported {
                detail: format!("NAXIS{axis} is {len}"),
            });
        }
        samples = samples.saturating_mul(len as usize);
    }
    let bytes_per = match bitpix {
        8 => 1,
        16 => 2,
        32 => 4,
        -32 => 4,
        other => {
            return Err(Error::FitsUnsupported {
                detail: format!("BITPIX {other} (supported: 8, 16, 32, -32)"),
            })
        }
    };
    let bzero = header.real("BZERO").unwrap_or(0.0);
    let bscale = header.real("BSCALE").unwrap_or(1.0);
    let data_start = header.header_blocks * BLOCK_LEN;
    let data_len = samples * bytes_per;
    if bytes.len() < data_start + data_len {
        return Err(Error::FitsTruncated {
            detail: format!(
                "image needs {data_len} data bytes, file holds {}",
                bytes.len().saturating_sub(data_start)
            ),
        });
    }
    let raw = &bytes[data_start..data_start + data_len];
    let mut data = Vec::with_capacity(samples);
    let mut clipped = 0usize;
    match bitpix {
        8 => {
            for &b in raw {
                if b == u8::MAX {
                    clipped += 1;
                }
                data.push(bzero + bscale * b as f64);
            }
        }
        16 => {
            for chunk in raw.chunks_exact(2) {
                let v = i16::from_be_bytes([chunk[0], chunk[1]]);
                if v == i16::MAX {
                    clipped += 1;
                }
                data.push(bzero + bscale * v as f64);
            }
        }
        32 => {
            for chunk in raw.chunks_exact(4) {
                let v = i32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                if v == i32::MAX {
                    clipped += 1;
                }
                data.push(bzero + bscale * v as f64);
            }
        }
        -32 => {
            for chunk in raw.chunks_exact(4) {
                let v = f32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                if !v.is_finite() {
                    clipped += 1;
                }
                data.push(bzero + bscale * v as f64);
            }
        }
        _ => unreachable!("bitpix validated above"),
    }
    Ok(FitsImage {
        header,
        data,
        clipped,
    })
}

/// Render cards into valid header bytes; used by fixtures and tests.
pub fn write_header_bytes(cards: &[String]) -> Vec<u8> {
    let mut out = Vec::new();
    for card in cards {
        let mut bytes = card.as_bytes().to_vec();
        assert!(bytes.len() <= CARD_LEN, "card longer than 80 bytes: {card}");
        bytes.resize(CARD_LEN, b' ');
        out.extend_from_slice(&bytes);
    }
    out.extend_from_slice(b"END");
    out.resize(out.len() + (CARD_LEN - 3), b' ');
    while out.len() % BLOCK_LEN != 0 {
        out.push(b' ');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_of(cards: &[&str]) -> FitsHeader {
        let strings: Vec<String> = cards.iter().map(|c| c.to_string()).collect();
        parse_header_bytes(&write_header_bytes(&strings)).unwrap()
    }

    fn card(keyword: &str, value: &str) -> String {
        format!("{keyword:<8}= {value:>20}")
    }

    #[test]
    fn parses_mandatory_logical_card() {
        let h = header_of(&[&card("SIMPLE", "T"), &card("BITPIX", "8"), &card("NAXIS", "0")]);
        assert_eq!(h.get("SIMPLE"), Some(&FitsValue::Logical(true)));
        assert_eq!(h.integer("BITPIX"), Some(8));
    }

    #[test]
    fn parses_real_with_inline_comment() {
        let h = header_of(&[
            &card("SIMPLE", "T"),
            "EXPTIME =                300.0 / exposure",
        ]);
        assert_eq!(h.get("EXPTIME"), Some(&FitsValue::Real(300.0)));
    }

    #[test]
    fn doubled_quote_escapes() {
        let h = header_of(&[&card("SIMPLE", "T"), "OBSERVER= 'O''NEIL'"]);
        assert_eq!(
            h.get("OBSERVER"),
            Some(&FitsValue::Text("O'NEIL".to_string()))
        );
    }

    #[test]
    fn commentary_with_value_indicator_is_skipped() {
        let h = header_of(&[
            &card("SIMPLE", "T"),
            "COMMENT = not a value card",
            "HISTORY = neither is this",
        ]);
        assert_eq!(h.cards().len(), 1);
        assert!(h.get("COMMENT").is_none());
    }

    #[test]
    fn missing_end_is_truncation() {
        let mut bytes = write_header_bytes(&[card("SIMPLE", "T")]);
        // Overwrite the END card with spaces so no block terminates.
        let pos = bytes.windows(3).position(|w| w == b"END").unwrap();
        bytes[pos..pos + 3].copy_from_slice(b"   ");
        assert!(matches!(
            parse_header_bytes(&bytes),
            Err(Error::FitsTruncated { .. })
        ));
    }

    #[test]
    fn non_ascii_reports_byte_offset() {
        let mut bytes = write_header_bytes(&[card("SIMPLE", "T")]);
        bytes[85] = 0xff;
        match parse_header_bytes(&bytes) {
            Err(Error::FitsFormat { offset, .. }) => assert_eq!(offset, 85),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn requires_simple_prefix() {
        let bytes = write_header_bytes(&[card("XSIMPLE", "T")]);
        assert!(matches!(
            parse_header_bytes(&bytes),
            Err(Error::FitsFormat { offset: 0, .. })
        ));
    }

    #[test]
    fn multi_block_header_parses() {
        let mut cards = vec![card("SIMPLE", "T")];
        for i in 0..40 {
            cards.push(card(&format!("KEY{i}"), &i.to_string()));
        }
        let bytes = write_header_bytes(&cards);
        assert!(bytes.len() >= 2 * BLOCK_LEN);
        let h = parse_header_bytes(&bytes).unwrap();
        assert_eq!(h.header_blocks, 2);
        assert_eq!(h.integer("KEY39"), Some(39));
    }

    #[test]
    fn reads_zero_image() {
        let mut bytes = write_header_bytes(&[
            card("SIMPLE", "T"),
            card("BITPIX", "8"),
            card("NAXIS", "2"),
            card("NAXIS1", "4"),
            card("NAXIS2", "4"),
        ]);
        bytes.extend_from_slice(&[0u8; BLOCK_LEN]);
        let image = read_image_bytes(&bytes).unwrap();
        assert_eq!(image.data.len(), 16);
        assert!(image.data.iter().all(|v| *v == 0.0));
        assert_eq!(image.clipped, 0);
    }

    #[test]
    fn applies_bzero_bscale() {
        let mut bytes = write_header_bytes(&[
            card("SIMPLE", "T"),
            card("BITPIX", "16"),
            card("NAXIS", "1"),
            card("NAXIS1", "2"),
            card("BZERO", "32768"),
            card("BSCALE", "1"),
        ]);
        let mut data = Vec::new();
        data.extend_from_slice(&(-32768i16).to_be_bytes());
        data.extend_from_slice(&0i16.to_be_bytes());
        data.resize(BLOCK_LEN, 0);
        bytes.extend_from_slice(&data);
        let image = read_image_bytes(&bytes).unwrap();
        assert_eq!(image.data[0], 0.0);
        assert_eq!(image.data[1], 32768.0);
    }
}
