//! Tool plugin contract and the two reference tools.
//!
//! A tool turns an image file into flat key/value facts. Failures are
//! reported as observations carrying an `error` fact rather than as
//! errors, so one broken tool never aborts a diagnosis run.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fits::{self, FitsValue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactValue {
    Bool(bool),
    Int(i64),
    Real(f64),
    Text(String),
}

impl fmt::Display for FactValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FactValue::Bool(v) => write!(f, "{v}"),
            FactValue::Int(v) => write!(f, "{v}"),
            FactValue::Real(v) => write!(f, "{v}"),
            FactValue::Text(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolObservation {
    pub tool_id: String,
    pub facts: BTreeMap<String, FactValue>,
    pub raw: String,
}

impl ToolObservation {
    pub fn new(tool_id: impl Into<String>, raw: impl Into<String>) -> Self {
        Self {
            tool_id: tool_id.into(),
            facts: BTreeMap::new(),
            raw: raw.into(),
        }
    }

    pub fn error(tool_id: impl Into<String>, message: impl Into<String>) -> Self {
        let message = message.into();
        let mut obs = Self::new(tool_id, message.clone());
        obs.facts.insert("error".into(), FactValue::Text(message));
        obs
    }

    /// Insert a fact; empty keys and non-finite numbers are rejected by
    /// downgrading them to an error note so observations stay well-formed.
    pub fn push_fact(&mut self, key: &str, value: FactValue) {
        if key.is_empty() {
            return;
        }
        if let FactValue::Real(v) = value {
            if !v.is_finite() {
                self.facts
                    .insert(key.to_string(), FactValue::Text("non-finite".into()));
                return;
            }
        }
        self.facts.insert(key.to_string(), value);
    }

    pub fn is_error(&self) -> bool {
        self.facts.contains_key("error")
    }
}

/// A registered image-analysis plugin.
pub trait Tool: Send + Sync {
    fn id(&self) -> &str;
    fn description(&self) -> &str;
    /// Accepted file extensions, lowercase without the dot.
    fn accepted_kinds(&self) -> &[&str];
    /// Pure invocation from a file path to an observation.
    fn invoke(&self, path: &Path) -> ToolObservation;
}

#[derive(Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, Box<dyn Tool>>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry preloaded with the reference tools.
    pub fn with_reference_tools() -> Self {
        let mut registry = Self::new();
        registry.register(Box::new(FitsHeaderTool));
        registry.register(Box::new(PixelStatsTool));
        registry
    }

    pub fn register(&mut self, tool: Box<dyn Tool>) {
        self.tools.insert(tool.id().to_string(), tool);
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }

    pub fn get(&self, tool_id: &str) -> Option<&dyn Tool> {
        self.tools.get(tool_id).map(Box::as_ref)
    }

    pub fn invoke(&self, tool_id: &str, path: &Path) -> ToolObservation {
        let Some(tool) = self.get(tool_id) else {
            return ToolObservation::error(tool_id, format!("tool {tool_id:?} is not registered"));
        };
        let kind = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_lowercase)
            .unwrap_or_default();
        if !tool.accepted_kinds().contains(&kind.as_str()) {
            return ToolObservation::error(
                tool_id,
                format!("tool {tool_id:?} does not accept {kind:?} files"),
            );
        }
        tool.invoke(path)
    }
}

const FITS_KINDS: &[&str] = &["fits", "fit", "fts"];

/// Exposes primary-header cards as typed facts.
pub struct FitsHeaderTool;

impl Tool for FitsHeaderTool {
    fn id(&self) -> &str {
        "fits-header"
    }

    fn description(&self) -> &str {
        "Reads the primary FITS header and reports every keyword card as a typed fact."
    }

    fn accepted_kinds(&self) -> &[&str] {
        FITS_KINDS
    }

    fn invoke(&self, path: &Path) -> ToolObservation {
        match fits::parse_fits_header(path) {
            Ok(header) => {
                let mut obs = ToolObservation::new(
                    self.id(),
                    format!("parsed {} header cards", header.cards().len()),
                );
                for card in header.cards() {
                    let value = match &card.value {
                        FitsValue::Logical(v) => FactValue::Bool(*v),
                        FitsValue::Integer(v) => FactValue::Int(*v),
                        FitsValue::Real(v) => FactValue::Real(*v),
                        FitsValue::Text(v) => FactValue::Text(v.clone()),
                    };
                    obs.push_fact(&card.keyword, value);
                }
                obs
            }
            Err(e) => ToolObservation::error(self.id(), e.to_string()),
        }
    }
}

/// Basic statistics over the primary image: mean, min, max, standard
/// deviation, and the fraction of clipped samples.
pub struct PixelStatsTool;

impl Tool for PixelStatsTool {
    fn id(&self) -> &str {
        "pixel-stats"
    }

    fn description(&self) -> &str {
        "Computes mean/min/max/std and the clipped-sample fraction of the primary image."
    }

    fn accepted_kinds(&self) -> &[&str] {
        FITS_KINDS
    }

    fn invoke(&self, path: &Path) -> ToolObservation {
        let image = match fits::read_primary_image(path) {
            Ok(image) => image,
            Err(e) => return ToolObservation::error(self.id(), e.to_string()),
        };
        let finite: Vec<f64> = image.data.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return ToolObservation::error(self.id(), "image has no finite samples");
        }
        let n = finite.len() as f64;
        let mean = finite.iter().sum::<f64>() / n;
        let min = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let var = finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let mut obs = ToolObservation::new(
            self.id(),
            format!("pixel statistics over {} samples", image.data.len()),
        );
        obs.push_fact("mean", FactValue::Real(mean));
        obs.push_fact("min", FactValue::Real(min));
        obs.push_fact("max", FactValue::Real(max));
        obs.push_fact("std", FactValue::Real(var.sqrt()));
        obs.push_fact(
            "clipped_fraction",
            FactValue::Real(image.clipped as f64 / image.data.len() as f64),
        );
        obs.push_fact("samples", FactValue::Int(image.data.len() as i64));
        if let Some(bitpix) = image.header.integer("BITPIX") {
            obs.push_fact("bitpix", FactValue::Int(bitpix));
        }
        obs
    }
}
