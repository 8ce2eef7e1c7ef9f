//! Deterministic scripted backend for offline runs and tests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::{CallTag, ChatBackend, ChatRequest, EmbedBackend};

pub const DEFAULT_MOCK_EMBED_DIM: usize = 32;

/// On-disk script (`mock.json`). Chat entries are keyed by the canonical
/// call key (see [`CallTag::key`]); lookups are pure, so runs replay
/// identically regardless of call order or concurrency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub chat: BTreeMap<String, String>,
    /// Reply used when a key is missing and `strict` is off.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_reply: Option<String>,
    /// When set, a missing key is always an error naming the key.
    #[serde(default)]
    pub strict: bool,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    /// Exact vectors for specific texts, overriding hash derivation.
    /// Lets fixtures pin precise similarities.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub embed_overrides: BTreeMap<String, Vec<f64>>,
}

fn default_embed_dim() -> usize {
    DEFAULT_MOCK_EMBED_DIM
}

impl Default for MockScript {
    fn default() -> Self {
        Self {
            chat: BTreeMap::new(),
            default_reply: None,
            strict: false,
            embed_dim: DEFAULT_MOCK_EMBED_DIM,
            embed_overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    script: MockScript,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Result<Self> {
        if script.embed_dim == 0 {
            return Err(Error::config("mock embed_dim must be positive"));
        }
        Ok(Self { script })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let script: MockScript = serde_json::from_slice(&bytes)
            .map_err(|e| Error::schema(path.display().to_string(), e))?;
        Self::new(script)
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    /// Builder-style scripting for tests.
    pub fn with_entry(mut self, key: impl Into<String>, reply: impl Into<String>) -> Self {
        self.script.chat.insert(key.into(), reply.into());
        self
    }

    pub fn with_default_reply(mut self, reply: impl Into<String>) -> Self {
        self.script.default_reply = Some(reply.into());
        self
    }

    pub fn with_embed_override(mut self, text: impl Into<String>, vector: Vec<f64>) -> Self {
        self.script.embed_overrides.insert(text.into(), vector);
        self
    }

    /// Hash-derived unit vector for a text: equal text, equal vector;
    /// different texts get stable pseudo-random directions. Self-contained
    /// (SHA-256 counter expansion) so the bytes never shift under
    /// dependency upgrades.
    pub fn derive_vector(text: &str, dim: usize) -> Vec<f64> {
        let seed = Sha256::digest(text.as_bytes());
        let mut components = Vec::with_capacity(dim);
        for i in 0..dim {
            let mut hasher = Sha256::new();
            hasher.update(seed);
            hasher.update((i as u32).to_le_bytes());
            let block = hasher.finalize();
            let mut word = [0u8; 8];
            word.copy_from_slice(&block[..8]);
            let x = u64::from_le_bytes(word);
            // Top 53 bits -> [0,1) -> [-1,1).
            let unit = (x >> 11) as f64 / (1u64 << 53) as f64;
            components.push(unit * 2.0 - 1.0);
        }
        let norm = components.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            let mut basis = vec![0.0; dim];
            basis[0] = 1.0;
            return basis;
        }
        components.iter().map(|x| x / norm).collect()
    }
}

impl ChatBackend for MockBackend {
    fn chat(&self, tag: &CallTag, _request: &ChatRequest) -> Result<String> {
        let key = tag.key();
        if let Some(reply) = self.script.chat.get(&key) {
            return Ok(reply.clone());
        }
        if self.script.strict {
            return Err(Error::ScriptedMiss { key });
        }
        match &self.script.default_reply {
            Some(reply) => Ok(reply.clone()),
            None => Err(Error::ScriptedMiss { key }),
        }
    }
}

impl EmbedBackend for MockBackend {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts
            .iter()
            .map(|text| {
                self.script
                    .embed_overrides
                    .get(text)
                    .cloned()
                    .unwrap_or_else(|| Self::derive_vector(text, self.script.embed_dim))
            })
            .collect())
    }

    fn model_tag(&self) -> String {
        format!("mock-embed-{}", self.script.embed_dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::Phase;
    use crate::kg::cosine_sim;

    fn tag(actor: &str) -> CallTag {
        CallTag::new(Phase::Pipeline, actor)
    }

    #[test]
    fn scripted_replies_by_key() {
        let mock = MockBackend::default().with_entry("pipeline:focus", "ok");
        let req = ChatRequest::new("s", "u");
        assert_eq!(mock.chat(&tag("focus"), &req).unwrap(), "ok");
        assert!(matches!(
            mock.chat(&tag("guiding"), &req),
            Err(Error::ScriptedMiss { .. })
        ));
    }

    #[test]
    fn default_reply_covers_misses_unless_strict() {
        let mut mock = MockBackend::default().with_default_reply("fallback");
        let req = ChatRequest::new("s", "u");
        assert_eq!(mock.chat(&tag("x"), &req).unwrap(), "fallback");
        mock.script.strict = true;
        assert!(mock.chat(&tag("x"), &req).is_err());
    }

    #[test]
    fn identical_text_identical_vector() {
        let mock = MockBackend::default();
        let a = mock.embed_one("x").unwrap();
        let b = mock.embed_one("x").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn vectors_are_unit_norm_and_similarity_is_stable() {
        let mock = MockBackend::default();
        let a = mock.embed_one("dark frame").unwrap();
        let b = mock.embed_one("flat frame").unwrap();
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        let c1 = cosine_sim(&a, &b).unwrap();
        let c2 = cosine_sim(
            &mock.embed_one("dark frame").unwrap(),
            &mock.embed_one("flat frame").unwrap(),
        )
        .unwrap();
        assert_eq!(c1, c2);
        assert!(c1.abs() < 1.0);
    }

    #[test]
    fn overrides_take_precedence() {
        let mock = MockBackend::default().with_embed_override("k", vec![1.0, 0.0]);
        assert_eq!(mock.embed_one("k").unwrap(), vec![1.0, 0.0]);
    }
}
