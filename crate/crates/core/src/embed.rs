//! Sidecar embedding store keyed by node id.
//!
//! Graph structure lives in `kg.json`; vectors live here (`embeddings.json`)
//! so they can be regenerated without touching the hand-editable graph.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{cosine_sim, KnowledgeGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingStore {
    pub model_tag: String,
    pub dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingStore {
    pub fn new(model_tag: impl Into<String>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("embedding dim must be positive"));
        }
        Ok(Self {
            model_tag: model_tag.into(),
            dim,
            vectors: BTreeMap::new(),
        })
    }

    /// Insert a vector, checking dimension and finiteness. Zero vectors are
    /// accepted here: derived stores (smoothed embeddings) may legitimately
    /// contain them. Persisted node stores are additionally screened by
    /// [`EmbeddingStore::require_nonzero`] at load time.
    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::EmbeddingDim {
                id,
                expected: self.dim,
                got: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteEmbedding { id });
        }
        self.vectors.insert(id, vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn require(&self, id: &str) -> Result<&[f64]> {
        self.get(id).ok_or_else(|| Error::MissingEmbedding { id: id.into() })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    /// Rejects all-zero vectors; loaded node stores must self-correlate to 1.
    pub fn require_nonzero(&self) -> Result<()> {
        for (id, v) in &self.vectors {
            if v.iter().all(|x| *x == 0.0) {
                return Err(Error::ZeroEmbedding { id: clone_id(id) });
            }
        }
        Ok(())
    }

    /// Every graph node must have a vector.
    pub fn require_cover(&self, graph: &KnowledgeGraph) -> Result<()> {
        for id in graph.node_ids() {
            if !self.vectors.contains_key(id) {
                return Err(Error::MissingEmbedding { id: id.into() });
            }
        }
        Ok(())
    }

    pub fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        cosine_sim(self.require(a)?, self.require(b)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let store: EmbeddingStore = serde_json::from_slice(&bytes)
            .map_err(|e| Error::schema(path.display().to_string(), e))?;
        if store.dim == 0 {
            return Err(Error::schema(path.display().to_string(), "dim must be positive"));
        }
        for (id, v) in &store.vectors {
            if v.len() != store.dim {
                return Err(Error::EmbeddingDim {
                    id: clone_id(id),
                    expected: store.dim,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteEmbedding { id: clone_id(id) });
            }
        }
        store.require_nonzero()?;
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = serde_json::to_vec_pretty(self).expect("store serializes");
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

fn clone_id(id: &str) -> String {
    id.to_string()
}
