//! Diagnosis report assembly and its on-disk form (`report.json`).
//!
//! The serialized tree carries every node confidence and edge weight, so
//! each cause selection can be re-verified offline from the report alone.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reasoning::{
    CauseChain, CollaborativeReasoningTree, ConflictResolution, SerializedTree,
    TreeReasoningOutcome,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorReport {
    pub summary: String,
    pub origin_agent: String,
    pub tree: SerializedTree,
    pub causes: Vec<CauseChain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<CauseChain>,
    pub narrative: String,
    #[serde(default)]
    pub resolutions: Vec<ConflictResolution>,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl ErrorReport {
    pub fn from_outcome(
        summary: impl Into<String>,
        origin_agent: impl Into<String>,
        tree: &CollaborativeReasoningTree,
        outcome: TreeReasoningOutcome,
    ) -> Self {
        Self {
            summary: summary.into(),
            origin_agent: origin_agent.into(),
            tree: tree.to_serialized(),
            causes: outcome.causes,
            hypothesis: outcome.hypothesis,
            narrative: outcome.narrative,
            resolutions: outcome.resolutions,
            flags: outcome.flags,
        }
    }

    /// Re-check every reported cause against the serialized tree: the
    /// incoming weight must exceed `eta` while the largest outgoing weight
    /// stays below it, and the chain must be the root path of the node.
    pub fn verify_selection(&self, eta: f64) -> Result<()> {
        let tree = CollaborativeReasoningTree::from_serialized(&self.tree)?;
        for cause in &self.causes {
            let Some((_, incoming)) = tree.parent_of(&cause.node_id) else {
                return Err(Error::schema(
                    "report",
                    format!("cause {:?} has no incoming edge", cause.node_id),
                ));
            };
            let outgoing = tree.max_child_weight(&cause.node_id);
            if !(incoming > eta && outgoing < eta) {
                return Err(Error::schema(
                    "report",
                    format!(
                        "cause {:?} fails the selection predicate (in {incoming}, out {outgoing}, \
                         eta {eta})",
                        cause.node_id
                    ),
                ));
            }
            if tree.path_from_root(&cause.node_id) != cause.chain {
                return Err(Error::schema(
                    "report",
                    format!("cause {:?} chain does not match the tree", cause.node_id),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosisReport {
    pub image: String,
    pub errors: Vec<ErrorReport>,
    pub config_echo: serde_json::Value,
}

impl DiagnosisReport {
    pub fn to_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("report serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let report: DiagnosisReport = serde_json::from_slice(&bytes)
            .map_err(|e| Error::schema(path.display().to_string(), e))?;
        for error in &report.errors {
            // Rebuilding validates the tree invariants.
            CollaborativeReasoningTree::from_serialized(&error.tree)?;
        }
        Ok(report)
    }
}
