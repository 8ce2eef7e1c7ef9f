//! Layer-by-layer orchestration of partitioning and aggregation across
//! agent wordlists, producing one sub-knowledge-graph per agent.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backends::Backends;
use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::kg::{cosine_sim, KnowledgeGraph};
use crate::pipeline::Pipeline;
use crate::wordlist::{RelevantWordlist, WordlistEntry};

use super::aggregate::{aggregate, MessagePassingConfig};
use super::partition::{match_vector_to_node, partition_for_pairs, PartitionConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct DriverConfig {
    /// Balance factor between keyword similarity and the layer term;
    /// strictly positive.
    pub gamma: f64,
    /// Per-layer decision thresholds; a single entry broadcasts, and the
    /// last entry covers deeper layers.
    pub beta: Vec<f64>,
    /// Exponent uses layer index q+1 instead of q.
    pub one_based_layers: bool,
    /// Compare only pipeline-adjacent agent pairs instead of all pairs.
    pub adjacent_pairs_only: bool,
    pub partition: PartitionConfig,
    pub aggregate: MessagePassingConfig,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            beta: vec![0.0],
            one_based_layers: false,
            adjacent_pairs_only: false,
            partition: PartitionConfig::default(),
            aggregate: MessagePassingConfig::default(),
        }
    }
}

impl DriverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(format!("gamma {} must be positive", self.gamma)));
        }
        if self.beta.is_empty() {
            return Err(Error::config("beta needs at least one threshold"));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::config("beta thresholds must be finite"));
        }
        self.partition.validate()?;
        self.aggregate.validate()
    }

    pub fn beta_at(&self, layer: usize) -> f64 {
        self.beta
            .get(layer)
            .or_else(|| self.beta.last())
            .copied()
            .expect("beta validated non-empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Partition,
    Aggregate,
}

/// One pairwise decision in the layer loop, as logged to `decisions.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDecision {
    pub layer: usize,
    pub pair: (String, String),
    pub theta: f64,
    pub beta: f64,
    pub action: Action,
}

/// Correlation-factor kernel:
/// sqrt(c_u^2 + c_v^2) * (sim - gamma * exp(layer)).
pub fn correlation_factor(c_u: f64, c_v: f64, sim: f64, layer: usize, gamma: f64) -> f64 {
    let magnitude = (c_u * c_u + c_v * c_v).sqrt();
    magnitude * (sim - gamma * (layer as f64).exp())
}

/// Correlation factor for two wordlist entries at layer `q`, with keyword
/// similarity taken from backend embeddings (unclamped cosine).
pub fn correlation_factor_entries(
    u: &WordlistEntry,
    v: &WordlistEntry,
    layer: usize,
    gamma: f64,
    backends: &Backends,
) -> Result<f64> {
    let vectors = backends
        .embed
        .embed(&[u.keyword.clone(), v.keyword.clone()])?;
    let sim = cosine_sim(&vectors[0], &vectors[1])?;
    Ok(correlation_factor(u.score, v.score, sim, layer, gamma))
}

/// Threshold rule: partition exactly when the user threshold exceeds the
/// correlation factor; the boundary aggregates.
pub fn decide(theta: f64, beta_q: f64) -> Action {
    if beta_q > theta {
        Action::Partition
    } else {
        Action::Aggregate
    }
}

#[derive(Debug, Clone)]
pub struct AskRagOutcome {
    pub subgraphs: BTreeMap<String, Arc<KnowledgeGraph>>,
    pub decisions: Vec<LayerDecision>,
    pub warnings: Vec<String>,
}

/// Build one sub-knowledge-graph per agent.
///
/// Stage 1 initializes every agent's subgraph by partitioning the root
/// graph over all unordered pairs of that agent's matched anchor nodes.
/// Stage 2 walks wordlist layers from general to specific; at each layer
/// every agent pair (lexicographic order) gets a correlation-factor
/// decision, and an aggregate decision merges the two current subgraphs
/// and hands the shared result to both agents.
pub fn build_agent_subgraphs(
    root: &KnowledgeGraph,
    embeds: &EmbeddingStore,
    wordlists: &[RelevantWordlist],
    pipeline: &Pipeline,
    cfg: &DriverConfig,
    backends: &Backends,
) -> Result<AskRagOutcome> {
    cfg.validate()?;
    embeds.require_cover(root)?;

    let by_agent: BTreeMap<&str, &RelevantWordlist> = wordlists
        .iter()
        .map(|wl| (wl.agent_id.as_str(), wl))
        .collect();
    let missing: Vec<String> = pipeline
        .agents()
        .filter(|a| !by_agent.contains_key(a.agent_id.as_str()))
        .map(|a| a.agent_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::AgentMismatch { missing });
    }

    // Embed every distinct keyword once, in sorted order.
    let mut keywords: Vec<String> = wordlists
        .iter()
        .flat_map(|wl| wl.layers.iter().map(|e| e.keyword.clone()))
        .collect();
    keywords.sort();
    keywords.dedup();
    let vectors = backends.embed.embed(&keywords)?;
    let keyword_vectors: BTreeMap<&str, &Vec<f64>> = keywords
        .iter()
        .map(String::as_str)
        .zip(vectors.iter())
        .collect();

    let mut warnings = Vec::new();

    // Stage 1: initial partition per agent.
    let mut subgraphs: BTreeMap<String, Arc<KnowledgeGraph>> = BTreeMap::new();
    let mut agent_ids: Vec<&str> = pipeline.agents().map(|a| a.agent_id.as_str()).collect();
    agent_ids.sort_unstable();
    for agent_id in &agent_ids {
        let wordlist = by_agent[agent_id];
        let mut anchors: Vec<String> = Vec::new();
        for entry in &wordlist.layers {
            let vector = keyword_vectors[entry.keyword.as_str()];
            let node = match_vector_to_node(vector, root, embeds)?;
            if !anchors.contains(&node) {
                anchors.push(node);
            }
        }
        anchors.sort();
        let mut pairs = Vec::new();
        for i in 0..anchors.len() {
            for j in i + 1..anchors.len() {
                pairs.push((anchors[i].clone(), anchors[j].clone()));
            }
        }
        if pairs.is_empty() {
            warnings.push(format!(
                "agent {agent_id}: fewer than two distinct anchor nodes; starting from an \
                 empty subgraph"
            ));
        }
        let subgraph = partition_for_pairs(root, embeds, &pairs, &cfg.partition)?;
        subgraphs.insert(agent_id.to_string(), Arc::new(subgraph));
    }

    // Stage 2: layered decisions over agent pairs.
    let pair_list = agent_pairs(pipeline, cfg.adjacent_pairs_only);
    let max_layers = wordlists.iter().map(|wl| wl.layers.len()).max().unwrap_or(0);
    let mut decisions = Vec::new();
    for layer in 0..max_layers {
        for (left, right) in &pair_list {
            let wl_left = by_agent[left.as_str()];
            let wl_right = by_agent[right.as_str()];
            let (Some(entry_left), Some(entry_right)) =
                (wl_left.layers.get(layer), wl_right.layers.get(layer))
            else {
                log::info!("pair ({left}, {right}) skipped at layer {layer}: missing entry");
                continue;
            };
            let sim = cosine_sim(
                keyword_vectors[entry_left.keyword.as_str()],
                keyword_vectors[entry_right.keyword.as_str()],
            )?;
            let exponent_layer = layer + usize::from(cfg.one_based_layers);
            let theta = correlation_factor(
                entry_left.score,
                entry_right.score,
                sim,
                exponent_layer,
                cfg.gamma,
            );
            let beta = cfg.beta_at(layer);
            let action = decide(theta, beta);
            decisions.push(LayerDecision {
                layer,
                pair: (left.clone(), right.clone()),
                theta,
                beta,
                action,
            });
            if action == Action::Aggregate {
                let sub_left = subgraphs[left].clone();
                let sub_right = subgraphs[right].clone();
                if Arc::ptr_eq(&sub_left, &sub_right) {
                    // Already sharing one graph; re-merging is an identity.
                    continue;
                }
                let result = aggregate(
                    &sub_left,
                    &sub_right,
                    root,
                    embeds,
                    &cfg.aggregate,
                    backends.chat.as_ref(),
                )?;
                warnings.extend(result.warnings);
                let shared = Arc::new(result.merged);
                subgraphs.insert(left.clone(), shared.clone());
                subgraphs.insert(right.clone(), shared);
            }
        }
    }

    Ok(AskRagOutcome {
        subgraphs,
        decisions,
        warnings,
    })
}

/// Unordered agent pairs in lexicographic order; optionally restricted to
/// pipeline-adjacent (consecutive order_index) pairs.
fn agent_pairs(pipeline: &Pipeline, adjacent_only: bool) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    if adjacent_only {
        let ordered: Vec<&str> = pipeline.agents().map(|a| a.agent_id.as_str()).collect();
        for window in ordered.windows(2) {
            let (a, b) = (window[0], window[1]);
            let pair = if a <= b { (a, b) } else { (b, a) };
            pairs.push((pair.0.to_string(), pair.1.to_string()));
        }
        pairs.sort();
    } else {
        let mut ids: Vec<&str> = pipeline.agents().map(|a| a.agent_id.as_str()).collect();
        ids.sort_unstable();
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                pairs.push((ids[i].to_string(), ids[j].to_string()));
            }
        }
    }
    pairs
}

pub fn save_decisions(decisions: &[LayerDecision], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = serde_json::to_vec_pretty(decisions).expect("decisions serialize");
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_decisions(path: impl AsRef<Path>) -> Result<Vec<LayerDecision>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::schema(path.display().to_string(), e))
}
