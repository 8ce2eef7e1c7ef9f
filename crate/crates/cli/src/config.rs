//! Run configuration (`config.json`): file paths, every hyperparameter,
//! and the backend selection. Unknown keys are rejected and every value
//! is range-checked at load. Environment variables override only the live
//! backend credentials.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use astrovlm_core::askrag::{DriverConfig, MessagePassingConfig, PartitionConfig};
use astrovlm_core::backends::{Backends, LiveBackend, LiveConfig, MockBackend};
use astrovlm_core::reasoning::RwbConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Live,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigPaths {
    pub kg: Option<String>,
    pub embeddings: Option<String>,
    pub wordlists: Option<String>,
    pub agents: Option<String>,
    pub mock: Option<String>,
    pub subkgs: Option<String>,
}

/// One threshold broadcast to every layer, or an explicit per-layer list
/// (the last entry covers deeper layers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaValue {
    Scalar(f64),
    PerLayer(Vec<f64>),
}

impl BetaValue {
    pub fn as_vec(&self) -> Vec<f64> {
        match self {
            BetaValue::Scalar(v) => vec![*v],
            BetaValue::PerLayer(vs) => vs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub paths: ConfigPaths,

    /// Decay rate of resource propagation along edges (mu), in (0,1].
    pub mu: f64,
    /// Balance factor between keyword similarity and the layer term
    /// (gamma), positive.
    pub gamma: f64,
    /// Per-layer partition/aggregate threshold (beta).
    pub beta: BetaValue,
    /// Confidence threshold gating further backtracking (tau), in \[0,1\].
    pub tau: f64,
    /// Conflict threshold for coordinator arbitration (xi), in \[0,1\].
    pub xi: f64,
    /// Cause selection threshold (eta), in \[0,1\].
    pub eta: f64,
    /// Reliable paths kept per anchor pair.
    pub top_k_paths: usize,
    /// Similarity edges added per aggregation.
    pub top_k_edges: usize,
    /// Maximum edges per candidate path / propagation radius.
    pub max_hops: usize,
    /// Maximum backtracking depth of the reasoning tree.
    pub max_depth: usize,
    /// Seed for the deterministic message-passing projections.
    pub seed: u64,
    /// Width of smoothed embeddings.
    pub hidden_dim: usize,
    /// Maximum wordlist layers per agent.
    pub max_layers: usize,
    /// Keyword library size cap.
    pub max_keywords: usize,
    /// Subgraph facts injected into each agent prompt.
    pub context_top_n: usize,
    /// Layer exponent counts from 1 instead of 0.
    pub one_based_layers: bool,
    /// Compare only pipeline-adjacent agent pairs in the layer loop.
    pub adjacent_pairs_only: bool,
    /// Upper bound on concurrent live-backend requests.
    pub jobs: usize,
    /// Diagnosis question put to every agent.
    pub question: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            paths: ConfigPaths::default(),
            mu: 0.8,
            gamma: 1.0,
            beta: BetaValue::Scalar(0.0),
            tau: 0.5,
            xi: 0.4,
            eta: 0.5,
            top_k_paths: 5,
            top_k_edges: 5,
            max_hops: 4,
            max_depth: 6,
            seed: 42,
            hidden_dim: 64,
            max_layers: 6,
            max_keywords: 64,
            context_top_n: 12,
            one_based_layers: false,
            adjacent_pairs_only: false,
            jobs: 4,
            question: None,
        }
    }
}

pub const DEFAULT_QUESTION: &str =
    "Assess this astronomical image for quality problems in your process.";

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig = serde_json::from_slice(&bytes)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.driver_config().validate()?;
        self.rwb_config().validate()?;
        if self.max_layers == 0 {
            bail!("max_layers must be positive");
        }
        if self.max_keywords == 0 {
            bail!("max_keywords must be positive");
        }
        if self.jobs == 0 {
            bail!("jobs must be positive");
        }
        Ok(())
    }

    pub fn partition_config(&self) -> PartitionConfig {
        PartitionConfig {
            mu: self.mu,
            top_k_paths: self.top_k_paths,
            max_hops: self.max_hops,
        }
    }

    pub fn aggregate_config(&self) -> MessagePassingConfig {
        MessagePassingConfig {
            hidden_dim: self.hidden_dim,
            seed: self.seed,
            dropout_rate: 0.0,
            top_k_edges: self.top_k_edges,
        }
    }

    pub fn driver_config(&self) -> DriverConfig {
        DriverConfig {
            gamma: self.gamma,
            beta: self.beta.as_vec(),
            one_based_layers: self.one_based_layers,
            adjacent_pairs_only: self.adjacent_pairs_only,
            partition: self.partition_config(),
            aggregate: self.aggregate_config(),
        }
    }

    pub fn rwb_config(&self) -> RwbConfig {
        RwbConfig {
            tau: self.tau,
            xi: self.xi,
            eta: self.eta,
            max_depth: self.max_depth,
        }
    }

    pub fn question(&self) -> &str {
        self.question.as_deref().unwrap_or(DEFAULT_QUESTION)
    }

    /// The config as echoed into every output file.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn make_backends(&self, base_dir: &Path) -> anyhow::Result<Backends> {
        match self.backend {
            BackendKind::Mock => {
                let Some(mock_path) = &self.paths.mock else {
                    bail!("backend is mock but paths.mock is not set in the config");
                };
                let mock = MockBackend::load(resolve(base_dir, mock_path))?;
                Ok(Backends::mock(mock))
            }
            BackendKind::Live => {
                let mut live_config = LiveConfig::from_env()?;
                live_config.max_in_flight = self.jobs;
                Ok(Backends::live(LiveBackend::new(live_config)?))
            }
        }
    }
}

/// Paths inside a config file resolve relative to the config's directory.
pub fn resolve(base_dir: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

pub fn required<'a>(
    value: &'a Option<String>,
    key: &str,
) -> anyhow::Result<&'a str> {
    value
        .as_deref()
        .ok_or_else(|| anyhow::anyhow!("config paths.{key} is required for this command"))
}
