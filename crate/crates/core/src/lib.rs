//! Engine for diagnosing the quality of astronomical images.
//!
//! A root knowledge graph is partitioned and aggregated into per-agent
//! sub-knowledge-graphs (`askrag`), a pipeline of specialist agents walks
//! the imaging process (`pipeline`), detected errors are traced back to
//! their causes over a collaborative reasoning tree (`reasoning`), and
//! reports are scored against expert ground truth (`eval`). All model
//! access goes through the `backends` contracts, so every algorithm runs
//! deterministically offline against the scripted mock.

pub mod askrag;
pub mod backends;
pub mod embed;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod kg;
pub mod pipeline;
pub mod reasoning;
pub mod report;
pub mod wordlist;

pub use error::{Error, Result};
pub use kg::{cosine_sim, KgEdge, KgNode, KnowledgeGraph};
