//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("schema violation in {context}: {detail}")]
    Schema { context: String, detail: String },

    #[error("duplicate node id {id:?}")]
    DuplicateNode { id: String },

    #[error("node {which} of edge ({src:?}, {dst:?}) does not exist")]
    DanglingEdge {
        src: String,
        dst: String,
        which: String,
    },

    #[error("self-loop on node {id:?}")]
    SelfLoop { id: String },

    #[error("duplicate edge between {src:?} and {dst:?}")]
    DuplicateEdge { src: String, dst: String },

    #[error("edge ({src:?}, {dst:?}) weight {weight} outside [0,1]")]
    EdgeWeightRange { src: String, dst: String, weight: f64 },

    #[error("{what} must be non-empty")]
    EmptyField { what: String },

    #[error("embedding for {id:?} has {got} components, store dim is {expected}")]
    EmbeddingDim { id: String, expected: usize, got: usize },

    #[error("embedding for {id:?} contains a non-finite component")]
    NonFiniteEmbedding { id: String },

    #[error("embedding for {id:?} is the zero vector")]
    ZeroEmbedding { id: String },

    #[error("no embedding stored for node {id:?}")]
    MissingEmbedding { id: String },

    #[error("vectors have mismatched dimensions ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },

    #[error("anchor node {id:?} not in graph")]
    UnknownAnchor { id: String },

    #[error("operation requires a non-empty graph")]
    EmptyGraph,

    #[error("node {id:?} exists with conflicting labels {left:?} and {right:?}")]
    IdentityConflict { id: String, left: String, right: String },

    #[error("path must contain at least two nodes")]
    PathTooShort,

    #[error("invalid configuration: {detail}")]
    Config { detail: String },

    #[error("invalid pipeline: {detail}")]
    PipelineInvalid { detail: String },

    #[error("wordlists missing for agents: {missing:?}")]
    AgentMismatch { missing: Vec<String> },

    #[error("wordlist synthesis failed for agent {agent_id:?}; last reply: {raw:?}")]
    Synthesis { agent_id: String, raw: String },

    #[error("backend authentication failed: {detail}")]
    Auth { detail: String },

    #[error("rate limited after retries{}: {detail}", retry_after.map(|s| format!(" (retry after {s}s)")).unwrap_or_default())]
    RateLimited { retry_after: Option<u64>, detail: String },

    #[error("transport failure talking to backend: {detail}")]
    Transport { detail: String },

    #[error("mock script has no entry for key {key:?}")]
    ScriptedMiss { key: String },

    #[error("malformed backend reply in {context}: {raw:?}")]
    MalformedReply { context: String, raw: String },

    #[error("FITS format error at byte {offset}: {detail}")]
    FitsFormat { offset: usize, detail: String },

    #[error("FITS header truncated: {detail}")]
    FitsTruncated { detail: String },

    #[error("unsupported FITS content: {detail}")]
    FitsUnsupported { detail: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(context: impl Into<String>, detail: impl std::fmt::Display) -> Self {
        Error::Schema {
            context: context.into(),
            detail: detail.to_string(),
        }
    }

    pub fn config(detail: impl Into<String>) -> Self {
        Error::Config {
            detail: detail.into(),
        }
    }
}
