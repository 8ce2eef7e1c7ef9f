//! Agent-specific knowledge retrieval: the root graph is partitioned and
//! aggregated layer by layer until every agent holds a sub-knowledge-graph
//! scoped to its process.

pub mod aggregate;
pub mod driver;
pub mod partition;

pub use aggregate::{
    aggregate as aggregate_subgraphs, join_on_shared_nodes, label_new_edges, link_by_similarity,
    projection_weights, side_assignment, smooth_embeddings, AggregationResult, EdgeProvenance,
    MessagePassingConfig, NewEdge, Side,
};
pub use driver::{
    build_agent_subgraphs, correlation_factor, correlation_factor_entries, decide, load_decisions,
    save_decisions, Action, AskRagOutcome, DriverConfig, LayerDecision,
};
pub use partition::{
    candidate_paths, match_keyword_to_node, match_vector_to_node, partition_for_pairs,
    path_reliability, propagate_resource, simple_paths, CandidatePath, PartitionConfig,
    ResourceMap,
};
