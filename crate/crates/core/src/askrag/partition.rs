//! Flow-based graph partitioning.
//!
//! Resource spreads outward from an anchor node in one breadth-first
//! sweep; candidate paths between anchor pairs are scored by the average
//! resource flowing through their edges, and the most reliable paths form
//! the agent's sub-knowledge-graph.

use std::collections::{BTreeMap, BTreeSet};

use crate::backends::EmbedBackend;
use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::kg::{cosine_sim, KnowledgeGraph};

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConfig {
    /// Decay rate of resource propagation, in (0,1].
    pub mu: f64,
    /// Paths kept per anchor pair.
    pub top_k_paths: usize,
    /// Maximum edges in a candidate path / propagation radius.
    pub max_hops: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            mu: 0.8,
            top_k_paths: 5,
            max_hops: 4,
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(Error::config(format!("mu {} outside (0,1]", self.mu)));
        }
        if self.top_k_paths == 0 {
            return Err(Error::config("top_k_paths must be positive"));
        }
        if self.max_hops == 0 {
            return Err(Error::config("max_hops must be at least 1"));
        }
        Ok(())
    }
}

/// Propagated resource per node. Unreached nodes hold 0; the start node
/// holds exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceMap {
    values: BTreeMap<String, f64>,
    start_id: String,
}

impl ResourceMap {
    /// Build a map from explicit values; the start node must hold exactly
    /// 1 and every value must be finite and non-negative.
    pub fn from_values(start_id: impl Into<String>, values: BTreeMap<String, f64>) -> Result<Self> {
        let start_id = start_id.into();
        if values.get(&start_id) != Some(&1.0) {
            return Err(Error::config(format!(
                "resource of start node {start_id:?} must be exactly 1"
            )));
        }
        if let Some((id, value)) = values.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::config(format!(
                "resource of {id:?} is {value}; values must be finite and non-negative"
            )));
        }
        Ok(Self { values, start_id })
    }

    pub fn get(&self, id: &str) -> f64 {
        self.values.get(id).copied().unwrap_or(0.0)
    }

    pub fn start_id(&self) -> &str {
        &self.start_id
    }

    pub fn values(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Node similarity as used by propagation: cosine clamped to [0,1] so
/// resource never goes negative.
fn propagation_sim(embeds: &EmbeddingStore, a: &str, b: &str) -> Result<f64> {
    Ok(embeds.similarity(a, b)?.clamp(0.0, 1.0))
}

/// Single-pass breadth-first propagation from `start`, out to
/// `cfg.max_hops` rings. Rings settle in lexicographic order and each node
/// is computed once from its already-settled neighbors:
/// contribution of neighbor j is mu * R(j) / degree(j) + sim(i, j).
///
/// `cfg.mu` is taken as given here; range checks happen at configuration
/// load so degenerate sweeps (mu = 0) remain expressible in tests.
pub fn propagate_resource(
    graph: &KnowledgeGraph,
    embeds: &EmbeddingStore,
    start: &str,
    cfg: &PartitionConfig,
) -> Result<ResourceMap> {
    if !graph.contains_node(start) {
        return Err(Error::UnknownAnchor { id: start.into() });
    }
    let mut values: BTreeMap<String, f64> =
        graph.node_ids().map(|id| (id.to_string(), 0.0)).collect();
    values.insert(start.to_string(), 1.0);
    let mut settled: BTreeSet<String> = BTreeSet::new();
    settled.insert(start.to_string());
    let mut frontier: Vec<String> = vec![start.to_string()];

    for _ in 0..cfg.max_hops {
        let mut ring: BTreeSet<String> = BTreeSet::new();
        for node in &frontier {
            for neighbor in graph.neighbors(node) {
                if !settled.contains(neighbor) {
                    ring.insert(neighbor.to_string());
                }
            }
        }
        if ring.is_empty() {
            break;
        }
        for node in &ring {
            let mut incoming = 0.0;
            for neighbor in graph.neighbors(node) {
                if settled.contains(neighbor) {
                    let degree = graph.degree(neighbor) as f64;
                    incoming += cfg.mu * values[neighbor] / degree;
                    incoming += propagation_sim(embeds, node, neighbor)?;
                }
            }
            values.insert(node.clone(), incoming);
            settled.insert(node.clone());
        }
        frontier = ring.into_iter().collect();
    }
    Ok(ResourceMap {
        values,
        start_id: start.to_string(),
    })
}

/// Average resource flowing through a path's edges: the sum of node
/// resources divided by the edge count.
pub fn path_reliability(path: &[String], resources: &ResourceMap) -> Result<f64> {
    if path.len() < 2 {
        return Err(Error::PathTooShort);
    }
    let sum: f64 = path.iter().map(|id| resources.get(id)).sum();
    Ok(sum / (path.len() - 1) as f64)
}

/// A scored simple path between two anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePath {
    pub node_ids: Vec<String>,
    pub reliability: f64,
}

/// All simple paths from `src` to `dst` with at most `max_hops` edges,
/// in deterministic (lexicographic DFS) order.
pub fn simple_paths(
    graph: &KnowledgeGraph,
    src: &str,
    dst: &str,
    max_hops: usize,
) -> Vec<Vec<String>> {
    let mut paths = Vec::new();
    if !graph.contains_node(src) || !graph.contains_node(dst) || src == dst {
        return paths;
    }
    let mut current = vec![src.to_string()];
    let mut visited: BTreeSet<String> = BTreeSet::new();
    visited.insert(src.to_string());
    dfs_paths(graph, src, dst, max_hops, &mut current, &mut visited, &mut paths);
    paths
}

fn dfs_paths(
    graph: &KnowledgeGraph,
    current: &str,
    target: &str,
    max_hops: usize,
    path: &mut Vec<String>,
    visited: &mut BTreeSet<String>,
    paths: &mut Vec<Vec<String>>,
) {
    if path.len() > max_hops {
        return;
    }
    for next in graph.neighbors(current) {
        if next == target {
            let mut found = path.clone();
            found.push(next.to_string());
            paths.push(found);
            continue;
        }
        if !visited.contains(next) {
            visited.insert(next.to_string());
            path.push(next.to_string());
            dfs_paths(graph, next, target, max_hops, path, visited, paths);
            path.pop();
            visited.remove(next);
        }
    }
}

/// Enumerate and score candidate paths for one anchor pair, sorted most
/// reliable first (ties: shorter path, then lexicographic node sequence).
pub fn candidate_paths(
    graph: &KnowledgeGraph,
    embeds: &EmbeddingStore,
    src: &str,
    dst: &str,
    cfg: &PartitionConfig,
) -> Result<Vec<CandidatePath>> {
    let resources = propagate_resource(graph, embeds, src, cfg)?;
    let mut scored = Vec::new();
    for node_ids in simple_paths(graph, src, dst, cfg.max_hops) {
        let reliability = path_reliability(&node_ids, &resources)?;
        scored.push(CandidatePath {
            node_ids,
            reliability,
        });
    }
    scored.sort_by(|a, b| {
        b.reliability
            .partial_cmp(&a.reliability)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.node_ids.len().cmp(&b.node_ids.len()))
            .then_with(|| a.node_ids.cmp(&b.node_ids))
    });
    Ok(scored)
}

/// Partition the root graph for a set of anchor pairs: per pair, keep the
/// `top_k_paths` most reliable simple paths and return the union of their
/// nodes and edges as a subgraph of the input.
///
/// Pairs are deduplicated on their unordered form; a pair with no path
/// within `max_hops` contributes nothing (logged, not an error).
pub fn partition_for_pairs(
    graph: &KnowledgeGraph,
    embeds: &EmbeddingStore,
    anchor_pairs: &[(String, String)],
    cfg: &PartitionConfig,
) -> Result<KnowledgeGraph> {
    cfg.validate()?;
    let mut pairs: BTreeSet<(String, String)> = BTreeSet::new();
    for (a, b) in anchor_pairs {
        for id in [a, b] {
            if !graph.contains_node(id) {
                return Err(Error::UnknownAnchor { id: id.clone() });
            }
        }
        if a == b {
            continue;
        }
        let pair = if a <= b {
            (a.clone(), b.clone())
        } else {
            (b.clone(), a.clone())
        };
        pairs.insert(pair);
    }

    let mut kept_nodes: BTreeSet<String> = BTreeSet::new();
    let mut kept_edges: BTreeSet<(String, String)> = BTreeSet::new();
    for (src, dst) in &pairs {
        let candidates = candidate_paths(graph, embeds, src, dst, cfg)?;
        if candidates.is_empty() {
            log::warn!("no path within {} hops between {src:?} and {dst:?}", cfg.max_hops);
            continue;
        }
        for candidate in candidates.iter().take(cfg.top_k_paths) {
            for window in candidate.node_ids.windows(2) {
                let (a, b) = (&window[0], &window[1]);
                let key = if a <= b {
                    (a.clone(), b.clone())
                } else {
                    (b.clone(), a.clone())
                };
                kept_edges.insert(key);
            }
            kept_nodes.extend(candidate.node_ids.iter().cloned());
        }
    }

    let nodes = kept_nodes
        .iter()
        .map(|id| graph.node(id).expect("kept node from graph").clone());
    let edges = kept_edges
        .iter()
        .map(|(a, b)| graph.edge(a, b).expect("kept edge from graph").clone());
    KnowledgeGraph::from_parts(nodes, edges)
}

/// Most similar node for a keyword: embeds the keyword with the backend
/// and takes the argmax cosine against stored node embeddings, smaller id
/// on ties.
pub fn match_keyword_to_node(
    keyword: &str,
    graph: &KnowledgeGraph,
    embeds: &EmbeddingStore,
    embed_backend: &dyn EmbedBackend,
) -> Result<String> {
    let vector = embed_backend.embed_one(keyword)?;
    match_vector_to_node(&vector, graph, embeds)
}

/// Argmax-cosine node for an already-embedded keyword.
pub fn match_vector_to_node(
    vector: &[f64],
    graph: &KnowledgeGraph,
    embeds: &EmbeddingStore,
) -> Result<String> {
    if graph.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let mut best: Option<(f64, &str)> = None;
    for id in graph.node_ids() {
        let sim = cosine_sim(vector, embeds.require(id)?)?;
        let better = match best {
            None => true,
            Some((best_sim, _)) => sim > best_sim,
        };
        if better {
            best = Some((sim, id));
        }
    }
    Ok(best.expect("graph non-empty").1.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::MockBackend;
    use crate::kg::{KgEdge, KgNode};

    fn node(id: &str) -> KgNode {
        KgNode {
            id: id.into(),
            label: id.into(),
            text: String::new(),
        }
    }

    fn edge(src: &str, dst: &str) -> KgEdge {
        KgEdge {
            src: src.into(),
            dst: dst.into(),
            relation: "r".into(),
            weight: 1.0,
        }
    }

    /// Store where every vector is orthogonal to every other: pairwise
    /// similarities all 0.
    fn orthogonal_store(ids: &[&str]) -> EmbeddingStore {
        let mut store = EmbeddingStore::new("orthogonal", ids.len()).unwrap();
        for (i, id) in ids.iter().enumerate() {
            let mut v = vec![0.0; ids.len()];
            v[i] = 1.0;
            store.insert(*id, v).unwrap();
        }
        store
    }

    fn triangle() -> (KnowledgeGraph, EmbeddingStore) {
        let g = KnowledgeGraph::from_parts(
            [node("a"), node("b"), node("c")],
            [edge("a", "b"), edge("a", "c"), edge("b", "c")],
        )
        .unwrap();
        let store = orthogonal_store(&["a", "b", "c"]);
        (g, store)
    }

    #[test]
    fn isolated_start_keeps_unit_resource() {
        let g = KnowledgeGraph::from_parts([node("a"), node("b")], []).unwrap();
        let store = orthogonal_store(&["a", "b"]);
        let r = propagate_resource(&g, &store, "a", &PartitionConfig::default()).unwrap();
        assert_eq!(r.get("a"), 1.0);
        assert_eq!(r.get("b"), 0.0);
    }

    #[test]
    fn triangle_matches_hand_trace() {
        let (g, store) = triangle();
        let cfg = PartitionConfig {
            mu: 0.8,
            ..Default::default()
        };
        let r = propagate_resource(&g, &store, "a", &cfg).unwrap();
        assert!((r.get("b") - 0.4).abs() < 1e-12);
        assert!((r.get("c") - 0.56).abs() < 1e-12);
        assert_eq!(r.get("a"), 1.0);
    }

    #[test]
    fn zero_decay_with_zero_sims_kills_flow() {
        let (g, store) = triangle();
        let cfg = PartitionConfig {
            mu: 0.0,
            ..Default::default()
        };
        let r = propagate_resource(&g, &store, "a", &cfg).unwrap();
        assert_eq!(r.get("b"), 0.0);
        assert_eq!(r.get("c"), 0.0);
    }

    #[test]
    fn missing_embedding_names_node() {
        let g = KnowledgeGraph::from_parts([node("a"), node("b")], [edge("a", "b")]).unwrap();
        let mut store = EmbeddingStore::new("partial", 2).unwrap();
        store.insert("a", vec![1.0, 0.0]).unwrap();
        let err = propagate_resource(&g, &store, "a", &PartitionConfig::default()).unwrap_err();
        match err {
            Error::MissingEmbedding { id } => assert_eq!(id, "b"),
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn reliability_examples() {
        let (g, store) = triangle();
        let r = propagate_resource(&g, &store, "a", &PartitionConfig::default()).unwrap();
        // Single edge: sum of endpoint resources over one edge.
        let single = path_reliability(&["a".into(), "b".into()], &r).unwrap();
        assert!((single - (1.0 + 0.4)).abs() < 1e-12);
        assert!(matches!(
            path_reliability(&["a".into()], &r),
            Err(Error::PathTooShort)
        ));
    }

    #[test]
    fn line_graph_partition_keeps_the_only_path() {
        let g = KnowledgeGraph::from_parts(
            [node("a"), node("b"), node("c")],
            [edge("a", "b"), edge("b", "c")],
        )
        .unwrap();
        let store = orthogonal_store(&["a", "b", "c"]);
        let cfg = PartitionConfig {
            top_k_paths: 1,
            max_hops: 4,
            ..Default::default()
        };
        let sub = partition_for_pairs(&g, &store, &[("a".into(), "c".into())], &cfg).unwrap();
        assert_eq!(sub.node_count(), 3);
        assert_eq!(sub.edge_count(), 2);
        assert!(sub.is_subgraph_of(&g));
    }

    #[test]
    fn disconnected_pair_contributes_nothing() {
        let g = KnowledgeGraph::from_parts([node("a"), node("b")], []).unwrap();
        let store = orthogonal_store(&["a", "b"]);
        let sub = partition_for_pairs(
            &g,
            &store,
            &[("a".into(), "b".into())],
            &PartitionConfig::default(),
        )
        .unwrap();
        assert!(sub.is_empty());
    }

    #[test]
    fn zero_top_k_rejected_at_validation() {
        let cfg = PartitionConfig {
            top_k_paths: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn keyword_match_prefers_equal_label_and_breaks_ties_low() {
        let g = KnowledgeGraph::from_parts([node("x"), node("y")], []).unwrap();
        let mock = MockBackend::default();
        // Node embeddings derived from the same text rule the mock uses for
        // labels, so the "x" keyword matches node "x" exactly.
        let mut store = EmbeddingStore::new("mock", 32).unwrap();
        store.insert("x", MockBackend::derive_vector("x", 32)).unwrap();
        store.insert("y", MockBackend::derive_vector("y", 32)).unwrap();
        assert_eq!(match_keyword_to_node("x", &g, &store, &mock).unwrap(), "x");

        // Identical embeddings: lexicographically smaller id wins.
        let mut tied = EmbeddingStore::new("tied", 2).unwrap();
        tied.insert("x", vec![1.0, 0.0]).unwrap();
        tied.insert("y", vec![1.0, 0.0]).unwrap();
        let pinned = MockBackend::default().with_embed_override("z", vec![0.5, 0.5]);
        assert_eq!(match_keyword_to_node("z", &g, &tied, &pinned).unwrap(), "x");
    }

    #[test]
    fn brute_force_argmax_agrees_on_fixture() {
        let g = KnowledgeGraph::from_parts([node("p"), node("q"), node("r")], []).unwrap();
        let mut store = EmbeddingStore::new("fixture", 2).unwrap();
        store.insert("p", vec![1.0, 0.0]).unwrap();
        store.insert("q", vec![0.6, 0.8]).unwrap();
        store.insert("r", vec![0.0, 1.0]).unwrap();
        let keyword_vec = [0.1, 0.995];
        let mut best = ("", f64::NEG_INFINITY);
        for id in ["p", "q", "r"] {
            let sim = cosine_sim(&keyword_vec, store.get(id).unwrap()).unwrap();
            if sim > best.1 {
                best = (id, sim);
            }
        }
        let matched = match_vector_to_node(&keyword_vec, &g, &store).unwrap();
        assert_eq!(matched, best.0);
        assert_eq!(matched, "r");
    }
}
