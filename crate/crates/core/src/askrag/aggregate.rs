//! Sub-knowledge-graph aggregation.
//!
//! Two subgraphs are joined on shared nodes, node embeddings are smoothed
//! by two rounds of symmetric-normalized message passing (so they carry
//! structure as well as semantics), the top-K most similar cross-side
//! pairs gain new edges, and a chat backend labels pairs the root graph
//! cannot.
//!
//! The projection weights are untrained: they are drawn deterministically
//! from the configured seed and act purely as a fixed structure-aware
//! mixer, which keeps aggregation reproducible byte for byte.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backends::{structured_chat, CallTag, ChatBackend, ChatRequest, FieldKind, Phase};
use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::kg::{cosine_sim, KgEdge, KgNode, KnowledgeGraph};

pub const FALLBACK_RELATION: &str = "related-to";

#[derive(Debug, Clone, PartialEq)]
pub struct MessagePassingConfig {
    pub hidden_dim: usize,
    pub seed: u64,
    /// Carried for architectural completeness; forced to 0 during
    /// deterministic aggregation.
    pub dropout_rate: f64,
    /// New similarity edges kept per aggregation.
    pub top_k_edges: usize,
}

impl Default for MessagePassingConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            seed: 42,
            dropout_rate: 0.0,
            top_k_edges: 5,
        }
    }
}

impl MessagePassingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::config("hidden_dim must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout_rate {} outside [0,1)",
                self.dropout_rate
            )));
        }
        if self.top_k_edges == 0 {
            return Err(Error::config("top_k_edges must be positive"));
        }
        Ok(())
    }
}

/// Which input subgraph a merged node came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    First,
    Second,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeProvenance {
    /// Inherited edge incident to a node both inputs shared.
    SharedNode,
    /// New similarity edge whose relation was reused from the root graph.
    Similarity,
    /// New similarity edge labeled by the chat backend (or fallback).
    BackendLabeled,
}

/// A similarity edge added during aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewEdge {
    pub src: String,
    pub dst: String,
    pub relation: String,
    pub similarity: f64,
}

#[derive(Debug, Clone)]
pub struct AggregationResult {
    pub merged: KnowledgeGraph,
    pub new_edges: Vec<NewEdge>,
    pub provenance: BTreeMap<(String, String), EdgeProvenance>,
    pub warnings: Vec<String>,
}

/// Union of two graphs, deduplicating nodes on id. Texts are concatenated
/// when they differ; a shared id with conflicting labels is an identity
/// conflict. When both inputs carry an edge for the same unordered pair,
/// the first input's attributes win.
pub fn join_on_shared_nodes(
    g1: &KnowledgeGraph,
    g2: &KnowledgeGraph,
) -> Result<KnowledgeGraph> {
    let mut nodes: BTreeMap<String, KgNode> = BTreeMap::new();
    for node in g1.nodes() {
        nodes.insert(node.id.clone(), node.clone());
    }
    for node in g2.nodes() {
        match nodes.get_mut(&node.id) {
            None => {
                nodes.insert(node.id.clone(), node.clone());
            }
            Some(existing) => {
                if existing.label != node.label {
                    return Err(Error::IdentityConflict {
                        id: node.id.clone(),
                        left: existing.label.clone(),
                        right: node.label.clone(),
                    });
                }
                if existing.text != node.text && !node.text.is_empty() {
                    if existing.text.is_empty() {
                        existing.text = node.text.clone();
                    } else {
                        existing.text = format!("{}\n{}", existing.text, node.text);
                    }
                }
            }
        }
    }
    let mut merged = KnowledgeGraph::from_parts(nodes.into_values(), [])?;
    for edge in g1.edges() {
        merged.insert_edge(edge.clone())?;
    }
    for edge in g2.edges() {
        if !merged.has_edge(&edge.src, &edge.dst) {
            merged.insert_edge(edge.clone())?;
        }
    }
    Ok(merged)
}

/// Side assignment of every merged node relative to the two inputs.
pub fn side_assignment(
    g1: &KnowledgeGraph,
    g2: &KnowledgeGraph,
) -> BTreeMap<String, Side> {
    let mut sides = BTreeMap::new();
    for id in g1.node_ids() {
        sides.insert(id.to_string(), Side::First);
    }
    for id in g2.node_ids() {
        sides
            .entry(id.to_string())
            .and_modify(|s| *s = Side::Both)
            .or_insert(Side::Second);
    }
    sides
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn uniform_pm(state: &mut u64, bound: f64) -> f64 {
    let unit = (splitmix64(state) >> 11) as f64 / (1u64 << 53) as f64;
    (unit * 2.0 - 1.0) * bound
}

/// The two fixed projection matrices used by [`smooth_embeddings`], drawn
/// from `seed` with a self-contained generator so the values never depend
/// on library versions. Exposed so reference computations can reuse them.
pub fn projection_weights(
    seed: u64,
    in_dim: usize,
    hidden_dim: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut state = seed;
    let mut draw = |rows: usize, cols: usize| {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        (0..rows)
            .map(|_| (0..cols).map(|_| uniform_pm(&mut state, bound)).collect())
            .collect::<Vec<Vec<f64>>>()
    };
    let w1 = draw(in_dim, hidden_dim);
    let w2 = draw(hidden_dim, hidden_dim);
    (w1, w2)
}

/// Symmetric-normalized neighborhood aggregation with self-loops:
/// out[u] = sum over v in N(u) + {u} of x[v] / sqrt((deg(u)+1)(deg(v)+1)).
fn normalized_aggregate(
    graph: &KnowledgeGraph,
    ids: &[&str],
    features: &BTreeMap<&str, Vec<f64>>,
    width: usize,
) -> BTreeMap<String, Vec<f64>> {
    let mut out = BTreeMap::new();
    for &u in ids {
        let du = (graph.degree(u) + 1) as f64;
        let mut row = vec![0.0; width];
        let mut accumulate = |v: &str| {
            let dv = (graph.degree(v) + 1) as f64;
            let scale = 1.0 / (du * dv).sqrt();
            for (slot, x) in row.iter_mut().zip(&features[v]) {
                *slot += scale * x;
            }
        };
        accumulate(u);
        for v in graph.neighbors(u) {
            accumulate(v);
        }
        out.insert(u.to_string(), row);
    }
    out
}

fn project(
    rows: BTreeMap<String, Vec<f64>>,
    weights: &[Vec<f64>],
    out_dim: usize,
    relu: bool,
) -> BTreeMap<String, Vec<f64>> {
    rows.into_iter()
        .map(|(id, row)| {
            let mut out = vec![0.0; out_dim];
            for (i, x) in row.iter().enumerate() {
                for (j, slot) in out.iter_mut().enumerate() {
                    *slot += x * weights[i][j];
                }
            }
            if relu {
                for slot in &mut out {
                    if *slot < 0.0 {
                        *slot = 0.0;
                    }
                }
            }
            (id, out)
        })
        .collect()
}

/// Two rounds of message passing over the graph: aggregate, project with
/// fixed seeded weights, rectify after round one. Output vectors have
/// `cfg.hidden_dim` components; the whole computation is a pure function
/// of (graph, embeds, seed).
pub fn smooth_embeddings(
    graph: &KnowledgeGraph,
    embeds: &EmbeddingStore,
    cfg: &MessagePassingConfig,
) -> Result<EmbeddingStore> {
    cfg.validate()?;
    let ids: Vec<&str> = graph.node_ids().collect();
    let mut features: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for &id in &ids {
        features.insert(id, embeds.require(id)?.to_vec());
    }
    let (w1, w2) = projection_weights(cfg.seed, embeds.dim, cfg.hidden_dim);

    let aggregated = normalized_aggregate(graph, &ids, &features, embeds.dim);
    let hidden = project(aggregated, &w1, cfg.hidden_dim, true);

    let hidden_refs: BTreeMap<&str, Vec<f64>> =
        hidden.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    let aggregated = normalized_aggregate(graph, &ids, &hidden_refs, cfg.hidden_dim);
    let output = project(aggregated, &w2, cfg.hidden_dim, false);

    let mut store = EmbeddingStore::new(
        format!("{}+smoothed(seed={})", embeds.model_tag, cfg.seed),
        cfg.hidden_dim,
    )?;
    for (id, vector) in output {
        store.insert(id, vector)?;
    }
    Ok(store)
}

/// Top-K cross-side node pairs by smoothed-embedding similarity. Only
/// pairs with one node exclusive to each input qualify, and pairs already
/// adjacent in the merged graph are skipped. Fewer candidates than K
/// returns them all.
pub fn link_by_similarity(
    merged: &KnowledgeGraph,
    smoothed: &EmbeddingStore,
    side_of: &BTreeMap<String, Side>,
    cfg: &MessagePassingConfig,
) -> Result<Vec<(String, String, f64)>> {
    let firsts: Vec<&str> = side_of
        .iter()
        .filter(|(_, s)| **s == Side::First)
        .map(|(id, _)| id.as_str())
        .collect();
    let seconds: Vec<&str> = side_of
        .iter()
        .filter(|(_, s)| **s == Side::Second)
        .map(|(id, _)| id.as_str())
        .collect();
    let mut candidates = Vec::new();
    for &a in &firsts {
        for &b in &seconds {
            if merged.has_edge(a, b) {
                continue;
            }
            let sim = cosine_sim(smoothed.require(a)?, smoothed.require(b)?)?;
            let (src, dst) = if a <= b { (a, b) } else { (b, a) };
            candidates.push((src.to_string(), dst.to_string(), sim));
        }
    }
    candidates.sort_by(|x, y| {
        y.2.partial_cmp(&x.2)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| (&x.0, &x.1).cmp(&(&y.0, &y.1)))
    });
    candidates.truncate(cfg.top_k_edges);
    Ok(candidates)
}

/// New edges with their provenance, plus any labeling warnings.
pub type LabeledEdges = (Vec<(KgEdge, EdgeProvenance)>, Vec<String>);

/// Label new similarity links. Pairs already adjacent in the root graph
/// reuse the root relation without a backend call; otherwise the chat
/// backend is asked for a relation, falling back to `related-to` with a
/// warning when it cannot answer. Edge weight is the similarity clamped
/// to \[0,1\].
pub fn label_new_edges(
    pairs: &[(String, String, f64)],
    root: &KnowledgeGraph,
    chat: &dyn ChatBackend,
) -> Result<LabeledEdges> {
    const SCHEMA: &[(&str, FieldKind)] = &[("relation", FieldKind::Text)];
    let mut edges = Vec::new();
    let mut warnings = Vec::new();
    for (src, dst, similarity) in pairs {
        let weight = similarity.clamp(0.0, 1.0);
        if let Some(existing) = root.edge(src, dst) {
            edges.push((
                KgEdge {
                    src: src.clone(),
                    dst: dst.clone(),
                    relation: existing.relation.clone(),
                    weight,
                },
                EdgeProvenance::Similarity,
            ));
            continue;
        }
        let src_node = root.node(src).ok_or_else(|| Error::UnknownAnchor { id: src.clone() })?;
        let dst_node = root.node(dst).ok_or_else(|| Error::UnknownAnchor { id: dst.clone() })?;
        let request = ChatRequest::new(
            "You annotate knowledge-graph edges for astronomical imaging concepts.",
            format!(
                "Provide a short relation label (a few words) connecting these two \
                 entities.\n\nEntity A: {} — {}\nEntity B: {} — {}\n\nReply with only a \
                 fenced JSON object: {{\"relation\": <string>}}.",
                src_node.label, src_node.text, dst_node.label, dst_node.text
            ),
        );
        let tag = CallTag::new(Phase::EdgeLabel, src).with(dst.clone());
        let reply = structured_chat(chat, &tag, &request, SCHEMA)?;
        let relation = match reply.text("relation") {
            Some(text) if !reply.degraded && !text.is_empty() => text.to_string(),
            _ => {
                warnings.push(format!(
                    "backend could not label edge ({src}, {dst}); using {FALLBACK_RELATION:?}"
                ));
                FALLBACK_RELATION.to_string()
            }
        };
        edges.push((
            KgEdge {
                src: src.clone(),
                dst: dst.clone(),
                relation,
                weight,
            },
            EdgeProvenance::BackendLabeled,
        ));
    }
    Ok((edges, warnings))
}

/// Full aggregation of two subgraphs against the root graph.
pub fn aggregate(
    g1: &KnowledgeGraph,
    g2: &KnowledgeGraph,
    root: &KnowledgeGraph,
    embeds: &EmbeddingStore,
    cfg: &MessagePassingConfig,
    chat: &dyn ChatBackend,
) -> Result<AggregationResult> {
    cfg.validate()?;
    let mut merged = join_on_shared_nodes(g1, g2)?;
    let side_of = side_assignment(g1, g2);

    let mut provenance: BTreeMap<(String, String), EdgeProvenance> = BTreeMap::new();
    for edge in merged.edges() {
        let shared = side_of.get(&edge.src) == Some(&Side::Both)
            || side_of.get(&edge.dst) == Some(&Side::Both);
        if shared {
            provenance.insert(
                (edge.src.clone(), edge.dst.clone()),
                EdgeProvenance::SharedNode,
            );
        }
    }

    let mut new_edges = Vec::new();
    let mut warnings = Vec::new();
    if !merged.is_empty() {
        let smoothed = smooth_embeddings(&merged, embeds, cfg)?;
        let links = link_by_similarity(&merged, &smoothed, &side_of, cfg)?;
        let (labeled, label_warnings) = label_new_edges(&links, root, chat)?;
        warnings.extend(label_warnings);
        for ((edge, origin), (_, _, similarity)) in labeled.into_iter().zip(&links) {
            provenance.insert((edge.src.clone(), edge.dst.clone()), origin);
            new_edges.push(NewEdge {
                src: edge.src.clone(),
                dst: edge.dst.clone(),
                relation: edge.relation.clone(),
                similarity: *similarity,
            });
            merged.insert_edge(edge)?;
        }
    }
    Ok(AggregationResult {
        merged,
        new_edges,
        provenance,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::MockBackend;

    fn node(id: &str, text: &str) -> KgNode {
        KgNode {
            id: id.into(),
            label: id.into(),
            text: text.into(),
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

    fn store_for(graph: &KnowledgeGraph, dim: usize) -> EmbeddingStore {
        let mut store = EmbeddingStore::new("mock", dim).unwrap();
        for n in graph.nodes() {
            store.insert(&n.id, MockBackend::derive_vector(&n.id, dim)).unwrap();
        }
        store
    }

    #[test]
    fn join_is_idempotent_on_identical_inputs() {
        let g = KnowledgeGraph::from_parts([node("a", ""), node("b", "")], [edge("a", "b")])
            .unwrap();
        let joined = join_on_shared_nodes(&g, &g).unwrap();
        assert_eq!(joined, g);
    }

    #[test]
    fn disjoint_join_is_a_disconnected_union() {
        let g1 = KnowledgeGraph::from_parts([node("a", "")], []).unwrap();
        let g2 = KnowledgeGraph::from_parts([node("b", "")], []).unwrap();
        let joined = join_on_shared_nodes(&g1, &g2).unwrap();
        assert_eq!(joined.node_count(), 2);
        assert_eq!(joined.edge_count(), 0);
    }

    #[test]
    fn shared_node_unions_neighborhoods() {
        let g1 = KnowledgeGraph::from_parts(
            [node("a", ""), node("m", "")],
            [edge("a", "m")],
        )
        .unwrap();
        let g2 = KnowledgeGraph::from_parts(
            [node("m", ""), node("z", "")],
            [edge("m", "z")],
        )
        .unwrap();
        let joined = join_on_shared_nodes(&g1, &g2).unwrap();
        assert_eq!(joined.degree("m"), 2);
        assert_eq!(joined.node_count(), 3);
    }

    #[test]
    fn conflicting_labels_are_an_identity_conflict() {
        let g1 = KnowledgeGraph::from_parts(
            [KgNode {
                id: "m".into(),
                label: "Mount".into(),
                text: String::new(),
            }],
            [],
        )
        .unwrap();
        let g2 = KnowledgeGraph::from_parts(
            [KgNode {
                id: "m".into(),
                label: "Motor".into(),
                text: String::new(),
            }],
            [],
        )
        .unwrap();
        assert!(matches!(
            join_on_shared_nodes(&g1, &g2),
            Err(Error::IdentityConflict { .. })
        ));
    }

    #[test]
    fn smoothing_is_deterministic_and_sized() {
        let g = KnowledgeGraph::from_parts(
            [node("a", ""), node("b", ""), node("c", "")],
            [edge("a", "b"), edge("b", "c")],
        )
        .unwrap();
        let store = store_for(&g, 8);
        let cfg = MessagePassingConfig {
            hidden_dim: 4,
            seed: 7,
            ..Default::default()
        };
        let s1 = smooth_embeddings(&g, &store, &cfg).unwrap();
        let s2 = smooth_embeddings(&g, &store, &cfg).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.dim, 4);
        assert_eq!(s1.len(), 3);
    }

    #[test]
    fn zero_features_stay_zero() {
        let g = KnowledgeGraph::from_parts([node("a", ""), node("b", "")], [edge("a", "b")])
            .unwrap();
        let mut store = EmbeddingStore::new("zeros", 3).unwrap();
        store.insert("a", vec![0.0; 3]).unwrap();
        store.insert("b", vec![0.0; 3]).unwrap();
        let smoothed = smooth_embeddings(&g, &store, &MessagePassingConfig::default()).unwrap();
        assert!(smoothed.get("a").unwrap().iter().all(|x| *x == 0.0));
        assert!(smoothed.get("b").unwrap().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn isolated_node_smoothing_matches_direct_projection() {
        // One node with a self-loop in the normalization: aggregate is the
        // feature itself (deg_hat = 1), so output = relu(x W1) W2.
        let g = KnowledgeGraph::from_parts([node("solo", "")], []).unwrap();
        let mut store = EmbeddingStore::new("one", 2).unwrap();
        let x = vec![0.3, -0.8];
        store.insert("solo", x.clone()).unwrap();
        let cfg = MessagePassingConfig {
            hidden_dim: 3,
            seed: 11,
            ..Default::default()
        };
        let (w1, w2) = projection_weights(11, 2, 3);
        let mut h = vec![0.0; 3];
        for (i, xi) in x.iter().enumerate() {
            for j in 0..3 {
                h[j] += xi * w1[i][j];
            }
        }
        for slot in &mut h {
            if *slot < 0.0 {
                *slot = 0.0;
            }
        }
        let mut expected = vec![0.0; 3];
        for (i, hi) in h.iter().enumerate() {
            for j in 0..3 {
                expected[j] += hi * w2[i][j];
            }
        }
        let smoothed = smooth_embeddings(&g, &store, &cfg).unwrap();
        let got = smoothed.get("solo").unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn all_nodes_shared_means_no_links() {
        let g = KnowledgeGraph::from_parts([node("a", ""), node("b", "")], [edge("a", "b")])
            .unwrap();
        let sides = side_assignment(&g, &g);
        let store = store_for(&g, 8);
        let smoothed = smooth_embeddings(&g, &store, &MessagePassingConfig::default()).unwrap();
        let links =
            link_by_similarity(&g, &smoothed, &sides, &MessagePassingConfig::default()).unwrap();
        assert!(links.is_empty());
    }

    #[test]
    fn cross_pairs_ranked_by_similarity() {
        // Hand-computed 2x2 candidate similarities via a crafted store.
        let g1 = KnowledgeGraph::from_parts([node("a1", ""), node("a2", "")], []).unwrap();
        let g2 = KnowledgeGraph::from_parts([node("b1", ""), node("b2", "")], []).unwrap();
        let merged = join_on_shared_nodes(&g1, &g2).unwrap();
        let sides = side_assignment(&g1, &g2);
        let mut smoothed = EmbeddingStore::new("hand", 2).unwrap();
        smoothed.insert("a1", vec![1.0, 0.0]).unwrap();
        smoothed.insert("a2", vec![0.0, 1.0]).unwrap();
        smoothed.insert("b1", vec![0.9, 0.1]).unwrap();
        smoothed.insert("b2", vec![0.5, 0.5]).unwrap();
        let cfg = MessagePassingConfig {
            top_k_edges: 10,
            ..Default::default()
        };
        let links = link_by_similarity(&merged, &smoothed, &sides, &cfg).unwrap();
        assert_eq!(links.len(), 4);
        // argmax pair first: cos(a1,b1) is the largest.
        assert_eq!(links[0].0, "a1");
        assert_eq!(links[0].1, "b1");
        // K larger than candidates returns all, sorted by similarity.
        assert!(links.windows(2).all(|w| w[0].2 >= w[1].2));
    }

    #[test]
    fn root_adjacent_pairs_reuse_relation_without_backend() {
        let root = KnowledgeGraph::from_parts(
            [node("x", ""), node("y", "")],
            [KgEdge {
                src: "x".into(),
                dst: "y".into(),
                relation: "requires".into(),
                weight: 0.9,
            }],
        )
        .unwrap();
        // Strict mock with no entries: any backend call would error.
        let chat = MockBackend::new(crate::backends::MockScript {
            strict: true,
            ..Default::default()
        })
        .unwrap();
        let pairs = vec![("x".to_string(), "y".to_string(), 0.8)];
        let (edges, warnings) = label_new_edges(&pairs, &root, &chat).unwrap();
        assert_eq!(edges.len(), 1);
        assert_eq!(edges[0].0.relation, "requires");
        assert_eq!(edges[0].1, EdgeProvenance::Similarity);
        assert!(warnings.is_empty());
    }

    #[test]
    fn scripted_relation_label_is_used() {
        let root = KnowledgeGraph::from_parts([node("x", ""), node("y", "")], []).unwrap();
        let chat = MockBackend::default()
            .with_entry("edge_label:x:y", "```json\n{\"relation\":\"calibrates\"}\n```");
        let pairs = vec![("x".to_string(), "y".to_string(), 0.8)];
        let (edges, warnings) = label_new_edges(&pairs, &root, &chat).unwrap();
        assert_eq!(edges[0].0.relation, "calibrates");
        assert_eq!(edges[0].1, EdgeProvenance::BackendLabeled);
        assert!(warnings.is_empty());
    }

    #[test]
    fn empty_reply_falls_back_with_warning() {
        let root = KnowledgeGraph::from_parts([node("x", ""), node("y", "")], []).unwrap();
        let chat = MockBackend::default().with_entry("edge_label:x:y", "");
        let pairs = vec![("x".to_string(), "y".to_string(), 0.8)];
        let (edges, warnings) = label_new_edges(&pairs, &root, &chat).unwrap();
        assert_eq!(edges[0].0.relation, FALLBACK_RELATION);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn aggregation_keeps_both_inputs_and_bounds_new_edges() {
        let root = KnowledgeGraph::from_parts(
            [node("a", ""), node("b", ""), node("c", ""), node("d", "")],
            [edge("a", "b"), edge("b", "c"), edge("c", "d")],
        )
        .unwrap();
        let g1 = KnowledgeGraph::from_parts(
            [node("a", ""), node("b", "")],
            [edge("a", "b")],
        )
        .unwrap();
        let g2 = KnowledgeGraph::from_parts(
            [node("c", ""), node("d", "")],
            [edge("c", "d")],
        )
        .unwrap();
        let store = store_for(&root, 8);
        let cfg = MessagePassingConfig {
            top_k_edges: 2,
            hidden_dim: 4,
            ..Default::default()
        };
        let chat = MockBackend::default().with_default_reply("```json\n{\"relation\":\"linked\"}\n```");
        let result = aggregate(&g1, &g2, &root, &store, &cfg, &chat).unwrap();
        assert!(g1.is_subgraph_of(&result.merged));
        assert!(g2.is_subgraph_of(&result.merged));
        assert!(result.new_edges.len() <= 2);
        for new_edge in &result.new_edges {
            assert!(result.merged.has_edge(&new_edge.src, &new_edge.dst));
            assert!(!new_edge.relation.is_empty());
        }
    }
}
