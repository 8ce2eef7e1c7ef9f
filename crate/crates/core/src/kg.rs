//! Knowledge-graph data model and its on-disk form.
//!
//! Graphs are undirected: an edge is identified by its unordered endpoint
//! pair, and adjacency is symmetric. Construction validates every invariant
//! up front so the rest of the engine can treat a [`KnowledgeGraph`] as
//! immutable and well-formed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labeled entity in the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KgNode {
    pub id: String,
    pub label: String,
    /// Source description attached to the entity. May be empty.
    #[serde(default)]
    pub text: String,
}

/// An undirected relation between two nodes, stored with `src < dst`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KgEdge {
    pub src: String,
    pub dst: String,
    pub relation: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeGraph {
    nodes: BTreeMap<String, KgNode>,
    edges: BTreeMap<(String, String), KgEdge>,
    adjacency: BTreeMap<String, BTreeSet<String>>,
}

/// On-disk form of a graph (`kg.json`). Arrays are sorted on save;
/// `config_echo`, when present, records the run configuration that wrote
/// the file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KgFile {
    nodes: Vec<KgNode>,
    edges: Vec<KgEdge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_echo: Option<serde_json::Value>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build a validated graph from parts. Rejects duplicate ids, empty
    /// ids/labels, dangling edges, self-loops, duplicate unordered pairs,
    /// and weights outside \[0,1\].
    pub fn from_parts(
        nodes: impl IntoIterator<Item = KgNode>,
        edges: impl IntoIterator<Item = KgEdge>,
    ) -> Result<Self> {
        let mut graph = Self::new();
        for node in nodes {
            graph.insert_node(node)?;
        }
        for edge in edges {
            graph.insert_edge(edge)?;
        }
        Ok(graph)
    }

    pub fn insert_node(&mut self, node: KgNode) -> Result<()> {
        if node.id.is_empty() {
            return Err(Error::EmptyField {
                what: "node id".into(),
            });
        }
        if node.label.is_empty() {
            return Err(Error::EmptyField {
                what: format!("label of node {:?}", node.id),
            });
        }
        if self.nodes.contains_key(&node.id) {
            return Err(Error::DuplicateNode { id: node.id });
        }
        self.adjacency.insert(node.id.clone(), BTreeSet::new());
        self.nodes.insert(node.id.clone(), node);
        Ok(())
    }

    pub fn insert_edge(&mut self, edge: KgEdge) -> Result<()> {
        let KgEdge {
            src,
            dst,
            relation,
            weight,
        } = edge;
        if src == dst {
            return Err(Error::SelfLoop { id: src });
        }
        // Canonical unordered-pair representation.
        let (a, b) = if src <= dst { (src, dst) } else { (dst, src) };
        if !self.nodes.contains_key(&a) {
            return Err(Error::DanglingEdge {
                src: a.clone(),
                dst: b,
                which: a,
            });
        }
        if !self.nodes.contains_key(&b) {
            return Err(Error::DanglingEdge {
                src: a,
                dst: b.clone(),
                which: b,
            });
        }
        if !(0.0..=1.0).contains(&weight) || !weight.is_finite() {
            return Err(Error::EdgeWeightRange {
                src: a,
                dst: b,
                weight,
            });
        }
        if self.edges.contains_key(&(a.clone(), b.clone())) {
            return Err(Error::DuplicateEdge { src: a, dst: b });
        }
        self.adjacency.get_mut(&a).expect("endpoint exists").insert(b.clone());
        self.adjacency.get_mut(&b).expect("endpoint exists").insert(a.clone());
        self.edges.insert(
            (a.clone(), b.clone()),
            KgEdge {
                src: a,
                dst: b,
                relation,
                weight,
            },
        );
        Ok(())
    }

    pub fn node(&self, id: &str) -> Option<&KgNode> {
        self.nodes.get(id)
    }

    pub fn contains_node(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    /// Nodes in deterministic (id-sorted) order.
    pub fn nodes(&self) -> impl Iterator<Item = &KgNode> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    /// Edges in deterministic ((src,dst)-sorted) order.
    pub fn edges(&self) -> impl Iterator<Item = &KgEdge> {
        self.edges.values()
    }

    pub fn edge(&self, a: &str, b: &str) -> Option<&KgEdge> {
        let key = if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        };
        self.edges.get(&key)
    }

    pub fn has_edge(&self, a: &str, b: &str) -> bool {
        self.edge(a, b).is_some()
    }

    /// Neighbors of `id` in sorted order; empty if the node is unknown.
    pub fn neighbors(&self, id: &str) -> impl Iterator<Item = &str> {
        self.adjacency
            .get(id)
            .into_iter()
            .flat_map(|set| set.iter().map(String::as_str))
    }

    pub fn degree(&self, id: &str) -> usize {
        self.adjacency.get(id).map_or(0, BTreeSet::len)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// True when every node and edge of `self` is present in `other`.
    pub fn is_subgraph_of(&self, other: &KnowledgeGraph) -> bool {
        self.nodes.keys().all(|id| other.contains_node(id))
            && self.edges.keys().all(|(a, b)| other.has_edge(a, b))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&bytes, &path.display().to_string())
    }

    pub fn from_json(bytes: &[u8], context: &str) -> Result<Self> {
        let file: KgFile =
            serde_json::from_slice(bytes).map_err(|e| Error::schema(context, e))?;
        Self::from_parts(file.nodes, file.edges)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.save_with_echo(path, None)
    }

    pub fn save_with_echo(
        &self,
        path: impl AsRef<Path>,
        config_echo: Option<serde_json::Value>,
    ) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_json(config_echo);
        std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn to_json(&self, config_echo: Option<serde_json::Value>) -> Vec<u8> {
        let file = KgFile {
            nodes: self.nodes.values().cloned().collect(),
            edges: self.edges.values().cloned().collect(),
            config_echo,
        };
        let mut out = serde_json::to_vec_pretty(&file).expect("graph serializes");
        out.push(b'\n');
        out
    }
}

/// Cosine similarity clamped to [-1,1]. A zero vector on either side yields
/// the degenerate result 0 instead of an error so that nodes with empty
/// source text do not abort a run.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}
