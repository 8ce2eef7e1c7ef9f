//! Backtracking diagnosis: an error detected by the pipeline seeds a
//! collaborative reasoning tree built by re-examining upstream agents
//! (queue-driven backtracking), then cause selection walks the tree under
//! the threshold rules and the coordinator composes the final narrative.

mod backtrack;
mod causes;

pub use backtrack::{chain_of_backtracking, evaluate_edge};
pub use causes::{
    aggregate_causes, resolve_conflict, tree_reasoning, CauseChain, ConflictResolution,
    TreeReasoningOutcome,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::AgentReply;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RwbConfig {
    /// Confidence threshold gating further backtracking.
    pub tau: f64,
    /// Conflict threshold: a node disagreeing with its incoming edge by
    /// more than this triggers coordinator arbitration.
    pub xi: f64,
    /// Selection threshold for cause nodes.
    pub eta: f64,
    pub max_depth: usize,
}

impl Default for RwbConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            xi: 0.4,
            eta: 0.5,
            max_depth: 6,
        }
    }
}

impl RwbConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("tau", self.tau), ("xi", self.xi), ("eta", self.eta)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::config(format!("{name} {} outside [0,1]", value)));
            }
        }
        if self.max_depth == 0 {
            return Err(Error::config("max_depth must be at least 1"));
        }
        Ok(())
    }
}

/// A tree node: one agent's assessment with its confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrtNode {
    pub node_id: String,
    pub agent_id: String,
    pub order_index: u32,
    /// Mirrors `reply.confidence`; revised in place by conflict
    /// resolution.
    pub confidence: f64,
    pub reply: AgentReply,
}

/// Directed parent -> child edge; the weight is the coordinator's
/// confidence that the child's process caused the parent's error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrtEdge {
    pub parent: String,
    pub child: String,
    pub weight: f64,
}

/// A reference to an agent already present in the tree, found again while
/// expanding another node. Kept out of the tree to preserve the
/// single-parent property; reported as an appendix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossLink {
    pub from_node: String,
    pub to_agent: String,
}

/// The reasoning tree rooted at a detected error. Nodes join in insertion
/// order with ids `n000`, `n001`, ...; every non-root node has exactly one
/// parent.
#[derive(Debug, Clone, PartialEq)]
pub struct CollaborativeReasoningTree {
    nodes: Vec<CrtNode>,
    edges: Vec<CrtEdge>,
    root: String,
    cross_links: Vec<CrossLink>,
    index_of: BTreeMap<String, usize>,
    parent_edge_of: BTreeMap<String, usize>,
    child_edges_of: BTreeMap<String, Vec<usize>>,
    node_of_agent: BTreeMap<String, String>,
}

impl CollaborativeReasoningTree {
    pub fn new(mut root: CrtNode) -> Self {
        root.node_id = "n000".into();
        let root_id = root.node_id.clone();
        let mut tree = Self {
            nodes: Vec::new(),
            edges: Vec::new(),
            root: root_id.clone(),
            cross_links: Vec::new(),
            index_of: BTreeMap::new(),
            parent_edge_of: BTreeMap::new(),
            child_edges_of: BTreeMap::new(),
            node_of_agent: BTreeMap::new(),
        };
        tree.index_of.insert(root_id.clone(), 0);
        tree.node_of_agent
            .insert(root.agent_id.clone(), root_id);
        tree.nodes.push(root);
        tree
    }

    /// Attach a new node under `parent_id`. The node receives the next
    /// sequential id; an agent may appear in the tree only once.
    pub fn add_child(&mut self, parent_id: &str, mut node: CrtNode, weight: f64) -> Result<String> {
        if !self.index_of.contains_key(parent_id) {
            return Err(Error::config(format!("unknown tree node {parent_id:?}")));
        }
        if self.node_of_agent.contains_key(&node.agent_id) {
            return Err(Error::config(format!(
                "agent {:?} is already in the tree",
                node.agent_id
            )));
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::config(format!("edge weight {weight} outside [0,1]")));
        }
        node.node_id = format!("n{:03}", self.nodes.len());
        let node_id = node.node_id.clone();
        self.index_of.insert(node_id.clone(), self.nodes.len());
        self.node_of_agent
            .insert(node.agent_id.clone(), node_id.clone());
        self.nodes.push(node);
        let edge_index = self.edges.len();
        self.edges.push(CrtEdge {
            parent: parent_id.to_string(),
            child: node_id.clone(),
            weight,
        });
        self.parent_edge_of.insert(node_id.clone(), edge_index);
        self.child_edges_of
            .entry(parent_id.to_string())
            .or_default()
            .push(edge_index);
        Ok(node_id)
    }

    pub fn add_cross_link(&mut self, from_node: &str, to_agent: &str) {
        self.cross_links.push(CrossLink {
            from_node: from_node.to_string(),
            to_agent: to_agent.to_string(),
        });
    }

    pub fn root_id(&self) -> &str {
        &self.root
    }

    pub fn node(&self, node_id: &str) -> Option<&CrtNode> {
        self.index_of.get(node_id).map(|i| &self.nodes[*i])
    }

    pub(crate) fn node_mut(&mut self, node_id: &str) -> Option<&mut CrtNode> {
        let index = *self.index_of.get(node_id)?;
        Some(&mut self.nodes[index])
    }

    pub fn nodes(&self) -> &[CrtNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[CrtEdge] {
        &self.edges
    }

    pub fn cross_links(&self) -> &[CrossLink] {
        &self.cross_links
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_id_of_agent(&self, agent_id: &str) -> Option<&str> {
        self.node_of_agent.get(agent_id).map(String::as_str)
    }

    /// Parent node id and incoming edge weight; `None` for the root.
    pub fn parent_of(&self, node_id: &str) -> Option<(&str, f64)> {
        let edge = &self.edges[*self.parent_edge_of.get(node_id)?];
        Some((edge.parent.as_str(), edge.weight))
    }

    pub(crate) fn set_parent_weight(&mut self, node_id: &str, weight: f64) -> Result<()> {
        let Some(edge_index) = self.parent_edge_of.get(node_id).copied() else {
            return Err(Error::config(format!("node {node_id:?} has no parent edge")));
        };
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::config(format!("edge weight {weight} outside [0,1]")));
        }
        self.edges[edge_index].weight = weight;
        Ok(())
    }

    pub fn children_of(&self, node_id: &str) -> Vec<(&str, f64)> {
        self.child_edges_of
            .get(node_id)
            .into_iter()
            .flatten()
            .map(|i| {
                let edge = &self.edges[*i];
                (edge.child.as_str(), edge.weight)
            })
            .collect()
    }

    /// Largest outgoing edge weight, 0 for a leaf.
    pub fn max_child_weight(&self, node_id: &str) -> f64 {
        self.children_of(node_id)
            .iter()
            .map(|(_, w)| *w)
            .fold(0.0, f64::max)
    }

    pub fn is_leaf(&self, node_id: &str) -> bool {
        self.child_edges_of
            .get(node_id)
            .is_none_or(|edges| edges.is_empty())
    }

    /// Leaves in insertion order.
    pub fn leaves(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|n| self.is_leaf(&n.node_id))
            .map(|n| n.node_id.as_str())
            .collect()
    }

    /// Node ids from the root down to `node_id` inclusive.
    pub fn path_from_root(&self, node_id: &str) -> Vec<String> {
        let mut path = vec![node_id.to_string()];
        let mut current = node_id;
        while let Some((parent, _)) = self.parent_of(current) {
            path.push(parent.to_string());
            current = parent;
        }
        path.reverse();
        path
    }

    pub fn depth_of(&self, node_id: &str) -> usize {
        self.path_from_root(node_id).len() - 1
    }

    pub fn to_serialized(&self) -> SerializedTree {
        SerializedTree {
            root: self.root.clone(),
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
            cross_links: self.cross_links.clone(),
        }
    }

    /// Rebuild a tree from its serialized form, revalidating the tree
    /// invariants (sequential ids, single parent, connectivity,
    /// weight/confidence ranges).
    pub fn from_serialized(serialized: &SerializedTree) -> Result<Self> {
        let mut nodes = serialized.nodes.iter();
        let Some(root) = nodes.next() else {
            return Err(Error::schema("tree", "tree has no nodes"));
        };
        if root.node_id != serialized.root {
            return Err(Error::schema("tree", "first node is not the root"));
        }
        let mut tree = Self::new(root.clone());
        for node in nodes {
            let Some(edge) = serialized.edges.iter().find(|e| e.child == node.node_id) else {
                return Err(Error::schema(
                    "tree",
                    format!("node {:?} has no incoming edge", node.node_id),
                ));
            };
            let assigned = tree.add_child(&edge.parent, node.clone(), edge.weight)?;
            if assigned != node.node_id {
                return Err(Error::schema(
                    "tree",
                    format!("node ids not sequential at {:?}", node.node_id),
                ));
            }
        }
        if tree.edges.len() != serialized.edges.len() {
            return Err(Error::schema("tree", "extra edges in serialized tree"));
        }
        tree.cross_links = serialized.cross_links.clone();
        Ok(tree)
    }
}

/// The on-disk shape of a tree inside `report.json`; sufficient to
/// re-verify every selection decision offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SerializedTree {
    pub root: String,
    pub nodes: Vec<CrtNode>,
    pub edges: Vec<CrtEdge>,
    #[serde(default)]
    pub cross_links: Vec<CrossLink>,
}

#[cfg(test)]
pub(crate) fn test_node(agent_id: &str, order_index: u32, confidence: f64) -> CrtNode {
    CrtNode {
        node_id: String::new(),
        agent_id: agent_id.into(),
        order_index,
        confidence,
        reply: AgentReply {
            agent_id: agent_id.into(),
            observation: format!("{agent_id} observation"),
            error_detected: false,
            error_summary: String::new(),
            confidence,
            rationale: String::new(),
            degraded: false,
            flags: vec![],
        },
    }
}
