//! Cause selection over a finished reasoning tree.
//!
//! Every leaf-to-root chain is walked; a node whose incoming edge clears
//! the selection threshold while all its outgoing edges stay below it is
//! selected as a cause. A selected node whose own confidence disagrees
//! with the incoming weight beyond the conflict threshold is re-judged by
//! the coordinator, whose revision overwrites the node and the edge.
//! Because revisions mutate the tree, the selection set is re-checked
//! against the final tree so a report always re-verifies offline.

use serde::{Deserialize, Serialize};

use crate::backends::{structured_chat, Backends, CallTag, ChatRequest, FieldKind, Phase};
use crate::error::Result;
use crate::pipeline::{CoordinatorSpec, Pipeline};

use super::{CollaborativeReasoningTree, RwbConfig};

/// One selected cause: the chain from the root to the causal node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CauseChain {
    pub agent_id: String,
    pub node_id: String,
    /// Node ids from the root to the causal node inclusive.
    pub chain: Vec<String>,
    /// Incoming edge weight of the causal node (root confidence for a
    /// root-only hypothesis).
    pub weight: f64,
}

/// Record of one coordinator arbitration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConflictResolution {
    pub parent: String,
    pub child: String,
    pub resolved: bool,
    pub revised_confidence: f64,
    pub revised_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeReasoningOutcome {
    /// Causes ordered by incoming weight descending, agent order index
    /// ascending on ties.
    pub causes: Vec<CauseChain>,
    /// Highest-weight chain, reported when no cause clears the thresholds.
    pub hypothesis: Option<CauseChain>,
    pub narrative: String,
    pub resolutions: Vec<ConflictResolution>,
    pub flags: Vec<String>,
}

const RESOLVE_SCHEMA: &[(&str, FieldKind)] = &[
    ("revised_assessment", FieldKind::Text),
    ("revised_confidence", FieldKind::Number),
    ("revised_weight", FieldKind::Number),
];

/// Coordinator arbitration for a parent/child disagreement. Returns the
/// revision, or `None` when the coordinator's reply is unusable (the tree
/// is left untouched).
pub fn resolve_conflict(
    tree: &CollaborativeReasoningTree,
    parent_id: &str,
    child_id: &str,
    error_summary: &str,
    coordinator: &CoordinatorSpec,
    pipeline: &Pipeline,
    backends: &Backends,
) -> Result<Option<(String, f64, f64)>> {
    let parent = tree.node(parent_id).expect("parent exists");
    let child = tree.node(child_id).expect("child exists");
    let (_, edge_weight) = tree.parent_of(child_id).expect("child has parent");
    let process_of = |agent_id: &str| {
        pipeline
            .agent(agent_id)
            .map(|a| a.process_name.clone())
            .unwrap_or_else(|| agent_id.to_string())
    };
    let prompt = coordinator
        .resolve_conflict_template
        .replace("{error_summary}", error_summary)
        .replace("{parent_agent}", &parent.agent_id)
        .replace("{parent_process}", &process_of(&parent.agent_id))
        .replace("{parent_confidence}", &format!("{:.3}", parent.confidence))
        .replace("{parent_response}", &parent.reply.observation)
        .replace("{child_agent}", &child.agent_id)
        .replace("{child_process}", &process_of(&child.agent_id))
        .replace("{child_confidence}", &format!("{:.3}", child.confidence))
        .replace("{child_response}", &child.reply.observation)
        .replace("{edge_weight}", &format!("{edge_weight:.3}"));
    let request = ChatRequest::new("You are the coordinator arbitrating a disagreement.", prompt);
    let tag = CallTag::new(Phase::ResolveConflict, &parent.agent_id)
        .with(child.agent_id.clone())
        .with(error_summary.to_string());
    let reply = structured_chat(backends.chat.as_ref(), &tag, &request, RESOLVE_SCHEMA)?;
    if reply.degraded {
        return Ok(None);
    }
    let assessment = reply.text("revised_assessment").expect("schema").to_string();
    let confidence = reply.number("revised_confidence").expect("schema").clamp(0.0, 1.0);
    let weight = reply.number("revised_weight").expect("schema").clamp(0.0, 1.0);
    Ok(Some((assessment, confidence, weight)))
}

fn selection_predicate(tree: &CollaborativeReasoningTree, node_id: &str, eta: f64) -> bool {
    let Some((_, w_parent)) = tree.parent_of(node_id) else {
        return false;
    };
    w_parent > eta && tree.max_child_weight(node_id) < eta
}

fn chain_for(tree: &CollaborativeReasoningTree, node_id: &str) -> CauseChain {
    let node = tree.node(node_id).expect("node exists");
    let weight = tree
        .parent_of(node_id)
        .map(|(_, w)| w)
        .unwrap_or(node.confidence);
    CauseChain {
        agent_id: node.agent_id.clone(),
        node_id: node_id.to_string(),
        chain: tree.path_from_root(node_id),
        weight,
    }
}

/// Walk every leaf-to-root chain, selecting causes and arbitrating
/// conflicts (each node at most once; revisions persist for later
/// chains). Returns the outcome with the coordinator narrative; the tree
/// is left in its final, possibly revised state.
pub fn tree_reasoning(
    tree: &mut CollaborativeReasoningTree,
    error_summary: &str,
    origin_agent: &str,
    cfg: &RwbConfig,
    pipeline: &Pipeline,
    backends: &Backends,
) -> Result<TreeReasoningOutcome> {
    cfg.validate()?;
    let mut selected: Vec<String> = Vec::new();
    let mut arbitrated: Vec<String> = Vec::new();
    let mut resolutions: Vec<ConflictResolution> = Vec::new();
    let mut flags: Vec<String> = Vec::new();

    let leaves: Vec<String> = tree.leaves().iter().map(|s| s.to_string()).collect();
    for leaf in &leaves {
        let mut current = leaf.clone();
        while let Some((parent_id, w_parent)) = tree.parent_of(&current).map(|(p, w)| (p.to_string(), w)) {
            let w_child = tree.max_child_weight(&current);
            if w_parent > cfg.eta && w_child < cfg.eta {
                if !selected.contains(&current) {
                    selected.push(current.clone());
                }
                let confidence = tree.node(&current).expect("node exists").confidence;
                if (confidence - w_parent).abs() > cfg.xi && !arbitrated.contains(&current) {
                    arbitrated.push(current.clone());
                    match resolve_conflict(
                        tree,
                        &parent_id,
                        &current,
                        error_summary,
                        &pipeline.coordinator,
                        pipeline,
                        backends,
                    )? {
                        Some((assessment, revised_confidence, revised_weight)) => {
                            {
                                let node = tree.node_mut(&current).expect("node exists");
                                if !assessment.is_empty() {
                                    node.reply.observation = assessment;
                                }
                                node.confidence = revised_confidence;
                                node.reply.confidence = revised_confidence;
                            }
                            tree.set_parent_weight(&current, revised_weight)?;
                            resolutions.push(ConflictResolution {
                                parent: parent_id.clone(),
                                child: current.clone(),
                                resolved: true,
                                revised_confidence,
                                revised_weight,
                            });
                        }
                        None => {
                            flags.push(format!("unresolved-conflict:{current}"));
                            resolutions.push(ConflictResolution {
                                parent: parent_id.clone(),
                                child: current.clone(),
                                resolved: false,
                                revised_confidence: confidence,
                                revised_weight: w_parent,
                            });
                        }
                    }
                }
            }
            current = parent_id;
        }
    }

    // Revisions may have moved weights across the threshold; keep only
    // causes that still verify against the final tree.
    let mut causes: Vec<CauseChain> = Vec::new();
    for node_id in &selected {
        if selection_predicate(tree, node_id, cfg.eta) {
            causes.push(chain_for(tree, node_id));
        } else {
            flags.push(format!("cause-dropped-after-resolution:{node_id}"));
        }
    }
    causes.sort_by(|a, b| {
        b.weight
            .partial_cmp(&a.weight)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| {
                let ia = tree.node(&a.node_id).map(|n| n.order_index).unwrap_or(u32::MAX);
                let ib = tree.node(&b.node_id).map(|n| n.order_index).unwrap_or(u32::MAX);
                ia.cmp(&ib)
            })
    });

    let hypothesis = if causes.is_empty() {
        Some(best_chain_hypothesis(tree))
    } else {
        None
    };

    let (narrative, narrative_flags) = aggregate_causes(
        &causes,
        hypothesis.as_ref(),
        tree,
        error_summary,
        origin_agent,
        &pipeline.coordinator,
        backends,
    )?;
    flags.extend(narrative_flags);

    Ok(TreeReasoningOutcome {
        causes,
        hypothesis,
        narrative,
        resolutions,
        flags,
    })
}

/// Fallback chain when nothing clears the selection thresholds: the leaf
/// with the heaviest incoming edge (earliest node id on ties), or the
/// root alone for a single-node tree.
fn best_chain_hypothesis(tree: &CollaborativeReasoningTree) -> CauseChain {
    let mut best: Option<(f64, &str)> = None;
    for leaf in tree.leaves() {
        if let Some((_, weight)) = tree.parent_of(leaf) {
            let better = match best {
                None => true,
                Some((best_weight, _)) => weight > best_weight,
            };
            if better {
                best = Some((weight, leaf));
            }
        }
    }
    match best {
        Some((_, leaf)) => chain_for(tree, leaf),
        None => chain_for(tree, tree.root_id()),
    }
}

/// Compose the final narrative from the ordered cause list. The list
/// itself is computed locally; only the prose comes from the coordinator,
/// and a backend failure leaves the narrative empty with a flag.
pub fn aggregate_causes(
    causes: &[CauseChain],
    hypothesis: Option<&CauseChain>,
    tree: &CollaborativeReasoningTree,
    error_summary: &str,
    origin_agent: &str,
    coordinator: &CoordinatorSpec,
    backends: &Backends,
) -> Result<(String, Vec<String>)> {
    let describe = |chain: &CauseChain| {
        let steps: Vec<String> = chain
            .chain
            .iter()
            .filter_map(|id| tree.node(id))
            .map(|n| n.agent_id.clone())
            .collect();
        format!(
            "- {} (weight {:.3}) via {}",
            chain.agent_id,
            chain.weight,
            steps.join(" -> ")
        )
    };
    let cause_lines = if causes.is_empty() {
        let mut text = String::from("(no confident root cause)");
        if let Some(h) = hypothesis {
            text.push_str("\nHypothesis only:\n");
            text.push_str(&describe(h));
        }
        text
    } else {
        causes.iter().map(describe).collect::<Vec<_>>().join("\n")
    };
    let chain_lines: Vec<String> = tree
        .leaves()
        .iter()
        .map(|leaf| {
            tree.path_from_root(leaf)
                .iter()
                .filter_map(|id| tree.node(id))
                .map(|n| format!("{}({:.2})", n.agent_id, n.confidence))
                .collect::<Vec<_>>()
                .join(" -> ")
        })
        .collect();
    let prompt = coordinator
        .aggregate_template
        .replace("{error_summary}", error_summary)
        .replace("{causes}", &cause_lines)
        .replace("{chains}", &chain_lines.join("\n"));
    let request = ChatRequest::new("You are the coordinator composing the final diagnosis.", prompt);
    let tag = CallTag::new(Phase::Aggregate, origin_agent).with(error_summary.to_string());
    const SCHEMA: &[(&str, FieldKind)] = &[("narrative", FieldKind::Text)];
    let reply = structured_chat(backends.chat.as_ref(), &tag, &request, SCHEMA)?;
    if reply.degraded {
        return Ok((String::new(), vec!["narrative-degraded".into()]));
    }
    Ok((reply.text("narrative").expect("schema").to_string(), Vec::new()))
}
