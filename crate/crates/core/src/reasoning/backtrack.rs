//! Queue-driven construction of the reasoning tree.
//!
//! Starting from the agent that detected the error, every relevant
//! predecessor re-examines its own process against the error and the
//! current node's assessment; the coordinator scores each causal edge.
//! A predecessor is expanded further only when both its confidence and
//! its edge weight clear the threshold. Each agent enters the tree at
//! most once; repeat encounters become cross-links in the report
//! appendix.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use crate::backends::{structured_chat, Backends, CallTag, ChatRequest, FieldKind, Phase};
use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::pipeline::runner::{reply_from_structured, AGENT_REPLY_SCHEMA};
use crate::pipeline::{AgentReply, AgentSpec, CoordinatorSpec, DetectedError, Pipeline};

use super::{CollaborativeReasoningTree, CrtNode, RwbConfig};

fn crt_node(spec: &AgentSpec, reply: AgentReply) -> CrtNode {
    CrtNode {
        node_id: String::new(),
        agent_id: spec.agent_id.clone(),
        order_index: spec.order_index,
        confidence: reply.confidence,
        reply,
    }
}

fn reexamine(
    spec: &AgentSpec,
    error: &DetectedError,
    parent: &CrtNode,
    parent_spec: &AgentSpec,
    subkg: &KnowledgeGraph,
    backends: &Backends,
    context_top_n: usize,
) -> Result<AgentReply> {
    let context = crate::pipeline::runner::context_for_question(
        subkg,
        &error.summary,
        backends,
        context_top_n,
    )?;
    let prompt = format!(
        "An error was detected in the {} process:\n{}\n\nAssessment by the {} specialist \
         ({}):\n{}\n\nReference knowledge:\n{}\n\nRe-examine your own process ({}) and judge \
         whether it could be the origin of this error. Reply with only a fenced JSON object: \
         {{\"observation\": <string>, \"error_detected\": <bool>, \"error_summary\": <string>, \
         \"confidence\": <number 0-1>, \"rationale\": <string>}}.",
        error.agent_id,
        error.summary,
        parent_spec.process_name,
        parent.agent_id,
        parent.reply.observation,
        if context.is_empty() { "(none)" } else { &context },
        spec.process_name,
    );
    let request = ChatRequest::new(
        "You are a meticulous astronomical imaging specialist re-examining your process.",
        prompt,
    );
    let tag = CallTag::new(Phase::Reexamine, &spec.agent_id).with(error.summary.clone());
    let reply = structured_chat(backends.chat.as_ref(), &tag, &request, AGENT_REPLY_SCHEMA)?;
    Ok(reply_from_structured(&spec.agent_id, &reply))
}

/// Ask the coordinator for the confidence that the child's process caused
/// the parent's error. Unparseable replies score 0 and flag the edge.
pub fn evaluate_edge(
    parent: &CrtNode,
    child: &CrtNode,
    error_summary: &str,
    coordinator: &CoordinatorSpec,
    pipeline: &Pipeline,
    backends: &Backends,
) -> Result<(f64, bool)> {
    let process_of = |agent_id: &str| {
        pipeline
            .agent(agent_id)
            .map(|a| a.process_name.clone())
            .unwrap_or_else(|| agent_id.to_string())
    };
    let prompt = coordinator
        .evaluate_edge_template
        .replace("{parent_process}", &process_of(&parent.agent_id))
        .replace("{parent_agent}", &parent.agent_id)
        .replace("{parent_response}", &parent.reply.observation)
        .replace("{child_process}", &process_of(&child.agent_id))
        .replace("{child_agent}", &child.agent_id)
        .replace("{child_response}", &child.reply.observation)
        .replace("{error_summary}", error_summary);
    let request = ChatRequest::new("You are the coordinator of a diagnosis team.", prompt);
    let tag = CallTag::new(Phase::EvaluateEdge, &parent.agent_id)
        .with(child.agent_id.clone())
        .with(error_summary.to_string());
    const SCHEMA: &[(&str, FieldKind)] = &[("weight", FieldKind::Number)];
    let reply = structured_chat(backends.chat.as_ref(), &tag, &request, SCHEMA)?;
    if reply.degraded {
        log::warn!(
            "coordinator edge weight for ({}, {}) unparseable; using 0",
            parent.agent_id,
            child.agent_id
        );
        return Ok((0.0, true));
    }
    let weight = reply.number("weight").expect("schema checked");
    Ok((weight.clamp(0.0, 1.0), false))
}

/// Build the collaborative reasoning tree for one detected error.
///
/// `origin_reply` is the pipeline reply of the agent that raised the
/// error; it becomes the root node. Expansion stops at `cfg.max_depth`
/// rings or when the queue drains.
pub fn chain_of_backtracking(
    error: &DetectedError,
    origin_reply: &AgentReply,
    pipeline: &Pipeline,
    subkgs: &BTreeMap<String, Arc<KnowledgeGraph>>,
    cfg: &RwbConfig,
    backends: &Backends,
    context_top_n: usize,
) -> Result<CollaborativeReasoningTree> {
    cfg.validate()?;
    let origin_spec = pipeline.agent(&error.agent_id).ok_or_else(|| Error::config(format!(
        "error origin agent {:?} is not in the pipeline",
        error.agent_id
    )))?;
    let mut tree =
        CollaborativeReasoningTree::new(crt_node(origin_spec, origin_reply.clone()));
    let mut queue: VecDeque<(String, usize)> = VecDeque::new();
    queue.push_back((tree.root_id().to_string(), 0));

    while let Some((current_id, depth)) = queue.pop_front() {
        if depth >= cfg.max_depth {
            continue;
        }
        let current_agent = tree
            .node(&current_id)
            .expect("queued node exists")
            .agent_id
            .clone();
        for pred in pipeline.predecessors_of(&current_agent) {
            if tree.node_id_of_agent(&pred.agent_id).is_some() {
                tree.add_cross_link(&current_id, &pred.agent_id);
                continue;
            }
            let subkg = subkgs
                .get(&pred.agent_id)
                .cloned()
                .unwrap_or_else(|| Arc::new(KnowledgeGraph::new()));
            let parent_node = tree.node(&current_id).expect("queued node exists").clone();
            let reply = reexamine(
                pred,
                error,
                &parent_node,
                pipeline.agent(&current_agent).expect("agent exists"),
                &subkg,
                backends,
                context_top_n,
            )?;
            let candidate = crt_node(pred, reply);
            let (weight, degraded_weight) = evaluate_edge(
                &parent_node,
                &candidate,
                &error.summary,
                &pipeline.coordinator,
                pipeline,
                backends,
            )?;
            let confidence = candidate.confidence;
            let node_id = tree.add_child(&current_id, candidate, weight)?;
            if degraded_weight {
                if let Some(node) = tree.node_mut(&node_id) {
                    node.reply.flags.push("edge-weight-degraded".into());
                }
            }
            if confidence > cfg.tau && weight > cfg.tau {
                queue.push_back((node_id, depth + 1));
            }
        }
    }
    Ok(tree)
}
