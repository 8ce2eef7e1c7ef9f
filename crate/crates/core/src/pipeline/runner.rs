//! Pipeline execution: context assembly, agent invocation, error
//! collection.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::backends::{
    structured_chat, Backends, CallTag, ChatRequest, FieldKind, Phase, ReplySchema,
};
use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;

use super::{AgentReply, AgentSpec, Pipeline, ToolObservation};

pub const DEFAULT_CONTEXT_TOP_N: usize = 12;

pub const AGENT_REPLY_SCHEMA: ReplySchema<'static> = &[
    ("observation", FieldKind::Text),
    ("error_detected", FieldKind::Boolean),
    ("error_summary", FieldKind::Text),
    ("confidence", FieldKind::Number),
    ("rationale", FieldKind::Text),
];

/// An error surfaced during the pipeline pass; entry point for
/// backtracking.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectedError {
    pub agent_id: String,
    pub order_index: u32,
    pub summary: String,
    pub confidence: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub replies: Vec<AgentReply>,
    pub errors: Vec<DetectedError>,
}

/// Text a node is embedded from: the label alone when there is no source
/// text, so keyword/label matching stays exact under the mock embedder.
pub fn node_embedding_text(label: &str, text: &str) -> String {
    if text.is_empty() {
        label.to_string()
    } else {
        format!("{label}: {text}")
    }
}

/// Rank subgraph nodes by embedding similarity of their text to the
/// question and render the top `top_n` as context lines, followed by the
/// relations among the selected nodes.
pub(crate) fn context_for_question(
    subkg: &KnowledgeGraph,
    question: &str,
    backends: &Backends,
    top_n: usize,
) -> Result<String> {
    if subkg.is_empty() || top_n == 0 {
        return Ok(String::new());
    }
    let ids: Vec<&str> = subkg.node_ids().collect();
    let texts: Vec<String> = subkg
        .nodes()
        .map(|n| node_embedding_text(&n.label, &n.text))
        .collect();
    let mut inputs = texts.clone();
    inputs.push(question.to_string());
    let mut vectors = backends.embed.embed(&inputs)?;
    let question_vec = vectors.pop().expect("question vector present");
    let mut ranked: Vec<(f64, &str)> = ids
        .iter()
        .zip(&vectors)
        .map(|(id, vec)| {
            let sim = crate::kg::cosine_sim(vec, &question_vec)?;
            Ok((sim, *id))
        })
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.1.cmp(b.1))
    });
    ranked.truncate(top_n);
    let selected: Vec<&str> = {
        let mut s: Vec<&str> = ranked.iter().map(|(_, id)| *id).collect();
        s.sort_unstable();
        s
    };
    let mut lines = Vec::new();
    for (_, id) in &ranked {
        let node = subkg.node(id).expect("ranked node exists");
        if node.text.is_empty() {
            lines.push(format!("- {}", node.label));
        } else {
            lines.push(format!("- {}: {}", node.label, node.text));
        }
    }
    for edge in subkg.edges() {
        if selected.binary_search(&edge.src.as_str()).is_ok()
            && selected.binary_search(&edge.dst.as_str()).is_ok()
        {
            let src = &subkg.node(&edge.src).expect("edge endpoint").label;
            let dst = &subkg.node(&edge.dst).expect("edge endpoint").label;
            lines.push(format!("- {src} ({}) {dst}", edge.relation));
        }
    }
    Ok(lines.join("\n"))
}

fn render_tool_facts(observations: &[ToolObservation]) -> String {
    let mut lines = Vec::new();
    for obs in observations {
        for (key, value) in &obs.facts {
            lines.push(format!("{}.{} = {}", obs.tool_id, key, value));
        }
    }
    lines.join("\n")
}

fn fill_template(template: &str, context: &str, image_facts: &str, question: &str) -> String {
    let or_none = |s: &str| {
        if s.is_empty() {
            "(none)".to_string()
        } else {
            s.to_string()
        }
    };
    template
        .replace("{context}", &or_none(context))
        .replace("{image_facts}", &or_none(image_facts))
        .replace("{question}", question)
}

fn degraded_reply(agent_id: &str, raw: String) -> AgentReply {
    AgentReply {
        agent_id: agent_id.to_string(),
        observation: String::new(),
        error_detected: false,
        error_summary: String::new(),
        confidence: 0.0,
        rationale: raw,
        degraded: true,
        flags: vec!["degraded".into()],
    }
}

/// Turn a parsed structured reply into an [`AgentReply`], clamping
/// confidence and enforcing the error/summary invariant.
pub(crate) fn reply_from_structured(
    agent_id: &str,
    reply: &crate::backends::StructuredReply,
) -> AgentReply {
    if reply.degraded {
        return degraded_reply(agent_id, reply.raw.clone());
    }
    let mut flags = Vec::new();
    let raw_confidence = reply.number("confidence").expect("schema checked");
    let confidence = raw_confidence.clamp(0.0, 1.0);
    if confidence != raw_confidence {
        log::warn!("agent {agent_id}: confidence {raw_confidence} clamped to {confidence}");
        flags.push("confidence-clamped".into());
    }
    let error_detected = reply.boolean("error_detected").expect("schema checked");
    let mut error_summary = reply.text("error_summary").expect("schema checked").to_string();
    if error_detected && error_summary.is_empty() {
        // Keep the invariant without erasing the detection signal.
        error_summary = "unspecified error".into();
        flags.push("empty-error-summary".into());
    }
    if !error_detected {
        error_summary.clear();
    }
    AgentReply {
        agent_id: agent_id.to_string(),
        observation: reply.text("observation").expect("schema checked").to_string(),
        error_detected,
        error_summary,
        confidence,
        rationale: reply.text("rationale").expect("schema checked").to_string(),
        degraded: false,
        flags,
    }
}

/// Run one agent over its subgraph context, tool facts, and the question.
pub fn run_agent(
    spec: &AgentSpec,
    subkg: &KnowledgeGraph,
    tools_out: &[ToolObservation],
    question: &str,
    prior_errors: &[String],
    backends: &Backends,
    context_top_n: usize,
) -> Result<AgentReply> {
    let mut context = context_for_question(subkg, question, backends, context_top_n)?;
    if !prior_errors.is_empty() {
        let mut lines = String::from("Errors already detected by earlier specialists:");
        for summary in prior_errors {
            lines.push_str("\n- ");
            lines.push_str(summary);
        }
        if context.is_empty() {
            context = lines;
        } else {
            context.push('\n');
            context.push_str(&lines);
        }
    }
    let image_facts = render_tool_facts(tools_out);
    let prompt = fill_template(&spec.prompt_template, &context, &image_facts, question);
    let request = ChatRequest::new(
        "You are a meticulous astronomical imaging specialist.",
        prompt,
    );
    let tag = CallTag::new(Phase::Pipeline, &spec.agent_id);
    let reply = structured_chat(backends.chat.as_ref(), &tag, &request, AGENT_REPLY_SCHEMA)?;
    Ok(reply_from_structured(&spec.agent_id, &reply))
}

/// Run the whole pipeline in order-index order. Each agent sees the error
/// summaries of earlier agents; detected errors become backtracking entry
/// points.
pub fn run_pipeline(
    pipeline: &Pipeline,
    subkgs: &BTreeMap<String, Arc<KnowledgeGraph>>,
    tool_observations: &BTreeMap<String, ToolObservation>,
    question: &str,
    backends: &Backends,
    context_top_n: usize,
) -> Result<PipelineRun> {
    let missing: Vec<String> = pipeline
        .agents()
        .filter(|a| !subkgs.contains_key(&a.agent_id))
        .map(|a| a.agent_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::AgentMismatch { missing });
    }
    let mut replies = Vec::with_capacity(pipeline.len());
    let mut errors = Vec::new();
    let mut prior_errors: Vec<String> = Vec::new();
    for spec in pipeline.agents() {
        let subkg = &subkgs[&spec.agent_id];
        let tools_out: Vec<ToolObservation> = spec
            .tool_ids
            .iter()
            .filter_map(|id| {
                let obs = tool_observations.get(id);
                if obs.is_none() {
                    log::warn!("agent {}: no observation for tool {id:?}", spec.agent_id);
                }
                obs.cloned()
            })
            .collect();
        let reply = run_agent(
            spec,
            subkg,
            &tools_out,
            question,
            &prior_errors,
            backends,
            context_top_n,
        )?;
        if reply.error_detected {
            prior_errors.push(format!("[{}] {}", spec.agent_id, reply.error_summary));
            errors.push(DetectedError {
                agent_id: spec.agent_id.clone(),
                order_index: spec.order_index,
                summary: reply.error_summary.clone(),
                confidence: reply.confidence,
            });
        }
        replies.push(reply);
    }
    Ok(PipelineRun { replies, errors })
}
