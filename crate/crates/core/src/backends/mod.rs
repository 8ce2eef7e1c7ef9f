//! Model-access contracts.
//!
//! Every model call in the engine goes through [`ChatBackend`] /
//! [`EmbedBackend`]. The live client speaks the provider-standard
//! chat-completions and embeddings wire format; the mock replays scripted
//! replies keyed by call content, which makes whole diagnosis runs
//! byte-reproducible.

mod live;
mod mock;

pub use live::{LiveBackend, LiveConfig};
pub use mock::{MockBackend, MockScript};

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            messages: vec![ChatMessage {
                role: Role::User,
                text: user.into(),
            }],
            temperature: 0.0,
            max_tokens: 2048,
        }
    }

    pub fn push_assistant(&mut self, text: impl Into<String>) {
        self.messages.push(ChatMessage {
            role: Role::Assistant,
            text: text.into(),
        });
    }

    pub fn push_user(&mut self, text: impl Into<String>) {
        self.messages.push(ChatMessage {
            role: Role::User,
            text: text.into(),
        });
    }
}

/// Which stage of the engine is calling. The mock derives its script key
/// from this; the live client ignores it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pipeline,
    Reexamine,
    EvaluateEdge,
    ResolveConflict,
    Aggregate,
    Synthesize,
    EdgeLabel,
    Extract,
    Judge,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pipeline => "pipeline",
            Phase::Reexamine => "reexamine",
            Phase::EvaluateEdge => "evaluate_edge",
            Phase::ResolveConflict => "resolve_conflict",
            Phase::Aggregate => "aggregate",
            Phase::Synthesize => "synthesize",
            Phase::EdgeLabel => "edge_label",
            Phase::Extract => "extract",
            Phase::Judge => "judge",
        }
    }
}

/// Content-derived routing tag for a chat call.
///
/// The script key is the stable canonical string
/// `<phase>:<actor>[:<salient>...]`, so scripted replies are looked up by
/// what is being asked, not by call order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallTag {
    pub phase: Phase,
    pub actor: String,
    pub salient: Vec<String>,
}

impl CallTag {
    pub fn new(phase: Phase, actor: impl Into<String>) -> Self {
        Self {
            phase,
            actor: actor.into(),
            salient: Vec::new(),
        }
    }

    pub fn with(mut self, item: impl Into<String>) -> Self {
        self.salient.push(item.into());
        self
    }

    pub fn key(&self) -> String {
        let mut key = format!("{}:{}", self.phase.as_str(), self.actor);
        for item in &self.salient {
            key.push(':');
            key.push_str(item);
        }
        key
    }
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, tag: &CallTag, request: &ChatRequest) -> Result<String>;
}

pub trait EmbedBackend: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
    fn model_tag(&self) -> String;

    fn embed_one(&self, text: &str) -> Result<Vec<f64>> {
        let mut out = self.embed(std::slice::from_ref(&text.to_string()))?;
        Ok(out.remove(0))
    }
}

/// The chat + embedding pair a run is wired to.
#[derive(Clone)]
pub struct Backends {
    pub chat: Arc<dyn ChatBackend>,
    pub embed: Arc<dyn EmbedBackend>,
}

impl Backends {
    pub fn mock(mock: MockBackend) -> Self {
        let shared = Arc::new(mock);
        Backends {
            chat: shared.clone(),
            embed: shared,
        }
    }

    pub fn live(live: LiveBackend) -> Self {
        let shared = Arc::new(live);
        Backends {
            chat: shared.clone(),
            embed: shared,
        }
    }
}

/// Expected field type in a structured reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Number,
    Boolean,
    Text,
    /// Array of strings.
    TextList,
}

pub type ReplySchema<'a> = &'a [(&'a str, FieldKind)];

/// A backend reply after structured parsing. `degraded == false` guarantees
/// every schema key is present with the right type in `parsed`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredReply {
    pub raw: String,
    pub parsed: BTreeMap<String, serde_json::Value>,
    pub degraded: bool,
}

impl StructuredReply {
    pub fn number(&self, key: &str) -> Option<f64> {
        self.parsed.get(key).and_then(serde_json::Value::as_f64)
    }

    pub fn boolean(&self, key: &str) -> Option<bool> {
        self.parsed.get(key).and_then(serde_json::Value::as_bool)
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.parsed.get(key).and_then(serde_json::Value::as_str)
    }
}

/// Total attempts (first call plus repair retries) for a structured reply.
pub const REPLY_ATTEMPTS: u32 = 3;

/// Extract the first fenced JSON object from `raw` and validate it against
/// `schema`. Falls back to treating the whole (trimmed) reply as JSON when
/// no fence is present. Numeric clamping is left to callers.
pub fn parse_structured(raw: &str, schema: ReplySchema) -> StructuredReply {
    let mut candidate = first_fenced_object(raw);
    if candidate.is_none() {
        let trimmed = raw.trim();
        if trimmed.starts_with('{') {
            if let Ok(serde_json::Value::Object(map)) = serde_json::from_str(trimmed) {
                candidate = Some(map);
            }
        }
    }
    let Some(object) = candidate else {
        return StructuredReply {
            raw: raw.to_string(),
            parsed: BTreeMap::new(),
            degraded: true,
        };
    };
    let parsed: BTreeMap<String, serde_json::Value> = object.into_iter().collect();
    let degraded = schema.iter().any(|(key, kind)| {
        let Some(value) = parsed.get(*key) else {
            return true;
        };
        match kind {
            FieldKind::Number => value.as_f64().is_none(),
            FieldKind::Boolean => !value.is_boolean(),
            FieldKind::Text => !value.is_string(),
            FieldKind::TextList => value
                .as_array()
                .is_none_or(|items| !items.iter().all(|v| v.is_string())),
        }
    });
    StructuredReply {
        raw: raw.to_string(),
        parsed,
        degraded,
    }
}

fn first_fenced_object(raw: &str) -> Option<serde_json::Map<String, serde_json::Value>> {
    let mut rest = raw;
    while let Some(open) = rest.find("```") {
        let after_open = &rest[open + 3..];
        // Skip an optional language tag up to the end of the fence line.
        let body_start = after_open.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after_open[body_start..];
        let Some(close) = body.find("```") else {
            break;
        };
        let block = body[..close].trim();
        if let Ok(serde_json::Value::Object(map)) = serde_json::from_str(block) {
            return Some(map);
        }
        rest = &body[close + 3..];
    }
    None
}

/// Run a chat call under the structured-reply contract: on a malformed
/// reply, append a repair prompt and retry, up to [`REPLY_ATTEMPTS`] total
/// calls. The last (possibly degraded) reply is returned; transport errors
/// propagate immediately.
pub fn structured_chat(
    backend: &dyn ChatBackend,
    tag: &CallTag,
    request: &ChatRequest,
    schema: ReplySchema,
) -> Result<StructuredReply> {
    let mut request = request.clone();
    let mut last = None;
    for attempt in 0..REPLY_ATTEMPTS {
        let raw = backend.chat(tag, &request)?;
        let reply = parse_structured(&raw, schema);
        if !reply.degraded {
            return Ok(reply);
        }
        if attempt + 1 < REPLY_ATTEMPTS {
            let keys: Vec<&str> = schema.iter().map(|(k, _)| *k).collect();
            request.push_assistant(raw);
            request.push_user(format!(
                "Your previous reply could not be parsed. Respond with only a fenced \
                 JSON object containing the keys {}.",
                keys.join(", ")
            ));
        }
        last = Some(reply);
    }
    Ok(last.expect("at least one attempt"))
}
