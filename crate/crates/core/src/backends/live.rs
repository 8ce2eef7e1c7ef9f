//! Live client for OpenAI-compatible chat-completions and embeddings
//! endpoints.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};

use super::{CallTag, ChatBackend, ChatRequest, EmbedBackend, Role};

const ENV_API_KEY: &str = "ASTROVLM_API_KEY";
const ENV_API_BASE: &str = "ASTROVLM_API_BASE";
const ENV_CHAT_MODEL: &str = "ASTROVLM_CHAT_MODEL";
const ENV_EMBED_MODEL: &str = "ASTROVLM_EMBED_MODEL";

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub api_base: String,
    pub api_key: String,
    pub chat_model: String,
    pub embed_model: String,
    /// Upper bound on concurrent requests.
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    /// Additional attempts after the first on transient failures.
    pub max_retries: u32,
}

impl LiveConfig {
    /// Credentials and model names come from the environment
    /// (`ASTROVLM_API_KEY`, `ASTROVLM_API_BASE`, `ASTROVLM_CHAT_MODEL`,
    /// `ASTROVLM_EMBED_MODEL`).
    pub fn from_env() -> Result<Self> {
        let get = |name: &str| {
            std::env::var(name).map_err(|_| Error::Auth {
                detail: format!("environment variable {name} is not set"),
            })
        };
        Ok(Self {
            api_base: get(ENV_API_BASE)?,
            api_key: get(ENV_API_KEY)?,
            chat_model: get(ENV_CHAT_MODEL)?,
            embed_model: get(ENV_EMBED_MODEL)?,
            max_in_flight: 4,
            timeout_secs: 120,
            max_retries: 3,
        })
    }
}

/// Counting gate bounding in-flight requests.
struct Gate {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn new(limit: usize) -> Self {
        Self {
            slots: Mutex::new(limit.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut slots = self.slots.lock().unwrap();
        while *slots == 0 {
            slots = self.freed.wait(slots).unwrap();
        }
        *slots -= 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.gate.slots.lock().unwrap() += 1;
        self.gate.freed.notify_one();
    }
}

pub struct LiveBackend {
    config: LiveConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
}

#[derive(Deserialize)]
struct ChatCompletionBody {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct EmbeddingsBody {
    data: Vec<EmbeddingRow>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    index: usize,
    embedding: Vec<f64>,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Transport {
                detail: format!("failed to build http client: {e}"),
            })?;
        let gate = Gate::new(config.max_in_flight);
        Ok(Self {
            config,
            client,
            gate,
        })
    }

    fn endpoint(&self, path: &str) -> String {
        let base = self.config.api_base.trim_end_matches('/');
        format!("{base}/{path}")
    }

    /// POST with exponential backoff on transport errors, 429, and 5xx.
    fn post_with_retry(&self, path: &str, body: &serde_json::Value) -> Result<String> {
        let _slot = self.gate.acquire();
        let url = self.endpoint(path);
        let mut delay = Duration::from_millis(250);
        let attempts = self.config.max_retries + 1;
        let mut last_err = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            let sent = self
                .client
                .post(&url)
                .bearer_auth(&self.config.api_key)
                .json(body)
                .send();
            let response = match sent {
                Ok(r) => r,
                Err(e) => {
                    last_err = Some(Error::Transport {
                        detail: format!("{url}: {e}"),
                    });
                    continue;
                }
            };
            let status = response.status();
            if status.as_u16() == 401 || status.as_u16() == 403 {
                return Err(Error::Auth {
                    detail: format!("{url} answered {status}"),
                });
            }
            if status.as_u16() == 429 {
                let retry_after = response
                    .headers()
                    .get("retry-after")
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.parse::<u64>().ok());
                if let Some(seconds) = retry_after {
                    delay = Duration::from_secs(seconds);
                }
                last_err = Some(Error::RateLimited {
                    retry_after,
                    detail: format!("{url} answered 429"),
                });
                continue;
            }
            if status.is_server_error() {
                last_err = Some(Error::Transport {
                    detail: format!("{url} answered {status}"),
                });
                continue;
            }
            let text = response.text().map_err(|e| Error::Transport {
                detail: format!("{url}: reading body: {e}"),
            })?;
            if !status.is_success() {
                return Err(Error::Transport {
                    detail: format!("{url} answered {status}: {text}"),
                });
            }
            return Ok(text);
        }
        Err(last_err.expect("at least one attempt recorded an error"))
    }
}

impl ChatBackend for LiveBackend {
    fn chat(&self, _tag: &CallTag, request: &ChatRequest) -> Result<String> {
        let mut messages = vec![json!({"role": "system", "content": request.system})];
        for message in &request.messages {
            let role = match message.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            messages.push(json!({"role": role, "content": message.text}));
        }
        let body = json!({
            "model": self.config.chat_model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let text = self.post_with_retry("chat/completions", &body)?;
        let parsed: ChatCompletionBody =
            serde_json::from_str(&text).map_err(|e| Error::Transport {
                detail: format!("chat completion body did not parse: {e}"),
            })?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::Transport {
                detail: "chat completion had no choices".into(),
            })
    }
}

impl EmbedBackend for LiveBackend {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({
            "model": self.config.embed_model,
            "input": texts,
        });
        let text = self.post_with_retry("embeddings", &body)?;
        let parsed: EmbeddingsBody = serde_json::from_str(&text).map_err(|e| Error::Transport {
            detail: format!("embeddings body did not parse: {e}"),
        })?;
        if parsed.data.len() != texts.len() {
            return Err(Error::Transport {
                detail: format!(
                    "embeddings body had {} rows for {} inputs",
                    parsed.data.len(),
                    texts.len()
                ),
            });
        }
        let mut rows = parsed.data;
        rows.sort_by_key(|row| row.index);
        Ok(rows.into_iter().map(|row| row.embedding).collect())
    }

    fn model_tag(&self) -> String {
        self.config.embed_model.clone()
    }
}
