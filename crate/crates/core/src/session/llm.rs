//! Narrow LLM access: send messages, receive streamed text.
//!
//! `ReplayClient` answers from a recorded fixture and never touches the
//! network. `LiveClient` speaks the OpenAI-compatible chat-completions
//! streaming protocol.

use std::io::BufRead;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{NodeId, SnippetId};

static LIVE_REQUESTS: AtomicUsize = AtomicUsize::new(0);

/// Network requests issued by every `LiveClient` in this process.
pub fn live_request_count() -> usize {
    LIVE_REQUESTS.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LlmMode {
    Live,
    Replay,
}

impl std::str::FromStr for LlmMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(LlmMode::Live),
            "replay" => Ok(LlmMode::Replay),
            other => Err(format!("unknown LLM mode {other:?} (expected live or replay)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmClientConfig {
    pub mode: LlmMode,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub fixture: Option<std::path::PathBuf>,
}

impl LlmClientConfig {
    pub fn replay(fixture: impl Into<std::path::PathBuf>) -> Self {
        LlmClientConfig {
            mode: LlmMode::Replay,
            endpoint: None,
            api_key: None,
            model: None,
            fixture: Some(fixture.into()),
        }
    }

    pub fn build(&self) -> Result<std::sync::Arc<dyn LlmClient>, LlmError> {
        match self.mode {
            LlmMode::Replay => {
                let path = self
                    .fixture
                    .as_ref()
                    .ok_or_else(|| LlmError::Config("replay mode needs a fixture path".into()))?;
                Ok(std::sync::Arc::new(ReplayClient::new(Fixture::load(path)?)))
            }
            LlmMode::Live => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| LlmError::Config("live mode needs an endpoint".into()))?;
                Ok(std::sync::Arc::new(LiveClient {
                    endpoint,
                    api_key: self.api_key.clone(),
                    model: self.model.clone().unwrap_or_else(|| "gpt-4o".into()),
                }))
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("LLM configuration: {0}")]
    Config(String),
    #[error("LLM transport: {0}")]
    Transport(String),
    #[error("replay fixture has no entry for {0}")]
    FixtureMiss(String),
    #[error("fixture schema: {0}")]
    Schema(String),
    #[error("LLM client unavailable")]
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

/// What a request is for. Replay fixtures are keyed by it; live clients
/// only see the messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Purpose {
    Turn { index: usize },
    NodeQuery { node: NodeId, question: String },
    Summary { snippet: SnippetId },
}

impl std::fmt::Display for Purpose {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Purpose::Turn { index } => write!(f, "turn {index}"),
            Purpose::NodeQuery { node, question } => write!(f, "query {question:?} on node {node}"),
            Purpose::Summary { snippet } => write!(f, "summary of snippet {snippet}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub purpose: Purpose,
    pub messages: Vec<ChatMessage>,
}

pub trait LlmClient: Send + Sync {
    /// Streams the reply through `on_chunk` and returns the full text.
    fn stream(&self, request: &ChatRequest, on_chunk: &mut dyn FnMut(&str)) -> Result<String, LlmError>;

    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        self.stream(request, &mut |_| {})
    }
}

/// Always fails; stands in when no client is configured.
#[derive(Debug, Default)]
pub struct UnavailableClient;

impl LlmClient for UnavailableClient {
    fn stream(&self, _: &ChatRequest, _: &mut dyn FnMut(&str)) -> Result<String, LlmError> {
        Err(LlmError::Unavailable)
    }
}

pub const FIXTURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureFile {
    pub name: String,
    pub content: String,
}

/// A recorded turn. Exactly one of `message` (with `response_chunks`) or
/// `raw_code` is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureTurn {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_chunks: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_code: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureQuery {
    pub node: NodeId,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewrite: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub version: u32,
    #[serde(default)]
    pub files: Vec<FixtureFile>,
    pub turns: Vec<FixtureTurn>,
    #[serde(default)]
    pub node_queries: Vec<FixtureQuery>,
    #[serde(default)]
    pub summaries: std::collections::BTreeMap<SnippetId, String>,
}

impl Fixture {
    pub fn parse(text: &str) -> Result<Self, LlmError> {
        let f: Fixture = serde_json::from_str(text).map_err(|e| LlmError::Schema(e.to_string()))?;
        f.validate()?;
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Schema(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.version != FIXTURE_VERSION {
            return Err(LlmError::Schema(format!(
                "unsupported fixture version {} (expected {FIXTURE_VERSION})",
                self.version
            )));
        }
        for (i, t) in self.turns.iter().enumerate() {
            match (&t.message, &t.response_chunks, &t.raw_code) {
                (Some(_), Some(_), None) | (None, None, Some(_)) => {}
                _ => {
                    return Err(LlmError::Schema(format!(
                        "turn {i} needs either message with response_chunks or raw_code"
                    )))
                }
            }
        }
        for f in &self.files {
            if f.name.contains(['/', '\\']) || f.name.starts_with('.') || f.name.is_empty() {
                return Err(LlmError::Schema(format!("invalid file name {:?}", f.name)));
            }
        }
        Ok(())
    }
}

/// Serves recorded replies. Session turn `i` reads `turns[i]`.
#[derive(Debug, Clone)]
pub struct ReplayClient {
    fixture: Fixture,
}

impl ReplayClient {
    pub fn new(fixture: Fixture) -> Self {
        ReplayClient { fixture }
    }

    pub fn fixture(&self) -> &Fixture {
        &self.fixture
    }
}

impl LlmClient for ReplayClient {
    fn stream(&self, request: &ChatRequest, on_chunk: &mut dyn FnMut(&str)) -> Result<String, LlmError> {
        let chunks: Vec<String> = match &request.purpose {
            Purpose::Turn { index } => self
                .fixture
                .turns
                .get(*index)
                .and_then(|t| t.response_chunks.clone())
                .ok_or_else(|| LlmError::FixtureMiss(request.purpose.to_string()))?,
            Purpose::NodeQuery { node, question } => {
                let q = self
                    .fixture
                    .node_queries
                    .iter()
                    .find(|q| &q.node == node && &q.question == question)
                    .ok_or_else(|| LlmError::FixtureMiss(request.purpose.to_string()))?;
                let mut text = q.answer.clone();
                if let Some(r) = &q.rewrite {
                    text.push_str("\n```python\n");
                    text.push_str(r);
                    if !r.ends_with('\n') {
                        text.push('\n');
                    }
                    text.push_str("```\n");
                }
                vec![text]
            }
            Purpose::Summary { snippet } => vec![self
                .fixture
                .summaries
                .get(snippet)
                .cloned()
                .ok_or_else(|| LlmError::FixtureMiss(request.purpose.to_string()))?],
        };
        let mut full = String::new();
        for c in &chunks {
            on_chunk(c);
            full.push_str(c);
        }
        Ok(full)
    }
}

/// OpenAI-compatible streaming chat client.
#[derive(Debug, Clone)]
pub struct LiveClient {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
}

impl LlmClient for LiveClient {
    fn stream(&self, request: &ChatRequest, on_chunk: &mut dyn FnMut(&str)) -> Result<String, LlmError> {
        LIVE_REQUESTS.fetch_add(1, Ordering::SeqCst);
        let body = serde_json::json!({
            "model": self.model,
            "stream": true,
            "messages": request.messages,
        });
        let mut req = ureq::post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let resp = req
            .send_json(&body)
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let reader = std::io::BufReader::new(resp.into_body().into_reader());
        let mut full = String::new();
        for line in reader.lines() {
            let line = line.map_err(|e| LlmError::Transport(e.to_string()))?;
            let Some(data) = line.strip_prefix("data:") else {
                continue;
            };
            let data = data.trim();
            if data == "[DONE]" {
                break;
            }
            let v: serde_json::Value =
                serde_json::from_str(data).map_err(|e| LlmError::Transport(format!("bad stream frame: {e}")))?;
            if let Some(text) = v["choices"][0]["delta"]["content"].as_str() {
                on_chunk(text);
                full.push_str(text);
            }
        }
        Ok(full)
    }
}
