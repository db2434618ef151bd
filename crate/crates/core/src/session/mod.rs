//! Conversation-scoped orchestration: turns, snippets, the shared table
//! registry, the sandbox, edits, interrogation, re-runs and the minimap.
//!
//! A `Session` is single-writer; `SessionManager` wraps each one in a mutex.

pub mod events;
pub mod fence;
pub mod llm;
pub mod persist;
pub mod pipeline;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edit::{apply_llm_rewrite, apply_param_edit, CodePatch, EditError, ParamEdit, SnippetSource};
use crate::extract::{Operation, TableRegistry};
use crate::graph::{Diagram, Node, NodeClass, NodeDetail, TableState};
use crate::ids::{NodeId, SnippetId};
use crate::ingest::IngestError;
use crate::instrument::{InstrumentedProgram, ProbeKind};
use crate::sandbox::{LoggedUnit, SandboxConfig, SandboxError, SandboxSession, TablePreview};
use crate::span::{LineSpan, Span};

pub use events::{EventBus, EventEnvelope, SessionEvent, SnippetStatus, TurnStatus};
pub use fence::{FencePiece, FenceSplitter};
pub use llm::{
    live_request_count, ChatMessage, ChatRequest, Fixture, LlmClient, LlmClientConfig, LlmError, LlmMode, Purpose, ReplayClient,
    UnavailableClient,
};
pub use pipeline::{ExecEnv, PipelineEvent, SnippetRun, UnitRecord};

const SYSTEM_PROMPT: &str = "You are a data analysis assistant. Answer with short explanations and \
Python code using pandas and matplotlib in ```python fenced blocks. Reuse variables defined in \
earlier code blocks; they are still in scope.";

const NODE_PROMPT: &str = "You explain one data operation from a pandas analysis. Answer briefly. \
If the operation should change, give the replacement statement in a single ```python block.";

const SUMMARY_PROMPT: &str = "Summarize what this analysis code does in one short line.";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown snippet {0}")]
    UnknownSnippet(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("invalid file name {0:?}")]
    InvalidFile(String),
    #[error("execution is disabled for this session")]
    ExecutionDisabled,
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("persisted session: {0}")]
    Persist(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Session directory; the sandbox works in `root/work`.
    pub root: PathBuf,
    pub interpreter: String,
    pub timeout: Duration,
    pub output_cap: usize,
    /// When false, code is diagrammed but never executed.
    pub execute: bool,
    /// Save to `root` after every turn, edit, query and re-run.
    pub autosave: bool,
}

impl SessionConfig {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        let sandbox = SandboxConfig::new(root.join("work"));
        SessionConfig {
            root,
            interpreter: sandbox.interpreter,
            timeout: sandbox.timeout,
            output_cap: sandbox.output_cap,
            execute: true,
            autosave: true,
        }
    }

    pub fn static_only(mut self) -> Self {
        self.execute = false;
        self
    }

    pub fn work_dir(&self) -> PathBuf {
        self.root.join("work")
    }

    pub fn sandbox_config(&self) -> SandboxConfig {
        SandboxConfig::new(self.work_dir())
            .with_interpreter(self.interpreter.clone())
            .with_timeout(self.timeout)
            .with_output_cap(self.output_cap)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnInput {
    Message(String),
    RawCode(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub index: usize,
    pub input: TurnInput,
    /// Full assistant reply, for message turns.
    pub reply: Option<String>,
    pub status: TurnStatus,
    pub snippets: Vec<SnippetId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnippetRecord {
    pub snippet_id: SnippetId,
    pub index: usize,
    pub turn: usize,
    pub source: SnippetSource,
    pub diagram: Diagram,
    pub program: InstrumentedProgram,
    pub operations: Vec<Operation>,
    pub status: SnippetStatus,
    pub patches: Vec<CodePatch>,
    pub units: Vec<UnitRecord>,
    pub stdout: String,
    /// Registry as it stood before this snippet.
    pub registry_before: TableRegistry,
    /// Statement-log length before this snippet executed.
    pub log_start: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnippetSummary {
    pub snippet_id: SnippetId,
    pub status: SnippetStatus,
    pub operations: usize,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnReport {
    pub turn: usize,
    pub status: TurnStatus,
    pub snippets: Vec<SnippetSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeAnswer {
    pub node: NodeId,
    pub answer: String,
    pub patch: Option<CodePatch>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinimapEntry {
    pub snippet_id: SnippetId,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDetails {
    pub snippet_id: SnippetId,
    pub node: Node,
    pub code_span: Span,
    pub lines: LineSpan,
    pub code: String,
    pub preview: Option<TablePreview>,
    pub preview_error: Option<String>,
}

/// Snippet currently receiving code.
struct OpenSnippet {
    run: SnippetRun,
    index: usize,
    turn: usize,
    registry_before: TableRegistry,
    log_start: usize,
}

/// Block opened by a fence whose content has been whitespace so far.
enum CodeState {
    Outside,
    Blank(String),
    Open(Box<OpenSnippet>),
}

pub struct Session {
    id: String,
    config: SessionConfig,
    llm: Arc<dyn LlmClient>,
    events: Arc<EventBus>,
    turns: Vec<TurnRecord>,
    snippets: Vec<SnippetRecord>,
    files: Vec<String>,
    registry: TableRegistry,
    table_states: BTreeMap<NodeId, TableState>,
    node_conversations: BTreeMap<NodeId, Vec<ChatMessage>>,
    sandbox: Option<SandboxSession>,
    /// Log to restore into a fresh sandbox (after loading from disk).
    pending_log: Option<Vec<LoggedUnit>>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("snippets", &self.snippets.len())
            .finish_non_exhaustive()
    }
}

impl Session {
    pub fn new(id: impl Into<String>, config: SessionConfig, llm: Arc<dyn LlmClient>) -> Result<Self, SessionError> {
        std::fs::create_dir_all(config.work_dir())?;
        Ok(Session {
            id: id.into(),
            config,
            llm,
            events: Arc::new(EventBus::new()),
            turns: Vec::new(),
            snippets: Vec::new(),
            files: Vec::new(),
            registry: TableRegistry::new(),
            table_states: BTreeMap::new(),
            node_conversations: BTreeMap::new(),
            sandbox: None,
            pending_log: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn events(&self) -> Arc<EventBus> {
        self.events.clone()
    }

    pub fn turns(&self) -> &[TurnRecord] {
        &self.turns
    }

    pub fn snippets(&self) -> &[SnippetRecord] {
        &self.snippets
    }

    pub fn registry(&self) -> &TableRegistry {
        &self.registry
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn node_conversation(&self, node: &NodeId) -> &[ChatMessage] {
        self.node_conversations.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn statement_log(&self) -> Vec<LoggedUnit> {
        match (&self.sandbox, &self.pending_log) {
            (Some(s), _) => s.statement_log().to_vec(),
            (None, Some(log)) => log.clone(),
            (None, None) => Vec::new(),
        }
    }

    /// Accepts `s3`, `3` or a snippet id.
    pub fn snippet_index(&self, key: &str) -> Result<usize, SessionError> {
        if let Some(i) = self.snippets.iter().position(|s| s.snippet_id.as_str() == key) {
            return Ok(i);
        }
        key.parse::<usize>()
            .ok()
            .filter(|i| *i < self.snippets.len())
            .ok_or_else(|| SessionError::UnknownSnippet(key.to_string()))
    }

    pub fn snippet(&self, key: &str) -> Result<&SnippetRecord, SessionError> {
        Ok(&self.snippets[self.snippet_index(key)?])
    }

    fn node_owner(&self, node: &NodeId) -> Result<usize, SessionError> {
        self.snippets
            .iter()
            .position(|s| s.diagram.node(node).is_some())
            .ok_or_else(|| SessionError::UnknownNode(node.to_string()))
    }

    /// Stores an uploaded file in the sandbox working directory.
    pub fn upload_file(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, SessionError> {
        let base = Path::new(name)
            .file_name()
            .and_then(|n| n.to_str())
            .filter(|n| !n.starts_with('.') && !n.is_empty() && *n == name)
            .ok_or_else(|| SessionError::InvalidFile(name.to_string()))?;
        let path = self.config.work_dir().join(base);
        std::fs::write(&path, bytes)?;
        if !self.files.iter().any(|f| f == base) {
            self.files.push(base.to_string());
        }
        Ok(path)
    }

    fn publish(&self, event: SessionEvent) {
        self.events.publish(event);
    }

    fn ensure_sandbox(&mut self) -> Result<Option<&mut SandboxSession>, SessionError> {
        if !self.config.execute {
            return Ok(None);
        }
        if self.sandbox.is_none() {
            let mut sb = SandboxSession::start(self.config.sandbox_config())?;
            if let Some(log) = self.pending_log.take() {
                sb.set_statement_log(log);
                sb.replay(None)?;
            }
            self.sandbox = Some(sb);
        }
        Ok(self.sandbox.as_mut())
    }

    fn log_len(&self) -> usize {
        self.sandbox.as_ref().map(|s| s.statement_log().len()).unwrap_or(0)
    }

    pub fn run_turn(&mut self, input: TurnInput) -> TurnReport {
        match input {
            TurnInput::RawCode(code) => self.run_raw_stream(std::iter::once(code)),
            TurnInput::Message(message) => self.run_message(message),
        }
    }

    /// A raw-code turn whose code arrives in chunks; the whole stream is one
    /// snippet.
    pub fn run_raw_stream<I: IntoIterator<Item = String>>(&mut self, chunks: I) -> TurnReport {
        let turn = self.turns.len();
        self.publish(SessionEvent::TurnStarted { turn });
        let first_snippet = self.snippets.len();
        let mut state = CodeState::Blank(String::new());
        let mut raw = String::new();
        let mut error = None;
        for chunk in chunks {
            raw.push_str(&chunk);
            if let Err(e) = self.code_piece(&mut state, turn, FencePiece::Code(chunk)) {
                error = Some(e.to_string());
                break;
            }
        }
        if let Err(e) = self.code_piece(&mut state, turn, FencePiece::CodeEnd) {
            error.get_or_insert(e.to_string());
        }
        self.end_turn(turn, TurnInput::RawCode(raw), None, first_snippet, error)
    }

    fn run_message(&mut self, message: String) -> TurnReport {
        let turn = self.turns.len();
        self.publish(SessionEvent::TurnStarted { turn });
        let first_snippet = self.snippets.len();
        let request = ChatRequest {
            purpose: Purpose::Turn { index: turn },
            messages: self.turn_messages(&message),
        };
        let llm = self.llm.clone();
        let mut splitter = FenceSplitter::new();
        let mut state = CodeState::Outside;
        let mut pipeline_error: Option<SessionError> = None;
        let result = llm.stream(&request, &mut |chunk| {
            if pipeline_error.is_some() {
                return;
            }
            for piece in splitter.push(chunk) {
                if let Err(e) = self.code_piece(&mut state, turn, piece) {
                    pipeline_error = Some(e);
                    return;
                }
            }
        });
        let mut error = match (result.as_ref(), pipeline_error) {
            (_, Some(e)) => Some(e.to_string()),
            (Err(e), None) => Some(e.to_string()),
            (Ok(_), None) => None,
        };
        // retain whatever arrived before a transport failure
        for piece in splitter.finish() {
            if let Err(e) = self.code_piece(&mut state, turn, piece) {
                error.get_or_insert(e.to_string());
            }
        }
        if let Err(e) = self.code_piece(&mut state, turn, FencePiece::CodeEnd) {
            error.get_or_insert(e.to_string());
        }
        self.end_turn(turn, TurnInput::Message(message), result.ok(), first_snippet, error)
    }

    fn autosave(&self) {
        if self.config.autosave {
            if let Err(e) = self.save() {
                self.publish(SessionEvent::Diagnostic {
                    snippet_id: None,
                    message: format!("autosave failed: {e}"),
                });
            }
        }
    }

    fn end_turn(
        &mut self,
        turn: usize,
        input: TurnInput,
        reply: Option<String>,
        first_snippet: usize,
        error: Option<String>,
    ) -> TurnReport {
        let status = if error.is_some() {
            TurnStatus::Failed
        } else {
            TurnStatus::Ok
        };
        let snippets: Vec<SnippetSummary> = self.snippets[first_snippet..].iter().map(summary_of).collect();
        self.turns.push(TurnRecord {
            index: turn,
            input,
            reply,
            status,
            snippets: snippets.iter().map(|s| s.snippet_id.clone()).collect(),
        });
        if let Some(e) = &error {
            self.publish(SessionEvent::Diagnostic {
                snippet_id: None,
                message: e.clone(),
            });
        }
        self.autosave();
        self.publish(SessionEvent::TurnComplete {
            turn,
            status,
            error: error.clone(),
        });
        TurnReport {
            turn,
            status,
            snippets,
            error,
        }
    }

    fn turn_messages(&self, message: &str) -> Vec<ChatMessage> {
        let mut system = SYSTEM_PROMPT.to_string();
        if !self.files.is_empty() {
            system.push_str("\nFiles in the working directory: ");
            system.push_str(&self.files.join(", "));
        }
        let mut messages = vec![ChatMessage::new("system", system)];
        for t in &self.turns {
            match &t.input {
                TurnInput::Message(m) => messages.push(ChatMessage::new("user", m.clone())),
                TurnInput::RawCode(c) => messages.push(ChatMessage::new("user", format!("```python\n{c}\n```"))),
            }
            if let Some(r) = &t.reply {
                messages.push(ChatMessage::new("assistant", r.clone()));
            }
        }
        messages.push(ChatMessage::new("user", message));
        messages
    }

    fn code_piece(&mut self, state: &mut CodeState, turn: usize, piece: FencePiece) -> Result<(), SessionError> {
        match piece {
            FencePiece::Prose(text) => {
                self.publish(SessionEvent::TextToken { turn, text });
                Ok(())
            }
            FencePiece::CodeStart { .. } => {
                *state = CodeState::Blank(String::new());
                Ok(())
            }
            FencePiece::Code(text) => {
                let text = match std::mem::replace(state, CodeState::Outside) {
                    CodeState::Blank(mut pending) => {
                        pending.push_str(&text);
                        if pending.trim().is_empty() {
                            *state = CodeState::Blank(pending);
                            return Ok(());
                        }
                        *state = CodeState::Open(Box::new(self.open_snippet(turn)?));
                        pending
                    }
                    other => {
                        *state = other;
                        text
                    }
                };
                if let CodeState::Open(open) = state {
                    self.feed(open, &text, false)?;
                }
                Ok(())
            }
            FencePiece::CodeEnd => {
                if let CodeState::Open(mut open) = std::mem::replace(state, CodeState::Outside) {
                    self.feed(&mut open, "", true)?;
                    self.close_snippet(*open);
                }
                Ok(())
            }
        }
    }

    fn open_snippet(&mut self, turn: usize) -> Result<OpenSnippet, SessionError> {
        self.ensure_sandbox()?;
        let index = self.snippets.len();
        let snippet_id = SnippetId::new(format!("s{index}"));
        self.publish(SessionEvent::SnippetStarted {
            snippet_id: snippet_id.clone(),
        });
        Ok(OpenSnippet {
            run: SnippetRun::new(snippet_id),
            index,
            turn,
            registry_before: self.registry.clone(),
            log_start: self.log_len(),
        })
    }

    fn feed(&mut self, open: &mut OpenSnippet, text: &str, finish: bool) -> Result<(), SessionError> {
        let events = self.events.clone();
        let snippet_id = open.run.snippet_id().clone();
        let mut sink = |e: PipelineEvent| publish_pipeline(&events, &snippet_id, e);
        let mut env = self.sandbox.as_mut().map(|sandbox| ExecEnv {
            sandbox,
            table_states: &mut self.table_states,
        });
        if finish {
            open.run.finish(&mut self.registry, env.as_mut(), &mut sink)?;
        } else {
            open.run.push(text, &mut self.registry, env.as_mut(), &mut sink)?;
        }
        Ok(())
    }

    fn close_snippet(&mut self, open: OpenSnippet) {
        let status = self.status_of(&open.run);
        let run = open.run;
        let record = SnippetRecord {
            snippet_id: run.snippet_id().clone(),
            index: open.index,
            turn: open.turn,
            source: SnippetSource::new(run.snippet_id().clone(), run.source()),
            diagram: run.diagram().clone(),
            program: run.program().clone(),
            operations: run.operations().to_vec(),
            status,
            patches: Vec::new(),
            units: run.units().to_vec(),
            stdout: run.stdout().to_string(),
            registry_before: open.registry_before,
            log_start: open.log_start,
        };
        self.publish(SessionEvent::SnippetFinished {
            snippet_id: record.snippet_id.clone(),
            status,
        });
        self.snippets.push(record);
    }

    fn status_of(&self, run: &SnippetRun) -> SnippetStatus {
        if run.failure().is_some() {
            SnippetStatus::Failed
        } else if self.config.execute {
            SnippetStatus::Ok
        } else {
            SnippetStatus::Analyzed
        }
    }

    /// Replays the log prefix before the snippet, re-executes its current
    /// source and marks every later snippet stale.
    pub fn rerun_snippet(&mut self, key: &str) -> Result<SnippetSummary, SessionError> {
        let idx = self.snippet_index(key)?;
        let log_start = self.snippets[idx].log_start;
        if self.ensure_sandbox()?.is_some() {
            let sandbox = self.sandbox.as_mut().expect("sandbox started");
            if let Err(e) = sandbox.replay(Some(log_start)) {
                self.publish(SessionEvent::Diagnostic {
                    snippet_id: Some(self.snippets[idx].snippet_id.clone()),
                    message: e.to_string(),
                });
                return Err(e.into());
            }
        }
        self.registry = self.snippets[idx].registry_before.clone();
        self.rebuild(idx, true)?;
        for j in idx + 1..self.snippets.len() {
            self.rebuild(j, false)?;
        }
        self.autosave();
        Ok(summary_of(&self.snippets[idx]))
    }

    /// Rebuilds snippet `idx` from its current source against the current
    /// registry, executing it when `execute` is set and marking it stale
    /// otherwise.
    fn rebuild(&mut self, idx: usize, execute: bool) -> Result<(), SessionError> {
        let snippet_id = self.snippets[idx].snippet_id.clone();
        let mut previous = self.snippets[idx].diagram.clone();
        let events = self.events.clone();
        for d in previous.reset_states() {
            events.publish(SessionEvent::GraphDelta(d));
        }
        let registry_before = self.registry.clone();
        let log_start = self.log_len();
        let mut run = SnippetRun::with_diagram(previous);
        let source = self.snippets[idx].source.source.clone();
        {
            let mut sink = |e: PipelineEvent| publish_pipeline(&events, &snippet_id, e);
            let mut env = if execute {
                self.sandbox.as_mut().map(|sandbox| ExecEnv {
                    sandbox,
                    table_states: &mut self.table_states,
                })
            } else {
                None
            };
            run.run_source(&source, &mut self.registry, env.as_mut(), &mut sink)?;
        }
        let status = if execute {
            self.status_of(&run)
        } else {
            SnippetStatus::Stale
        };
        let rec = &mut self.snippets[idx];
        rec.diagram = run.diagram().clone();
        rec.diagram.meta.stale = !execute;
        rec.program = run.program().clone();
        rec.operations = run.operations().to_vec();
        rec.registry_before = registry_before;
        rec.log_start = log_start;
        rec.status = status;
        if execute {
            rec.units = run.units().to_vec();
            rec.stdout = run.stdout().to_string();
            self.publish(SessionEvent::SnippetFinished { snippet_id, status });
        } else {
            self.publish(SessionEvent::SnippetStale { snippet_id });
        }
        Ok(())
    }

    pub fn edit_param(&mut self, edit: &ParamEdit) -> Result<CodePatch, SessionError> {
        let idx = self.node_owner(&edit.node_id)?;
        let rec = &mut self.snippets[idx];
        let patch = apply_param_edit(&rec.source, &mut rec.diagram, edit)?;
        if !patch.is_empty() {
            rec.source.commit(&patch);
            rec.patches.push(patch.clone());
            rec.status = SnippetStatus::Stale;
            let snippet_id = rec.snippet_id.clone();
            self.publish(SessionEvent::SnippetStale { snippet_id });
        }
        self.autosave();
        Ok(patch)
    }

    /// Asks about one node in a side conversation kept per node. A fenced
    /// block in the answer is staged as a rewrite of the node's statement.
    pub fn node_query(&mut self, node: &NodeId, question: &str) -> Result<NodeAnswer, SessionError> {
        let idx = self.node_owner(node)?;
        let rec = &self.snippets[idx];
        let n = rec.diagram.node(node).expect("owner has node");
        let mut messages = vec![
            ChatMessage::new("system", NODE_PROMPT),
            ChatMessage::new("user", node_context(n, &rec.source.source)),
        ];
        let history = self.node_conversations.entry(node.clone()).or_default();
        messages.extend(history.iter().cloned());
        messages.push(ChatMessage::new("user", question));
        let request = ChatRequest {
            purpose: Purpose::NodeQuery {
                node: node.clone(),
                question: question.to_string(),
            },
            messages,
        };
        let full = self.llm.complete(&request)?;
        history.push(ChatMessage::new("user", question));
        history.push(ChatMessage::new("assistant", full.clone()));
        let rewrite = fence::code_blocks(&full).into_iter().next();
        let answer = match &rewrite {
            Some(_) => fence::prose_of(&full).trim_end().to_string(),
            None => full,
        };
        let patch = match rewrite {
            Some(code) if n.class == NodeClass::Operation => {
                let rec = &mut self.snippets[idx];
                let patch = apply_llm_rewrite(&rec.source, &mut rec.diagram, node, code.trim_end())?;
                if !patch.is_empty() {
                    rec.source.commit(&patch);
                    rec.patches.push(patch.clone());
                    rec.status = SnippetStatus::Stale;
                    let snippet_id = rec.snippet_id.clone();
                    self.publish(SessionEvent::SnippetStale { snippet_id });
                }
                Some(patch)
            }
            _ => None,
        };
        self.autosave();
        Ok(NodeAnswer {
            node: node.clone(),
            answer,
            patch,
        })
    }

    /// One entry per snippet with at least one operation.
    pub fn minimap(&self) -> Vec<MinimapEntry> {
        self.snippets
            .iter()
            .filter(|s| !s.operations.is_empty())
            .map(|s| {
                let request = ChatRequest {
                    purpose: Purpose::Summary {
                        snippet: s.snippet_id.clone(),
                    },
                    messages: vec![
                        ChatMessage::new("system", SUMMARY_PROMPT),
                        ChatMessage::new("user", s.source.source.clone()),
                    ],
                };
                let summary = self
                    .llm
                    .complete(&request)
                    .ok()
                    .and_then(|t| t.lines().map(str::trim).find(|l| !l.is_empty()).map(str::to_string))
                    .unwrap_or_else(|| format!("Snippet {}: {} operations", s.index + 1, s.operations.len()));
                MinimapEntry {
                    snippet_id: s.snippet_id.clone(),
                    summary,
                }
            })
            .collect()
    }

    /// Node, its code span and, when `rows` is given, a live table preview.
    pub fn node_details(&mut self, node: &NodeId, rows: Option<usize>) -> Result<NodeDetails, SessionError> {
        let idx = self.node_owner(node)?;
        let rec = &self.snippets[idx];
        let n = rec.diagram.node(node).expect("owner has node").clone();
        let code_span = rec
            .diagram
            .node_code_span(node.as_str())
            .map_err(|_| SessionError::UnknownNode(node.to_string()))?;
        let src = &rec.source.source;
        let code = src.get(code_span.start..code_span.end).unwrap_or_default().to_string();
        let clamped = Span::new(code_span.start.min(src.len()), code_span.end.min(src.len()));
        let lines = LineSpan::of(src, clamped);
        let var = preview_var(&n, &rec.program);
        let snippet_id = rec.snippet_id.clone();
        let (preview, preview_error) = match (rows, var) {
            (Some(limit), Some(var)) => match self.ensure_sandbox() {
                Ok(Some(sb)) => match sb.fetch_table_preview(&var, limit) {
                    Ok(p) => (Some(p), None),
                    Err(e) => (None, Some(e.to_string())),
                },
                Ok(None) => (None, Some(SessionError::ExecutionDisabled.to_string())),
                Err(e) => (None, Some(e.to_string())),
            },
            (Some(_), None) => (None, Some("node has no previewable table".to_string())),
            (None, _) => (None, None),
        };
        Ok(NodeDetails {
            snippet_id,
            node: n,
            code_span,
            lines,
            code,
            preview,
            preview_error,
        })
    }
}

fn summary_of(s: &SnippetRecord) -> SnippetSummary {
    SnippetSummary {
        snippet_id: s.snippet_id.clone(),
        status: s.status,
        operations: s.operations.len(),
        failure: s
            .units
            .iter()
            .find_map(|u| u.error.as_ref())
            .map(|e| format!("{}: {}", e.kind, e.message)),
    }
}

fn publish_pipeline(events: &EventBus, snippet_id: &SnippetId, e: PipelineEvent) {
    events.publish(match e {
        PipelineEvent::Delta(d) => SessionEvent::GraphDelta(d),
        PipelineEvent::Diagnostic(message) => SessionEvent::Diagnostic {
            snippet_id: Some(snippet_id.clone()),
            message,
        },
    });
}

/// Interpreter variable holding the table a node stands for.
fn preview_var(node: &Node, program: &InstrumentedProgram) -> Option<String> {
    match &node.detail {
        NodeDetail::Table { variable, .. } => Some(variable.clone()),
        NodeDetail::Operation { operation, .. } => program
            .result_vars
            .get(&operation.id)
            .cloned()
            .or_else(|| {
                program
                    .bindings
                    .values()
                    .find(|b| b.node == operation.id && b.kind == ProbeKind::Table)
                    .map(|b| b.var.clone())
            })
            .or_else(|| operation.output_table.clone()),
        NodeDetail::Result { .. } => None,
    }
}

/// Prompt context for a node query: the node and its snippet only.
fn node_context(node: &Node, snippet_source: &str) -> String {
    let mut s = format!("Node {} ({}): {}\n", node.id, node.class.name(), node.label);
    for p in &node.params {
        s.push_str(&format!("  param {} = {}\n", p.name, p.value));
    }
    if let NodeDetail::Operation { input_states, .. } = &node.detail {
        for b in input_states {
            s.push_str(&format!(
                "  input {}: {} rows x {} cols {:?}\n",
                b.node, b.state.rows, b.state.cols, b.state.columns
            ));
        }
    }
    if let Some(t) = &node.table_state {
        s.push_str(&format!("  output: {} rows x {} cols {:?}\n", t.rows, t.cols, t.columns));
    }
    s.push_str("Snippet:\n```python\n");
    s.push_str(snippet_source);
    if !snippet_source.ends_with('\n') {
        s.push('\n');
    }
    s.push_str("```\n");
    s
}

/// A session plus its event bus, which is readable without the session
/// lock.
#[derive(Clone)]
pub struct SessionHandle {
    pub session: Arc<Mutex<Session>>,
    pub events: Arc<EventBus>,
}

/// Concurrent sessions, each behind its own lock.
pub struct SessionManager {
    root: PathBuf,
    template: SessionConfig,
    llm: LlmSource,
    sessions: Mutex<BTreeMap<String, SessionHandle>>,
}

/// How each new session gets its client.
#[derive(Clone)]
pub enum LlmSource {
    Shared(Arc<dyn LlmClient>),
    Config(LlmClientConfig),
}

impl SessionManager {
    /// Sessions live under `root/<id>`; `template.root` is ignored.
    pub fn new(root: impl Into<PathBuf>, template: SessionConfig, llm: LlmSource) -> Self {
        SessionManager {
            root: root.into(),
            template,
            llm,
            sessions: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn create(&self) -> Result<String, SessionError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut config = self.template.clone();
        config.root = self.root.join(&id);
        let llm = match &self.llm {
            LlmSource::Shared(c) => c.clone(),
            LlmSource::Config(c) => c.build()?,
        };
        let session = Session::new(id.clone(), config, llm)?;
        let handle = SessionHandle {
            events: session.events(),
            session: Arc::new(Mutex::new(session)),
        };
        self.sessions
            .lock()
            .expect("session table lock")
            .insert(id.clone(), handle);
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Result<SessionHandle, SessionError> {
        self.sessions
            .lock()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.lock().expect("session table lock").keys().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{export, ExportFormat};

    fn static_session(dir: &Path) -> Session {
        Session::new("t", SessionConfig::new(dir).static_only(), Arc::new(UnavailableClient)).unwrap()
    }

    #[test]
    fn empty_raw_turn_has_no_deltas() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = static_session(dir.path());
        let report = s.run_turn(TurnInput::RawCode("  \n".into()));
        assert_eq!(report.status, TurnStatus::Ok);
        assert!(report.snippets.is_empty());
        let deltas = s
            .events()
            .history()
            .into_iter()
            .filter(|e| matches!(e.event, SessionEvent::GraphDelta(_)))
            .count();
        assert_eq!(deltas, 0);
        assert!(matches!(
            s.events().history().last().unwrap().event,
            SessionEvent::TurnComplete { .. }
        ));
    }

    #[test]
    fn message_turn_splits_prose_and_code() {
        let dir = tempfile::tempdir().unwrap();
        let fixture = Fixture::parse(
            r#"{"version": 1, "turns": [{"message": "load", "response_chunks": ["Sure.\n``", "`python\nimport pandas as pd\ndf = pd.read_", "csv('a.csv')\n```\nDone.\n"]}]}"#,
        )
        .unwrap();
        let mut s = Session::new(
            "t",
            SessionConfig::new(dir.path()).static_only(),
            Arc::new(ReplayClient::new(fixture)),
        )
        .unwrap();
        let report = s.run_turn(TurnInput::Message("load".into()));
        assert_eq!(report.status, TurnStatus::Ok);
        assert_eq!(report.snippets.len(), 1);
        assert_eq!(report.snippets[0].operations, 1);
        let prose: String = s
            .events()
            .history()
            .into_iter()
            .filter_map(|e| match e.event {
                SessionEvent::TextToken { text, .. } => Some(text),
                _ => None,
            })
            .collect();
        assert_eq!(prose, "Sure.\nDone.\n");
        // the next turn is missing from the fixture
        let failed = s.run_turn(TurnInput::Message("more".into()));
        assert_eq!(failed.status, TurnStatus::Failed);
        assert_eq!(s.snippets().len(), 1);
    }

    #[test]
    fn minimap_falls_back() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = static_session(dir.path());
        assert!(s.minimap().is_empty());
        s.run_turn(TurnInput::RawCode("import pandas as pd\ndf = pd.read_csv('a.csv')\ndf = df.dropna()\n".into()));
        s.run_turn(TurnInput::RawCode("x = 1\n".into()));
        let m = s.minimap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].summary, "Snippet 1: 2 operations");
    }

    #[test]
    fn edit_marks_stale_and_rerun_rebuilds() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = static_session(dir.path());
        s.run_turn(TurnInput::RawCode(
            "import pandas as pd\na = pd.read_csv('a.csv')\nb = pd.read_csv('b.csv')\nm = a.merge(b, on='name')\n".into(),
        ));
        s.run_turn(TurnInput::RawCode("n = m.dropna()\n".into()));
        let merge = s.snippets()[0]
            .operations
            .iter()
            .find(|o| o.kind == crate::extract::OperationKind::Merge)
            .unwrap()
            .id
            .clone();
        let patch = s
            .edit_param(&ParamEdit {
                node_id: merge.clone(),
                param_name: "on".into(),
                new_value: "'id'".into(),
                revision: None,
            })
            .unwrap();
        assert!(patch.resulting_source.contains("on='id'"));
        assert_eq!(s.snippets()[0].status, SnippetStatus::Stale);
        s.rerun_snippet("s0").unwrap();
        assert_eq!(s.snippets()[0].status, SnippetStatus::Analyzed);
        assert_eq!(s.snippets()[1].status, SnippetStatus::Stale);
        assert!(s.snippets()[1].diagram.meta.stale);
        let graph = export(&s.snippets()[0].diagram, ExportFormat::GraphJson);
        assert!(graph.contains("'id'"));
        assert!(s.node_query(&merge, "why?").is_err());
        assert!(matches!(
            s.node_query(&"nope".into(), "why?"),
            Err(SessionError::UnknownNode(_))
        ));
    }

    #[test]
    fn upload_rejects_paths() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = static_session(dir.path());
        assert!(s.upload_file("../x.csv", b"a").is_err());
        assert!(s.upload_file(".hidden", b"a").is_err());
        let p = s.upload_file("x.csv", b"a\n1\n").unwrap();
        assert!(p.ends_with("work/x.csv"));
        assert_eq!(s.files(), ["x.csv"]);
    }
}
