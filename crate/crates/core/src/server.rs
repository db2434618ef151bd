//! HTTP API over `SessionManager`.
//!
//! Session work is blocking (interpreter I/O) and runs on the blocking pool
//! under the session's lock. The event stream reads the session's bus
//! directly, so subscribers are never blocked by a running turn.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::Deserialize;
use tokio::sync::broadcast;

use crate::edit::{EditError, ParamEdit};
use crate::graph::{export, ExportFormat};
use crate::ids::NodeId;
use crate::session::{EventBus, EventEnvelope, LlmError, Session, SessionError, SessionManager, TurnInput};

/// Upload extensions accepted by `POST /sessions/{id}/files`.
pub const UPLOAD_EXTENSIONS: &[&str] = &["csv", "tsv", "xlsx", "xls", "json"];

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::UnknownSession(_) | SessionError::UnknownSnippet(_) | SessionError::UnknownNode(_) => {
                StatusCode::NOT_FOUND
            }
            SessionError::InvalidFile(_) => StatusCode::BAD_REQUEST,
            SessionError::ExecutionDisabled => StatusCode::CONFLICT,
            SessionError::Edit(EditError::UnknownNode(_)) => StatusCode::NOT_FOUND,
            SessionError::Edit(EditError::RevisionConflict { .. } | EditError::StaleSpan { .. }) => {
                StatusCode::CONFLICT
            }
            SessionError::Edit(_) => StatusCode::BAD_REQUEST,
            SessionError::Llm(LlmError::FixtureMiss(_)) => StatusCode::NOT_FOUND,
            SessionError::Llm(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
pub struct AppState {
    pub manager: Arc<SessionManager>,
}

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/files", post(upload_files))
        .route("/sessions/{id}/turns", post(post_turn))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/snippets/{k}/graph", get(snippet_graph))
        .route("/sessions/{id}/snippets/{k}/rerun", post(rerun))
        .route("/sessions/{id}/nodes/{n}", get(node_details))
        .route("/sessions/{id}/nodes/{n}/edit", post(edit_node))
        .route("/sessions/{id}/nodes/{n}/query", post(query_node))
        .route("/sessions/{id}/minimap", get(minimap))
        .with_state(AppState { manager })
}

pub async fn serve(addr: SocketAddr, manager: Arc<SessionManager>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(manager)).await
}

/// Runs `f` on the blocking pool with the session locked.
async fn with_session<T, F>(state: &AppState, id: &str, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> Result<T, SessionError> + Send + 'static,
{
    let handle = state.manager.get(id)?;
    tokio::task::spawn_blocking(move || {
        let mut session = handle.session.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut session)
    })
    .await
    .map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        message: e.to_string(),
    })?
    .map_err(ApiError::from)
}

async fn create_session(State(state): State<AppState>) -> ApiResult<impl IntoResponse> {
    let manager = state.manager.clone();
    let id = tokio::task::spawn_blocking(move || manager.create())
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: e.to_string(),
        })??;
    Ok((StatusCode::CREATED, Json(serde_json::json!({ "session_id": id }))))
}

async fn upload_files(
    State(state): State<AppState>,
    Path(id): Path<String>,
    mut multipart: Multipart,
) -> ApiResult<impl IntoResponse> {
    state.manager.get(&id)?;
    let mut files = Vec::new();
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(e.to_string()))?
    {
        let Some(name) = field.file_name().map(str::to_string) else {
            continue;
        };
        let ext = std::path::Path::new(&name)
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        if !UPLOAD_EXTENSIONS.contains(&ext.as_str()) {
            return Err(ApiError::bad_request(format!(
                "unsupported upload {name:?}; expected one of {UPLOAD_EXTENSIONS:?}"
            )));
        }
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        files.push((name, bytes));
    }
    if files.is_empty() {
        return Err(ApiError::bad_request("no file fields in upload"));
    }
    let names = with_session(&state, &id, move |s| {
        let mut names = Vec::new();
        for (name, bytes) in files {
            s.upload_file(&name, &bytes)?;
            names.push(name);
        }
        Ok(names)
    })
    .await?;
    Ok(Json(serde_json::json!({ "files": names })))
}

async fn post_turn(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(input): Json<TurnInput>,
) -> ApiResult<impl IntoResponse> {
    let report = with_session(&state, &id, move |s| Ok(s.run_turn(input))).await?;
    Ok(Json(report))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    /// Only events with a larger seq.
    #[serde(default)]
    after: u64,
    /// Keep the stream open for future events (default true).
    #[serde(default = "yes")]
    follow: bool,
}

fn yes() -> bool {
    true
}

struct EventCursor {
    bus: Arc<EventBus>,
    rx: broadcast::Receiver<EventEnvelope>,
    backlog: VecDeque<EventEnvelope>,
    last: u64,
    follow: bool,
}

impl EventCursor {
    async fn next(&mut self) -> Option<EventEnvelope> {
        loop {
            if let Some(e) = self.backlog.pop_front() {
                if e.seq > self.last {
                    self.last = e.seq;
                    return Some(e);
                }
                continue;
            }
            if !self.follow {
                return None;
            }
            match self.rx.recv().await {
                Ok(e) => self.backlog.push_back(e),
                // refill from history so no event is skipped
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    self.backlog.extend(self.bus.history().into_iter().filter(|e| e.seq > self.last));
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    }
}

fn envelope_type(e: &EventEnvelope) -> String {
    serde_json::to_value(e)
        .ok()
        .and_then(|v| v.get("type").and_then(|t| t.as_str()).map(str::to_string))
        .unwrap_or_default()
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let handle = state.manager.get(&id)?;
    let (history, rx) = handle.events.subscribe();
    let cursor = EventCursor {
        bus: handle.events.clone(),
        rx,
        backlog: history.into(),
        last: q.after,
        follow: q.follow,
    };
    let stream = futures::stream::unfold(cursor, |mut c| async move {
        let env = c.next().await?;
        let data = serde_json::to_string(&env).unwrap_or_default();
        let event = Event::default()
            .id(env.seq.to_string())
            .event(envelope_type(&env))
            .data(data);
        Some((Ok(event), c))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Deserialize)]
struct GraphQuery {
    format: Option<String>,
}

async fn snippet_graph(
    State(state): State<AppState>,
    Path((id, k)): Path<(String, String)>,
    Query(q): Query<GraphQuery>,
) -> ApiResult<Response> {
    let format = match q.format.as_deref() {
        None => ExportFormat::GraphJson,
        Some(f) => f.parse::<ExportFormat>().map_err(|e| ApiError::bad_request(e.to_string()))?,
    };
    let text = with_session(&state, &id, move |s| Ok(export(&s.snippet(&k)?.diagram, format))).await?;
    let content_type = match format {
        ExportFormat::GraphJson => "application/json",
        ExportFormat::Dot => "text/vnd.graphviz",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], text).into_response())
}

async fn rerun(
    State(state): State<AppState>,
    Path((id, k)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    let summary = with_session(&state, &id, move |s| s.rerun_snippet(&k)).await?;
    Ok(Json(summary))
}

#[derive(Debug, Deserialize)]
struct NodeQuery {
    rows: Option<usize>,
}

async fn node_details(
    State(state): State<AppState>,
    Path((id, n)): Path<(String, String)>,
    Query(q): Query<NodeQuery>,
) -> ApiResult<impl IntoResponse> {
    let details = with_session(&state, &id, move |s| s.node_details(&NodeId::from(n), q.rows)).await?;
    Ok(Json(details))
}

/// `ParamEdit` body; `node_id` may be omitted since the path carries it.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EditBody {
    node_id: Option<NodeId>,
    param_name: String,
    new_value: String,
    revision: Option<u64>,
}

async fn edit_node(
    State(state): State<AppState>,
    Path((id, n)): Path<(String, String)>,
    Json(body): Json<EditBody>,
) -> ApiResult<impl IntoResponse> {
    let node_id = NodeId::from(n);
    if body.node_id.as_ref().is_some_and(|b| b != &node_id) {
        return Err(ApiError::bad_request("node_id in body differs from the path"));
    }
    let edit = ParamEdit {
        node_id,
        param_name: body.param_name,
        new_value: body.new_value,
        revision: body.revision,
    };
    let patch = with_session(&state, &id, move |s| s.edit_param(&edit)).await?;
    Ok(Json(patch))
}

#[derive(Debug, Deserialize)]
struct QuestionBody {
    question: String,
}

async fn query_node(
    State(state): State<AppState>,
    Path((id, n)): Path<(String, String)>,
    Json(body): Json<QuestionBody>,
) -> ApiResult<impl IntoResponse> {
    let answer = with_session(&state, &id, move |s| s.node_query(&NodeId::from(n), &body.question)).await?;
    Ok(Json(answer))
}

async fn minimap(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let entries = with_session(&state, &id, |s| Ok(s.minimap())).await?;
    Ok(Json(entries))
}
