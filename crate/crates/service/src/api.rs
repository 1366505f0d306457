//! REST surface over dialogue sessions and the shared venue.
//!
//! | Method | Path | Success | Errors |
//! |---|---|---|---|
//! | POST | `/sessions` | 201 [`SessionView`] | 503 session cap reached |
//! | GET | `/sessions/{id}` | 200 [`SessionView`] | 404 |
//! | POST | `/sessions/{id}/message` `{"text": ...}` | 200 [`SessionView`] | 404, 409 terminal or wrong state, 502 provider failure, 422 execution refused |
//! | POST | `/sessions/{id}/execute` | 200 report | 404, 409 not ready, 422 oversell or no feed |
//! | GET | `/portfolio` | 200 `{"positions": {code: shares}}` | |
//! | GET | `/trades` | 200 list of reports | |
//!
//! A report is `{"status", "fill_price", "tick", "reason", "order"}` with the
//! order in wire form. Errors are `{"error": message}`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tradeslot_core::dialogue::{DialogueError, Event, OutboundMessage, Session, SessionConfig, SessionState};
use tradeslot_core::exchange::{ExchangeError, ExecutionReport, PriceFeed, ReportWire, Venue};
use tradeslot_core::gateway::{build_provider, extraction_transcript, ChatProvider, ProviderConfig, RuleBasedProvider};
use tradeslot_core::wire::WireDraft;
use tradeslot_core::{Money, SymbolDirectory};

use crate::config::ServiceConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bubble {
    pub role: String,
    pub text: String,
}

impl Bubble {
    fn user(text: &str) -> Self {
        Bubble {
            role: "user".into(),
            text: text.into(),
        }
    }

    fn system(text: impl Into<String>) -> Self {
        Bubble {
            role: "system".into(),
            text: text.into(),
        }
    }
}

/// Public view of a session. Never carries provider replies or settings.
#[derive(Debug, Clone, Serialize)]
pub struct SessionView {
    pub id: String,
    pub state: &'static str,
    pub draft: Option<WireDraft>,
    pub pending_field: Option<&'static str>,
    pub question: Option<String>,
    pub last_report: Option<ReportWire>,
    pub transcript: Vec<Bubble>,
}

#[derive(Clone)]
struct SessionEntry {
    session: Session,
    transcript: Vec<Bubble>,
    last_report: Option<ExecutionReport>,
}

impl SessionEntry {
    fn view(&self, id: &str) -> SessionView {
        let state = self.session.state();
        let pending = state.pending_field();
        SessionView {
            id: id.to_string(),
            state: state.name(),
            draft: state.draft().as_ref().map(WireDraft::from),
            pending_field: pending.map(|f| f.wire_key()),
            question: pending.map(|f| tradeslot_core::dialogue::render_question(f).to_string()),
            last_report: self.last_report.as_ref().map(ExecutionReport::to_wire),
            transcript: self.transcript.clone(),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl From<DialogueError> for ApiError {
    fn from(e: DialogueError) -> Self {
        let status = match &e {
            DialogueError::IllegalEvent { .. } => StatusCode::CONFLICT,
            DialogueError::Execution(ExchangeError::OversellRejected { .. } | ExchangeError::UnknownSymbolFeed(_)) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub struct AppState {
    provider: Arc<dyn ChatProvider>,
    directory: SymbolDirectory,
    session_config: SessionConfig,
    session_cap: usize,
    sessions: RwLock<HashMap<String, Arc<tokio::sync::Mutex<SessionEntry>>>>,
    venue: Mutex<Venue>,
}

/// Seeded walk for every code in the directory, used when no feed file is given.
pub fn default_feed(directory: &SymbolDirectory) -> PriceFeed {
    let mut feed = PriceFeed::new();
    let mut codes: Vec<_> = directory.entries().map(|(_, code)| code.clone()).collect();
    codes.sort();
    codes.dedup();
    for (i, code) in codes.into_iter().enumerate() {
        let walk = PriceFeed::random_walk(code, Money::from_cents(10_000).expect("positive"), 200, i as u64);
        feed.merge(walk).expect("distinct symbols");
    }
    feed
}

impl AppState {
    pub fn new(
        provider: Arc<dyn ChatProvider>,
        directory: SymbolDirectory,
        feed: PriceFeed,
        session_config: SessionConfig,
        session_cap: usize,
    ) -> Self {
        AppState {
            provider,
            directory,
            session_config,
            session_cap,
            sessions: RwLock::new(HashMap::new()),
            venue: Mutex::new(Venue::new(feed)),
        }
    }

    pub fn from_config(cfg: &ServiceConfig) -> anyhow::Result<Self> {
        let (provider, directory): (Arc<dyn ChatProvider>, SymbolDirectory) = match &cfg.provider_config {
            Some(path) => {
                let pc = ProviderConfig::load(path)?;
                (Arc::from(build_provider(&pc)?), pc.load_directory()?)
            }
            None => {
                let dir = SymbolDirectory::builtin();
                (Arc::new(RuleBasedProvider::new(dir.clone())), dir)
            }
        };
        let feed = match &cfg.feed {
            Some(path) => PriceFeed::load(Path::new(path))?,
            None => default_feed(&directory),
        };
        let session_config = SessionConfig {
            max_turns: cfg.max_turns,
            auto_execute: cfg.auto_execute,
            policy: cfg.extraction_policy()?,
        };
        Ok(Self::new(provider, directory, feed, session_config, cfg.session_cap))
    }

    fn entry(&self, id: &str) -> ApiResult<Arc<tokio::sync::Mutex<SessionEntry>>> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))
    }

    /// Applies one event with the venue held, recording bubbles and reports.
    fn apply(&self, entry: &mut SessionEntry, event: Event) -> Result<Vec<OutboundMessage>, DialogueError> {
        let messages = {
            let mut venue = self.venue.lock().expect("venue lock");
            entry.session.handle(event, &mut *venue)?
        };
        for m in &messages {
            match m {
                OutboundMessage::Question { text, .. } => entry.transcript.push(Bubble::system(text.clone())),
                OutboundMessage::Notice(text) => entry.transcript.push(Bubble::system(text.clone())),
                OutboundMessage::Report(report) => {
                    entry.transcript.push(Bubble::system(report.to_string()));
                    entry.last_report = Some(report.clone());
                }
                OutboundMessage::DraftUpdated(_) | OutboundMessage::RequestCompletion { .. } => {}
            }
        }
        Ok(messages)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/message", post(post_message))
        .route("/sessions/{id}/execute", post(execute))
        .route("/portfolio", get(portfolio))
        .route("/trades", get(trades))
        .with_state(state)
}

async fn create_session(State(app): State<Arc<AppState>>) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let mut sessions = app.sessions.write().expect("session map lock");
    if sessions.len() >= app.session_cap {
        return Err(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            format!("session cap of {} reached", app.session_cap),
        ));
    }
    let id = uuid::Uuid::new_v4().to_string();
    let entry = SessionEntry {
        session: Session::new(app.session_config.clone(), app.directory.clone()),
        transcript: Vec::new(),
        last_report: None,
    };
    let view = entry.view(&id);
    sessions.insert(id, Arc::new(tokio::sync::Mutex::new(entry)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionView>> {
    let entry = app.entry(&id)?;
    let entry = entry.lock().await;
    Ok(Json(entry.view(&id)))
}

#[derive(Debug, Deserialize)]
pub struct MessageBody {
    pub text: String,
}

async fn post_message(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<MessageBody>, JsonRejection>,
) -> ApiResult<Json<SessionView>> {
    let Json(body) = body.map_err(|e| ApiError::new(e.status(), e.body_text()))?;
    let handle = app.entry(&id)?;
    let mut entry = handle.lock().await;
    if entry.session.state().is_terminal() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("session is {}", entry.session.state().name()),
        ));
    }
    let snapshot = entry.clone();
    entry.transcript.push(Bubble::user(&body.text));
    let messages = match app.apply(&mut entry, Event::UserMessage(body.text.clone())) {
        Ok(m) => m,
        Err(e) => {
            keep_if_ready(&mut entry, snapshot);
            return Err(e.into());
        }
    };
    let utterance = messages.iter().find_map(|m| match m {
        OutboundMessage::RequestCompletion { utterance } => Some(utterance.clone()),
        _ => None,
    });
    if let Some(utterance) = utterance {
        let transcript = extraction_transcript(&utterance, &app.directory);
        let provider = Arc::clone(&app.provider);
        let reply = tokio::task::spawn_blocking(move || provider.complete(&transcript)).await;
        let reply = match reply {
            Ok(Ok(text)) => text,
            Ok(Err(e)) => {
                *entry = snapshot;
                return Err(ApiError::new(StatusCode::BAD_GATEWAY, format!("provider failed: {e}")));
            }
            Err(e) => {
                *entry = snapshot;
                return Err(ApiError::new(
                    StatusCode::BAD_GATEWAY,
                    format!("provider task failed: {e}"),
                ));
            }
        };
        if let Err(e) = app.apply(&mut entry, Event::ProviderReply(reply)) {
            keep_if_ready(&mut entry, snapshot);
            return Err(e.into());
        }
    }
    Ok(Json(entry.view(&id)))
}

/// An auto-execute refusal leaves the order ready to retry; any other failure rolls back.
fn keep_if_ready(entry: &mut SessionEntry, snapshot: SessionEntry) {
    if !matches!(entry.session.state(), SessionState::ReadyToExecute { .. }) {
        *entry = snapshot;
    }
}

async fn execute(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<ReportWire>> {
    let handle = app.entry(&id)?;
    let mut entry = handle.lock().await;
    if !matches!(entry.session.state(), SessionState::ReadyToExecute { .. }) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("session is {}, not ready_to_execute", entry.session.state().name()),
        ));
    }
    app.apply(&mut entry, Event::ConfirmExecute)?;
    let report = entry
        .last_report
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "no report recorded"))?;
    Ok(Json(report.to_wire()))
}

#[derive(Debug, Serialize)]
pub struct PortfolioView {
    pub positions: BTreeMap<String, i64>,
}

async fn portfolio(State(app): State<Arc<AppState>>) -> Json<PortfolioView> {
    let venue = app.venue.lock().expect("venue lock");
    let positions = venue
        .portfolio
        .positions
        .iter()
        .filter(|(_, q)| **q != 0)
        .map(|(s, q)| (s.as_str().to_string(), *q))
        .collect();
    Json(PortfolioView { positions })
}

async fn trades(State(app): State<Arc<AppState>>) -> Json<Vec<ReportWire>> {
    let venue = app.venue.lock().expect("venue lock");
    Json(venue.portfolio.trade_log.iter().map(ExecutionReport::to_wire).collect())
}
