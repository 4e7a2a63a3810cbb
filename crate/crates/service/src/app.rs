//! HTTP session service.
//!
//! Each session wraps one [`Session`]. Backend calls run on the blocking
//! pool; a request that arrives while another is being processed for the
//! same session is rejected with 409.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex as AsyncMutex;
use uuid::Uuid;

use clarify_core::backend::{Backend, EvidenceSet};
use clarify_core::controller::{Answer, ControllerConfig, ControllerError, Event, Session};
use clarify_core::parsing::Lexicon;
use clarify_core::schema::FeatureAssignment;

pub const DEFAULT_IDLE: Duration = Duration::from_secs(30 * 60);

struct Slot {
    session: Arc<AsyncMutex<Session>>,
    last_used: Instant,
}

pub struct AppState {
    backend: Arc<dyn Backend>,
    lexicon: Arc<Lexicon>,
    config: ControllerConfig,
    idle: Duration,
    sessions: Mutex<HashMap<Uuid, Slot>>,
}

impl AppState {
    pub fn new(backend: Arc<dyn Backend>, lexicon: Arc<Lexicon>, config: ControllerConfig) -> Self {
        Self {
            backend,
            lexicon,
            config,
            idle: DEFAULT_IDLE,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_idle_timeout(mut self, idle: Duration) -> Self {
        self.idle = idle;
        self
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    /// Drops sessions idle for longer than the timeout. Returns how many.
    pub fn evict_idle(&self) -> usize {
        let mut sessions = self.sessions.lock().unwrap();
        let before = sessions.len();
        let idle = self.idle;
        sessions.retain(|_, s| s.last_used.elapsed() < idle);
        before - sessions.len()
    }

    fn touch(&self, id: Uuid) -> Option<Arc<AsyncMutex<Session>>> {
        let mut sessions = self.sessions.lock().unwrap();
        let slot = sessions.get_mut(&id)?;
        if slot.last_used.elapsed() >= self.idle {
            sessions.remove(&id);
            return None;
        }
        slot.last_used = Instant::now();
        Some(slot.session.clone())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    event: Option<Event>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            event: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(e) = self.event {
            body["event"] = serde_json::to_value(e).unwrap();
        }
        (self.status, Json(body)).into_response()
    }
}

fn controller_error(e: ControllerError) -> ApiError {
    let status = match &e {
        ControllerError::InvalidAnswer(_) | ControllerError::Evidence(_) | ControllerError::TargetInEvidence(_) => {
            StatusCode::UNPROCESSABLE_ENTITY
        }
        ControllerError::NoPendingQuestion | ControllerError::Finished | ControllerError::Faulted(_) => {
            StatusCode::CONFLICT
        }
        ControllerError::Config(_) => StatusCode::INTERNAL_SERVER_ERROR,
    };
    ApiError::new(status, e.to_string())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CreateRequest {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub features: Option<Vec<FeatureAssignment>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnswerRequest {
    #[serde(default)]
    pub value: Option<String>,
    #[serde(default)]
    pub skip: bool,
}

/// Reply to create and answer calls: the latest event plus every event the
/// call produced (stage predictions precede the final one).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventReply {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub event: Event,
    pub events: Vec<Event>,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateRequest>,
) -> Result<(StatusCode, Json<EventReply>), ApiError> {
    let schema = state.backend.schema();
    let evidence = match (&req.text, &req.features) {
        (Some(_), Some(_)) => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "give either text or features, not both",
            ))
        }
        (Some(t), None) if !t.trim().is_empty() => state.lexicon.extract_features(t),
        (None, Some(f)) if !f.is_empty() => {
            let f: Vec<_> = f
                .iter()
                .map(|a| FeatureAssignment::normalized(&a.feature, &a.value))
                .collect();
            EvidenceSet::from_assignments(schema, f)
                .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?
        }
        _ => return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty description")),
    };
    let worker = state.clone();
    let (session, event) =
        tokio::task::spawn_blocking(move || Session::start(worker.backend.as_ref(), evidence, worker.config.clone()))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
            .map_err(controller_error)?;
    if let Event::Fault { message } = &event {
        return Err(ApiError {
            status: StatusCode::SERVICE_UNAVAILABLE,
            message: message.clone(),
            event: Some(event),
        });
    }
    let events = session.events().to_vec();
    let id = Uuid::new_v4();
    state.sessions.lock().unwrap().insert(
        id,
        Slot {
            session: Arc::new(AsyncMutex::new(session)),
            last_used: Instant::now(),
        },
    );
    Ok((
        StatusCode::CREATED,
        Json(EventReply {
            session_id: Some(id.to_string()),
            event,
            events,
        }),
    ))
}

fn parse_id(raw: &str) -> Result<Uuid, ApiError> {
    Uuid::parse_str(raw).map_err(|_| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session `{raw}`")))
}

async fn answer(
    State(state): State<Arc<AppState>>,
    Path(raw): Path<String>,
    Json(req): Json<AnswerRequest>,
) -> Result<Json<EventReply>, ApiError> {
    let id = parse_id(&raw)?;
    let slot = state
        .touch(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session `{raw}`")))?;
    let answer = match (req.value, req.skip) {
        (Some(_), true) => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "give either value or skip, not both",
            ))
        }
        (Some(v), false) if !v.trim().is_empty() => Answer::Value(v),
        (None, true) => Answer::Skip,
        _ => return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty answer")),
    };
    let mut guard = slot
        .try_lock_owned()
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, "session is busy with another request"))?;
    let backend = state.backend.clone();
    let (event, events) = tokio::task::spawn_blocking(move || {
        let before = guard.events().len();
        let event = guard.step(backend.as_ref(), answer)?;
        Ok::<_, ControllerError>((event, guard.events()[before..].to_vec()))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    .map_err(controller_error)?;
    if let Event::Fault { message } = &event {
        return Err(ApiError {
            status: StatusCode::SERVICE_UNAVAILABLE,
            message: message.clone(),
            event: Some(event),
        });
    }
    Ok(Json(EventReply {
        session_id: None,
        event,
        events,
    }))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(raw): Path<String>) -> Result<Response, ApiError> {
    let id = parse_id(&raw)?;
    let slot = state
        .touch(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session `{raw}`")))?;
    let session = slot
        .try_lock()
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, "session is busy with another request"))?;
    Ok(Json(json!({
        "session_id": id.to_string(),
        "state": &*session,
        "events": session.events(),
    }))
    .into_response())
}

async fn schema(State(state): State<Arc<AppState>>) -> Response {
    (
        [(axum::http::header::CONTENT_TYPE, "application/json")],
        state.backend.schema().to_json(),
    )
        .into_response()
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/answers", post(answer))
        .route("/schema", get(schema))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Periodically evicts idle sessions until the state is dropped elsewhere.
pub fn spawn_evictor(state: &Arc<AppState>) -> tokio::task::JoinHandle<()> {
    let weak = Arc::downgrade(state);
    let period = (state.idle / 4).clamp(Duration::from_millis(50), Duration::from_secs(60));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            match weak.upgrade() {
                Some(s) => {
                    s.evict_idle();
                }
                None => break,
            }
        }
    })
}

/// Binds and serves until the listener fails or ctrl-c.
pub async fn serve(
    state: Arc<AppState>,
    listener: tokio::net::TcpListener,
    static_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    let evictor = spawn_evictor(&state);
    let app = router(state, static_dir);
    let result = axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    evictor.abort();
    result
}
