//! Routes and payloads.

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pselab_core::protocol::persist::{SessionManifest, SessionWriter, StoredResults};
use pselab_core::protocol::{
    create_session, Feedback, IntervalResponse, NextStep, Phase, ProtocolError, SessionConfig, SessionResults, TrialPlan,
};
use pselab_core::CurveId;
use serde::{Deserialize, Serialize};

use crate::{AppState, LiveSession};

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(status))
        .route("/sessions/{id}/next-trial", get(next_trial))
        .route("/sessions/{id}/responses", post(respond))
        .route("/sessions/{id}/end-rest", post(end_rest))
        .route("/sessions/{id}/results", get(results))
        .with_state(state)
}

/// JSON error body: `{"error": code, "message": text, ...}`.
#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_flight: Option<TrialPlan>,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            error,
            message: message.into(),
            phase: None,
            in_flight: None,
        }
    }

    fn internal(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message.to_string())
    }

    fn protocol(e: ProtocolError, live: &LiveSession) -> Self {
        let msg = e.to_string();
        match e {
            ProtocolError::InvalidConfig(_) => Self::new(StatusCode::BAD_REQUEST, "invalid_config", msg),
            ProtocolError::InvalidResponse(_) => Self::new(StatusCode::BAD_REQUEST, "invalid_response", msg),
            ProtocolError::WrongPhase { phase, .. } => Self {
                phase: Some(phase),
                ..Self::new(StatusCode::CONFLICT, "wrong_phase", msg)
            },
            ProtocolError::TrialInFlight { .. } => Self {
                in_flight: live.state.in_flight().cloned(),
                ..Self::new(StatusCode::CONFLICT, "trial_in_flight", msg)
            },
            ProtocolError::NoTrialInFlight => Self {
                phase: Some(live.state.phase()),
                ..Self::new(StatusCode::CONFLICT, "no_trial_in_flight", msg)
            },
            ProtocolError::IncompleteSession { .. } => Self::new(StatusCode::CONFLICT, "incomplete_session", msg),
            ProtocolError::Quest(_) => Self::internal(msg),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn lookup(state: &AppState, id: &str) -> ApiResult<std::sync::Arc<std::sync::Mutex<LiveSession>>> {
    state
        .get(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id}")))
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8], code: &'static str) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, code, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: String,
    pub participant_id: String,
    pub block_order: Vec<CurveId>,
    pub planned_trials: usize,
    pub seed: u64,
}

async fn create(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<CreatedSession>)> {
    let body: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { &body };
    let mut value: serde_json::Value = parse_json(body, "invalid_config")?;
    let Some(obj) = value.as_object_mut() else {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_config", "session config must be a JSON object"));
    };
    let id = uuid::Uuid::new_v4();
    if !obj.contains_key("seed") {
        // fresh counterbalancing per session unless the caller pins it
        obj.insert("seed".into(), serde_json::Value::from(id.as_u64_pair().0));
    }
    let config: SessionConfig = serde_json::from_value(value)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_config", e.to_string()))?;
    let session = create_session(config).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_config", e.to_string()))?;

    let session_id = id.simple().to_string();
    let manifest = SessionManifest::new(session_id.clone(), state.now_ms(), &session);
    let writer = SessionWriter::create(state.data_dir().join(&session_id), &manifest).map_err(ApiError::internal)?;
    let created = CreatedSession {
        session_id: session_id.clone(),
        participant_id: session.config().participant_id.clone(),
        block_order: session.block_order().to_vec(),
        planned_trials: session.config().planned_trial_count(),
        seed: session.config().seed,
    };
    state.insert(
        session_id,
        LiveSession {
            state: session,
            writer,
            results_written: false,
        },
    );
    Ok((StatusCode::CREATED, Json(created)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session_id: String,
    #[serde(flatten)]
    pub phase: Phase,
    pub trials_done: usize,
    pub planned_trials: usize,
    pub in_flight: Option<TrialPlan>,
}

async fn status(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionStatus>> {
    let session = lookup(&state, &id)?;
    let live = session.lock().unwrap_or_else(|e| e.into_inner());
    Ok(Json(SessionStatus {
        session_id: id,
        phase: live.state.phase(),
        trials_done: live.state.log().len(),
        planned_trials: live.state.config().planned_trial_count(),
        in_flight: live.state.in_flight().cloned(),
    }))
}

async fn next_trial(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<NextStep>> {
    let session = lookup(&state, &id)?;
    let mut live = session.lock().unwrap_or_else(|e| e.into_inner());
    let now = state.now_ms();
    match live.state.poll(now) {
        Ok(step) => Ok(Json(step)),
        Err(e) => Err(ApiError::protocol(e, &live)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseSubmission {
    pub response: IntervalResponse,
    pub latency_ms: f64,
    /// When present, must name the trial in flight.
    #[serde(default)]
    pub trial_index: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseAck {
    pub trial_index: u64,
    /// Present for practice trials only.
    pub feedback: Option<Feedback>,
    #[serde(flatten)]
    pub phase: Phase,
}

async fn respond(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<ResponseAck>> {
    let session = lookup(&state, &id)?;
    let sub: ResponseSubmission = parse_json(&body, "invalid_response")?;
    let mut live = session.lock().unwrap_or_else(|e| e.into_inner());
    if let (Some(want), Some(plan)) = (sub.trial_index, live.state.in_flight()) {
        if want != plan.trial_index {
            return Err(ApiError {
                in_flight: Some(plan.clone()),
                ..ApiError::new(
                    StatusCode::CONFLICT,
                    "stale_trial",
                    format!("trial {want} is not in flight (trial {} is)", plan.trial_index),
                )
            });
        }
    }
    // Advance a copy and commit only once the record is on disk.
    let mut next = live.state.clone();
    let feedback = next
        .submit_response(sub.response, sub.latency_ms, state.now_ms())
        .map_err(|e| ApiError::protocol(e, &live))?;
    let record = next.log().last().expect("a record was just appended").clone();
    live.writer.append(&record).map_err(ApiError::internal)?;
    live.state = next;
    if live.state.is_done() && !live.results_written {
        let res = live.state.session_results(false).map_err(|e| ApiError::protocol(e, &live))?;
        live.writer
            .write_results(&StoredResults {
                session_id: id,
                complete: true,
                per_curve: res.per_curve,
            })
            .map_err(ApiError::internal)?;
        live.results_written = true;
    }
    Ok(Json(ResponseAck {
        trial_index: record.plan.trial_index,
        feedback,
        phase: live.state.phase(),
    }))
}

async fn end_rest(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Phase>> {
    let session = lookup(&state, &id)?;
    let mut live = session.lock().unwrap_or_else(|e| e.into_inner());
    match live.state.end_rest() {
        Ok(()) => Ok(Json(live.state.phase())),
        Err(e) => Err(ApiError::protocol(e, &live)),
    }
}

#[derive(Debug, Default, Deserialize)]
struct ResultsQuery {
    #[serde(default)]
    partial: bool,
}

async fn results(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ResultsQuery>,
) -> ApiResult<Json<SessionResults>> {
    let session = lookup(&state, &id)?;
    let live = session.lock().unwrap_or_else(|e| e.into_inner());
    live.state
        .session_results(q.partial)
        .map(Json)
        .map_err(|e| ApiError::protocol(e, &live))
}
