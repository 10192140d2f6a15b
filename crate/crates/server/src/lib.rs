//! JSON-over-HTTP front end for the annotation tasker.
//!
//! Every handler takes the tasker lock for the duration of one tasker
//! call, so cap checks and duplicate checks see the writes they guard.

use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pel_core::evalkit::{EvaluatorKind, Judgment};
use pel_core::lexicon::{self, DyadTable};
use pel_core::quality;
use pel_core::tasker::{Tasker, TaskerError};
use pel_core::Subclass;
use serde::Deserialize;
use serde_json::json;

pub struct AppState {
    tasker: Mutex<Tasker>,
    dyads: DyadTable,
    /// Fixed filter threshold for the lexicon export; the optimum when unset.
    threshold: Option<u32>,
    min_annotations: u32,
}

impl AppState {
    pub fn new(tasker: Tasker) -> Self {
        AppState {
            tasker: Mutex::new(tasker),
            dyads: DyadTable::default(),
            threshold: None,
            min_annotations: quality::DEFAULT_MIN_ANNOTATIONS,
        }
    }

    pub fn with_dyads(mut self, dyads: DyadTable) -> Self {
        self.dyads = dyads;
        self
    }

    pub fn with_threshold(mut self, x: Option<u32>) -> Self {
        self.threshold = x;
        self
    }

    pub fn with_min_annotations(mut self, n: u32) -> Self {
        self.min_annotations = n;
        self
    }

    pub fn tasker(&self) -> MutexGuard<'_, Tasker> {
        self.tasker.lock().unwrap_or_else(|p| p.into_inner())
    }
}

pub type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/workers", post(register))
        .route("/api/task", get(next_task))
        .route("/api/annotation", post(annotate))
        .route("/api/worker/{id}/status", get(status))
        .route("/api/groups/{id}", get(group))
        .route("/api/evaluation", post(evaluate))
        .route("/api/lexicon.csv", get(lexicon_csv))
        .with_state(state)
}

/// Serve until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: Shared) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }
}

impl From<TaskerError> for ApiError {
    fn from(e: TaskerError) -> Self {
        let status = match &e {
            TaskerError::UnknownWorker(_) | TaskerError::UnknownGroup(_) => StatusCode::NOT_FOUND,
            TaskerError::NotAssigned { .. } | TaskerError::NotAnEvaluator(_) => StatusCode::FORBIDDEN,
            TaskerError::Conflict(_) => StatusCode::CONFLICT,
            TaskerError::WrongJudgment { .. } | TaskerError::Eval(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Deserialize)]
struct Registration {
    worker: String,
    #[serde(default)]
    evaluator_kind: Option<EvaluatorKind>,
}

async fn register(State(state): State<Shared>, Json(body): Json<Registration>) -> ApiResult<Response> {
    if body.worker.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "worker id must not be empty"));
    }
    let status = state.tasker().register(&body.worker, body.evaluator_kind);
    Ok(Json(status).into_response())
}

#[derive(Deserialize)]
struct TaskQuery {
    worker: String,
    #[serde(default)]
    kind: Option<String>,
}

async fn next_task(State(state): State<Shared>, Query(q): Query<TaskQuery>) -> ApiResult<Response> {
    let mut tasker = state.tasker();
    let task = match q.kind.as_deref() {
        None | Some("annotation") => tasker.next_task(&q.worker)?,
        Some("evaluation") => tasker.next_evaluation(&q.worker)?,
        Some(other) => return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("unknown task kind `{other}`"))),
    };
    Ok(Json(task).into_response())
}

#[derive(Deserialize)]
struct AnnotationBody {
    worker: String,
    group: String,
    subclass: String,
}

async fn annotate(State(state): State<Shared>, Json(body): Json<AnnotationBody>) -> ApiResult<Response> {
    let subclass =
        body.subclass.parse::<Subclass>().map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let result = state.tasker().submit(&body.worker, &body.group, subclass)?;
    Ok(Json(result).into_response())
}

async fn status(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let status = state.tasker().status(&id)?;
    Ok(Json(status).into_response())
}

async fn group(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let tasker = state.tasker();
    let group = tasker.group(&id).ok_or_else(|| ApiError::from(TaskerError::UnknownGroup(id.clone())))?;
    Ok(Json(group).into_response())
}

#[derive(Deserialize)]
struct EvaluationBody {
    worker: String,
    group: String,
    #[serde(default)]
    score: Option<u8>,
    #[serde(default)]
    intensifier_valid: Option<bool>,
}

async fn evaluate(State(state): State<Shared>, Json(body): Json<EvaluationBody>) -> ApiResult<Response> {
    let judgment = match (body.score, body.intensifier_valid) {
        (Some(s), None) => Judgment::Score(s),
        (None, Some(v)) => Judgment::IntensifierValid(v),
        _ => return Err(ApiError::new(StatusCode::BAD_REQUEST, "give exactly one of score or intensifier_valid")),
    };
    let status = state.tasker().evaluate(&body.worker, &body.group, judgment)?;
    Ok(Json(status).into_response())
}

async fn lexicon_csv(State(state): State<Shared>) -> ApiResult<Response> {
    let (snapshot, groups) = {
        let tasker = state.tasker();
        (tasker.snapshot(), tasker.groups().cloned().collect::<Vec<_>>())
    };
    let internal = |e: &dyn std::fmt::Display| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    let filtered =
        match quality::filter_auto(&snapshot, state.threshold, state.min_annotations).map_err(|e| internal(&e))? {
            Some(decision) => decision.apply(&snapshot),
            None => snapshot,
        };
    let aggregation = lexicon::aggregate(&filtered, &groups, &state.dyads).map_err(|e| internal(&e))?;
    let mut body = Vec::new();
    lexicon::export_csv(&aggregation.entries, &mut body).map_err(|e| internal(&e))?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response())
}
