//! HTTP/JSON front of the label store.
//!
//! Mutations go through one mutex-guarded store, so assignment and labeling
//! are serialized and each response is sent only after the event is on disk.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use techradar_core::InitialLabel;

use super::{LabelStore, StoreError};

/// Header carrying the optional shared token.
pub const TOKEN_HEADER: &str = "x-techradar-token";

#[derive(Clone)]
pub struct AppState {
    store: Arc<Mutex<LabelStore>>,
    token: Option<Arc<str>>,
}

impl AppState {
    pub fn new(store: LabelStore, token: Option<String>) -> AppState {
        AppState { store: Arc::new(Mutex::new(store)), token: token.map(Into::into) }
    }

    fn store(&self) -> std::sync::MutexGuard<'_, LabelStore> {
        // A panic while holding the lock cannot leave a half-applied event:
        // events are applied only after the log write succeeded.
        self.store.lock().unwrap_or_else(|e| e.into_inner())
    }
}

struct ApiError(StatusCode, serde_json::Value);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::UnknownAnnotator(_) | StoreError::UnknownTask(_) => StatusCode::NOT_FOUND,
            StoreError::AlreadyDone { .. } => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %e, "label store failure");
        }
        ApiError(status, json!({ "error": e.to_string() }))
    }
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: Option<String>,
}

async fn next_task(State(s): State<AppState>, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    let Some(annotator) = q.annotator.filter(|a| !a.is_empty()) else {
        return Err(ApiError(StatusCode::BAD_REQUEST, json!({ "error": "missing ?annotator=" })));
    };
    let next = s.store().next_task(&annotator)?;
    Ok(Json(next).into_response())
}

#[derive(Deserialize)]
struct LabelBody {
    label: String,
    #[serde(default)]
    flag_keyword: bool,
}

fn valid_labels() -> Vec<&'static str> {
    InitialLabel::ALL.iter().map(|l| l.as_str()).collect()
}

async fn label_task(
    State(s): State<AppState>,
    Path(point_id): Path<String>,
    Json(body): Json<LabelBody>,
) -> Result<Response, ApiError> {
    let label: InitialLabel = body.label.parse().map_err(|_| {
        ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            json!({ "error": format!("invalid label {:?}", body.label), "valid_labels": valid_labels() }),
        )
    })?;
    let task = s.store().label(&point_id, label, body.flag_keyword)?;
    Ok(Json(task).into_response())
}

async fn skip_task(State(s): State<AppState>, Path(point_id): Path<String>) -> Result<Response, ApiError> {
    let task = s.store().skip(&point_id)?;
    Ok(Json(task).into_response())
}

async fn progress(State(s): State<AppState>) -> Response {
    Json(s.store().progress()).into_response()
}

async fn keyword_flags(State(s): State<AppState>) -> Response {
    Json(json!({ "flags": s.store().keyword_flags() })).into_response()
}

async fn labels(State(_): State<AppState>) -> Response {
    Json(json!({ "labels": valid_labels() })).into_response()
}

async fn require_token(State(s): State<AppState>, headers: HeaderMap, req: Request, next: Next) -> Response {
    if let Some(expected) = &s.token {
        let given = headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
        if given != Some(expected.as_ref()) {
            return ApiError(StatusCode::UNAUTHORIZED, json!({ "error": format!("missing or wrong {TOKEN_HEADER} header") }))
                .into_response();
        }
    }
    next.run(req).await
}

/// The API under `/api`, plus static files from `static_dir` for everything else.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/tasks/{point_id}/label", post(label_task))
        .route("/api/tasks/{point_id}/skip", post(skip_task))
        .route("/api/progress", get(progress))
        .route("/api/keywords/flags", get(keyword_flags))
        .route("/api/labels", get(labels))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until the listener fails or `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    static_dir: Option<PathBuf>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state, static_dir)).with_graceful_shutdown(shutdown).await
}
