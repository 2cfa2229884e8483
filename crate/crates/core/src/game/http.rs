//! JSON API for the game.
//!
//! ```text
//! POST /api/sessions                           {rounds, sigma, n, m, seed} -> {session_id}
//! GET  /api/sessions/{id}/rounds/{i}           -> {round, stage, terms}
//! POST /api/sessions/{id}/rounds/{i}/guess     {guess} -> {outcome, next_stage, query?}
//! GET  /api/sessions/{id}/stats                -> SessionStats
//! ```
//!
//! Errors are `{code, message}` with a matching HTTP status.

use std::net::SocketAddr;
use std::path::{Component, Path as FsPath, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::{GameError, GameService, GuessResult, RoundView, SessionRequest, SessionStats};

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GuessRequest {
    pub guess: String,
}

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl From<GameError> for ApiError {
    fn from(e: GameError) -> Self {
        let (status, code) = match &e {
            GameError::UnknownSession(_) | GameError::UnknownRound { .. } => (StatusCode::NOT_FOUND, "not_found"),
            GameError::RoundFinished(_) => (StatusCode::CONFLICT, "round_finished"),
            GameError::Validation(_) => (StatusCode::BAD_REQUEST, "invalid_request"),
            GameError::NoEligibleQueries(_) => (StatusCode::UNPROCESSABLE_ENTITY, "no_eligible_queries"),
            GameError::Core(crate::Error::InvalidArgument(_)) | GameError::Core(crate::Error::Domain(_)) => {
                (StatusCode::BAD_REQUEST, "invalid_request")
            }
            GameError::Core(_) | GameError::Log(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError {
            status,
            code,
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "invalid_request",
            message: e.body_text(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn create_session(
    State(service): State<Arc<GameService>>,
    body: Result<Json<SessionRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<CreatedSession>), ApiError> {
    let Json(request) = body?;
    // Decomposition scans the whole vocabulary; keep it off the async workers.
    let session_id = tokio::task::spawn_blocking(move || service.create(request))
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: e.to_string(),
        })??;
    Ok((StatusCode::CREATED, Json(CreatedSession { session_id })))
}

async fn get_round(
    State(service): State<Arc<GameService>>,
    Path((id, round)): Path<(String, usize)>,
) -> ApiResult<RoundView> {
    Ok(Json(service.round(&id, round)?))
}

async fn submit_guess(
    State(service): State<Arc<GameService>>,
    Path((id, round)): Path<(String, usize)>,
    body: Result<Json<GuessRequest>, JsonRejection>,
) -> ApiResult<GuessResult> {
    let Json(request) = body?;
    Ok(Json(service.guess(&id, round, &request.guess)?))
}

async fn get_stats(State(service): State<Arc<GameService>>, Path(id): Path<String>) -> ApiResult<SessionStats> {
    Ok(Json(service.stats(&id)?))
}

pub fn router(service: Arc<GameService>) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/rounds/{round}", get(get_round))
        .route("/api/sessions/{id}/rounds/{round}/guess", post(submit_guess))
        .route("/api/sessions/{id}/stats", get(get_stats))
        .with_state(service)
}

/// Adds a fallback that serves files from `dir`, with `index.html` for `/`.
pub fn with_static_dir(router: Router, dir: PathBuf) -> Router {
    router.fallback(move |uri: Uri| {
        let dir = dir.clone();
        async move { serve_file(&dir, uri.path()).await }
    })
}

async fn serve_file(dir: &FsPath, path: &str) -> Response {
    let rel = path.trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = FsPath::new(rel);
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return StatusCode::NOT_FOUND.into_response();
    }
    let full = dir.join(rel);
    match tokio::fs::read(&full).await {
        Ok(bytes) => {
            let mime = match full.extension().and_then(|e| e.to_str()) {
                Some("html") => "text/html; charset=utf-8",
                Some("js") => "text/javascript",
                Some("css") => "text/css",
                Some("json") => "application/json",
                Some("svg") => "image/svg+xml",
                _ => "application/octet-stream",
            };
            ([(header::CONTENT_TYPE, mime)], bytes).into_response()
        }
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

pub async fn serve(router: Router, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("game service listening on {}", listener.local_addr()?);
    axum::serve(listener, router).await
}
