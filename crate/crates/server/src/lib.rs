//! JSON API in front of a [`StudyRegistry`], plus static media by item id.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/api/session` | `{"study_id","subject_id"}` → session |
//! | GET | `/api/session/{id}/item?which=current\|previous` | item + progress |
//! | POST | `/api/session/{id}/rating` | `{"item_id","audio_quality","consistency","overall"}` |
//! | GET | `/api/session/{id}/progress` | progress counters |
//! | GET | `/api/study/{id}/export` | ratings as JSON lines |
//! | GET | `/media/{item_id}/video`, `/media/{item_id}/audio` | media bytes |
//!
//! Errors carry `{"error","message"}` with 404 for unknown ids, 422 for
//! invalid input, 409 for out-of-sequence requests and 429 at the daily cap.

use std::collections::HashMap;
use std::future::Future;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use agavqa_core::jsonl;
use agavqa_core::study::{StudyError, StudyRegistry, Submission, Which};
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{StatusCode, header};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;

#[derive(Clone)]
struct AppState {
    registry: Arc<StudyRegistry>,
    media_root: Option<Arc<PathBuf>>,
}

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message)
    }
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        let code = match &e {
            StudyError::UnknownStudy(_) | StudyError::UnknownSession(_) | StudyError::UnknownItem(_) => "not_found",
            StudyError::Validation(_) => "validation",
            StudyError::AtStart => "boundary",
            StudyError::Sequence { .. } => "sequence",
            StudyError::DailyCap { .. } => "daily_cap",
            _ => "internal",
        };
        let status = StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        Self::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::validation(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs a registry call off the async executor; log appends fsync.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, StudyError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Deserialize)]
struct CreateSession {
    study_id: String,
    subject_id: String,
}

async fn create_session(State(st): State<AppState>, body: Result<Json<CreateSession>, JsonRejection>) -> ApiResult<Response> {
    let Json(body) = body?;
    let session = blocking(move || st.registry.create_session(&body.study_id, &body.subject_id)).await?;
    Ok(Json(session).into_response())
}

async fn next_item(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let which = match q.get("which").map(String::as_str) {
        None | Some("current") => Which::Current,
        Some("previous") => Which::Previous,
        Some(other) => return Err(ApiError::validation(format!("which must be current or previous, got `{other}`"))),
    };
    let next = blocking(move || st.registry.next_item(&id, which)).await?;
    Ok(Json(next).into_response())
}

async fn submit_rating(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<Submission>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(sub) = body?;
    let ack = blocking(move || st.registry.submit_rating(&id, &sub)).await?;
    Ok(Json(ack).into_response())
}

async fn progress(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let p = blocking(move || st.registry.progress(&id)).await?;
    Ok(Json(p).into_response())
}

async fn export(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let records = blocking(move || st.registry.export(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], jsonl::to_bytes(&records)).into_response())
}

/// Resolves a manifest URI under the media root, refusing absolute paths
/// and parent-directory components.
fn media_path(root: &Path, uri: &str) -> Option<PathBuf> {
    let rel = Path::new(uri.strip_prefix("file://").unwrap_or(uri));
    rel.components()
        .all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
        .then(|| root.join(rel))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("wav") => "audio/wav",
        Some("mp3") => "audio/mpeg",
        Some("flac") => "audio/flac",
        Some("mp4") => "video/mp4",
        Some("webm") => "video/webm",
        Some("mov") => "video/quicktime",
        _ => "application/octet-stream",
    }
}

async fn media(State(st): State<AppState>, UrlPath((item_id, kind)): UrlPath<(String, String)>) -> ApiResult<Response> {
    let registry = st.registry.clone();
    let lookup = item_id.clone();
    let item = blocking(move || registry.item(&lookup).ok_or(StudyError::UnknownItem(lookup))).await?;
    let uri = match kind.as_str() {
        "video" => item.video_uri,
        "audio" => item.audio_uri,
        _ => return Err(ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no media kind `{kind}`"))),
    };
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("{kind} for `{item_id}` is not available"));
    let root = st.media_root.as_ref().ok_or_else(not_found)?;
    let path = media_path(root, &uri).ok_or_else(not_found)?;
    let bytes = tokio::fs::read(&path).await.map_err(|_| not_found())?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

pub fn router(registry: Arc<StudyRegistry>, media_root: Option<PathBuf>) -> Router {
    let state = AppState {
        registry,
        media_root: media_root.map(Arc::new),
    };
    Router::new()
        .route("/api/session", post(create_session))
        .route("/api/session/{id}/item", get(next_item))
        .route("/api/session/{id}/rating", post(submit_rating))
        .route("/api/session/{id}/progress", get(progress))
        .route("/api/study/{id}/export", get(export))
        .route("/media/{item_id}/{kind}", get(media))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(listener: TcpListener, app: Router, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
