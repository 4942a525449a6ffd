//! Review HTTP/JSON API.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/tasks/next?observer=ID` | lease the next task (204 when none) |
//! | POST | `/api/tasks/{image_id}/verdict` | submit a verdict |
//! | POST | `/api/tasks/{image_id}/adjudicate` | resolve a conflict |
//! | GET | `/api/tasks/{image_id}` | task, candidates and image record |
//! | GET | `/api/stats` | queue depths, agreement, throughput |
//! | GET | `/api/images/{image_id}/file` | image bytes |
//!
//! The observer may also be given in the `X-Observer-Id` header.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use wildcensus::datastore::{Dataset, ImageRecord};
use wildcensus::review::{ReviewError, ReviewService, ReviewTask, Verdict};

const SNAPSHOT_EVERY: Duration = Duration::from_secs(60);

/// Seconds since the Unix epoch.
pub fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<ReviewService>,
    pub dataset: Option<Arc<Dataset>>,
    pub images_root: Option<PathBuf>,
    pub clock: fn() -> f64,
}

impl AppState {
    pub fn new(service: Arc<ReviewService>) -> Self {
        Self {
            service,
            dataset: None,
            images_root: None,
            clock: now,
        }
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let status = match &e {
            ReviewError::UnknownTask(_) | ReviewError::UnknownImage(_) => StatusCode::NOT_FOUND,
            ReviewError::TaskExists(_)
            | ReviewError::DuplicateObserver { .. }
            | ReviewError::StaleLease { .. }
            | ReviewError::NotReviewable { .. }
            | ReviewError::NotInConflict { .. } => StatusCode::CONFLICT,
            ReviewError::InvalidVerdict(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ReviewError::Corrupt(_) | ReviewError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn observer_from(query: Option<String>, headers: &HeaderMap) -> ApiResult<String> {
    query
        .or_else(|| {
            headers
                .get("x-observer-id")
                .and_then(|v| v.to_str().ok())
                .map(str::to_string)
        })
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| ApiError(StatusCode::BAD_REQUEST, "observer id required".into()))
}

#[derive(Deserialize)]
struct NextQuery {
    observer: Option<String>,
}

async fn next_task(
    State(st): State<AppState>,
    Query(q): Query<NextQuery>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let observer = observer_from(q.observer, &headers)?;
    match st.service.lease_next(&observer, (st.clock)())? {
        Some(task) => Ok(Json(task).into_response()),
        None => Ok(StatusCode::NO_CONTENT.into_response()),
    }
}

/// Verdict body; `image_id` and `observer_id` may be left to the path and
/// header.
#[derive(Deserialize)]
struct VerdictBody {
    #[serde(default)]
    image_id: Option<String>,
    #[serde(default)]
    observer_id: Option<String>,
    #[serde(flatten)]
    rest: serde_json::Map<String, serde_json::Value>,
}

fn verdict_from(image_id: String, headers: &HeaderMap, body: Bytes) -> ApiResult<Verdict> {
    let b: VerdictBody = serde_json::from_slice(&body).map_err(|e| {
        ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("verdict body: {e}"),
        )
    })?;
    if b.image_id.as_ref().is_some_and(|id| *id != image_id) {
        return Err(ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("body image_id does not match path {image_id:?}"),
        ));
    }
    let observer = observer_from(b.observer_id, headers)?;
    let mut obj = b.rest;
    obj.insert("image_id".into(), image_id.into());
    obj.insert("observer_id".into(), observer.into());
    serde_json::from_value(serde_json::Value::Object(obj)).map_err(|e| {
        ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("verdict body: {e}"),
        )
    })
}

async fn submit_verdict(
    State(st): State<AppState>,
    Path(image_id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<ReviewTask>> {
    let v = verdict_from(image_id, &headers, body)?;
    Ok(Json(st.service.submit_verdict(v, (st.clock)())?))
}

async fn adjudicate(
    State(st): State<AppState>,
    Path(image_id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<ReviewTask>> {
    let v = verdict_from(image_id, &headers, body)?;
    Ok(Json(st.service.adjudicate(v, (st.clock)())?))
}

#[derive(Serialize)]
struct TaskView {
    #[serde(flatten)]
    task: ReviewTask,
    image: Option<ImageRecord>,
    image_url: String,
}

async fn get_task(
    State(st): State<AppState>,
    Path(image_id): Path<String>,
) -> ApiResult<Json<TaskView>> {
    let task = st
        .service
        .task(&image_id)
        .ok_or_else(|| ApiError::from(ReviewError::UnknownTask(image_id.clone())))?;
    let image = st
        .dataset
        .as_ref()
        .and_then(|d| d.image(&image_id).cloned());
    Ok(Json(TaskView {
        task,
        image,
        image_url: format!("/api/images/{image_id}/file"),
    }))
}

async fn stats(State(st): State<AppState>) -> impl IntoResponse {
    Json(st.service.stats())
}

fn content_type(file: &str) -> &'static str {
    match file
        .rsplit('.')
        .next()
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("png") => "image/png",
        Some("tif" | "tiff") => "image/tiff",
        _ => "application/octet-stream",
    }
}

async fn image_file(
    State(st): State<AppState>,
    Path(image_id): Path<String>,
) -> ApiResult<Response> {
    let not_found = |what: String| ApiError(StatusCode::NOT_FOUND, what);
    let ds = st
        .dataset
        .as_ref()
        .ok_or_else(|| not_found("no manifest loaded".into()))?;
    let rec = ds
        .image(&image_id)
        .ok_or_else(|| not_found(format!("unknown image {image_id:?}")))?;
    let rel = std::path::Path::new(&rec.file);
    if rel.is_absolute()
        || rel
            .components()
            .any(|c| matches!(c, std::path::Component::ParentDir))
    {
        return Err(ApiError(
            StatusCode::FORBIDDEN,
            "image path escapes the image root".into(),
        ));
    }
    let path = st.images_root.clone().unwrap_or_default().join(rel);
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, content_type(&rec.file))], bytes).into_response()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(not_found(format!("{} not found", rec.file)))
        }
        Err(e) => Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/tasks/{image_id}", get(get_task))
        .route("/api/tasks/{image_id}/verdict", post(submit_verdict))
        .route("/api/tasks/{image_id}/adjudicate", post(adjudicate))
        .route("/api/stats", get(stats))
        .route("/api/images/{image_id}/file", get(image_file))
        .with_state(state)
}

pub(crate) fn serve(a: &crate::ServeArgs) -> anyhow::Result<()> {
    if !(a.lease_ttl.is_finite() && a.lease_ttl > 0.0) {
        anyhow::bail!("--lease-ttl must be > 0, got {}", a.lease_ttl);
    }
    let store = a
        .store
        .as_ref()
        .context("serve needs --store or WILDCENSUS_STORE")?;
    let service = Arc::new(ReviewService::open(store, a.lease_ttl)?);
    let mut state = AppState::new(service.clone());
    if let Some(m) = &a.manifest {
        state.dataset = Some(Arc::new(Dataset::load(
            m,
            crate::commands::cameras(&a.cameras)?,
        )?));
        state.images_root = Some(
            a.images_root
                .clone()
                .unwrap_or_else(|| m.parent().map(|p| p.to_path_buf()).unwrap_or_default()),
        );
    } else {
        state.images_root = a.images_root.clone();
    }
    let addr = format!("{}:{}", a.bind, a.port);
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        tracing::info!("review service on http://{addr}, store {}", store.display());
        let snapshots = {
            let service = service.clone();
            tokio::spawn(async move {
                let mut tick = tokio::time::interval(SNAPSHOT_EVERY);
                tick.tick().await;
                loop {
                    tick.tick().await;
                    if let Err(e) = service.snapshot() {
                        tracing::warn!("snapshot failed: {e}");
                    }
                }
            })
        };
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .context("serving")?;
        snapshots.abort();
        service.snapshot()?;
        tracing::info!("snapshot written, shutting down");
        anyhow::Ok(())
    })
}
