//! HTTP routes. All bodies are JSON except `metrics.csv` and thumbnails.
//!
//! ```text
//! POST /runs                              manifest -> RunSummary (201)
//! GET  /runs                              [RunSummary]
//! GET  /runs/{id}                         RunSummary with manifest
//! POST /runs/{id}/snapshots/notify        rescan the run directory now (202)
//! GET  /runs/{id}/layout?from=&to=&filter=col:val,...   LayoutSlice
//! GET  /runs/{id}/layout.json             full layout export
//! GET  /runs/{id}/metrics                 MetricSeries
//! GET  /runs/{id}/metrics.csv
//! GET  /runs/{id}/control                 ControlState
//! POST /runs/{id}/control                 {"desired_state":"paused"|"running","note":""}
//! GET  /runs/{id}/events?after=&timeout_ms=   EventBatch (long-poll)
//! GET  /runs/{id}/thumbs/{iter}/{instance_id} image/png
//! ```
//!
//! Errors are `{"error": "<message>"}` with status 400, 404, 409 or 500.

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use evowatch_core::ingest::{thumbnail_path, DesiredState, RunManifest};
use serde::Deserialize;

use crate::{LabelFilter, Monitor, ServiceError};

/// Upper bound on `timeout_ms` for the events long-poll.
pub const MAX_POLL_TIMEOUT_MS: u64 = 30_000;

pub fn router(monitor: Arc<Monitor>) -> Router {
    Router::new()
        .route("/runs", get(list_runs).post(create_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/snapshots/notify", post(notify))
        .route("/runs/{id}/layout", get(layout))
        .route("/runs/{id}/layout.json", get(layout_export))
        .route("/runs/{id}/metrics", get(metrics))
        .route("/runs/{id}/metrics.csv", get(metrics_csv))
        .route("/runs/{id}/control", get(get_control).post(set_control))
        .route("/runs/{id}/events", get(events))
        .route("/runs/{id}/thumbs/{iter}/{instance_id}", get(thumbnail))
        .with_state(monitor)
}

/// Serves until `shutdown` resolves, then stops the workers and releases
/// pending long-polls so in-flight requests can finish.
pub async fn serve(
    listener: tokio::net::TcpListener,
    monitor: Arc<Monitor>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let m = monitor.clone();
    axum::serve(listener, router(monitor))
        .with_graceful_shutdown(async move {
            shutdown.await;
            m.shutdown();
        })
        .await
}

struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match e {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Invalid(_) => StatusCode::BAD_REQUEST,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            message: e.to_string(),
        }
    }
}

impl From<tokio::task::JoinError> for ApiError {
    fn from(e: tokio::task::JoinError) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
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

fn json_bytes(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

async fn list_runs(State(m): State<Arc<Monitor>>) -> Response {
    let list: Vec<_> = m.runs().iter().map(|r| r.summary(false)).collect();
    Json(list).into_response()
}

async fn create_run(State(m): State<Arc<Monitor>>, body: Bytes) -> ApiResult<Response> {
    let manifest: RunManifest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("invalid manifest: {e}")))?;
    let run = tokio::task::spawn_blocking(move || m.create_run(manifest)).await??;
    Ok((StatusCode::CREATED, Json(run.summary(false))).into_response())
}

async fn get_run(State(m): State<Arc<Monitor>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(m.get(&id)?.summary(true)).into_response())
}

async fn notify(State(m): State<Arc<Monitor>>, Path(id): Path<String>) -> ApiResult<Response> {
    m.notify(&id)?;
    Ok((StatusCode::ACCEPTED, Json(serde_json::json!({ "run_id": id, "rescan": true }))).into_response())
}

#[derive(Debug, Deserialize)]
struct LayoutQuery {
    from: Option<usize>,
    to: Option<usize>,
    filter: Option<String>,
}

async fn layout(
    State(m): State<Arc<Monitor>>,
    Path(id): Path<String>,
    Query(q): Query<LayoutQuery>,
) -> ApiResult<Response> {
    let run = m.get(&id)?;
    let filter = LabelFilter::parse(q.filter.as_deref().unwrap_or(""))?;
    let slice = run.query_layout(q.from, q.to, &filter)?;
    Ok(Json(slice).into_response())
}

async fn layout_export(State(m): State<Arc<Monitor>>, Path(id): Path<String>) -> ApiResult<Response> {
    let run = m.get(&id)?;
    let v = run
        .layout()
        .ok_or_else(|| ServiceError::NotFound(format!("run `{id}` has no layout yet")))?;
    Ok(json_bytes(v.export.clone()))
}

async fn metrics(State(m): State<Arc<Monitor>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(json_bytes(m.get(&id)?.metrics().json.clone()))
}

async fn metrics_csv(State(m): State<Arc<Monitor>>, Path(id): Path<String>) -> ApiResult<Response> {
    let csv = m.get(&id)?.metrics().csv.clone();
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

async fn get_control(State(m): State<Arc<Monitor>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(m.get(&id)?.control()).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlRequest {
    desired_state: DesiredState,
    #[serde(default)]
    note: String,
}

async fn set_control(
    State(m): State<Arc<Monitor>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let run = m.get(&id)?;
    let req: ControlRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("invalid control request: {e}")))?;
    let state = tokio::task::spawn_blocking(move || run.set_control(req.desired_state, &req.note)).await??;
    Ok(Json(state).into_response())
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    after: u64,
    #[serde(default)]
    timeout_ms: u64,
}

async fn events(
    State(m): State<Arc<Monitor>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> ApiResult<Response> {
    let run = m.get(&id)?;
    // Subscribe before reading so an event appended in between still wakes us.
    let mut seq = run.subscribe();
    let mut shutdown = m.shutdown_signal();
    let deadline = tokio::time::Instant::now() + Duration::from_millis(q.timeout_ms.min(MAX_POLL_TIMEOUT_MS));
    loop {
        let batch = run.events_after(q.after);
        if !batch.events.is_empty() || *shutdown.borrow() {
            return Ok(Json(batch).into_response());
        }
        tokio::select! {
            changed = seq.changed() => {
                if changed.is_err() {
                    return Ok(Json(run.events_after(q.after)).into_response());
                }
            }
            _ = shutdown.changed() => {}
            _ = tokio::time::sleep_until(deadline) => {
                return Ok(Json(run.events_after(q.after)).into_response());
            }
        }
    }
}

async fn thumbnail(
    State(m): State<Arc<Monitor>>,
    Path((id, iter, instance_id)): Path<(String, String, String)>,
) -> ApiResult<Response> {
    let run = m.get(&id)?;
    let iteration: u64 = iter
        .parse()
        .map_err(|_| ApiError::bad_request(format!("`{iter}` is not a training iteration")))?;
    let path = thumbnail_path(run.dir(), iteration, &instance_id)
        .ok_or_else(|| ApiError::bad_request(format!("`{instance_id}` is not a valid instance id")))?;
    let bytes = tokio::fs::read(&path).await.map_err(|_| {
        ServiceError::NotFound(format!("no thumbnail for `{instance_id}` at iteration {iteration}"))
    })?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}
