//! The axum router for the /v1 API and static assets.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tower_http::services::ServeDir;
use vibe_core::clustering::ClusteringConfig;
use vibe_core::search::ConceptQuery;

use crate::error::ApiError;
use crate::model::*;
use crate::schemas;
use crate::session::Settings;
use crate::state::AppState;

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    router_with_ui(state, None)
}

/// `ui_dir`, when given, is served at `/` for a prebuilt front end.
pub fn router_with_ui(state: Shared, ui_dir: Option<PathBuf>) -> Router {
    let assets = ServeDir::new(state.dataset.manifest().asset_root.clone());
    let router = Router::new()
        .route("/v1/health", get(health))
        .route("/v1/overview", get(overview))
        .route("/v1/clusters", post(clusters))
        .route("/v1/jobs/{id}", get(job))
        .route("/v1/subgroups", get(list_subgroups).post(create_subgroup))
        .route("/v1/subgroups/{id}", get(detail))
        .route("/v1/search", post(search))
        .route("/v1/compare", post(compare))
        .route("/v1/history", get(history))
        .route("/v1/session", get(session))
        .route("/v1/session/settings", get(settings).put(put_settings))
        .route("/v1/schemas", get(schema_index))
        .route("/v1/schemas/{name}", get(schema))
        .nest_service("/assets", assets)
        .with_state(state);
    match ui_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router,
    }
}

fn body<T>(r: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    r.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn query<T>(r: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    r.map(|Query(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

/// Runs blocking analysis off the async workers.
async fn blocking<T, F>(state: &Shared, f: F) -> Result<Json<T>, ApiError>
where
    T: Serialize + Send + 'static,
    F: FnOnce(&AppState) -> Result<T, ApiError> + Send + 'static,
{
    let s = Arc::clone(state);
    tokio::task::spawn_blocking(move || f(&s))
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
        .map(Json)
}

async fn health(State(s): State<Shared>) -> Json<Health> {
    Json(s.health())
}

async fn overview(State(s): State<Shared>, q: Result<Query<OverviewQuery>, QueryRejection>) -> Result<Json<Overview>, ApiError> {
    let q = query(q)?;
    blocking(&s, move |s| s.overview(&q)).await
}

async fn clusters(
    State(s): State<Shared>,
    q: Result<Query<ClustersQuery>, QueryRejection>,
    config: Result<Json<ClusteringConfig>, JsonRejection>,
) -> Result<Response, ApiError> {
    let q = query(q)?;
    let config = body(config)?;
    if q.run_async {
        let state = Arc::clone(&s);
        let status = s.jobs.submit("clustering", move || {
            let list = state.clusters(&config, &q)?;
            serde_json::to_value(list).map_err(|e| ApiError::internal(e.to_string()))
        });
        return Ok((StatusCode::ACCEPTED, Json(status)).into_response());
    }
    Ok(blocking(&s, move |s| s.clusters(&config, &q)).await?.into_response())
}

async fn job(State(s): State<Shared>, Path(id): Path<String>) -> Result<Json<crate::jobs::JobStatus>, ApiError> {
    s.jobs
        .get(&id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown job: {id}")))
}

async fn list_subgroups(State(s): State<Shared>) -> Result<Json<SubgroupList>, ApiError> {
    s.list_subgroups().map(Json)
}

async fn create_subgroup(
    State(s): State<Shared>,
    req: Result<Json<CustomSubgroupRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<SubgroupBrief>), ApiError> {
    let req = body(req)?;
    let created = blocking(&s, move |s| s.create_custom(&req)).await?;
    Ok((StatusCode::CREATED, created))
}

async fn detail(
    State(s): State<Shared>,
    Path(id): Path<String>,
    q: Result<Query<DetailQuery>, QueryRejection>,
) -> Result<Json<SubgroupDetail>, ApiError> {
    let q = query(q)?;
    blocking(&s, move |s| s.detail(&id, &q)).await
}

async fn search(
    State(s): State<Shared>,
    req: Result<Json<ConceptQuery>, JsonRejection>,
) -> Result<Json<SearchResponse>, ApiError> {
    let req = body(req)?;
    blocking(&s, move |s| s.search(&req)).await
}

async fn compare(
    State(s): State<Shared>,
    req: Result<Json<CompareRequest>, JsonRejection>,
) -> Result<Json<vibe_core::stats::ComparisonReport>, ApiError> {
    let req = body(req)?;
    blocking(&s, move |s| s.compare(&req)).await
}

async fn history(State(s): State<Shared>, q: Result<Query<HistoryQuery>, QueryRejection>) -> Result<Json<History>, ApiError> {
    let q = query(q)?;
    blocking(&s, move |s| s.history(&q)).await
}

async fn session(State(s): State<Shared>) -> Result<Json<crate::session::Session>, ApiError> {
    s.session().map(Json)
}

async fn settings(State(s): State<Shared>) -> Result<Json<Settings>, ApiError> {
    s.settings().map(Json)
}

async fn put_settings(
    State(s): State<Shared>,
    req: Result<Json<Settings>, JsonRejection>,
) -> Result<Json<Settings>, ApiError> {
    let req = body(req)?;
    blocking(&s, move |s| s.update_settings(req)).await
}

async fn schema_index() -> Json<SchemaIndex> {
    Json(schemas::index())
}

async fn schema(Path(name): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    schemas::schema(&name)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown schema: {name}")))
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(state: AppState, addr: SocketAddr, ui_dir: Option<PathBuf>) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!(addr = %listener.local_addr()?, dataset = state.dataset.name(), "serving");
    axum::serve(listener, router_with_ui(Arc::new(state), ui_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
