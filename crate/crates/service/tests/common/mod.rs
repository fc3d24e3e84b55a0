#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;
use vibe_core::fixtures::tiny;
use vibe_core::prompt::PromptBundle;
use vibe_core::{Dataset, StubGateway};
use vibe_service::{router, AppState};

pub fn tiny_state() -> Arc<AppState> {
    let ds = tiny();
    let gw = Arc::new(StubGateway::new(ds.dim()));
    Arc::new(AppState::in_memory(ds, gw, PromptBundle::default()).unwrap())
}

pub fn state_for(ds: Dataset) -> Arc<AppState> {
    let gw = Arc::new(StubGateway::new(ds.dim()));
    Arc::new(AppState::in_memory(ds, gw, PromptBundle::default()).unwrap())
}

pub struct Reply {
    pub status: StatusCode,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes)
            .unwrap_or_else(|e| panic!("non-JSON body ({e}): {}", String::from_utf8_lossy(&self.bytes)))
    }
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let res = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, bytes }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    call(app, Method::GET, uri, None).await
}

pub async fn post(app: &Router, uri: &str, body: Value) -> Reply {
    call(app, Method::POST, uri, Some(body)).await
}

/// Validates `instance` against the schema the service publishes under `name`.
pub async fn assert_schema(app: &Router, name: &str, instance: &Value) {
    let schema = get(app, &format!("/v1/schemas/{name}")).await;
    assert_eq!(schema.status, StatusCode::OK, "schema {name} not published");
    let validator = jsonschema::validator_for(&schema.json()).unwrap();
    let errors: Vec<String> = validator.iter_errors(instance).map(|e| format!("{e} at {}", e.instance_path)).collect();
    assert!(errors.is_empty(), "{name} response violates its schema: {errors:#?}\n{instance}");
}

pub fn app(state: &Arc<AppState>) -> Router {
    router(Arc::clone(state))
}
