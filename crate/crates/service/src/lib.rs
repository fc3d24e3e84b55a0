//! HTTP service, single-file persistence and batch commands over the analysis engine.

pub mod api;
pub mod cli;
pub mod error;
pub mod jobs;
pub mod model;
pub mod report;
pub mod schemas;
pub mod session;
pub mod state;
pub mod store;

pub use api::{router, serve};
pub use error::ApiError;
pub use state::{AppState, ServiceConfig};
