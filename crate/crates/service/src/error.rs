use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use vibe_core::gateway::GatewayError;
use vibe_core::Error;

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({}): {}", self.code, self.status.as_u16(), self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::UnknownMetric(_) => Self::new(StatusCode::NOT_FOUND, "unknown_metric", message),
            Error::UnknownSample(_) => Self::new(StatusCode::NOT_FOUND, "unknown_sample", message),
            Error::NoCaptions(_) | Error::MissingCaptions(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "missing_captions", message)
            }
            Error::UniformPerformance { .. } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "uniform_performance", message)
            }
            Error::UnparseableResponse { .. } => Self::new(StatusCode::BAD_GATEWAY, "unparseable_response", message),
            Error::Gateway(g) => g.into(),
            Error::Io { .. } | Error::MissingFile(_) => Self::internal(message),
            _ => Self::bad_request(message),
        }
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::OverBudget { .. } | GatewayError::EmptyText => Self::bad_request(e.to_string()),
            _ => Self::new(StatusCode::BAD_GATEWAY, "gateway", e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}
