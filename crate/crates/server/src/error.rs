use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use srr3_core::error::ErrorKind;
use srr3_core::Error;

use crate::api::{ApiErrorBody, ErrorCode};

#[derive(Debug, Clone)]
pub struct ApiError(pub ApiErrorBody);

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self(ApiErrorBody {
            code,
            message: message.into(),
            detail: None,
        })
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Conflict, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }

    pub fn with_detail(mut self, detail: serde_json::Value) -> Self {
        self.0.detail = Some(detail);
        self
    }

    pub fn status(&self) -> StatusCode {
        match self.0.code {
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Conflict => StatusCode::CONFLICT,
            ErrorCode::ProviderUnavailable => StatusCode::SERVICE_UNAVAILABLE,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::InvalidInput | ErrorKind::Data | ErrorKind::Snapshot | ErrorKind::Io => {
                ErrorCode::BadRequest
            }
            ErrorKind::NotFound => ErrorCode::NotFound,
            ErrorKind::Conflict => ErrorCode::Conflict,
            ErrorKind::Provider => ErrorCode::ProviderUnavailable,
        };
        let mut detail = json!({ "error": e.code() });
        match &e {
            Error::WrongResponseCount { expected, actual } => {
                detail["expected"] = json!(expected);
                detail["actual"] = json!(actual);
            }
            Error::DimensionMismatch { expected, actual } => {
                detail["expected"] = json!(expected);
                detail["actual"] = json!(actual);
            }
            Error::Parse { line, .. }
            | Error::DuplicateId { line, .. }
            | Error::DanglingReference { line, .. }
            | Error::InvalidRecord { line, .. } => detail["line"] = json!(line),
            Error::MissingQrels(ids) => detail["queries"] = json!(ids),
            Error::NoEligibleTriplet { active_size } => detail["active_size"] = json!(active_size),
            _ => {}
        }
        Self::new(code, e.to_string()).with_detail(detail)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.0)).into_response()
    }
}
