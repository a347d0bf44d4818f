use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use zoomseg_api::ErrorBody;
use zoomseg_core::Error;

use crate::store::Lookup;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    pub fn lookup(what: &str, id: u64, l: Lookup) -> Self {
        match l {
            Lookup::Unknown => Self::new(StatusCode::NOT_FOUND, format!("{what} {id} not found")),
            Lookup::Evicted => Self::new(StatusCode::CONFLICT, format!("{what} {id} was evicted")),
        }
    }

    /// Errors from parsing an uploaded volume.
    pub fn upload(e: Error) -> Self {
        Self::bad_request(e.to_string())
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::EmptyPrompts
            | Error::InvalidPrompt(_)
            | Error::PointOutOfBounds { .. }
            | Error::BoxOutOfBounds { .. }
            | Error::ShapeMismatch { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Nifti(_)
            | Error::UnsupportedDatatype(_)
            | Error::SizeMismatch { .. }
            | Error::NonFinite(_)
            | Error::InvalidMeta(_)
            | Error::NonBinary(_)
            | Error::Json(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

/// Body parse failures: malformed JSON is 400, well-formed JSON of the wrong shape is 422.
impl From<serde_json::Error> for ApiError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_data() {
            ApiError::unprocessable(e.to_string())
        } else {
            ApiError::bad_request(e.to_string())
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(status = %self.status, "{}", self.message);
        }
        let body = ErrorBody {
            error: self.message,
            status: self.status.as_u16(),
        };
        (self.status, Json(body)).into_response()
    }
}
