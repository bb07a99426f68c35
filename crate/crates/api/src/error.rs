use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use cogscreen_core::expert::SessionError;
use cogscreen_core::TemplateError;
use serde_json::json;

/// JSON error body: `{"error": <code>, "message": <text>}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", what)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or invalid bearer token")
    }
}

impl From<TemplateError> for ApiError {
    fn from(e: TemplateError) -> Self {
        Self::new(StatusCode::BAD_REQUEST, e.code(), e.to_string())
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let message = e.to_string();
        match e {
            SessionError::Template(t) => t.into(),
            SessionError::SessionBusy(_) => Self::new(StatusCode::CONFLICT, "SessionBusy", message),
            SessionError::SessionClosed => Self::new(StatusCode::CONFLICT, "SessionClosed", message),
            SessionError::IndexOutOfRange { .. } => Self::new(StatusCode::NOT_FOUND, "IndexOutOfRange", message),
            SessionError::NotClassifying => Self::new(StatusCode::CONFLICT, "NotClassifying", message),
            SessionError::Config(_) => Self::new(StatusCode::BAD_REQUEST, "InvalidConfig", message),
            SessionError::Classify(_) | SessionError::Eval(_) => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "ClassificationFailed", message)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}
