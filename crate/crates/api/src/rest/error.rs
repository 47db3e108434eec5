use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::executions::ExecError;
use crate::experiments::ExpError;
use crate::files::FilesError;
use crate::paging::InvalidPage;
use crate::quotas::QuotaError;

/// Body of every non-2xx response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub status_code: u16,
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub details: Option<Vec<Value>>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub details: Option<Vec<Value>>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            details: None,
        }
    }

    fn with_details(mut self, details: Vec<Value>) -> Self {
        self.details = Some(details);
        self
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn unauthorized() -> Self {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing, unknown or inactive API key")
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    pub fn envelope(&self) -> ErrorEnvelope {
        ErrorEnvelope {
            status_code: self.status.as_u16(),
            code: self.code.to_string(),
            message: self.message.clone(),
            details: self.details.clone(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::warn!(code = self.code, "{}", self.message);
        }
        (self.status, Json(self.envelope())).into_response()
    }
}

impl From<InvalidPage> for ApiError {
    fn from(e: InvalidPage) -> Self {
        ApiError::bad_request("invalid_page", e.to_string())
    }
}

impl From<FilesError> for ApiError {
    fn from(e: FilesError) -> Self {
        let msg = e.to_string();
        match e {
            FilesError::ObjectNotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "object_not_found", msg),
            FilesError::InvalidKey { key, reason } => ApiError::bad_request("invalid_key", msg)
                .with_details(vec![json!({"key": key, "reason": reason.to_string()})]),
            FilesError::DestinationExists(_) => ApiError::new(StatusCode::CONFLICT, "destination_exists", msg),
            FilesError::LinkExpired => ApiError::new(StatusCode::FORBIDDEN, "link_expired", msg),
            FilesError::InvalidLink => ApiError::new(StatusCode::FORBIDDEN, "invalid_link", msg),
            FilesError::InputMissing(url) => {
                ApiError::bad_request("input_missing", msg).with_details(vec![json!({"url": url})])
            }
            FilesError::Unsupported => ApiError::new(StatusCode::NOT_IMPLEMENTED, "unsupported", msg),
            FilesError::Io(_) => ApiError::internal(msg),
            FilesError::Remote(_) => ApiError::new(StatusCode::BAD_GATEWAY, "storage_unavailable", msg),
        }
    }
}

impl From<ExecError> for ApiError {
    fn from(e: ExecError) -> Self {
        let msg = e.to_string();
        match e {
            ExecError::Validation(violations) => ApiError::bad_request("validation_failed", msg)
                .with_details(violations.iter().map(|v| json!(v)).collect()),
            ExecError::NotAMember(_) => ApiError::new(StatusCode::FORBIDDEN, "not_a_member", msg),
            ExecError::NotFound(_) => ApiError::not_found(msg),
            ExecError::Forbidden(_) => ApiError::new(StatusCode::FORBIDDEN, "forbidden", msg),
            ExecError::QuotaExceeded { uuid, dimensions } => ApiError::new(
                StatusCode::TOO_MANY_REQUESTS,
                "quota_exceeded",
                format!("execution {uuid} rejected: {msg}"),
            )
            .with_details(
                dimensions
                    .iter()
                    .map(|d| json!({"dimension": d.as_str(), "uuid": uuid}))
                    .collect(),
            ),
            ExecError::InputMissing { uuid, url } => {
                ApiError::bad_request("input_missing", format!("execution {uuid} failed: {msg}"))
                    .with_details(vec![json!({"url": url, "uuid": uuid})])
            }
            ExecError::Backend { uuid, error } => ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                error.code(),
                format!("execution {uuid} failed: {msg}"),
            )
            .with_details(vec![json!({"uuid": uuid})]),
            ExecError::Busy(_) => ApiError::new(StatusCode::CONFLICT, "busy", msg),
            ExecError::InvalidPage(p) => p.into(),
            ExecError::Files(f) => f.into(),
            ExecError::Store(_) => ApiError::internal(msg),
        }
    }
}

impl From<ExpError> for ApiError {
    fn from(e: ExpError) -> Self {
        let msg = e.to_string();
        let task = |uuid: uuid::Uuid| vec![json!({"uuid": uuid})];
        match e {
            ExpError::DuplicateName(_) => ApiError::new(StatusCode::CONFLICT, "duplicate_name", msg),
            ExpError::InvalidName(_) => ApiError::bad_request("invalid_name", msg),
            ExpError::ParticipantNotInContext(u) => ApiError::bad_request("participant_not_in_context", msg)
                .with_details(vec![json!({"participant": u})]),
            ExpError::NotAMember(_) => ApiError::new(StatusCode::FORBIDDEN, "not_a_member", msg),
            ExpError::NotFound(_) => ApiError::not_found(msg),
            ExpError::Forbidden(_) => ApiError::new(StatusCode::FORBIDDEN, "forbidden", msg),
            ExpError::TaskNotFound(u) => ApiError::not_found(msg).with_details(task(u)),
            ExpError::TaskOutsideContext(u) => {
                ApiError::new(StatusCode::FORBIDDEN, "task_outside_context", msg).with_details(task(u))
            }
            ExpError::SubmitterNotParticipant(u) => {
                ApiError::bad_request("submitter_not_participant", msg).with_details(task(u))
            }
            ExpError::TaskNotTerminal(u) => {
                ApiError::new(StatusCode::CONFLICT, "task_not_terminal", msg).with_details(task(u))
            }
            ExpError::ParticipantHasTasks(p) => ApiError::new(StatusCode::CONFLICT, "participant_has_tasks", msg)
                .with_details(vec![json!({"participant": p})]),
            ExpError::InvalidPage(p) => p.into(),
            ExpError::Store(_) => ApiError::internal(msg),
        }
    }
}

impl From<QuotaError> for ApiError {
    fn from(e: QuotaError) -> Self {
        match e {
            QuotaError::NotAMember => ApiError::new(StatusCode::FORBIDDEN, "not_a_member", e.to_string()),
            other => ApiError::internal(other.to_string()),
        }
    }
}
