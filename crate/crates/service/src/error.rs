use alprio_core::campaign::{CampaignError, StoreError};
use alprio_core::domain::DomainError;
use alprio_core::surrogate::SurrogateError;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotFound,
    Conflict,
    Validation,
    Numerical,
    Busy,
    /// Storage or oracle transport failure.
    Internal,
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = Some(detail);
        self
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Conflict, message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Validation, message)
    }

    /// Optimistic-concurrency failure: the client's version is stale.
    pub fn stale(expected: u64, current: u64) -> Self {
        Self::conflict(format!("state is at version {current}, request expected {expected}"))
            .with_detail(serde_json::json!({ "current_version": current }))
    }

    pub fn status(&self) -> StatusCode {
        match self.code {
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Conflict | ErrorCode::Busy => StatusCode::CONFLICT,
            ErrorCode::Validation | ErrorCode::Numerical => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}

impl From<CampaignError> for ApiError {
    fn from(e: CampaignError) -> Self {
        use CampaignError as E;
        let code = match &e {
            E::UnknownMolecule(_) | E::UnknownRound(_) | E::UnknownTemplate(_) => ErrorCode::NotFound,
            E::DuplicateResult { .. }
            | E::RoundSequence(_)
            | E::RoundMismatch { .. }
            | E::EmptyFeasiblePool(_)
            | E::TemplateVersion { .. }
            | E::AlreadyInitialized => ErrorCode::Conflict,
            E::InsufficientData { .. }
            | E::NotInPool { .. }
            | E::UntestedResult(_)
            | E::InvalidPool(_)
            | E::FormatVersion(_)
            | E::Featurize(_)
            | E::Acquire(_) => ErrorCode::Validation,
            E::Surrogate(SurrogateError::NumericalFailure(_) | SurrogateError::NonFinite) => ErrorCode::Numerical,
            E::Surrogate(_) => ErrorCode::Validation,
            E::Oracle(_) => ErrorCode::Internal,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<DomainError> for ApiError {
    fn from(e: DomainError) -> Self {
        ApiError::validation(e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Campaign(c) => c.into(),
            StoreError::Locked(_) => ApiError::new(ErrorCode::Busy, e.to_string()),
            other => ApiError::new(ErrorCode::Internal, other.to_string()),
        }
    }
}
