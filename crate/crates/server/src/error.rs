use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use aviscape_core::audio::DspError;
use aviscape_core::classifier::ClassifierError;
use aviscape_core::game::GameError;
use aviscape_core::geo::RepoError;
use aviscape_core::soundscape::SoundscapeError;

/// Every code an error response can carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    MalformedRequest,
    MalformedAudio,
    InvalidAnnotation,
    InvalidCoordinates,
    InvalidRange,
    TileOutOfRange,
    Unauthenticated,
    BadgeRequired,
    NotFound,
    QuestLocked,
    QuestAlreadyActive,
    QuestAlreadyCompleted,
    Rejected,
    RecognitionUnavailable,
    StorageFailure,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            Self::MalformedRequest
            | Self::MalformedAudio
            | Self::InvalidAnnotation
            | Self::InvalidCoordinates
            | Self::InvalidRange
            | Self::TileOutOfRange => StatusCode::BAD_REQUEST,
            Self::Unauthenticated => StatusCode::UNAUTHORIZED,
            Self::BadgeRequired => StatusCode::FORBIDDEN,
            Self::NotFound => StatusCode::NOT_FOUND,
            Self::QuestLocked | Self::QuestAlreadyActive | Self::QuestAlreadyCompleted => StatusCode::CONFLICT,
            Self::Rejected => StatusCode::UNPROCESSABLE_ENTITY,
            Self::RecognitionUnavailable => StatusCode::SERVICE_UNAVAILABLE,
            Self::StorageFailure | Self::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn retryable(self) -> bool {
        matches!(self, Self::RecognitionUnavailable | Self::StorageFailure)
    }
}

/// JSON error body.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    pub retryable: bool,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into(), retryable: code.retryable() }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}

impl From<RepoError> for ApiError {
    fn from(e: RepoError) -> Self {
        let code = match &e {
            RepoError::Invalid(_) => ErrorCode::Rejected,
            RepoError::InvalidRange(_) => ErrorCode::InvalidRange,
            RepoError::InvalidZoom(_) | RepoError::InvalidTile(_) => ErrorCode::TileOutOfRange,
            RepoError::MissingClip(_) => ErrorCode::NotFound,
            RepoError::AccessDenied => ErrorCode::BadgeRequired,
            RepoError::Io(_) | RepoError::Corrupt(_) => ErrorCode::StorageFailure,
        };
        Self::new(code, e.to_string())
    }
}

impl From<GameError> for ApiError {
    fn from(e: GameError) -> Self {
        let code = match &e {
            GameError::UnknownUser(_) => ErrorCode::Unauthenticated,
            GameError::UnknownQuest(_) => ErrorCode::NotFound,
            GameError::QuestLocked(_) => ErrorCode::QuestLocked,
            GameError::AlreadyActive(_) => ErrorCode::QuestAlreadyActive,
            GameError::AlreadyCompleted(_) => ErrorCode::QuestAlreadyCompleted,
            GameError::InvalidUser(_) => ErrorCode::MalformedRequest,
            GameError::InvalidRules(_) => ErrorCode::Internal,
            GameError::Io(_) | GameError::Corrupt(_) => ErrorCode::StorageFailure,
        };
        Self::new(code, e.to_string())
    }
}

impl From<DspError> for ApiError {
    fn from(e: DspError) -> Self {
        Self::new(ErrorCode::MalformedAudio, e.to_string())
    }
}

impl From<ClassifierError> for ApiError {
    fn from(e: ClassifierError) -> Self {
        let code = match &e {
            ClassifierError::Dsp(_) => ErrorCode::MalformedAudio,
            ClassifierError::RecognitionUnavailable(_) => ErrorCode::RecognitionUnavailable,
            ClassifierError::MalformedPayload(_) | ClassifierError::InvalidParameter(_) => ErrorCode::MalformedRequest,
            _ => ErrorCode::Internal,
        };
        Self::new(code, e.to_string())
    }
}

impl From<SoundscapeError> for ApiError {
    fn from(e: SoundscapeError) -> Self {
        match e {
            SoundscapeError::Repo(RepoError::Invalid(m)) => Self::new(ErrorCode::InvalidCoordinates, m),
            SoundscapeError::Repo(r) => r.into(),
            SoundscapeError::Dsp(d) => Self::new(ErrorCode::Internal, d.to_string()),
            SoundscapeError::InvalidParameter(m) => Self::new(ErrorCode::MalformedRequest, m),
        }
    }
}
