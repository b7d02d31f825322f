use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use duopoly_core::protocol::{ErrorBody, ErrorCode};

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
        }
    }

    pub fn internal(e: impl std::fmt::Display) -> Self {
        ApiError::new(ErrorCode::Internal, e.to_string())
    }

    pub fn status(&self) -> StatusCode {
        match self.code {
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::UnknownSession => StatusCode::NOT_FOUND,
            ErrorCode::UnknownToken => StatusCode::FORBIDDEN,
            ErrorCode::SeatTaken
            | ErrorCode::NoFreeSeat
            | ErrorCode::WrongStage
            | ErrorCode::DuplicateSubmission
            | ErrorCode::NotFinished => StatusCode::CONFLICT,
            ErrorCode::InvalidConfig
            | ErrorCode::OffGrid
            | ErrorCode::PriceOutOfRange
            | ErrorCode::QuantityOutOfRange => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
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
        let status = self.status();
        let body = ErrorBody {
            code: self.code,
            message: self.message,
        };
        (status, Json(body)).into_response()
    }
}
