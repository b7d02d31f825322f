//! Typed calls against the live-session service.

use duopoly_core::protocol::{
    CreateSession, ErrorBody, ErrorCode, JoinRequest, Joined, SessionCreated, SessionRecord, StateView, SubmitPrice,
    SubmitQuantity,
};
use reqwest::{RequestBuilder, StatusCode};
use serde::de::DeserializeOwned;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("server refused ({status}, {code:?}): {message}")]
    Api {
        status: StatusCode,
        code: ErrorCode,
        message: String,
    },
    #[error("unexpected response ({status}): {body}")]
    Unexpected { status: StatusCode, body: String },
    #[error(transparent)]
    Transport(#[from] reqwest::Error),
}

impl ClientError {
    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            ClientError::Api { code, .. } => Some(*code),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Client {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    async fn send<T: DeserializeOwned>(req: RequestBuilder) -> Result<T> {
        let resp = req.send().await?;
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| ClientError::Unexpected {
                status,
                body: format!("{e}: {}", String::from_utf8_lossy(&bytes)),
            });
        }
        match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(err) => Err(ClientError::Api {
                status,
                code: err.code,
                message: err.message,
            }),
            Err(_) => Err(ClientError::Unexpected {
                status,
                body: String::from_utf8_lossy(&bytes).into_owned(),
            }),
        }
    }

    pub async fn create_session(&self, req: &CreateSession) -> Result<SessionCreated> {
        Self::send(self.http.post(self.url("/sessions")).json(req)).await
    }

    pub async fn join(&self, session: &str, seat: Option<usize>) -> Result<Joined> {
        let url = self.url(&format!("/sessions/{session}/join"));
        Self::send(self.http.post(url).json(&JoinRequest { seat })).await
    }

    pub async fn submit_price(&self, session: &str, token: &str, price: f64) -> Result<StateView> {
        let body = SubmitPrice {
            token: token.to_string(),
            price,
        };
        Self::send(self.http.post(self.url(&format!("/sessions/{session}/price"))).json(&body)).await
    }

    pub async fn submit_quantity(&self, session: &str, token: &str, quantity: u32) -> Result<StateView> {
        let body = SubmitQuantity {
            token: token.to_string(),
            quantity,
        };
        Self::send(self.http.post(self.url(&format!("/sessions/{session}/quantity"))).json(&body)).await
    }

    pub async fn state(&self, session: &str, token: &str) -> Result<StateView> {
        let token: String = token.bytes().map(|b| if b.is_ascii_alphanumeric() { (b as char).to_string() } else { format!("%{b:02X}") }).collect();
        let url = self.url(&format!("/sessions/{session}/state?token={token}"));
        Self::send(self.http.get(url)).await
    }

    pub async fn log(&self, session: &str) -> Result<SessionRecord> {
        Self::send(self.http.get(self.url(&format!("/sessions/{session}/log")))).await
    }
}
