//! Thin blocking client for the sedic service. Wraps the JSON routes
//! with typed requests and resurfaces the service's structured errors.

use sedic_api as api;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach service: {0}")]
    Transport(String),
    /// The service answered with a structured error body.
    #[error("{kind:?}: {message}")]
    Api {
        kind: api::ErrorKind,
        message: String,
        status: u16,
    },
    #[error("unexpected response: {0}")]
    Protocol(String),
}

pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(600))
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            http,
        })
    }

    fn post<T: Serialize, R: DeserializeOwned>(
        &self,
        route: &str,
        body: &T,
    ) -> Result<R, ClientError> {
        let resp = self
            .http
            .post(format!("{}{route}", self.base))
            .json(body)
            .send()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if status.is_success() {
            serde_json::from_str(&text).map_err(|e| ClientError::Protocol(e.to_string()))
        } else if let Ok(err) = serde_json::from_str::<api::ApiError>(&text) {
            Err(ClientError::Api {
                kind: err.kind,
                message: err.message,
                status: status.as_u16(),
            })
        } else {
            Err(ClientError::Protocol(format!("HTTP {status}: {text}")))
        }
    }

    pub fn health(&self) -> Result<api::Health, ClientError> {
        let resp = self
            .http
            .get(format!("{}/healthz", self.base))
            .send()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        resp.json().map_err(|e| ClientError::Protocol(e.to_string()))
    }

    pub fn encode(&self, req: &api::EncodeRequest) -> Result<api::EncodeResponse, ClientError> {
        self.post("/v1/encode", req)
    }

    pub fn decode(&self, req: &api::DecodeRequest) -> Result<api::DecodeResponse, ClientError> {
        self.post("/v1/decode", req)
    }

    pub fn inspect(&self, req: &api::InspectRequest) -> Result<api::InspectResponse, ClientError> {
        self.post("/v1/inspect", req)
    }

    pub fn selftest(
        &self,
        req: &api::SelftestRequest,
    ) -> Result<api::SelftestResponse, ClientError> {
        self.post("/v1/selftest", req)
    }
}
