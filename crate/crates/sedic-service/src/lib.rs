//! The sedic HTTP service: encode, decode, inspect, and selftest over
//! JSON, with the backend bundle (mock or remote models) chosen at
//! startup. Compression work runs on blocking threads; handlers stay
//! async-light.
//!
//! Routes:
//! - `GET  /healthz`
//! - `POST /v1/encode`    [`sedic_api::EncodeRequest`]
//! - `POST /v1/decode`    [`sedic_api::DecodeRequest`]
//! - `POST /v1/inspect`   [`sedic_api::InspectRequest`]
//! - `POST /v1/selftest`  [`sedic_api::SelftestRequest`]

use std::sync::Arc;

use axum::routing::{get, post};
use axum::Router;

pub mod backend;
mod routes;

pub use backend::{BackendSpec, HttpEndpoints};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub backend: BackendSpec,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            backend: BackendSpec::Mock,
        }
    }
}

pub(crate) type SharedConfig = Arc<ServiceConfig>;

/// Assemble the service router.
pub fn build_router(config: ServiceConfig) -> Router {
    let shared: SharedConfig = Arc::new(config);
    Router::new()
        .route("/healthz", get(routes::healthz))
        .route("/v1/encode", post(routes::encode))
        .route("/v1/decode", post(routes::decode))
        .route("/v1/inspect", post(routes::inspect))
        .route("/v1/selftest", post(routes::selftest))
        .with_state(shared)
}

/// Serve until the listener closes or shutdown resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    config: ServiceConfig,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let addr = listener.local_addr()?;
    tracing::info!(%addr, backend = ?config.backend.kind(), "sedic service listening");
    axum::serve(listener, build_router(config))
        .with_graceful_shutdown(shutdown)
        .await
}
