//! Request handlers and the error-to-status mapping.

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;

use sedic_api as api;
use sedic_core::decoder::{self, DecodeConfig};
use sedic_core::encoder::{self, EncodeError, EncodeOptions};
use sedic_core::ref_codec::{CodecRegistry, RefCodecError};
use sedic_core::{container, imageio, selftest};

use crate::SharedConfig;

pub(crate) struct ServiceError {
    status: StatusCode,
    body: api::ApiError,
}

impl ServiceError {
    fn new(status: StatusCode, kind: api::ErrorKind, message: impl Into<String>) -> Self {
        Self {
            status,
            body: api::ApiError {
                kind,
                message: message.into(),
            },
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, api::ErrorKind::BadRequest, message)
    }

    fn parse(message: impl Into<String>) -> Self {
        Self::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            api::ErrorKind::Parse,
            message,
        )
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            api::ErrorKind::Internal,
            message,
        )
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<EncodeError> for ServiceError {
    fn from(e: EncodeError) -> Self {
        match &e {
            EncodeError::NonPositiveTarget { .. } => Self::bad_request(e.to_string()),
            EncodeError::BudgetInfeasible { .. } => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                api::ErrorKind::BudgetInfeasible,
                e.to_string(),
            ),
            EncodeError::Backend(_) => Self::new(
                StatusCode::BAD_GATEWAY,
                api::ErrorKind::Backend,
                e.to_string(),
            ),
            EncodeError::Ref(RefCodecError::ImageTooSmall { .. }) => {
                Self::bad_request(e.to_string())
            }
            _ => Self::internal(e.to_string()),
        }
    }
}

impl From<decoder::DecodeError> for ServiceError {
    fn from(e: decoder::DecodeError) -> Self {
        use decoder::DecodeError as D;
        match &e {
            D::Backend(_) => Self::new(
                StatusCode::BAD_GATEWAY,
                api::ErrorKind::Backend,
                e.to_string(),
            ),
            D::Guidance(_) => Self::internal(e.to_string()),
            _ => Self::parse(e.to_string()),
        }
    }
}

/// Re-serialize a core report into its wire twin; the field names match
/// by construction, and the test suite pins that.
fn convert<T: serde::Serialize, U: serde::de::DeserializeOwned>(
    value: &T,
) -> Result<U, ServiceError> {
    serde_json::to_value(value)
        .and_then(serde_json::from_value)
        .map_err(|e| ServiceError::internal(format!("report conversion: {e}")))
}

fn decode_b64(field: &str, data: &str) -> Result<Vec<u8>, ServiceError> {
    B64.decode(data)
        .map_err(|e| ServiceError::bad_request(format!("{field} is not valid base64: {e}")))
}

async fn run_blocking<T, F>(work: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(work)
        .await
        .map_err(|e| ServiceError::internal(format!("worker panicked: {e}")))?
}

pub(crate) async fn healthz() -> Json<api::Health> {
    Json(api::Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

pub(crate) async fn encode(
    State(config): State<SharedConfig>,
    Json(req): Json<api::EncodeRequest>,
) -> Result<Json<api::EncodeResponse>, ServiceError> {
    let image_bytes = decode_b64("image_b64", &req.image_b64)?;
    run_blocking(move || {
        let image = imageio::from_bytes(&image_bytes)
            .map_err(|e| ServiceError::bad_request(format!("cannot decode image: {e}")))?;
        let seed = req.seed.unwrap_or(0);
        let backends = config
            .backend
            .build(seed)
            .map_err(|e| ServiceError::new(StatusCode::BAD_GATEWAY, api::ErrorKind::Backend, e.to_string()))?;
        let options = EncodeOptions {
            seed,
            ..EncodeOptions::default()
        };
        let (bytes, report) = encoder::encode(&image, req.target_bpp, &backends, &options)?;
        Ok(Json(api::EncodeResponse {
            container_b64: B64.encode(&bytes),
            report: convert(&report)?,
        }))
    })
    .await
}

pub(crate) async fn decode(
    State(config): State<SharedConfig>,
    Json(req): Json<api::DecodeRequest>,
) -> Result<Json<api::DecodeResponse>, ServiceError> {
    let container_bytes = decode_b64("container_b64", &req.container_b64)?;
    run_blocking(move || {
        let parsed = container::parse(&container_bytes)
            .map_err(|e| ServiceError::parse(e.to_string()))?;
        let seed = req.seed.unwrap_or(0);
        let steps = req.steps.unwrap_or(50);
        let config_decode = DecodeConfig {
            steps,
            guidance_threshold: req.guidance_threshold.unwrap_or(steps / 2),
            eta: req.eta.unwrap_or(1.0),
            seed,
            record_trace: req.trace,
        };
        let backends = config
            .backend
            .build(seed)
            .map_err(|e| ServiceError::new(StatusCode::BAD_GATEWAY, api::ErrorKind::Backend, e.to_string()))?;
        let registry = CodecRegistry::builtin();
        let (image, trace) = decoder::decode(
            &parsed,
            &config_decode,
            backends.denoiser.as_ref(),
            &registry,
        )?;
        let png = imageio::to_png_bytes(&image)
            .map_err(|e| ServiceError::internal(e.to_string()))?;
        let trace_out = if req.trace {
            let mut stage_images_b64 = Vec::with_capacity(trace.stage_images.len());
            for img in &trace.stage_images {
                let bytes = imageio::to_png_bytes(img)
                    .map_err(|e| ServiceError::internal(e.to_string()))?;
                stage_images_b64.push(B64.encode(bytes));
            }
            Some(api::DecodeTrace {
                stage_images_b64,
                stage_energies: convert(&trace.stage_energies)?,
                elapsed_secs: trace.elapsed_secs,
            })
        } else {
            None
        };
        Ok(Json(api::DecodeResponse {
            image_b64: B64.encode(&png),
            trace: trace_out,
        }))
    })
    .await
}

pub(crate) async fn inspect(
    State(_config): State<SharedConfig>,
    Json(req): Json<api::InspectRequest>,
) -> Result<Json<api::InspectResponse>, ServiceError> {
    let container_bytes = decode_b64("container_b64", &req.container_b64)?;
    run_blocking(move || {
        let parsed = container::parse(&container_bytes)
            .map_err(|e| ServiceError::parse(e.to_string()))?;
        let report = container::size_report(&parsed)
            .map_err(|e| ServiceError::parse(e.to_string()))?;
        Ok(Json(api::InspectResponse {
            report: convert(&report)?,
        }))
    })
    .await
}

pub(crate) async fn selftest(
    State(_config): State<SharedConfig>,
    Json(req): Json<api::SelftestRequest>,
) -> Result<Json<api::SelftestResponse>, ServiceError> {
    run_blocking(move || {
        let results = selftest::run(req.suite.as_deref());
        let passed = results.iter().all(|r| r.passed);
        Ok(Json(api::SelftestResponse {
            passed,
            suites: convert(&results)?,
        }))
    })
    .await
}
