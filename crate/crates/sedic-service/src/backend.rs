//! Backend bundle construction from the service configuration.

use sedic_core::model_clients::http::{HttpCaptioner, HttpDenoiser, HttpDetector, HttpSegmenter};
use sedic_core::model_clients::{BackendConfig, BackendError, Backends};

/// Where the four model capabilities come from.
#[derive(Debug, Clone)]
pub enum BackendSpec {
    /// Deterministic in-process mocks, seeded per request.
    Mock,
    /// Remote model servers.
    Http(HttpEndpoints),
}

#[derive(Debug, Clone)]
pub struct HttpEndpoints {
    /// Full URL of an OpenAI-compatible chat-completions route.
    pub captioner_url: String,
    pub captioner_model: String,
    pub detector_url: String,
    pub segmenter_url: String,
    /// Base URL of the denoiser service.
    pub denoiser_url: String,
    /// Environment variable holding the bearer token, if any.
    pub auth_token_env: Option<String>,
    pub timeout_secs: f64,
    pub retries: u32,
}

impl BackendSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            BackendSpec::Mock => "mock",
            BackendSpec::Http(_) => "http",
        }
    }

    /// Build the backend bundle for one request.
    pub fn build(&self, seed: u64) -> Result<Backends, BackendError> {
        match self {
            BackendSpec::Mock => Ok(Backends::mock(seed)),
            BackendSpec::Http(endpoints) => {
                let cfg = |url: &str| BackendConfig {
                    endpoint: url.to_string(),
                    auth_token_env: endpoints.auth_token_env.clone(),
                    timeout_secs: endpoints.timeout_secs,
                    retries: endpoints.retries,
                };
                Ok(Backends {
                    captioner: Box::new(HttpCaptioner::new(
                        cfg(&endpoints.captioner_url),
                        endpoints.captioner_model.clone(),
                    )?),
                    detector: Box::new(HttpDetector::new(cfg(&endpoints.detector_url))?),
                    segmenter: Box::new(HttpSegmenter::new(cfg(&endpoints.segmenter_url))?),
                    denoiser: Box::new(HttpDenoiser::new(cfg(&endpoints.denoiser_url))?),
                })
            }
        }
    }
}
