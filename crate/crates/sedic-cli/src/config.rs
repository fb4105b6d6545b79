//! CLI configuration: a TOML file providing defaults that individual
//! flags override.

use std::path::Path;

use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// "mock" or "http".
    pub backend: Option<String>,
    /// Talk to an already-running service instead of embedding one.
    pub server_url: Option<String>,
    pub seed: Option<u64>,
    pub target_bpp: Option<f64>,
    pub steps: Option<usize>,
    pub guidance_threshold: Option<usize>,
    pub eta: Option<f64>,
    #[serde(default)]
    pub endpoints: Endpoints,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoints {
    pub captioner_url: Option<String>,
    pub captioner_model: Option<String>,
    pub detector_url: Option<String>,
    pub segmenter_url: Option<String>,
    pub denoiser_url: Option<String>,
    /// Environment variable holding the bearer token.
    pub auth_token_env: Option<String>,
    pub timeout_secs: Option<f64>,
    pub retries: Option<u32>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
    }
}
