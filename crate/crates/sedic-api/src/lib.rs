//! JSON wire types for the sedic HTTP service, shared by the server and
//! the client so the contract lives in one place. Images and containers
//! travel as base64 (PNG or PPM bytes for images, raw container bytes
//! for `.sdc` payloads).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodeRequest {
    /// Base64 PNG or binary PPM bytes.
    pub image_b64: String,
    pub target_bpp: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub container_b64: String,
    pub report: EncodeReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodeReport {
    pub width: u32,
    pub height: u32,
    pub target_bpp: f64,
    pub achieved_bpp: f64,
    pub container_bytes: u64,
    pub quality: u8,
    pub policy: RatePolicy,
    pub components: Vec<ComponentBits>,
    pub dropped_hallucinations: Vec<String>,
    pub skipped_empty_masks: Vec<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RatePolicy {
    pub j_objects: usize,
    pub l_d: usize,
    pub l_all: usize,
    pub l_n: usize,
    pub target_bpp: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentBits {
    pub label: String,
    pub bits: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeRequest {
    pub container_b64: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub guidance_threshold: Option<usize>,
    #[serde(default)]
    pub eta: Option<f64>,
    /// Return per-stage images and energies along with the result.
    #[serde(default)]
    pub trace: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeResponse {
    /// PNG bytes, base64.
    pub image_b64: String,
    #[serde(default)]
    pub trace: Option<DecodeTrace>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeTrace {
    /// One PNG per stage, base64, in stage order.
    pub stage_images_b64: Vec<String>,
    pub stage_energies: Vec<Vec<EnergyPoint>>,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyPoint {
    pub t: usize,
    pub energy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InspectRequest {
    pub container_b64: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InspectResponse {
    pub report: SizeReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeReport {
    pub width: u32,
    pub height: u32,
    pub header_bytes: u64,
    pub header_bpp: f64,
    pub rows: Vec<SizeRow>,
    pub total_bytes: u64,
    pub total_bpp: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeRow {
    pub label: String,
    pub bytes: u64,
    pub bpp: f64,
    pub share: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelftestRequest {
    #[serde(default)]
    pub suite: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelftestResponse {
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Structured error body returned with every non-2xx response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Malformed request: unreadable image, bad parameters.
    BadRequest,
    /// The target bitrate cannot hold the committed sections.
    BudgetInfeasible,
    /// A model backend was unreachable or misbehaved.
    Backend,
    /// The container bytes did not parse or decode.
    Parse,
    Internal,
}
