//! Backend interfaces for the four external model capabilities:
//! captioning, open-set detection, promptable segmentation, and
//! controllable denoising.
//!
//! Deterministic mock implementations live in [`mock`]; HTTP adapters
//! speaking small JSON contracts live in [`http`]. Pipelines only ever
//! see the traits, so backends swap freely.
//!
//! Word budgets are enforced here, client-side, no matter what a server
//! returns: a "word" is a whitespace-separated token and truncation
//! keeps leading words.

use thiserror::Error;

use crate::guidance::{AttentionMap, LatentGrid};
use crate::imageio::Image;
use crate::mask_codec::SemanticMask;

pub mod http;
pub mod mock;

/// Latent resolution divisor: one latent location per 8x8 pixel block.
pub const LATENT_SCALE: u32 = 8;
/// Latent channel count shared by all denoiser backends.
pub const LATENT_CHANNELS: usize = 4;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{what} backend unavailable: {detail}")]
    Unavailable { what: String, detail: String },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("segmenter produced an empty mask")]
    EmptyMask,
}

/// One captioned object: a short name used only for grounding on the
/// encoder side, plus the detail text that actually gets transmitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectDescription {
    pub name: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionResult {
    pub objects: Vec<ObjectDescription>,
    pub overall: String,
}

/// Word caps requested from the captioner and enforced on its output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaptionBudgets {
    pub max_objects: usize,
    pub l_n: usize,
    pub l_d: usize,
    pub l_all: usize,
}

/// Normalized detection box, corners in [0,1], x0 < x1 and y0 < y1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub confidence: f64,
}

impl DetectionBox {
    pub fn full_image(confidence: f64) -> Self {
        Self {
            x0: 0.0,
            y0: 0.0,
            x1: 1.0,
            y1: 1.0,
            confidence,
        }
    }

    pub fn is_valid(&self) -> bool {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        in_unit(self.x0)
            && in_unit(self.y0)
            && in_unit(self.x1)
            && in_unit(self.y1)
            && self.x0 < self.x1
            && self.y0 < self.y1
            && (0.0..=1.0).contains(&self.confidence)
    }

    /// Pixel rectangle (x0, y0, x1, y1), right/bottom exclusive, clipped
    /// to the image.
    pub fn to_pixel_rect(&self, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let px0 = (self.x0 * f64::from(width)).floor().max(0.0) as u32;
        let py0 = (self.y0 * f64::from(height)).floor().max(0.0) as u32;
        let px1 = (self.x1 * f64::from(width)).ceil().min(f64::from(width)) as u32;
        let py1 = (self.y1 * f64::from(height)).ceil().min(f64::from(height)) as u32;
        (px0.min(width), py0.min(height), px1, py1)
    }
}

/// Connection settings for one HTTP backend.
#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token, if any.
    pub auth_token_env: Option<String>,
    pub timeout_secs: f64,
    pub retries: u32,
}

impl BackendConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            auth_token_env: None,
            timeout_secs: 30.0,
            retries: 2,
        }
    }
}

/// Per-token embedding vectors in latent-channel space, plus a
/// fingerprint of the source text for seeding downstream fields.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub fingerprint: u64,
    pub tokens: Vec<TokenEmbedding>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbedding {
    pub token: String,
    pub vector: Vec<f64>,
}

pub trait Captioner: Send + Sync {
    /// Fine-grained object descriptions plus a holistic caption, with all
    /// word caps already enforced.
    fn caption(&self, image: &Image, budgets: &CaptionBudgets)
        -> Result<CaptionResult, BackendError>;
}

pub trait Detector: Send + Sync {
    /// Boxes for the named object, sorted by confidence descending.
    /// An empty list is a valid answer and drives hallucination
    /// filtering.
    fn detect(&self, image: &Image, name: &str) -> Result<Vec<DetectionBox>, BackendError>;
}

pub trait Segmenter: Send + Sync {
    /// Mask at image resolution, nonzero only inside (a dilation of) the
    /// box.
    fn segment(&self, image: &Image, bbox: &DetectionBox) -> Result<SemanticMask, BackendError>;
}

/// Controllable-denoiser contract. All methods are deterministic given
/// their inputs and the backend seed; latent grids are `pixels/8` per
/// side with four channels.
pub trait Denoiser: Send + Sync {
    fn encode_condition(&self, image: &Image) -> Result<LatentGrid, BackendError>;
    fn text_embed(&self, text: &str) -> Result<TextEmbedding, BackendError>;
    fn attention(&self, z: &LatentGrid, emb: &TextEmbedding)
        -> Result<AttentionMap, BackendError>;
    /// Backprop hook paired with [`Denoiser::attention`]: maps dE/dA back
    /// to dE/dz at the same (z, embedding) point.
    fn attention_vjp(
        &self,
        z: &LatentGrid,
        emb: &TextEmbedding,
        grad_attention: &AttentionMap,
    ) -> Result<LatentGrid, BackendError>;
    fn denoise_step(
        &self,
        z: &LatentGrid,
        t: usize,
        condition: &LatentGrid,
        emb: &TextEmbedding,
    ) -> Result<LatentGrid, BackendError>;
    /// Decode a latent to pixels at `latent dims x 8`; callers crop to
    /// the true image size.
    fn decode(&self, z: &LatentGrid) -> Result<Image, BackendError>;
    /// Forward-noised reference latent for timestep `t`; `t = 0` returns
    /// the condition untouched.
    fn noised_reference(
        &self,
        condition: &LatentGrid,
        t: usize,
        seed: u64,
    ) -> Result<LatentGrid, BackendError>;
}

/// The full backend bundle the pipelines run against.
pub struct Backends {
    pub captioner: Box<dyn Captioner>,
    pub detector: Box<dyn Detector>,
    pub segmenter: Box<dyn Segmenter>,
    pub denoiser: Box<dyn Denoiser>,
}

impl Backends {
    /// Deterministic mock bundle with the default caption fixture.
    pub fn mock(seed: u64) -> Self {
        Self {
            captioner: Box::new(mock::MockCaptioner::default()),
            detector: Box::new(mock::MockDetector::new(seed)),
            segmenter: Box::new(mock::MockSegmenter),
            denoiser: Box::new(mock::MockDenoiser::new(seed)),
        }
    }
}

/// Count of whitespace-separated words.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Keep the first `max_words` whitespace-separated words. Rejoining
/// normalizes interior whitespace, which keeps the budget arithmetic
/// honest.
pub fn truncate_words(text: &str, max_words: usize) -> String {
    text.split_whitespace()
        .take(max_words)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Clamp a raw caption to its budgets. Any correction is logged at
/// warning level; by the time a result leaves this module the caps hold.
pub(crate) fn enforce_caption_budgets(
    mut raw: CaptionResult,
    budgets: &CaptionBudgets,
) -> CaptionResult {
    if raw.objects.len() > budgets.max_objects {
        tracing::warn!(
            target: "sedic::caption",
            got = raw.objects.len(),
            cap = budgets.max_objects,
            "captioner exceeded object count; truncating"
        );
        raw.objects.truncate(budgets.max_objects);
    }
    for obj in &mut raw.objects {
        if word_count(&obj.name) > budgets.l_n {
            tracing::warn!(target: "sedic::caption", name = %obj.name, "object name over cap; truncating");
            obj.name = truncate_words(&obj.name, budgets.l_n);
        }
        if word_count(&obj.detail) > budgets.l_d {
            tracing::warn!(target: "sedic::caption", name = %obj.name, "object detail over cap; truncating");
            obj.detail = truncate_words(&obj.detail, budgets.l_d);
        }
    }
    // The overall caption must stay nonempty, so its cap floors at one word.
    let l_all = budgets.l_all.max(1);
    if word_count(&raw.overall) > l_all {
        tracing::warn!(target: "sedic::caption", "overall caption over cap; truncating");
        raw.overall = truncate_words(&raw.overall, l_all);
    }
    raw
}

/// FNV-1a, the stable hash used everywhere a mock needs a seed derived
/// from content.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
