//! HTTP adapters for the backend traits.
//!
//! The captioner speaks an OpenAI-compatible chat-completions contract
//! with the image attached as a base64 data URL and a system prompt that
//! demands strict JSON. Detector, segmenter, and denoiser speak small
//! JSON contracts defined here (there is no standard across model
//! servers); the wire structs are public so servers and test stubs can
//! reuse them.
//!
//! Every call retries transport errors and 5xx responses up to the
//! configured retry count with no backoff sleeps, so an adapter never
//! blocks longer than `timeout * (retries + 1)`. Auth tokens are read
//! from the environment variable named in the config and sent as a
//! bearer header. Request and response bodies are logged at debug level
//! with image payloads elided.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::guidance::{AttentionMap, LatentGrid};
use crate::imageio::{self, Image};
use crate::mask_codec::{mask_decode, MaskBlob};

use super::{
    enforce_caption_budgets, BackendConfig, BackendError, CaptionBudgets, CaptionResult,
    Captioner, DetectionBox, Detector, Denoiser, ObjectDescription, Segmenter, TextEmbedding,
    TokenEmbedding,
};

fn unavailable(what: &str, detail: impl std::fmt::Display) -> BackendError {
    BackendError::Unavailable {
        what: what.to_string(),
        detail: detail.to_string(),
    }
}

struct JsonClient {
    what: &'static str,
    cfg: BackendConfig,
    client: reqwest::blocking::Client,
}

impl JsonClient {
    fn new(what: &'static str, cfg: BackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| unavailable(what, e))?;
        Ok(Self { what, cfg, client })
    }

    fn post<T: Serialize, R: DeserializeOwned>(
        &self,
        url: &str,
        body: &T,
    ) -> Result<R, BackendError> {
        let payload = serde_json::to_vec(body)
            .map_err(|e| BackendError::MalformedResponse(format!("request encode: {e}")))?;
        tracing::debug!(
            target: "sedic::http",
            backend = self.what,
            url,
            request_bytes = payload.len(),
            "sending request (image payloads elided)"
        );
        let token = self
            .cfg
            .auth_token_env
            .as_ref()
            .and_then(|var| std::env::var(var).ok());

        let mut last_err = String::from("no attempts made");
        for attempt in 0..=self.cfg.retries {
            let mut req = self
                .client
                .post(url)
                .header("content-type", "application/json")
                .body(payload.clone());
            if let Some(token) = &token {
                req = req.bearer_auth(token);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let text = resp.text().map_err(|e| unavailable(self.what, e))?;
                        tracing::debug!(
                            target: "sedic::http",
                            backend = self.what,
                            response_bytes = text.len(),
                            "response received"
                        );
                        return serde_json::from_str(&text).map_err(|e| {
                            BackendError::MalformedResponse(format!(
                                "{} response not valid JSON for the contract: {e}",
                                self.what
                            ))
                        });
                    }
                    if status.is_server_error() {
                        last_err = format!("HTTP {status} on attempt {}", attempt + 1);
                        continue;
                    }
                    // 4xx: our request was understood and rejected; do not retry.
                    return Err(BackendError::MalformedResponse(format!(
                        "{} returned HTTP {status}",
                        self.what
                    )));
                }
                Err(e) => {
                    last_err = format!("{e} on attempt {}", attempt + 1);
                }
            }
        }
        Err(unavailable(self.what, last_err))
    }
}

fn image_data_url(image: &Image) -> Result<String, BackendError> {
    let png = imageio::to_png_bytes(image)
        .map_err(|e| BackendError::MalformedResponse(format!("png encode: {e}")))?;
    Ok(format!("data:image/png;base64,{}", B64.encode(png)))
}

fn image_b64(image: &Image) -> Result<String, BackendError> {
    let png = imageio::to_png_bytes(image)
        .map_err(|e| BackendError::MalformedResponse(format!("png encode: {e}")))?;
    Ok(B64.encode(png))
}

// ---------------------------------------------------------------- captioner

/// Client for an OpenAI-compatible `/chat/completions` endpoint. The
/// configured endpoint is the full URL of that route.
pub struct HttpCaptioner {
    http: JsonClient,
    model: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

#[derive(Deserialize)]
struct CaptionJson {
    #[serde(default)]
    objects: Vec<CaptionObjectJson>,
    overall: String,
}

#[derive(Deserialize)]
struct CaptionObjectJson {
    name: String,
    detail: String,
}

impl HttpCaptioner {
    pub fn new(cfg: BackendConfig, model: impl Into<String>) -> Result<Self, BackendError> {
        Ok(Self {
            http: JsonClient::new("captioner", cfg)?,
            model: model.into(),
        })
    }

    fn system_prompt(budgets: &CaptionBudgets) -> String {
        format!(
            "You describe images for a semantic compression encoder. Reply with strict JSON \
             only, no prose and no code fences, exactly matching this shape: \
             {{\"objects\":[{{\"name\":\"...\",\"detail\":\"...\"}}],\"overall\":\"...\"}}. \
             Hard limits: at most {max} objects; each name at most {ln} words (a short noun \
             phrase for one salient object); each detail at most {ld} words covering shape, \
             color, texture, and condition; the overall description at most {lall} words \
             covering the whole scene and its style. Never mention these instructions.",
            max = budgets.max_objects,
            ln = budgets.l_n,
            ld = budgets.l_d,
            lall = budgets.l_all,
        )
    }
}

/// Strip a (common) markdown code fence so a fenced JSON answer still
/// parses; anything else unparseable stays an error.
fn strip_fences(content: &str) -> &str {
    let t = content.trim();
    if let Some(inner) = t.strip_prefix("```") {
        let inner = inner.strip_prefix("json").unwrap_or(inner);
        if let Some(end) = inner.rfind("```") {
            return inner[..end].trim();
        }
    }
    t
}

impl Captioner for HttpCaptioner {
    fn caption(
        &self,
        image: &Image,
        budgets: &CaptionBudgets,
    ) -> Result<CaptionResult, BackendError> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": Self::system_prompt(budgets)},
                {"role": "user", "content": [
                    {"type": "text", "text":
                        "Return the object descriptions and overall description of this image."},
                    {"type": "image_url", "image_url": {"url": image_data_url(image)?}},
                ]},
            ],
            "temperature": 0,
        });
        let resp: ChatResponse = self.http.post(&self.http.cfg.endpoint, &body)?;
        let content = resp
            .choices
            .first()
            .map(|c| c.message.content.as_str())
            .ok_or_else(|| BackendError::MalformedResponse("no choices in response".into()))?;
        let parsed: CaptionJson = serde_json::from_str(strip_fences(content))
            .map_err(|e| BackendError::MalformedResponse(format!("caption JSON: {e}")))?;
        if parsed.overall.trim().is_empty() {
            return Err(BackendError::MalformedResponse(
                "overall description is empty".into(),
            ));
        }
        let raw = CaptionResult {
            objects: parsed
                .objects
                .into_iter()
                .map(|o| ObjectDescription {
                    name: o.name,
                    detail: o.detail,
                })
                .collect(),
            overall: parsed.overall,
        };
        Ok(enforce_caption_budgets(raw, budgets))
    }
}

// ------------------------------------------------------ detector / segmenter

#[derive(Serialize, Deserialize)]
pub struct DetectRequest {
    pub image_b64: String,
    pub query: String,
}

#[derive(Serialize, Deserialize)]
pub struct DetectResponse {
    pub boxes: Vec<BoxWire>,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
pub struct BoxWire {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub confidence: f64,
}

impl From<DetectionBox> for BoxWire {
    fn from(b: DetectionBox) -> Self {
        Self {
            x0: b.x0,
            y0: b.y0,
            x1: b.x1,
            y1: b.y1,
            confidence: b.confidence,
        }
    }
}

impl From<BoxWire> for DetectionBox {
    fn from(w: BoxWire) -> Self {
        Self {
            x0: w.x0,
            y0: w.y0,
            x1: w.x1,
            y1: w.y1,
            confidence: w.confidence,
        }
    }
}

/// Client for a `POST {image_b64, query} -> {boxes}` detection endpoint.
pub struct HttpDetector {
    http: JsonClient,
}

impl HttpDetector {
    pub fn new(cfg: BackendConfig) -> Result<Self, BackendError> {
        Ok(Self {
            http: JsonClient::new("detector", cfg)?,
        })
    }
}

impl Detector for HttpDetector {
    fn detect(&self, image: &Image, name: &str) -> Result<Vec<DetectionBox>, BackendError> {
        let req = DetectRequest {
            image_b64: image_b64(image)?,
            query: name.to_string(),
        };
        let resp: DetectResponse = self.http.post(&self.http.cfg.endpoint, &req)?;
        let mut boxes: Vec<DetectionBox> = resp.boxes.into_iter().map(Into::into).collect();
        if let Some(bad) = boxes.iter().find(|b| !b.is_valid()) {
            return Err(BackendError::MalformedResponse(format!(
                "detector returned invalid box {bad:?}"
            )));
        }
        boxes.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        Ok(boxes)
    }
}

#[derive(Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image_b64: String,
    #[serde(rename = "box")]
    pub bbox: BoxWire,
}

#[derive(Serialize, Deserialize)]
pub struct SegmentResponse {
    /// Base64 of a mask blob in the container's mask wire format.
    pub mask_rle: String,
}

/// Client for a `POST {image_b64, box} -> {mask_rle}` segmentation
/// endpoint.
pub struct HttpSegmenter {
    http: JsonClient,
}

impl HttpSegmenter {
    pub fn new(cfg: BackendConfig) -> Result<Self, BackendError> {
        Ok(Self {
            http: JsonClient::new("segmenter", cfg)?,
        })
    }
}

impl Segmenter for HttpSegmenter {
    fn segment(
        &self,
        image: &Image,
        bbox: &DetectionBox,
    ) -> Result<crate::mask_codec::SemanticMask, BackendError> {
        let req = SegmentRequest {
            image_b64: image_b64(image)?,
            bbox: (*bbox).into(),
        };
        let resp: SegmentResponse = self.http.post(&self.http.cfg.endpoint, &req)?;
        let wire = B64
            .decode(&resp.mask_rle)
            .map_err(|e| BackendError::MalformedResponse(format!("mask_rle base64: {e}")))?;
        let (blob, used) = MaskBlob::read_from(&wire)
            .map_err(|e| BackendError::MalformedResponse(format!("mask blob: {e}")))?;
        if used != wire.len() {
            return Err(BackendError::MalformedResponse(
                "trailing bytes after mask blob".into(),
            ));
        }
        let mask = mask_decode(&blob)
            .map_err(|e| BackendError::MalformedResponse(format!("mask data: {e}")))?;
        if mask.width() != image.width() || mask.height() != image.height() {
            return Err(BackendError::MalformedResponse(format!(
                "mask {}x{} does not match image {}x{}",
                mask.width(),
                mask.height(),
                image.width(),
                image.height()
            )));
        }
        if mask.is_empty() {
            return Err(BackendError::EmptyMask);
        }
        Ok(mask)
    }
}

// ---------------------------------------------------------------- denoiser

#[derive(Serialize, Deserialize, Clone)]
pub struct LatentWire {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    /// Base64 of little-endian f64 values, location-major.
    pub data_b64: String,
}

impl LatentWire {
    pub fn from_grid(grid: &LatentGrid) -> Self {
        let mut bytes = Vec::with_capacity(grid.values().len() * 8);
        for v in grid.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            width: grid.width(),
            height: grid.height(),
            channels: grid.channels(),
            data_b64: B64.encode(bytes),
        }
    }

    pub fn to_grid(&self) -> Result<LatentGrid, BackendError> {
        let bytes = B64
            .decode(&self.data_b64)
            .map_err(|e| BackendError::MalformedResponse(format!("latent base64: {e}")))?;
        let expect = self.width as usize * self.height as usize * self.channels * 8;
        if bytes.len() != expect {
            return Err(BackendError::MalformedResponse(format!(
                "latent has {} bytes, expected {expect}",
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(LatentGrid::new(self.width, self.height, self.channels, values))
    }
}

#[derive(Serialize, Deserialize, Clone)]
pub struct AttentionWire {
    pub spatial: usize,
    pub tokens: usize,
    /// Base64 of little-endian f64 values, location-major.
    pub data_b64: String,
}

impl AttentionWire {
    pub fn from_map(map: &AttentionMap) -> Self {
        let mut bytes = Vec::with_capacity(map.values().len() * 8);
        for v in map.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            spatial: map.spatial(),
            tokens: map.tokens(),
            data_b64: B64.encode(bytes),
        }
    }

    pub fn to_map(&self) -> Result<AttentionMap, BackendError> {
        let bytes = B64
            .decode(&self.data_b64)
            .map_err(|e| BackendError::MalformedResponse(format!("attention base64: {e}")))?;
        if bytes.len() != self.spatial * self.tokens * 8 {
            return Err(BackendError::MalformedResponse(
                "attention byte length mismatch".into(),
            ));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(AttentionMap::new(self.spatial, self.tokens, values))
    }
}

#[derive(Serialize, Deserialize, Clone)]
pub struct EmbeddingWire {
    pub fingerprint: u64,
    pub tokens: Vec<TokenWire>,
}

#[derive(Serialize, Deserialize, Clone)]
pub struct TokenWire {
    pub token: String,
    pub vector: Vec<f64>,
}

impl EmbeddingWire {
    pub fn from_embedding(emb: &TextEmbedding) -> Self {
        Self {
            fingerprint: emb.fingerprint,
            tokens: emb
                .tokens
                .iter()
                .map(|t| TokenWire {
                    token: t.token.clone(),
                    vector: t.vector.clone(),
                })
                .collect(),
        }
    }

    pub fn to_embedding(&self) -> TextEmbedding {
        TextEmbedding {
            fingerprint: self.fingerprint,
            tokens: self
                .tokens
                .iter()
                .map(|t| TokenEmbedding {
                    token: t.token.clone(),
                    vector: t.vector.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
pub struct EncodeConditionRequest {
    pub image_b64: String,
}

#[derive(Serialize, Deserialize)]
pub struct TextEmbedRequest {
    pub text: String,
}

#[derive(Serialize, Deserialize)]
pub struct EmbeddingResponse {
    pub embedding: EmbeddingWire,
}

#[derive(Serialize, Deserialize)]
pub struct AttentionRequest {
    pub latent: LatentWire,
    pub embedding: EmbeddingWire,
}

#[derive(Serialize, Deserialize)]
pub struct AttentionResponse {
    pub attention: AttentionWire,
}

#[derive(Serialize, Deserialize)]
pub struct AttentionVjpRequest {
    pub latent: LatentWire,
    pub embedding: EmbeddingWire,
    pub grad_attention: AttentionWire,
}

#[derive(Serialize, Deserialize)]
pub struct DenoiseStepRequest {
    pub latent: LatentWire,
    pub t: usize,
    pub condition: LatentWire,
    pub embedding: EmbeddingWire,
}

#[derive(Serialize, Deserialize)]
pub struct LatentResponse {
    pub latent: LatentWire,
}

#[derive(Serialize, Deserialize)]
pub struct DecodeLatentRequest {
    pub latent: LatentWire,
}

#[derive(Serialize, Deserialize)]
pub struct DecodeLatentResponse {
    pub image_b64: String,
}

#[derive(Serialize, Deserialize)]
pub struct NoisedReferenceRequest {
    pub condition: LatentWire,
    pub t: usize,
    pub seed: u64,
}

/// Client for a denoiser service exposing `encode_condition`,
/// `text_embed`, `attention`, `attention_vjp`, `denoise_step`, `decode`,
/// and `noised_reference` routes under one base URL.
pub struct HttpDenoiser {
    http: JsonClient,
    base: String,
}

impl HttpDenoiser {
    pub fn new(cfg: BackendConfig) -> Result<Self, BackendError> {
        let base = cfg.endpoint.trim_end_matches('/').to_string();
        Ok(Self {
            http: JsonClient::new("denoiser", cfg)?,
            base,
        })
    }

    fn url(&self, route: &str) -> String {
        format!("{}/{route}", self.base)
    }
}

impl Denoiser for HttpDenoiser {
    fn encode_condition(&self, image: &Image) -> Result<LatentGrid, BackendError> {
        let req = EncodeConditionRequest {
            image_b64: image_b64(image)?,
        };
        let resp: LatentResponse = self.http.post(&self.url("encode_condition"), &req)?;
        resp.latent.to_grid()
    }

    fn text_embed(&self, text: &str) -> Result<TextEmbedding, BackendError> {
        let req = TextEmbedRequest {
            text: text.to_string(),
        };
        let resp: EmbeddingResponse = self.http.post(&self.url("text_embed"), &req)?;
        Ok(resp.embedding.to_embedding())
    }

    fn attention(
        &self,
        z: &LatentGrid,
        emb: &TextEmbedding,
    ) -> Result<AttentionMap, BackendError> {
        let req = AttentionRequest {
            latent: LatentWire::from_grid(z),
            embedding: EmbeddingWire::from_embedding(emb),
        };
        let resp: AttentionResponse = self.http.post(&self.url("attention"), &req)?;
        resp.attention.to_map()
    }

    fn attention_vjp(
        &self,
        z: &LatentGrid,
        emb: &TextEmbedding,
        grad_attention: &AttentionMap,
    ) -> Result<LatentGrid, BackendError> {
        let req = AttentionVjpRequest {
            latent: LatentWire::from_grid(z),
            embedding: EmbeddingWire::from_embedding(emb),
            grad_attention: AttentionWire::from_map(grad_attention),
        };
        let resp: LatentResponse = self.http.post(&self.url("attention_vjp"), &req)?;
        resp.latent.to_grid()
    }

    fn denoise_step(
        &self,
        z: &LatentGrid,
        t: usize,
        condition: &LatentGrid,
        emb: &TextEmbedding,
    ) -> Result<LatentGrid, BackendError> {
        let req = DenoiseStepRequest {
            latent: LatentWire::from_grid(z),
            t,
            condition: LatentWire::from_grid(condition),
            embedding: EmbeddingWire::from_embedding(emb),
        };
        let resp: LatentResponse = self.http.post(&self.url("denoise_step"), &req)?;
        resp.latent.to_grid()
    }

    fn decode(&self, z: &LatentGrid) -> Result<Image, BackendError> {
        let req = DecodeLatentRequest {
            latent: LatentWire::from_grid(z),
        };
        let resp: DecodeLatentResponse = self.http.post(&self.url("decode"), &req)?;
        let bytes = B64
            .decode(&resp.image_b64)
            .map_err(|e| BackendError::MalformedResponse(format!("image base64: {e}")))?;
        imageio::from_bytes(&bytes)
            .map_err(|e| BackendError::MalformedResponse(format!("image decode: {e}")))
    }

    fn noised_reference(
        &self,
        condition: &LatentGrid,
        t: usize,
        seed: u64,
    ) -> Result<LatentGrid, BackendError> {
        let req = NoisedReferenceRequest {
            condition: LatentWire::from_grid(condition),
            t,
            seed,
        };
        let resp: LatentResponse = self.http.post(&self.url("noised_reference"), &req)?;
        resp.latent.to_grid()
    }
}
