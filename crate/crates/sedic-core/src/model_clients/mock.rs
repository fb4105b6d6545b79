//! Deterministic mock backends. Every output is a pure function of the
//! inputs and a seed, so end-to-end runs are byte-reproducible.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::guidance::{AttentionMap, LatentGrid};
use crate::imageio::Image;
use crate::mask_codec::SemanticMask;

use super::{
    enforce_caption_budgets, fnv1a64, BackendError, CaptionBudgets, CaptionResult, Captioner,
    DetectionBox, Detector, Denoiser, ObjectDescription, Segmenter, TextEmbedding,
    TokenEmbedding, LATENT_CHANNELS, LATENT_SCALE,
};

const TOKEN_SALT: u64 = 0x746f6b656e;
const PSI_SALT: u64 = 0x707369;
const NOISE_SALT: u64 = 0x6e6f697365;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn frac(x: u64) -> f64 {
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// Fixture-driven captioner. The default fixture is a coastal scene with
/// four objects whose details deliberately avoid repeating the object
/// names.
#[derive(Debug, Clone)]
pub struct MockCaptioner {
    objects: Vec<ObjectDescription>,
    overall: String,
}

impl Default for MockCaptioner {
    fn default() -> Self {
        let fixture = [
            (
                "striped lighthouse",
                "tall tapered tower with broad red and white bands, lantern room glowing \
                 faintly, a railing circling the gallery deck, base planted on pale stone",
            ),
            (
                "wooden fishing vessel",
                "small hull with peeling teal paint, a single mast leaning slightly, nets \
                 heaped near the stern, shallow wake trailing behind",
            ),
            (
                "granite shoreline",
                "jagged wet slabs stacked unevenly, dark seams streaked with foam, tide \
                 pools mirroring the sky between ridges",
            ),
            (
                "drifting clouds",
                "loose elongated tufts stretched thin by wind, undersides brushed amber, \
                 edges dissolving into haze",
            ),
        ];
        Self {
            objects: fixture
                .iter()
                .map(|(name, detail)| ObjectDescription {
                    name: (*name).to_string(),
                    detail: (*detail).to_string(),
                })
                .collect(),
            overall: "calm coastal evening, a tall beacon above weathered rock, a small \
                      hull crossing quiet water beneath streaked amber sky"
                .to_string(),
        }
    }
}

impl MockCaptioner {
    pub fn new(objects: Vec<(String, String)>, overall: String) -> Self {
        Self {
            objects: objects
                .into_iter()
                .map(|(name, detail)| ObjectDescription { name, detail })
                .collect(),
            overall,
        }
    }
}

impl Captioner for MockCaptioner {
    fn caption(
        &self,
        _image: &Image,
        budgets: &CaptionBudgets,
    ) -> Result<CaptionResult, BackendError> {
        let raw = CaptionResult {
            objects: self.objects.clone(),
            overall: self.overall.clone(),
        };
        Ok(enforce_caption_budgets(raw, budgets))
    }
}

/// Box placement policy for the mock detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectPolicy {
    /// Every query detects as one full-image box at confidence 1.0.
    FullImage,
    /// A horizontal band whose position, height, and confidence derive
    /// from the name hash. Bands span the full width, which keeps their
    /// run-length-coded masks small the way real salient-object masks
    /// compress well.
    HashBands,
}

#[derive(Debug, Clone)]
pub struct MockDetector {
    seed: u64,
    policy: DetectPolicy,
    reject: BTreeSet<String>,
    scripted: BTreeMap<String, Vec<DetectionBox>>,
}

impl MockDetector {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            policy: DetectPolicy::HashBands,
            reject: BTreeSet::new(),
            scripted: BTreeMap::new(),
        }
    }

    pub fn with_policy(mut self, policy: DetectPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Names that will never be detected, for hallucination tests.
    pub fn with_rejects<I: IntoIterator<Item = S>, S: Into<String>>(mut self, names: I) -> Self {
        self.reject.extend(names.into_iter().map(Into::into));
        self
    }

    /// Exact boxes to answer for a name, bypassing the policy.
    pub fn with_scripted(mut self, name: impl Into<String>, boxes: Vec<DetectionBox>) -> Self {
        self.scripted.insert(name.into(), boxes);
        self
    }

    fn band_for(&self, name: &str) -> DetectionBox {
        let key = fnv1a64(name.as_bytes()) ^ self.seed.wrapping_mul(0x9e3779b97f4a7c15);
        let center = 0.2 + 0.6 * frac(splitmix64(key ^ 1));
        let half = 0.06 + 0.22 * frac(splitmix64(key ^ 2));
        let confidence = 0.5 + 0.5 * frac(splitmix64(key ^ 3));
        DetectionBox {
            x0: 0.0,
            y0: (center - half).max(0.0),
            x1: 1.0,
            y1: (center + half).min(1.0),
            confidence,
        }
    }
}

impl Detector for MockDetector {
    fn detect(&self, _image: &Image, name: &str) -> Result<Vec<DetectionBox>, BackendError> {
        if self.reject.contains(name) {
            return Ok(Vec::new());
        }
        if let Some(boxes) = self.scripted.get(name) {
            let mut boxes = boxes.clone();
            boxes.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
            return Ok(boxes);
        }
        let bbox = match self.policy {
            DetectPolicy::FullImage => DetectionBox::full_image(1.0),
            DetectPolicy::HashBands => self.band_for(name),
        };
        Ok(vec![bbox])
    }
}

/// Fills the detection box as a solid rectangle at image resolution.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockSegmenter;

impl Segmenter for MockSegmenter {
    fn segment(&self, image: &Image, bbox: &DetectionBox) -> Result<SemanticMask, BackendError> {
        let (w, h) = (image.width(), image.height());
        let (x0, y0, x1, y1) = bbox.to_pixel_rect(w, h);
        if x1 <= x0 || y1 <= y0 {
            return Err(BackendError::EmptyMask);
        }
        Ok(SemanticMask::from_rect(w, h, x0, y0, x1, y1))
    }
}

/// Contractive mock denoiser. Each step pulls the latent toward
/// `condition + psi(text)`, so decoding terminates at a stable,
/// text-dependent output; attention is a softmax over spatial scores
/// with an exact softmax-Jacobian backprop hook.
#[derive(Debug, Clone)]
pub struct MockDenoiser {
    seed: u64,
}

impl MockDenoiser {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn normal_field(&self, key: u64, len: usize) -> Vec<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(key);
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// Seeded unit-norm perturbation field for a text fingerprint.
    fn psi(&self, fingerprint: u64, shape: &LatentGrid) -> Vec<f64> {
        let len = shape.values().len();
        let mut field = self.normal_field(
            splitmix64(self.seed ^ fingerprint.wrapping_mul(3) ^ PSI_SALT),
            len,
        );
        let norm = field.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut field {
                *v /= norm;
            }
        }
        field
    }

    fn scores(&self, z: &LatentGrid, emb: &TextEmbedding) -> Vec<Vec<f64>> {
        let scale = 1.0 / (LATENT_CHANNELS as f64).sqrt();
        emb.tokens
            .iter()
            .map(|tok| {
                (0..z.spatial())
                    .map(|m| {
                        let mut dot = 0.0;
                        for (c, w) in tok.vector.iter().enumerate() {
                            dot += w * z.get(m, c);
                        }
                        dot * scale
                    })
                    .collect()
            })
            .collect()
    }

    fn softmax(scores: &[f64]) -> Vec<f64> {
        let max = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }
}

impl Denoiser for MockDenoiser {
    /// 8x average-pool into four channels: pooled RGB plus their luma.
    fn encode_condition(&self, image: &Image) -> Result<LatentGrid, BackendError> {
        let lw = image.width().div_ceil(LATENT_SCALE);
        let lh = image.height().div_ceil(LATENT_SCALE);
        let mut values = Vec::with_capacity((lw * lh) as usize * LATENT_CHANNELS);
        for ly in 0..lh {
            for lx in 0..lw {
                let x0 = lx * LATENT_SCALE;
                let y0 = ly * LATENT_SCALE;
                let x1 = (x0 + LATENT_SCALE).min(image.width());
                let y1 = (y0 + LATENT_SCALE).min(image.height());
                let mut acc = [0.0f64; 3];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let px = image.pixel(x, y);
                        for (a, p) in acc.iter_mut().zip(px) {
                            *a += f64::from(p);
                        }
                    }
                }
                let n = f64::from((x1 - x0) * (y1 - y0));
                let [r, g, b] = acc.map(|v| v / n);
                values.extend_from_slice(&[r, g, b, 0.299 * r + 0.587 * g + 0.114 * b]);
            }
        }
        Ok(LatentGrid::new(lw, lh, LATENT_CHANNELS, values))
    }

    fn text_embed(&self, text: &str) -> Result<TextEmbedding, BackendError> {
        let tokens = text
            .split_whitespace()
            .map(|token| {
                let key = splitmix64(self.seed ^ fnv1a64(token.as_bytes()) ^ TOKEN_SALT);
                let mut rng = ChaCha12Rng::seed_from_u64(key);
                let vector = (0..LATENT_CHANNELS)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                TokenEmbedding {
                    token: token.to_string(),
                    vector,
                }
            })
            .collect();
        Ok(TextEmbedding {
            fingerprint: fnv1a64(text.as_bytes()),
            tokens,
        })
    }

    /// `A[m,k] = softmax_m(<w_k, z_m> / sqrt(C))`: positive, and each
    /// token's column sums to one over spatial locations.
    fn attention(
        &self,
        z: &LatentGrid,
        emb: &TextEmbedding,
    ) -> Result<AttentionMap, BackendError> {
        let spatial = z.spatial();
        let tokens = emb.tokens.len();
        let mut map = AttentionMap::zeros(spatial, tokens);
        for (k, scores) in self.scores(z, emb).iter().enumerate() {
            for (m, a) in Self::softmax(scores).into_iter().enumerate() {
                map.set(m, k, a);
            }
        }
        Ok(map)
    }

    /// Exact softmax-Jacobian vector product:
    /// `dE/ds[m,k] = A[m,k] (dE/dA[m,k] - sum_m' dE/dA[m',k] A[m',k])`,
    /// then `dE/dz[m,c] = sum_k dE/ds[m,k] w_k[c] / sqrt(C)`.
    fn attention_vjp(
        &self,
        z: &LatentGrid,
        emb: &TextEmbedding,
        grad_attention: &AttentionMap,
    ) -> Result<LatentGrid, BackendError> {
        let spatial = z.spatial();
        let scale = 1.0 / (LATENT_CHANNELS as f64).sqrt();
        let mut grad_z = LatentGrid::zeros(z.width(), z.height(), z.channels());
        for (k, scores) in self.scores(z, emb).iter().enumerate() {
            let attn = Self::softmax(scores);
            let inner: f64 = (0..spatial)
                .map(|m| grad_attention.get(m, k) * attn[m])
                .sum();
            for (m, &a) in attn.iter().enumerate() {
                let ds = a * (grad_attention.get(m, k) - inner);
                for (c, w) in emb.tokens[k].vector.iter().enumerate() {
                    let v = grad_z.get(m, c) + ds * w * scale;
                    grad_z.set(m, c, v);
                }
            }
        }
        Ok(grad_z)
    }

    /// `z' = (1 - g) z + g (condition + psi(text))` with `g = 1/(t+1)`.
    fn denoise_step(
        &self,
        z: &LatentGrid,
        t: usize,
        condition: &LatentGrid,
        emb: &TextEmbedding,
    ) -> Result<LatentGrid, BackendError> {
        assert!(
            z.same_shape(condition),
            "latent and condition shapes must match"
        );
        let gamma = 1.0 / (t as f64 + 1.0);
        let psi = self.psi(emb.fingerprint, z);
        let values = z
            .values()
            .iter()
            .zip(condition.values())
            .zip(&psi)
            .map(|((zv, cv), pv)| (1.0 - gamma) * zv + gamma * (cv + pv))
            .collect();
        Ok(LatentGrid::new(z.width(), z.height(), z.channels(), values))
    }

    /// Bilinear 8x upsample of the RGB channels, clamped to [0,1].
    fn decode(&self, z: &LatentGrid) -> Result<Image, BackendError> {
        let ow = z.width() * LATENT_SCALE;
        let oh = z.height() * LATENT_SCALE;
        let sx = f64::from(z.width()) / f64::from(ow);
        let sy = f64::from(z.height()) / f64::from(oh);
        let mut samples = Vec::with_capacity((ow * oh) as usize * 3);
        for y in 0..oh {
            let fy = ((f64::from(y) + 0.5) * sy - 0.5).clamp(0.0, f64::from(z.height() - 1));
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(z.height() as usize - 1);
            let wy = fy - y0 as f64;
            for x in 0..ow {
                let fx = ((f64::from(x) + 0.5) * sx - 0.5).clamp(0.0, f64::from(z.width() - 1));
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(z.width() as usize - 1);
                let wx = fx - x0 as f64;
                for c in 0..3 {
                    let at = |xx: usize, yy: usize| z.get(yy * z.width() as usize + xx, c);
                    let top = at(x0, y0) * (1.0 - wx) + at(x1, y0) * wx;
                    let bot = at(x0, y1) * (1.0 - wx) + at(x1, y1) * wx;
                    samples.push((top * (1.0 - wy) + bot * wy).clamp(0.0, 1.0) as f32);
                }
            }
        }
        Image::from_samples(ow, oh, samples)
            .map_err(|e| BackendError::MalformedResponse(format!("mock decode: {e}")))
    }

    /// `condition + (t/(t+1)) * noise`, exactly the condition at t = 0.
    fn noised_reference(
        &self,
        condition: &LatentGrid,
        t: usize,
        seed: u64,
    ) -> Result<LatentGrid, BackendError> {
        let scale = t as f64 / (t as f64 + 1.0);
        let key = splitmix64(self.seed ^ seed ^ (t as u64).wrapping_mul(0x2545f4914f6cdd1d) ^ NOISE_SALT);
        let noise = self.normal_field(key, condition.values().len());
        let values = condition
            .values()
            .iter()
            .zip(&noise)
            .map(|(c, n)| c + scale * n)
            .collect();
        Ok(LatentGrid::new(
            condition.width(),
            condition.height(),
            condition.channels(),
            values,
        ))
    }
}
