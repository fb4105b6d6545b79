//! Reference-image codecs: the built-in TINY transform codec and a
//! registry slot for external plugins.
//!
//! The container stores the reference as an opaque byte payload tagged
//! with a codec id. Id 0 is TINY; id 1 is reserved for an external
//! learned codec reached over the denoiser-style HTTP contract; further
//! ids are free for plugins registered at startup.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::imageio::Image;

mod dct;
pub mod tiny;

pub const CODEC_ID_TINY: u8 = 0;
/// Reserved for an external learned codec; nothing registers it here.
pub const CODEC_ID_EXTERNAL: u8 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RefCodecError {
    #[error("image {width}x{height} below the {min}px minimum", min = tiny::MIN_DIMENSION)]
    ImageTooSmall { width: u32, height: u32 },
    #[error("no codec registered for id {0}")]
    UnknownCodec(u8),
    #[error("corrupt reference payload: {0}")]
    CorruptPayload(String),
    #[error("budget of {budget_bits} bits below the minimum achievable {min_bits} bits")]
    BudgetInfeasible { budget_bits: u64, min_bits: u64 },
    #[error("quality {0} outside 1..=31")]
    InvalidQuality(u8),
}

/// Quality knob, 1..=31; larger means coarser quantization and fewer bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct QualityParam(u8);

impl QualityParam {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 31;

    pub fn new(q: u8) -> Result<Self, RefCodecError> {
        if (Self::MIN..=Self::MAX).contains(&q) {
            Ok(Self(q))
        } else {
            Err(RefCodecError::InvalidQuality(q))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn coarsest() -> Self {
        Self(Self::MAX)
    }

    pub fn finest() -> Self {
        Self(Self::MIN)
    }
}

/// A reference-image codec behind the opaque payload boundary.
pub trait RefCodec: Send + Sync {
    fn name(&self) -> &'static str;
    fn encode(&self, image: &Image, q: QualityParam) -> Result<Vec<u8>, RefCodecError>;
    fn decode(&self, payload: &[u8]) -> Result<Image, RefCodecError>;
}

struct TinyCodec;

impl RefCodec for TinyCodec {
    fn name(&self) -> &'static str {
        "tiny"
    }

    fn encode(&self, image: &Image, q: QualityParam) -> Result<Vec<u8>, RefCodecError> {
        tiny::encode(image, q)
    }

    fn decode(&self, payload: &[u8]) -> Result<Image, RefCodecError> {
        tiny::decode(payload)
    }
}

/// Immutable-after-startup codec lookup by id.
#[derive(Clone)]
pub struct CodecRegistry {
    codecs: BTreeMap<u8, Arc<dyn RefCodec>>,
}

impl CodecRegistry {
    /// Registry containing only the built-in TINY codec.
    pub fn builtin() -> Self {
        let mut codecs: BTreeMap<u8, Arc<dyn RefCodec>> = BTreeMap::new();
        codecs.insert(CODEC_ID_TINY, Arc::new(TinyCodec));
        Self { codecs }
    }

    pub fn register(&mut self, codec_id: u8, codec: Arc<dyn RefCodec>) {
        self.codecs.insert(codec_id, codec);
    }

    pub fn get(&self, codec_id: u8) -> Result<&Arc<dyn RefCodec>, RefCodecError> {
        self.codecs
            .get(&codec_id)
            .ok_or(RefCodecError::UnknownCodec(codec_id))
    }

    pub fn decode(&self, codec_id: u8, payload: &[u8]) -> Result<Image, RefCodecError> {
        self.get(codec_id)?.decode(payload)
    }
}

impl Default for CodecRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Encode with the built-in TINY codec. Deterministic for identical
/// inputs; payload size is non-increasing in q.
pub fn ref_encode(image: &Image, q: QualityParam) -> Result<Vec<u8>, RefCodecError> {
    tiny::encode(image, q)
}

/// Decode a TINY payload back to full resolution.
pub fn ref_decode(payload: &[u8]) -> Result<Image, RefCodecError> {
    tiny::decode(payload)
}

/// Smallest q (finest quality) whose TINY payload fits `budget_bits`,
/// found by binary search over the monotone payload-size curve.
pub fn fit_quality(image: &Image, budget_bits: u64) -> Result<QualityParam, RefCodecError> {
    let sizes = tiny::payload_sizes(image)?;
    let bits_at = |q: u8| sizes[(q - 1) as usize] as u64 * 8;
    let min_bits = bits_at(QualityParam::MAX);
    if min_bits > budget_bits {
        return Err(RefCodecError::BudgetInfeasible {
            budget_bits,
            min_bits,
        });
    }
    let mut lo = QualityParam::MIN;
    let mut hi = QualityParam::MAX;
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if bits_at(mid) <= budget_bits {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    QualityParam::new(lo)
}
