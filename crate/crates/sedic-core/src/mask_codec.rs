//! Lossless coding of binary semantic masks.
//!
//! Two encodings: RAW (row-major bits, MSB-first, zero-padded) and RLE
//! (alternating run lengths over the full raster, starting with a zero
//! run that may be empty, each run an unsigned LEB128 varint). The
//! encoder picks whichever is smaller, preferring RAW on ties.
//!
//! Blob layout: `mask_w u32 | mask_h u32 | encoding u8 | data`.

use thiserror::Error;

use crate::varint::{read_uvarint, write_uvarint};

/// Upper bound on mask area in bits; a parse-time guard so corrupt blobs
/// cannot request absurd allocations.
pub const MAX_MASK_AREA: u64 = 1 << 26;

pub const ENCODING_RAW: u8 = 0;
pub const ENCODING_RLE: u8 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MaskCodecError {
    #[error("run lengths inconsistent with {expected} mask bits")]
    RunOverflow { expected: u64 },
    #[error("mask data truncated or sized wrong")]
    TruncatedData,
    #[error("factor {factor} does not divide {width}x{height}")]
    NonDivisibleFactor { factor: u32, width: u32, height: u32 },
    #[error("mask area {area} exceeds limit {MAX_MASK_AREA}")]
    AreaTooLarge { area: u64 },
    #[error("unknown mask encoding id {0}")]
    UnknownEncoding(u8),
    #[error("mask has degenerate dimensions {0}x{1}")]
    DegenerateDims(u32, u32),
}

/// Binary raster, row-major, true = object pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl SemanticMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(
            bits.len() as u64,
            u64::from(width) * u64::from(height),
            "bit count must equal width*height"
        );
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn filled(width: u32, height: u32, value: bool) -> Self {
        Self::new(width, height, vec![value; (width * height) as usize])
    }

    /// Mask that is true inside the given pixel rectangle (x1/y1 exclusive).
    pub fn from_rect(width: u32, height: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        let mut bits = vec![false; (width * height) as usize];
        for y in y0.min(height)..y1.min(height) {
            for x in x0.min(width)..x1.min(width) {
                bits[(y * width + x) as usize] = true;
            }
        }
        Self::new(width, height, bits)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    /// Number of set bits.
    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| !b)
    }
}

/// Encoded mask with enough header to reconstruct exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskBlob {
    pub mask_w: u32,
    pub mask_h: u32,
    pub encoding: u8,
    pub data: Vec<u8>,
}

impl MaskBlob {
    pub fn wire_len(&self) -> usize {
        4 + 4 + 1 + self.data.len()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.mask_w.to_le_bytes());
        out.extend_from_slice(&self.mask_h.to_le_bytes());
        out.push(self.encoding);
        out.extend_from_slice(&self.data);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        self.write_to(&mut out);
        out
    }

    /// Parse a blob from the front of `data`; returns bytes consumed.
    /// RAW length is implied by the dimensions; RLE ends once the runs
    /// sum to the raster size.
    pub fn read_from(data: &[u8]) -> Result<(Self, usize), MaskCodecError> {
        if data.len() < 9 {
            return Err(MaskCodecError::TruncatedData);
        }
        let mask_w = u32::from_le_bytes(data[0..4].try_into().unwrap());
        let mask_h = u32::from_le_bytes(data[4..8].try_into().unwrap());
        let encoding = data[8];
        if mask_w == 0 || mask_h == 0 {
            return Err(MaskCodecError::DegenerateDims(mask_w, mask_h));
        }
        let area = u64::from(mask_w) * u64::from(mask_h);
        if area > MAX_MASK_AREA {
            return Err(MaskCodecError::AreaTooLarge { area });
        }
        let body = &data[9..];
        let data_len = match encoding {
            ENCODING_RAW => {
                let need = (area.div_ceil(8)) as usize;
                if body.len() < need {
                    return Err(MaskCodecError::TruncatedData);
                }
                need
            }
            ENCODING_RLE => rle_span(body, area)?,
            other => return Err(MaskCodecError::UnknownEncoding(other)),
        };
        let blob = MaskBlob {
            mask_w,
            mask_h,
            encoding,
            data: body[..data_len].to_vec(),
        };
        Ok((blob, 9 + data_len))
    }
}

/// Running out of runs at a varint boundary means the run list disagrees
/// with w*h; running out mid-varint means the bytes themselves were cut.
fn next_run(body: &[u8], pos: usize, area: u64) -> Result<(u64, usize), MaskCodecError> {
    match read_uvarint(body, pos) {
        Some(r) => Ok(r),
        None if pos >= body.len() => Err(MaskCodecError::RunOverflow { expected: area }),
        None => Err(MaskCodecError::TruncatedData),
    }
}

/// Byte length of the RLE run list that covers exactly `area` bits.
fn rle_span(body: &[u8], area: u64) -> Result<usize, MaskCodecError> {
    let mut pos = 0usize;
    let mut total: u64 = 0;
    while total < area {
        let (run, used) = next_run(body, pos, area)?;
        pos += used;
        total = total
            .checked_add(run)
            .ok_or(MaskCodecError::RunOverflow { expected: area })?;
        if total > area {
            return Err(MaskCodecError::RunOverflow { expected: area });
        }
    }
    Ok(pos)
}

fn encode_raw(mask: &SemanticMask) -> Vec<u8> {
    let mut out = vec![0u8; mask.bits.len().div_ceil(8)];
    for (i, &bit) in mask.bits.iter().enumerate() {
        if bit {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

fn encode_rle(mask: &SemanticMask) -> Vec<u8> {
    let mut out = Vec::new();
    let mut current = false; // runs alternate starting from zero
    let mut run: u64 = 0;
    for &bit in &mask.bits {
        if bit == current {
            run += 1;
        } else {
            write_uvarint(&mut out, run);
            current = bit;
            run = 1;
        }
    }
    write_uvarint(&mut out, run);
    out
}

/// Compress a mask, choosing the smaller of RAW and RLE (RAW on ties).
pub fn mask_encode(mask: &SemanticMask) -> Result<MaskBlob, MaskCodecError> {
    if mask.width == 0 || mask.height == 0 {
        return Err(MaskCodecError::DegenerateDims(mask.width, mask.height));
    }
    let raw = encode_raw(mask);
    let rle = encode_rle(mask);
    let (encoding, data) = if rle.len() < raw.len() {
        (ENCODING_RLE, rle)
    } else {
        (ENCODING_RAW, raw)
    };
    Ok(MaskBlob {
        mask_w: mask.width,
        mask_h: mask.height,
        encoding,
        data,
    })
}

/// Exact reconstruction of the encoded mask.
pub fn mask_decode(blob: &MaskBlob) -> Result<SemanticMask, MaskCodecError> {
    let area = u64::from(blob.mask_w) * u64::from(blob.mask_h);
    if area > MAX_MASK_AREA {
        return Err(MaskCodecError::AreaTooLarge { area });
    }
    if blob.mask_w == 0 || blob.mask_h == 0 {
        return Err(MaskCodecError::DegenerateDims(blob.mask_w, blob.mask_h));
    }
    let bits = match blob.encoding {
        ENCODING_RAW => {
            let need = (area.div_ceil(8)) as usize;
            if blob.data.len() != need {
                return Err(MaskCodecError::TruncatedData);
            }
            (0..area as usize)
                .map(|i| blob.data[i / 8] & (0x80 >> (i % 8)) != 0)
                .collect()
        }
        ENCODING_RLE => {
            let mut bits = Vec::with_capacity(area as usize);
            let mut pos = 0usize;
            let mut value = false;
            while (bits.len() as u64) < area {
                let (run, used) = next_run(&blob.data, pos, area)?;
                pos += used;
                if bits.len() as u64 + run > area {
                    return Err(MaskCodecError::RunOverflow { expected: area });
                }
                bits.extend(std::iter::repeat_n(value, run as usize));
                value = !value;
            }
            // Trailing bytes mean the run list disagrees with w*h.
            if pos != blob.data.len() {
                return Err(MaskCodecError::RunOverflow { expected: area });
            }
            bits
        }
        other => return Err(MaskCodecError::UnknownEncoding(other)),
    };
    Ok(SemanticMask::new(blob.mask_w, blob.mask_h, bits))
}

/// Reduce a mask by an integer factor; each output bit is the majority
/// vote of its block, with ties counting as set. Errs toward keeping
/// object coverage.
pub fn downsample_mask(mask: &SemanticMask, factor: u32) -> Result<SemanticMask, MaskCodecError> {
    if factor == 0 || mask.width % factor != 0 || mask.height % factor != 0 {
        return Err(MaskCodecError::NonDivisibleFactor {
            factor,
            width: mask.width,
            height: mask.height,
        });
    }
    if factor == 1 {
        return Ok(mask.clone());
    }
    let ow = mask.width / factor;
    let oh = mask.height / factor;
    let block = u64::from(factor) * u64::from(factor);
    let mut bits = Vec::with_capacity((ow * oh) as usize);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut ones: u64 = 0;
            for dy in 0..factor {
                for dx in 0..factor {
                    if mask.get(ox * factor + dx, oy * factor + dy) {
                        ones += 1;
                    }
                }
            }
            bits.push(ones * 2 >= block);
        }
    }
    Ok(SemanticMask::new(ow, oh, bits))
}
