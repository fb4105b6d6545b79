//! TINY: the built-in reference-image codec.
//!
//! A deliberately coarse transform codec with zero model dependencies:
//! BT.601 full-range YCbCr, 4:2:0 chroma subsampling, a quality-banded
//! extra spatial downsample, 8x8 block DCT, flat uniform quantization
//! scaled by the quality parameter, zigzag scan, run/level symbol
//! coding, and the canonical Huffman stage from [`crate::text_codec`].
//!
//! Payload layout: `q u8 | orig_w u32 | orig_h u32` followed by three
//! self-delimiting entropy blobs for the Y, Cb, Cr coefficient streams.
//!
//! The quality parameter runs 1..=31; larger is coarser. The quantizer
//! step grows linearly with q and the pre-DCT downsample widens from 2x
//! up to 16x across q bands, so coarse qualities stay within the
//! ultra-low-bitrate reference budget even on noise-like input.
//!
//! Payload size is non-increasing in q by construction: a request for
//! quality q emits the smallest candidate payload over the finer-or-equal
//! qualities 1..=q. Entropy-stage sizes can wiggle a byte or two between
//! neighboring steps, and every payload names its own quantizer, so
//! taking this envelope costs nothing and never emits a coarser image
//! than requested.

use crate::imageio::Image;
use crate::text_codec::{text_decode, text_encode, TextBlob};
use crate::varint::{read_ivarint, read_uvarint, write_ivarint, write_uvarint};

use super::dct::{fdct, idct, BLOCK, ZIGZAG};
use super::{QualityParam, RefCodecError};

pub const MIN_DIMENSION: u32 = 16;
const MAX_DIMENSION: u32 = 1 << 15;
const MAX_PIXELS: u64 = 1 << 26;

const MARKER_LITERAL: u8 = 0xFD;
const MARKER_ZRUN: u8 = 0xFE;
const MARKER_EOB: u8 = 0xFF;
const MAX_AC_RUN: u8 = 62;

/// Quantizer step: flat over all 64 coefficients, scaled by q.
fn quant_step(q: QualityParam) -> f64 {
    f64::from(q.get())
}

/// Extra pre-DCT downsample factor for a quality band.
fn spatial_factor(q: QualityParam) -> u32 {
    match q.get() {
        1..=10 => 2,
        11..=20 => 4,
        21..=27 => 8,
        _ => 16,
    }
}

struct Plane {
    w: u32,
    h: u32,
    data: Vec<f32>, // 0..255 scale
}

impl Plane {
    fn get(&self, x: u32, y: u32) -> f32 {
        self.data[(y * self.w + x) as usize]
    }
}

fn rgb_to_ycbcr(image: &Image) -> [Plane; 3] {
    let (w, h) = (image.width(), image.height());
    let n = (w * h) as usize;
    let mut y = Vec::with_capacity(n);
    let mut cb = Vec::with_capacity(n);
    let mut cr = Vec::with_capacity(n);
    for px in 0..n {
        let r = f64::from(image.samples()[px * 3]) * 255.0;
        let g = f64::from(image.samples()[px * 3 + 1]) * 255.0;
        let b = f64::from(image.samples()[px * 3 + 2]) * 255.0;
        y.push((0.299 * r + 0.587 * g + 0.114 * b) as f32);
        cb.push((128.0 - 0.168_736 * r - 0.331_264 * g + 0.5 * b) as f32);
        cr.push((128.0 + 0.5 * r - 0.418_688 * g - 0.081_312 * b) as f32);
    }
    [
        Plane { w, h, data: y },
        Plane { w, h, data: cb },
        Plane { w, h, data: cr },
    ]
}

fn ycbcr_to_rgb(y: &Plane, cb: &Plane, cr: &Plane) -> Vec<f32> {
    let n = (y.w * y.h) as usize;
    let mut out = Vec::with_capacity(n * 3);
    for i in 0..n {
        let yy = f64::from(y.data[i]);
        let b_ = f64::from(cb.data[i]) - 128.0;
        let r_ = f64::from(cr.data[i]) - 128.0;
        let r = yy + 1.402 * r_;
        let g = yy - 0.344_136 * b_ - 0.714_136 * r_;
        let b = yy + 1.772 * b_;
        out.push((r / 255.0).clamp(0.0, 1.0) as f32);
        out.push((g / 255.0).clamp(0.0, 1.0) as f32);
        out.push((b / 255.0).clamp(0.0, 1.0) as f32);
    }
    out
}

/// Box filter by an integer factor; partial edge blocks average the
/// pixels they actually cover.
fn box_downsample(plane: &Plane, factor: u32) -> Plane {
    if factor == 1 {
        return Plane {
            w: plane.w,
            h: plane.h,
            data: plane.data.clone(),
        };
    }
    let ow = plane.w.div_ceil(factor);
    let oh = plane.h.div_ceil(factor);
    let mut data = Vec::with_capacity((ow * oh) as usize);
    for oy in 0..oh {
        for ox in 0..ow {
            let x0 = ox * factor;
            let y0 = oy * factor;
            let x1 = (x0 + factor).min(plane.w);
            let y1 = (y0 + factor).min(plane.h);
            let mut acc = 0.0f64;
            for y in y0..y1 {
                for x in x0..x1 {
                    acc += f64::from(plane.get(x, y));
                }
            }
            data.push((acc / f64::from((x1 - x0) * (y1 - y0))) as f32);
        }
    }
    Plane { w: ow, h: oh, data }
}

/// Bilinear resize with center-aligned sampling.
fn bilinear_resize(plane: &Plane, ow: u32, oh: u32) -> Plane {
    if plane.w == ow && plane.h == oh {
        return Plane {
            w: ow,
            h: oh,
            data: plane.data.clone(),
        };
    }
    let sx = f64::from(plane.w) / f64::from(ow);
    let sy = f64::from(plane.h) / f64::from(oh);
    let mut data = Vec::with_capacity((ow * oh) as usize);
    for y in 0..oh {
        let fy = ((f64::from(y) + 0.5) * sy - 0.5).clamp(0.0, f64::from(plane.h - 1));
        let y0 = fy.floor() as u32;
        let y1 = (y0 + 1).min(plane.h - 1);
        let wy = fy - f64::from(y0);
        for x in 0..ow {
            let fx = ((f64::from(x) + 0.5) * sx - 0.5).clamp(0.0, f64::from(plane.w - 1));
            let x0 = fx.floor() as u32;
            let x1 = (x0 + 1).min(plane.w - 1);
            let wx = fx - f64::from(x0);
            let top = f64::from(plane.get(x0, y0)) * (1.0 - wx) + f64::from(plane.get(x1, y0)) * wx;
            let bot = f64::from(plane.get(x0, y1)) * (1.0 - wx) + f64::from(plane.get(x1, y1)) * wx;
            data.push((top * (1.0 - wy) + bot * wy) as f32);
        }
    }
    Plane { w: ow, h: oh, data }
}

fn round_half_away(x: f64) -> i64 {
    if x >= 0.0 {
        (x + 0.5).floor() as i64
    } else {
        (x - 0.5).ceil() as i64
    }
}

/// Quantized coefficients of one plane, blocks in raster order with
/// edge-replicated padding.
fn quantize_plane(plane: &Plane, step: f64) -> (u32, u32, Vec<[i64; 64]>) {
    let bw = plane.w.div_ceil(BLOCK as u32);
    let bh = plane.h.div_ceil(BLOCK as u32);
    let mut blocks = Vec::with_capacity((bw * bh) as usize);
    for by in 0..bh {
        for bx in 0..bw {
            let mut pixels = [0.0f64; 64];
            for dy in 0..BLOCK as u32 {
                for dx in 0..BLOCK as u32 {
                    let x = (bx * BLOCK as u32 + dx).min(plane.w - 1);
                    let y = (by * BLOCK as u32 + dy).min(plane.h - 1);
                    pixels[(dy as usize) * BLOCK + dx as usize] =
                        f64::from(plane.get(x, y)) - 128.0;
                }
            }
            let coeffs = fdct(&pixels);
            let mut levels = [0i64; 64];
            for i in 0..64 {
                levels[ZIGZAG[i]] = round_half_away(coeffs[i] / step);
            }
            // levels is now indexed by zigzag position.
            blocks.push(levels);
        }
    }
    (bw, bh, blocks)
}

fn dequantize_plane(bw: u32, bh: u32, w: u32, h: u32, blocks: &[[i64; 64]], step: f64) -> Plane {
    let mut data = vec![0.0f32; (w * h) as usize];
    for by in 0..bh {
        for bx in 0..bw {
            let levels = &blocks[(by * bw + bx) as usize];
            let mut coeffs = [0.0f64; 64];
            for i in 0..64 {
                coeffs[i] = levels[ZIGZAG[i]] as f64 * step;
            }
            let pixels = idct(&coeffs);
            for dy in 0..BLOCK as u32 {
                for dx in 0..BLOCK as u32 {
                    let x = bx * BLOCK as u32 + dx;
                    let y = by * BLOCK as u32 + dy;
                    if x < w && y < h {
                        data[(y * w + x) as usize] =
                            (pixels[(dy as usize) * BLOCK + dx as usize] + 128.0) as f32;
                    }
                }
            }
        }
    }
    Plane { w, h, data }
}

/// Run/level symbol stream for a plane's quantized blocks. Blocks whose
/// DC matches the previous block and whose AC is all zero collapse into
/// zero-run events.
fn encode_plane_stream(blocks: &[[i64; 64]]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut prev_dc: i64 = 0;
    let mut pending_empty: u64 = 0;
    for levels in blocks {
        let dc_delta = levels[0] - prev_dc;
        let has_ac = levels[1..].iter().any(|&l| l != 0);
        if dc_delta == 0 && !has_ac {
            pending_empty += 1;
            continue;
        }
        if pending_empty > 0 {
            out.push(MARKER_ZRUN);
            write_uvarint(&mut out, pending_empty);
            pending_empty = 0;
        }
        out.push(MARKER_LITERAL);
        write_ivarint(&mut out, dc_delta);
        prev_dc = levels[0];
        let mut run: u8 = 0;
        for &level in &levels[1..] {
            if level == 0 {
                run += 1;
            } else {
                out.push(run);
                write_ivarint(&mut out, level);
                run = 0;
            }
        }
        out.push(MARKER_EOB);
    }
    if pending_empty > 0 {
        out.push(MARKER_ZRUN);
        write_uvarint(&mut out, pending_empty);
    }
    out
}

fn corrupt(detail: &str) -> RefCodecError {
    RefCodecError::CorruptPayload(detail.to_string())
}

fn decode_plane_stream(stream: &[u8], n_blocks: usize) -> Result<Vec<[i64; 64]>, RefCodecError> {
    let mut blocks = Vec::with_capacity(n_blocks);
    let mut prev_dc: i64 = 0;
    let mut pos = 0usize;
    while blocks.len() < n_blocks {
        let marker = *stream.get(pos).ok_or_else(|| corrupt("stream ended mid-plane"))?;
        pos += 1;
        match marker {
            MARKER_ZRUN => {
                let (count, used) =
                    read_uvarint(stream, pos).ok_or_else(|| corrupt("bad zero-run varint"))?;
                pos += used;
                if count == 0 || count > (n_blocks - blocks.len()) as u64 {
                    return Err(corrupt("zero-run exceeds remaining blocks"));
                }
                let mut empty = [0i64; 64];
                empty[0] = prev_dc;
                for _ in 0..count {
                    blocks.push(empty);
                }
            }
            MARKER_LITERAL => {
                let (dc_delta, used) =
                    read_ivarint(stream, pos).ok_or_else(|| corrupt("bad dc varint"))?;
                pos += used;
                prev_dc = prev_dc
                    .checked_add(dc_delta)
                    .ok_or_else(|| corrupt("dc overflow"))?;
                let mut levels = [0i64; 64];
                levels[0] = prev_dc;
                let mut slot = 1usize;
                loop {
                    let byte = *stream
                        .get(pos)
                        .ok_or_else(|| corrupt("stream ended inside block"))?;
                    pos += 1;
                    if byte == MARKER_EOB {
                        break;
                    }
                    if byte > MAX_AC_RUN {
                        return Err(corrupt("invalid ac run byte"));
                    }
                    slot += byte as usize;
                    if slot > 63 {
                        return Err(corrupt("ac position past block end"));
                    }
                    let (level, used) =
                        read_ivarint(stream, pos).ok_or_else(|| corrupt("bad ac varint"))?;
                    pos += used;
                    if level == 0 {
                        return Err(corrupt("zero ac level"));
                    }
                    levels[slot] = level;
                    slot += 1;
                }
                blocks.push(levels);
            }
            _ => return Err(corrupt("unknown block marker")),
        }
    }
    if pos != stream.len() {
        return Err(corrupt("trailing bytes after last block"));
    }
    Ok(blocks)
}

/// Plane geometry for a quality level: Y plus half-resolution chroma,
/// both reduced by the band's spatial factor.
fn plane_dims(w: u32, h: u32, q: QualityParam) -> [(u32, u32); 3] {
    let d = spatial_factor(q);
    let yw = w.div_ceil(d);
    let yh = h.div_ceil(d);
    let cw = w.div_ceil(2).div_ceil(d);
    let ch = h.div_ceil(2).div_ceil(d);
    [(yw, yh), (cw, ch), (cw, ch)]
}

/// Full-resolution luma plus 2x-subsampled chroma, computed once per
/// encode and shared across the per-quality candidates.
struct PlaneSet {
    w: u32,
    h: u32,
    y: Plane,
    cb_half: Plane,
    cr_half: Plane,
}

fn prepare(image: &Image) -> Result<PlaneSet, RefCodecError> {
    let (w, h) = (image.width(), image.height());
    if w < MIN_DIMENSION || h < MIN_DIMENSION {
        return Err(RefCodecError::ImageTooSmall { width: w, height: h });
    }
    let [y, cb, cr] = rgb_to_ycbcr(image);
    Ok(PlaneSet {
        w,
        h,
        y,
        cb_half: box_downsample(&cb, 2),
        cr_half: box_downsample(&cr, 2),
    })
}

fn raw_encode(set: &PlaneSet, q: QualityParam) -> Vec<u8> {
    let d = spatial_factor(q);
    let step = quant_step(q);
    let planes = [
        box_downsample(&set.y, d),
        box_downsample(&set.cb_half, d),
        box_downsample(&set.cr_half, d),
    ];
    let mut out = Vec::new();
    out.push(q.get());
    out.extend_from_slice(&set.w.to_le_bytes());
    out.extend_from_slice(&set.h.to_le_bytes());
    for plane in &planes {
        let (_, _, blocks) = quantize_plane(plane, step);
        let stream = encode_plane_stream(&blocks);
        text_encode(&stream).write_to(&mut out);
    }
    out
}

pub fn encode(image: &Image, q: QualityParam) -> Result<Vec<u8>, RefCodecError> {
    let set = prepare(image)?;
    let mut best: Option<Vec<u8>> = None;
    for qq in 1..=q.get() {
        let candidate = raw_encode(&set, QualityParam::new(qq).expect("in range"));
        if best.as_ref().is_none_or(|b| candidate.len() < b.len()) {
            best = Some(candidate);
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// Payload byte size for every requested quality 1..=31, after the
/// envelope; used by quality fitting so it measures exactly what
/// [`encode`] would emit.
pub(super) fn payload_sizes(image: &Image) -> Result<[usize; 31], RefCodecError> {
    let set = prepare(image)?;
    let mut sizes = [0usize; 31];
    for qq in 1..=31u8 {
        sizes[(qq - 1) as usize] = raw_encode(&set, QualityParam::new(qq).expect("in range")).len();
    }
    for i in 1..31 {
        sizes[i] = sizes[i].min(sizes[i - 1]);
    }
    Ok(sizes)
}

pub fn decode(payload: &[u8]) -> Result<Image, RefCodecError> {
    if payload.len() < 9 {
        return Err(corrupt("payload header truncated"));
    }
    let q = QualityParam::new(payload[0])
        .map_err(|_| corrupt("quality byte out of range"))?;
    let w = u32::from_le_bytes(payload[1..5].try_into().unwrap());
    let h = u32::from_le_bytes(payload[5..9].try_into().unwrap());
    if w < MIN_DIMENSION || h < MIN_DIMENSION || w > MAX_DIMENSION || h > MAX_DIMENSION {
        return Err(corrupt("unreasonable image dimensions"));
    }
    if u64::from(w) * u64::from(h) > MAX_PIXELS {
        return Err(corrupt("pixel count over decode limit"));
    }
    let step = quant_step(q);
    let dims = plane_dims(w, h, q);

    let mut offset = 9usize;
    let mut planes = Vec::with_capacity(3);
    for (pw, ph) in dims {
        let (blob, used) = TextBlob::read_from(&payload[offset..])
            .map_err(|e| corrupt(&format!("entropy blob: {e}")))?;
        offset += used;
        let stream = text_decode(&blob).map_err(|e| corrupt(&format!("entropy stream: {e}")))?;
        let bw = pw.div_ceil(BLOCK as u32);
        let bh = ph.div_ceil(BLOCK as u32);
        let blocks = decode_plane_stream(&stream, (bw * bh) as usize)?;
        planes.push(dequantize_plane(bw, bh, pw, ph, &blocks, step));
    }
    if offset != payload.len() {
        return Err(corrupt("trailing bytes after plane blobs"));
    }

    let y = bilinear_resize(&planes[0], w, h);
    let cb = bilinear_resize(&planes[1], w, h);
    let cr = bilinear_resize(&planes[2], w, h);
    let samples = ycbcr_to_rgb(&y, &cb, &cr);
    Image::from_samples(w, h, samples).map_err(|e| corrupt(&format!("reconstruction: {e}")))
}
