//! RGB image buffer plus PNG/PPM load and save.
//!
//! Samples are `f32` in `[0, 1]`, interleaved RGB, row-major. PNG is the
//! interchange format; binary PPM (P6, maxval 255) is accepted for
//! dependency-light fixtures.

use std::io::Cursor;
use std::path::Path;

use image::{ImageEncoder, ImageReader};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("unsupported or corrupt image data: {0}")]
    Decode(String),
    #[error("png encoding failed: {0}")]
    Encode(String),
    #[error("invalid image buffer: {0}")]
    InvalidBuffer(String),
}

/// An RGB image with samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    samples: Vec<f32>,
}

impl Image {
    /// Build from interleaved RGB samples; rejects wrong length or
    /// non-finite / out-of-range values.
    pub fn from_samples(width: u32, height: u32, samples: Vec<f32>) -> Result<Self, ImageIoError> {
        let expected = width as usize * height as usize * 3;
        if samples.len() != expected {
            return Err(ImageIoError::InvalidBuffer(format!(
                "expected {expected} samples for {width}x{height}, got {}",
                samples.len()
            )));
        }
        if let Some(bad) = samples.iter().find(|s| !s.is_finite() || **s < 0.0 || **s > 1.0) {
            return Err(ImageIoError::InvalidBuffer(format!(
                "sample {bad} outside [0,1]"
            )));
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    /// Solid-color image.
    pub fn constant(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let mut samples = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            samples.extend_from_slice(&rgb);
        }
        Self::from_samples(width, height, samples).expect("constant color in range")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.samples[i], self.samples[i + 1], self.samples[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [f32; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.samples[i..i + 3].copy_from_slice(&rgb);
    }

    /// Per-sample maximum absolute difference.
    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        assert_eq!(self.samples.len(), other.samples.len(), "dims must match");
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// PSNR in dB against `other` (peak 1.0). Infinity for identical images.
    pub fn psnr(&self, other: &Image) -> f64 {
        assert_eq!(self.samples.len(), other.samples.len(), "dims must match");
        let mse: f64 = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| {
                let d = f64::from(a - b);
                d * d
            })
            .sum::<f64>()
            / self.samples.len() as f64;
        if mse == 0.0 {
            f64::INFINITY
        } else {
            -10.0 * mse.log10()
        }
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encode to PNG bytes (8-bit RGB). Deterministic for identical pixels.
pub fn to_png_bytes(image: &Image) -> Result<Vec<u8>, ImageIoError> {
    let raw: Vec<u8> = image.samples.iter().map(|&s| to_u8(s)).collect();
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    encoder
        .write_image(
            &raw,
            image.width,
            image.height,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| ImageIoError::Encode(e.to_string()))?;
    Ok(out)
}

/// Decode PNG or binary PPM bytes, whichever the magic indicates.
pub fn from_bytes(data: &[u8]) -> Result<Image, ImageIoError> {
    if data.starts_with(b"P6") {
        return decode_ppm(data);
    }
    let reader = ImageReader::new(Cursor::new(data))
        .with_guessed_format()
        .map_err(|e| ImageIoError::Decode(e.to_string()))?;
    let dynamic = reader
        .decode()
        .map_err(|e| ImageIoError::Decode(e.to_string()))?;
    let rgb = dynamic.to_rgb8();
    let (width, height) = rgb.dimensions();
    let samples = rgb.as_raw().iter().map(|&b| f32::from(b) / 255.0).collect();
    Image::from_samples(width, height, samples)
}

pub fn load(path: &Path) -> Result<Image, ImageIoError> {
    let data = std::fs::read(path).map_err(|source| ImageIoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&data)
}

pub fn save_png(image: &Image, path: &Path) -> Result<(), ImageIoError> {
    let bytes = to_png_bytes(image)?;
    std::fs::write(path, bytes).map_err(|source| ImageIoError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Binary PPM writer, handy for fixtures that must be inspectable without
/// an image library.
pub fn to_ppm_bytes(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.samples.iter().map(|&s| to_u8(s)));
    out
}

fn decode_ppm(data: &[u8]) -> Result<Image, ImageIoError> {
    let mut pos = 0usize;
    let mut fields = Vec::new();
    // Header: "P6", width, height, maxval, separated by whitespace/comments.
    while fields.len() < 4 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < data.len() && data[pos] == b'#' {
            while pos < data.len() && data[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(ImageIoError::Decode("truncated ppm header".into()));
        }
        fields.push(&data[start..pos]);
    }
    if fields[0] != b"P6" {
        return Err(ImageIoError::Decode("not a P6 ppm".into()));
    }
    let parse = |field: &[u8]| -> Result<u32, ImageIoError> {
        std::str::from_utf8(field)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageIoError::Decode("bad ppm header field".into()))
    };
    let width = parse(fields[1])?;
    let height = parse(fields[2])?;
    let maxval = parse(fields[3])?;
    if maxval != 255 {
        return Err(ImageIoError::Decode(format!(
            "unsupported ppm maxval {maxval}"
        )));
    }
    pos += 1; // single whitespace after maxval
    let need = width as usize * height as usize * 3;
    let body = data
        .get(pos..pos + need)
        .ok_or_else(|| ImageIoError::Decode("truncated ppm body".into()))?;
    let samples = body.iter().map(|&b| f32::from(b) / 255.0).collect();
    Image::from_samples(width, height, samples)
}
