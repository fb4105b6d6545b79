//! Deterministic synthetic images for tests, demos, and the selftest
//! suites. No binary fixtures are shipped; everything here is generated
//! from a seed.

use crate::imageio::Image;

fn hash3(x: u32, y: u32, seed: u64) -> u64 {
    // FNV-1a over the coordinates; cheap and stable.
    let mut h = 0xcbf29ce484222325u64 ^ seed;
    for b in x.to_le_bytes().into_iter().chain(y.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn noise01(x: u32, y: u32, seed: u64) -> f32 {
    (hash3(x, y, seed) >> 40) as f32 / (1u64 << 24) as f32
}

/// A photo-like scene: graded sky, a sun disk, a mountain ridge, rippled
/// water, and faint grain. Smooth enough to compress, varied enough to
/// exercise every codec path.
pub fn synthetic_photo(width: u32, height: u32, seed: u64) -> Image {
    let w = width as f32;
    let h = height as f32;
    let mut samples = Vec::with_capacity((width * height * 3) as usize);
    for y in 0..height {
        for x in 0..width {
            let fx = x as f32 / w;
            let fy = y as f32 / h;

            // Sky gradient, warm near the horizon.
            let mut r = 0.35 + 0.30 * fy;
            let mut g = 0.45 + 0.18 * fy;
            let mut b = 0.70 - 0.25 * fy;

            // Sun disk upper-left-ish.
            let dx = fx - 0.28;
            let dy = fy - 0.22;
            let sun = (-(dx * dx + dy * dy) * 160.0).exp();
            r += 0.50 * sun;
            g += 0.42 * sun;
            b += 0.20 * sun;

            // Mountain ridge silhouette.
            let ridge = 0.55
                + 0.06 * (fx * 11.0).sin()
                + 0.04 * (fx * 23.0 + 1.3).sin()
                + 0.02 * (fx * 51.0 + seed as f32 * 0.1).sin();
            if fy > ridge {
                let depth = ((fy - ridge) * 4.0).min(1.0);
                r = 0.18 + 0.10 * depth;
                g = 0.22 + 0.12 * depth;
                b = 0.25 + 0.08 * depth;
                // Water ripples in the lower quarter.
                if fy > 0.78 {
                    let ripple = 0.04 * ((fy * 140.0).sin() * (fx * 9.0 + fy * 30.0).cos());
                    r += ripple + 0.05;
                    g += ripple + 0.08;
                    b += ripple + 0.18;
                }
            }

            // Faint grain so no plane is exactly constant.
            let grain = (noise01(x, y, seed) - 0.5) * 0.02;
            samples.push((r + grain).clamp(0.0, 1.0));
            samples.push((g + grain).clamp(0.0, 1.0));
            samples.push((b + grain).clamp(0.0, 1.0));
        }
    }
    Image::from_samples(width, height, samples).expect("generator stays in range")
}

/// The default 768x512 test scene.
pub fn default_photo() -> Image {
    synthetic_photo(768, 512, 0x5ed1c)
}

/// Smooth horizontal-vertical gradient, the friendliest codec input.
pub fn gradient(width: u32, height: u32) -> Image {
    let mut samples = Vec::with_capacity((width * height * 3) as usize);
    for y in 0..height {
        for x in 0..width {
            samples.push(x as f32 / width.max(1) as f32);
            samples.push(y as f32 / height.max(1) as f32);
            samples.push(0.5);
        }
    }
    Image::from_samples(width, height, samples).expect("in range")
}

/// Per-pixel uniform noise; the adversarial codec input.
pub fn noise(width: u32, height: u32, seed: u64) -> Image {
    let mut samples = Vec::with_capacity((width * height * 3) as usize);
    for y in 0..height {
        for x in 0..width {
            samples.push(noise01(x, y, seed ^ 0x01));
            samples.push(noise01(x, y, seed ^ 0x02));
            samples.push(noise01(x, y, seed ^ 0x03));
        }
    }
    Image::from_samples(width, height, samples).expect("in range")
}
