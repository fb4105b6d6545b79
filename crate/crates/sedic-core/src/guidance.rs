//! Attention-guidance math for masked object restoration.
//!
//! The energy of a token's attention map against a mask is the squared
//! deficit of attention mass inside the mask:
//!
//! ```text
//! E(A, M, k) = (1 - sum_{m in M} A[m,k] / sum_m A[m,k])^2
//! ```
//!
//! Gradients are closed-form (the chain through the attention map is
//! tiny), and latents step as `z - eta * grad`. Latent blending composites
//! the current stage inside the mask over the previous stage outside it.
//! Everything here is f64 so finite-difference verification has headroom.

use thiserror::Error;

use crate::mask_codec::SemanticMask;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GuidanceError {
    #[error("attention mass for token {token} is zero")]
    ZeroAttentionMass { token: usize },
    #[error("dimension mismatch: {detail}")]
    DimMismatch { detail: String },
}

/// Cross-attention map: `spatial` locations by `tokens` tokens,
/// row-major `[m, k]`, entries nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    spatial: usize,
    tokens: usize,
    values: Vec<f64>,
}

impl AttentionMap {
    pub fn new(spatial: usize, tokens: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), spatial * tokens, "attention shape mismatch");
        debug_assert!(values.iter().all(|v| *v >= 0.0 && v.is_finite()));
        Self {
            spatial,
            tokens,
            values,
        }
    }

    pub fn zeros(spatial: usize, tokens: usize) -> Self {
        Self::new(spatial, tokens, vec![0.0; spatial * tokens])
    }

    pub fn spatial(&self) -> usize {
        self.spatial
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn get(&self, m: usize, k: usize) -> f64 {
        self.values[m * self.tokens + k]
    }

    pub fn set(&mut self, m: usize, k: usize, v: f64) {
        self.values[m * self.tokens + k] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Latent feature grid: `width x height` locations, `channels` channels,
/// interleaved per location.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    width: u32,
    height: u32,
    channels: usize,
    values: Vec<f64>,
}

impl LatentGrid {
    pub fn new(width: u32, height: u32, channels: usize, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            width as usize * height as usize * channels,
            "latent shape mismatch"
        );
        Self {
            width,
            height,
            channels,
            values,
        }
    }

    pub fn zeros(width: u32, height: u32, channels: usize) -> Self {
        Self::new(
            width,
            height,
            channels,
            vec![0.0; width as usize * height as usize * channels],
        )
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of spatial locations.
    pub fn spatial(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, m: usize, c: usize) -> f64 {
        self.values[m * self.channels + c]
    }

    pub fn set(&mut self, m: usize, c: usize, v: f64) {
        self.values[m * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &LatentGrid) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels == other.channels
    }

    /// Euclidean distance to another grid of the same shape.
    pub fn l2_distance(&self, other: &LatentGrid) -> f64 {
        assert!(self.same_shape(other));
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

fn check_mask_shape(map_spatial: usize, mask: &SemanticMask) -> Result<(), GuidanceError> {
    let mask_area = mask.width() as usize * mask.height() as usize;
    if mask_area != map_spatial {
        return Err(GuidanceError::DimMismatch {
            detail: format!(
                "mask covers {mask_area} locations but the map has {map_spatial}"
            ),
        });
    }
    Ok(())
}

fn masses(map: &AttentionMap, mask: &SemanticMask, token: usize) -> Result<(f64, f64), GuidanceError> {
    if token >= map.tokens {
        return Err(GuidanceError::DimMismatch {
            detail: format!("token {token} out of range ({} tokens)", map.tokens),
        });
    }
    check_mask_shape(map.spatial, mask)?;
    let mut inside = 0.0;
    let mut total = 0.0;
    for m in 0..map.spatial {
        let a = map.get(m, token);
        total += a;
        if mask.bits()[m] {
            inside += a;
        }
    }
    if total <= 0.0 {
        return Err(GuidanceError::ZeroAttentionMass { token });
    }
    Ok((inside, total))
}

/// Squared deficit of token attention mass inside the mask; 0 when all
/// mass lies inside, approaching 1 as mass leaves the mask.
pub fn attention_energy(
    map: &AttentionMap,
    mask: &SemanticMask,
    token: usize,
) -> Result<f64, GuidanceError> {
    let (inside, total) = masses(map, mask, token)?;
    let deficit = 1.0 - inside / total;
    Ok(deficit * deficit)
}

/// Analytic `dE/dA`, nonzero only in the given token's column:
///
/// ```text
/// dE/dA[m,k] = -2 (1 - r) (1[m in M] * total - inside) / total^2
/// ```
///
/// with `r = inside / total`. Matches central finite differences to
/// better than 1e-5 relative error.
pub fn attention_energy_grad(
    map: &AttentionMap,
    mask: &SemanticMask,
    token: usize,
) -> Result<AttentionMap, GuidanceError> {
    let (inside, total) = masses(map, mask, token)?;
    let r = inside / total;
    let mut grad = AttentionMap::zeros(map.spatial, map.tokens);
    let scale = -2.0 * (1.0 - r) / (total * total);
    for m in 0..map.spatial {
        let indicator = if mask.bits()[m] { total } else { 0.0 };
        grad.set(m, token, scale * (indicator - inside));
    }
    Ok(grad)
}

/// Sum of per-token energies for a multi-token description.
pub fn attention_energy_sum(
    map: &AttentionMap,
    mask: &SemanticMask,
    tokens: &[usize],
) -> Result<f64, GuidanceError> {
    tokens
        .iter()
        .try_fold(0.0, |acc, &k| Ok(acc + attention_energy(map, mask, k)?))
}

/// Gradient of [`attention_energy_sum`]; per-token columns accumulate.
pub fn attention_energy_grad_sum(
    map: &AttentionMap,
    mask: &SemanticMask,
    tokens: &[usize],
) -> Result<AttentionMap, GuidanceError> {
    let mut acc = AttentionMap::zeros(map.spatial, map.tokens);
    for &k in tokens {
        let g = attention_energy_grad(map, mask, k)?;
        for (a, b) in acc.values.iter_mut().zip(g.values()) {
            *a += b;
        }
    }
    Ok(acc)
}

/// One guidance step: `z - eta * grad_z`, elementwise.
pub fn guided_update(
    z: &LatentGrid,
    grad_z: &LatentGrid,
    eta: f64,
) -> Result<LatentGrid, GuidanceError> {
    if !z.same_shape(grad_z) {
        return Err(GuidanceError::DimMismatch {
            detail: "latent and gradient shapes differ".into(),
        });
    }
    let values = z
        .values
        .iter()
        .zip(&grad_z.values)
        .map(|(v, g)| v - eta * g)
        .collect();
    Ok(LatentGrid::new(z.width, z.height, z.channels, values))
}

/// Masked composite at matching timesteps: inside the mask the output is
/// exactly `z_cur`, outside exactly `z_prev`; the mask broadcasts across
/// channels.
pub fn blend_latents(
    z_cur: &LatentGrid,
    z_prev: &LatentGrid,
    mask: &SemanticMask,
) -> Result<LatentGrid, GuidanceError> {
    if !z_cur.same_shape(z_prev) {
        return Err(GuidanceError::DimMismatch {
            detail: "latent shapes differ".into(),
        });
    }
    if mask.width() != z_cur.width || mask.height() != z_cur.height {
        return Err(GuidanceError::DimMismatch {
            detail: format!(
                "mask {}x{} does not match latent {}x{}",
                mask.width(),
                mask.height(),
                z_cur.width,
                z_cur.height
            ),
        });
    }
    let mut out = z_prev.clone();
    for m in 0..z_cur.spatial() {
        if mask.bits()[m] {
            let base = m * z_cur.channels;
            out.values[base..base + z_cur.channels]
                .copy_from_slice(&z_cur.values[base..base + z_cur.channels]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn full_mask(spatial_w: u32, spatial_h: u32) -> SemanticMask {
        SemanticMask::filled(spatial_w, spatial_h, true)
    }

    #[test]
    fn energy_zero_when_mask_covers_everything() {
        let map = AttentionMap::new(4, 1, vec![0.4, 0.1, 0.3, 0.2]);
        let e = attention_energy(&map, &full_mask(2, 2), 0).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn uniform_attention_quarter_mask() {
        let map = AttentionMap::new(4, 1, vec![0.25; 4]);
        let mask = SemanticMask::new(2, 2, vec![true, false, false, false]);
        let e = attention_energy(&map, &mask, 0).unwrap();
        assert!((e - 0.5625).abs() < 1e-12);
    }

    #[test]
    fn energy_matches_direct_evaluation() {
        let map = AttentionMap::new(4, 1, vec![0.1, 0.2, 0.3, 0.4]);
        let mask = SemanticMask::new(4, 1, vec![false, false, false, true]);
        let e = attention_energy(&map, &mask, 0).unwrap();
        assert!((e - 0.36).abs() < 1e-12);
    }

    #[test]
    fn zero_mass_column_is_an_error() {
        let map = AttentionMap::new(2, 2, vec![0.5, 0.0, 0.5, 0.0]);
        let mask = full_mask(2, 1);
        assert_eq!(
            attention_energy(&map, &mask, 1),
            Err(GuidanceError::ZeroAttentionMass { token: 1 })
        );
    }

    #[test]
    fn scaling_a_column_leaves_energy_unchanged() {
        let map = AttentionMap::new(4, 1, vec![0.1, 0.2, 0.3, 0.4]);
        let scaled = AttentionMap::new(4, 1, vec![0.7, 1.4, 2.1, 2.8]);
        let mask = SemanticMask::new(4, 1, vec![true, false, true, false]);
        let a = attention_energy(&map, &mask, 0).unwrap();
        let b = attention_energy(&scaled, &mask, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradient_zero_at_minimum_and_other_tokens_untouched() {
        let map = AttentionMap::new(4, 2, vec![0.4, 0.9, 0.1, 0.1, 0.3, 0.5, 0.2, 0.5]);
        let grad = attention_energy_grad(&map, &full_mask(2, 2), 0).unwrap();
        for m in 0..4 {
            assert_eq!(grad.get(m, 0), 0.0, "E is at its minimum");
            assert_eq!(grad.get(m, 1), 0.0, "other tokens never touched");
        }
    }

    /// Central finite differences on the energy as a function of A.
    fn fd_grad(map: &AttentionMap, mask: &SemanticMask, token: usize) -> AttentionMap {
        let h = 1e-6;
        let mut grad = AttentionMap::zeros(map.spatial(), map.tokens());
        for m in 0..map.spatial() {
            for k in 0..map.tokens() {
                let mut plus = map.clone();
                plus.set(m, k, plus.get(m, k) + h);
                let mut minus = map.clone();
                minus.set(m, k, minus.get(m, k) - h);
                let ep = attention_energy(&plus, mask, token).unwrap();
                let em = attention_energy(&minus, mask, token).unwrap();
                grad.set(m, k, (ep - em) / (2.0 * h));
            }
        }
        grad
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..100 {
            let w = rng.random_range(2u32..8);
            let h = rng.random_range(2u32..8);
            let spatial = (w * h) as usize;
            let tokens = rng.random_range(1usize..8);
            let values: Vec<f64> = (0..spatial * tokens)
                .map(|_| rng.random_range(0.05f64..1.0))
                .collect();
            let map = AttentionMap::new(spatial, tokens, values);
            let bits: Vec<bool> = (0..spatial).map(|_| rng.random_bool(0.4)).collect();
            let mask = SemanticMask::new(w, h, bits);
            let token = rng.random_range(0..tokens);

            let analytic = attention_energy_grad(&map, &mask, token).unwrap();
            let numeric = fd_grad(&map, &mask, token);
            for (a, n) in analytic.values().iter().zip(numeric.values()) {
                let scale = a.abs().max(n.abs()).max(1e-8);
                assert!(
                    (a - n).abs() / scale <= 1e-5,
                    "analytic {a} vs numeric {n}"
                );
            }
        }
    }

    #[test]
    fn guided_update_arithmetic() {
        let z = LatentGrid::new(2, 1, 1, vec![1.0, 2.0]);
        let grad = LatentGrid::new(2, 1, 1, vec![0.5, -0.5]);
        let out = guided_update(&z, &grad, 1.0).unwrap();
        assert_eq!(out.values(), &[0.5, 2.5]);
        assert_eq!(guided_update(&z, &grad, 0.0).unwrap(), z);
        let zero_grad = LatentGrid::zeros(2, 1, 1);
        assert_eq!(guided_update(&z, &zero_grad, 3.0).unwrap(), z);
    }

    #[test]
    fn blend_selects_exactly_by_mask() {
        let cur = LatentGrid::new(2, 2, 2, (0..8).map(f64::from).collect());
        let prev = LatentGrid::new(2, 2, 2, (100..108).map(f64::from).collect());
        let all = blend_latents(&cur, &prev, &SemanticMask::filled(2, 2, true)).unwrap();
        assert_eq!(all, cur);
        let none = blend_latents(&cur, &prev, &SemanticMask::filled(2, 2, false)).unwrap();
        assert_eq!(none, prev);

        let mut bits = vec![false; 4];
        bits[2] = true;
        let one = blend_latents(&cur, &prev, &SemanticMask::new(2, 2, bits)).unwrap();
        for m in 0..4 {
            for c in 0..2 {
                let expect = if m == 2 { cur.get(m, c) } else { prev.get(m, c) };
                assert_eq!(one.get(m, c), expect);
            }
        }
        // blend(z, z, M) == z for any mask.
        let same = blend_latents(&cur, &cur, &SemanticMask::new(2, 2, vec![true, false, true, false])).unwrap();
        assert_eq!(same, cur);
    }

    #[test]
    fn shape_mismatches_rejected() {
        let z = LatentGrid::zeros(2, 2, 1);
        let g = LatentGrid::zeros(2, 1, 1);
        assert!(matches!(
            guided_update(&z, &g, 1.0),
            Err(GuidanceError::DimMismatch { .. })
        ));
        assert!(matches!(
            blend_latents(&z, &z, &SemanticMask::filled(3, 3, true)),
            Err(GuidanceError::DimMismatch { .. })
        ));
        let map = AttentionMap::new(4, 1, vec![0.25; 4]);
        assert!(matches!(
            attention_energy(&map, &SemanticMask::filled(3, 1, true), 0),
            Err(GuidanceError::DimMismatch { .. })
        ));
    }
}
