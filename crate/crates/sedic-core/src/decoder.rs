//! Multi-stage semantic decoding.
//!
//! Stages run object-by-object over the reference image. Each object
//! stage denoises a fresh latent under its detail-text embedding; while
//! the timestep is above the guidance threshold, an attention-energy
//! gradient step pulls the object's attention mass inside its mask, and
//! after every denoise step the latent outside the mask is replaced
//! bit-for-bit by the previous stage's trajectory at the same timestep.
//! A final stage denoises under the overall description with no guidance
//! or blending.
//!
//! Stage 0 has no previous trajectory; it blends against forward-noised
//! reference latents, which preserves the reference outside the first
//! object the way latent inpainting does.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::container::{ContainerError, SemanticContainer};
use crate::guidance::{
    attention_energy_grad_sum, attention_energy_sum, blend_latents, guided_update, GuidanceError,
    LatentGrid,
};
use crate::imageio::Image;
use crate::mask_codec::{downsample_mask, mask_decode, MaskCodecError, SemanticMask};
use crate::model_clients::{BackendError, Denoiser, TextEmbedding, LATENT_SCALE};
use crate::ref_codec::{CodecRegistry, RefCodecError};
use crate::text_codec::{text_decode, TextCodecError};

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error("mask resolution problem: {0}")]
    MaskResolution(String),
    #[error("container carries no reference and no text; nothing to decode")]
    EmptyContainer,
    #[error(transparent)]
    Ref(#[from] RefCodecError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Text(#[from] TextCodecError),
    #[error(transparent)]
    Mask(#[from] MaskCodecError),
}

/// Knobs for one decode session.
#[derive(Debug, Clone, Copy)]
pub struct DecodeConfig {
    /// Total denoising steps T per stage.
    pub steps: usize,
    /// Guidance threshold T': energy-gradient updates run only while
    /// t > T', so exactly T - T' guided steps happen per object stage.
    pub guidance_threshold: usize,
    /// Guidance strength applied to the raw energy gradient.
    pub eta: f64,
    pub seed: u64,
    /// Record stage images and per-step energies (cheap at desk scale).
    pub record_trace: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        let steps = 50;
        Self {
            steps,
            guidance_threshold: steps / 2,
            eta: 1.0,
            seed: 0,
            record_trace: true,
        }
    }
}

impl DecodeConfig {
    fn validate(&self) -> Result<(), DecodeError> {
        if self.steps == 0 || self.guidance_threshold > self.steps {
            return Err(DecodeError::MaskResolution(format!(
                "invalid config: steps {} threshold {}",
                self.steps, self.guidance_threshold
            )));
        }
        Ok(())
    }
}

/// Energy measured at a guided step.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StageEnergy {
    pub t: usize,
    pub energy: f64,
}

/// Observability record: one intermediate image per stage plus the
/// guided-step energies of each stage (the final stage logs none). When
/// tracing is on, each stage's full latent trajectory is kept too, which
/// is what makes the blending contract externally checkable.
#[derive(Debug, Clone)]
pub struct DecodeTrace {
    pub stage_images: Vec<Image>,
    pub stage_energies: Vec<Vec<StageEnergy>>,
    /// Per stage: latents indexed by timestep 0..=T. Empty when tracing
    /// is off.
    pub stage_trajectories: Vec<Vec<LatentGrid>>,
    pub elapsed_secs: f64,
}

/// One stage's working set: the live latent, the trajectory being
/// recorded for the next stage, the previous stage's trajectory, and
/// the stage conditioning.
pub struct DecodeState {
    pub stage: usize,
    pub latent: LatentGrid,
    /// z values of this stage indexed by timestep 0..=T; filled as the
    /// reverse loop walks down, with index T holding the initial noise.
    pub trajectory: Vec<Option<LatentGrid>>,
    /// Previous stage's full trajectory, indexed 0..=T.
    pub prev_trajectory: Vec<LatentGrid>,
    pub condition: LatentGrid,
    pub embedding: TextEmbedding,
}

fn stage_seed(seed: u64, stage: usize) -> u64 {
    // splitmix-style separation so stages never share noise.
    let mut x = seed ^ (stage as u64).wrapping_mul(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Standard-normal latent for a stage, sub-seeded by stage index.
fn sample_initial_latent(width: u32, height: u32, channels: usize, seed: u64) -> LatentGrid {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let values = (0..width as usize * height as usize * channels)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    LatentGrid::new(width, height, channels, values)
}

impl DecodeState {
    /// Set up stage `stage`: fresh seeded noise latent, condition from the
    /// current reconstruction, embedding from the stage text.
    pub fn begin_stage(
        stage: usize,
        config: &DecodeConfig,
        condition: LatentGrid,
        embedding: TextEmbedding,
        prev_trajectory: Vec<LatentGrid>,
    ) -> Self {
        let latent = sample_initial_latent(
            condition.width(),
            condition.height(),
            condition.channels(),
            stage_seed(config.seed, stage),
        );
        let mut trajectory = vec![None; config.steps + 1];
        trajectory[config.steps] = Some(latent.clone());
        Self {
            stage,
            latent,
            trajectory,
            prev_trajectory,
            condition,
            embedding,
        }
    }

    /// The completed trajectory, available once a stage has run.
    pub fn into_trajectory(self) -> Vec<LatentGrid> {
        self.trajectory
            .into_iter()
            .map(|z| z.expect("stage ran to completion"))
            .collect()
    }
}

/// One object stage: guided denoising with per-step mask blending.
/// Outside the mask, every recorded timestep equals the previous stage's
/// trajectory exactly.
pub fn run_object_stage(
    mut state: DecodeState,
    mask_latent: &SemanticMask,
    config: &DecodeConfig,
    denoiser: &dyn Denoiser,
) -> Result<(DecodeState, Vec<StageEnergy>), DecodeError> {
    if mask_latent.width() != state.latent.width() || mask_latent.height() != state.latent.height()
    {
        return Err(DecodeError::MaskResolution(format!(
            "latent mask {}x{} vs latent {}x{}",
            mask_latent.width(),
            mask_latent.height(),
            state.latent.width(),
            state.latent.height()
        )));
    }
    let tokens: Vec<usize> = (0..state.embedding.tokens.len()).collect();
    let mut energies = Vec::with_capacity(config.steps - config.guidance_threshold);

    for t in (1..=config.steps).rev() {
        if t > config.guidance_threshold {
            let attention = denoiser.attention(&state.latent, &state.embedding)?;
            let energy = attention_energy_sum(&attention, mask_latent, &tokens)?;
            let grad_attention = attention_energy_grad_sum(&attention, mask_latent, &tokens)?;
            let grad_latent =
                denoiser.attention_vjp(&state.latent, &state.embedding, &grad_attention)?;
            state.latent = guided_update(&state.latent, &grad_latent, config.eta)?;
            energies.push(StageEnergy { t, energy });
        }
        let denoised = denoiser.denoise_step(&state.latent, t, &state.condition, &state.embedding)?;
        state.latent = blend_latents(&denoised, &state.prev_trajectory[t - 1], mask_latent)?;
        state.trajectory[t - 1] = Some(state.latent.clone());
    }
    Ok((state, energies))
}

/// The final stage: plain denoising under the overall description, no
/// guidance, no blending.
pub fn run_final_stage(
    mut state: DecodeState,
    config: &DecodeConfig,
    denoiser: &dyn Denoiser,
) -> Result<DecodeState, DecodeError> {
    for t in (1..=config.steps).rev() {
        state.latent =
            denoiser.denoise_step(&state.latent, t, &state.condition, &state.embedding)?;
        state.trajectory[t - 1] = Some(state.latent.clone());
    }
    Ok(state)
}

fn crop(image: &Image, width: u32, height: u32) -> Image {
    if image.width() == width && image.height() == height {
        return image.clone();
    }
    let mut samples = Vec::with_capacity((width * height * 3) as usize);
    for y in 0..height {
        for x in 0..width {
            samples.extend_from_slice(&image.pixel(x.min(image.width() - 1), y.min(image.height() - 1)));
        }
    }
    Image::from_samples(width, height, samples).expect("crop stays in range")
}

/// Decoded object entry: detail text plus its latent-resolution mask.
struct StagePlan {
    detail: String,
    mask_latent: SemanticMask,
}

/// Run the full multi-stage decode of a container. A J-object container
/// produces J+1 stages and J+1 intermediate images; deterministic for a
/// fixed (container, config, mock backend).
pub fn decode(
    container: &SemanticContainer,
    config: &DecodeConfig,
    denoiser: &dyn Denoiser,
    registry: &CodecRegistry,
) -> Result<(Image, DecodeTrace), DecodeError> {
    config.validate()?;
    let started = std::time::Instant::now();
    let width = container.header.width;
    let height = container.header.height;

    if container.reference.is_none()
        && container.overall_text.is_none()
        && container.objects.is_empty()
    {
        return Err(DecodeError::EmptyContainer);
    }

    // The reference reconstruction seeds everything; without one we fall
    // back to a mid-gray canvas, matching the no-reference ablations.
    let reference = match &container.reference {
        Some(r) => {
            let img = registry.decode(r.codec_id, &r.bytes)?;
            if img.width() != width || img.height() != height {
                return Err(DecodeError::Ref(RefCodecError::CorruptPayload(format!(
                    "reference decodes to {}x{}, container says {width}x{height}",
                    img.width(),
                    img.height()
                ))));
            }
            img
        }
        None => Image::constant(width, height, [0.5, 0.5, 0.5]),
    };

    // Object masks live at image resolution; Eq.-style blending needs
    // them at latent resolution, an exact factor-8 majority downsample.
    let mut plans = Vec::with_capacity(container.objects.len());
    if !container.objects.is_empty() && (width % LATENT_SCALE != 0 || height % LATENT_SCALE != 0) {
        return Err(DecodeError::MaskResolution(format!(
            "object decoding needs dimensions divisible by {LATENT_SCALE}, got {width}x{height}"
        )));
    }
    for (i, entry) in container.objects.iter().enumerate() {
        let detail_bytes = text_decode(&entry.detail)?;
        let detail = String::from_utf8_lossy(&detail_bytes).into_owned();
        let mask = mask_decode(&entry.mask)?;
        if mask.width() != width || mask.height() != height {
            return Err(DecodeError::MaskResolution(format!(
                "object {i} mask is {}x{}, image is {width}x{height}",
                mask.width(),
                mask.height()
            )));
        }
        let mask_latent = downsample_mask(&mask, LATENT_SCALE)?;
        plans.push(StagePlan {
            detail,
            mask_latent,
        });
    }

    let overall = match &container.overall_text {
        Some(blob) => String::from_utf8_lossy(&text_decode(blob)?).into_owned(),
        None => String::new(),
    };

    let total_stages = plans.len() + 1;
    let mut stage_images = Vec::with_capacity(total_stages);
    let mut stage_energies = Vec::with_capacity(total_stages);
    let mut stage_trajectories = Vec::new();
    let mut current_image = reference;

    // Stage 0 blends against forward-noised reference latents.
    let reference_condition = denoiser.encode_condition(&current_image)?;
    let mut prev_trajectory: Vec<LatentGrid> = (0..=config.steps)
        .map(|t| denoiser.noised_reference(&reference_condition, t, config.seed))
        .collect::<Result<_, _>>()?;

    for (stage, plan) in plans.iter().enumerate() {
        let condition = denoiser.encode_condition(&current_image)?;
        let embedding = denoiser.text_embed(&plan.detail)?;
        let state =
            DecodeState::begin_stage(stage, config, condition, embedding, prev_trajectory);
        let (state, energies) = run_object_stage(state, &plan.mask_latent, config, denoiser)?;
        current_image = crop(&denoiser.decode(&state.latent)?, width, height);
        if config.record_trace {
            stage_images.push(current_image.clone());
        }
        stage_energies.push(energies);
        prev_trajectory = state.into_trajectory();
        if config.record_trace {
            stage_trajectories.push(prev_trajectory.clone());
        }
    }

    // Final stage: the overall description, no guidance branch at all.
    let condition = denoiser.encode_condition(&current_image)?;
    let embedding = denoiser.text_embed(&overall)?;
    let state = DecodeState::begin_stage(
        total_stages - 1,
        config,
        condition,
        embedding,
        prev_trajectory,
    );
    let state = run_final_stage(state, config, denoiser)?;
    let final_image = crop(&denoiser.decode(&state.latent)?, width, height);
    if config.record_trace {
        stage_images.push(final_image.clone());
        stage_trajectories.push(state.into_trajectory());
    }
    stage_energies.push(Vec::new());

    Ok((
        final_image,
        DecodeTrace {
            stage_images,
            stage_energies,
            stage_trajectories,
            elapsed_secs: started.elapsed().as_secs_f64(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::container::{ObjectEntry, RefPayload, SemanticContainer};
    use crate::encoder::{encode, EncodeOptions};
    use crate::fixtures;
    use crate::mask_codec::mask_encode;
    use crate::model_clients::mock::MockDenoiser;
    use crate::model_clients::Backends;
    use crate::ref_codec::{ref_encode, QualityParam};
    use crate::text_codec::text_encode;

    fn test_config(steps: usize) -> DecodeConfig {
        DecodeConfig {
            steps,
            guidance_threshold: steps / 2,
            eta: 1.0,
            seed: 42,
            record_trace: true,
        }
    }

    fn container_with_objects(image: &Image, masks: Vec<SemanticMask>) -> SemanticContainer {
        let payload = ref_encode(image, QualityParam::coarsest()).unwrap();
        let objects = masks
            .into_iter()
            .enumerate()
            .map(|(i, m)| ObjectEntry {
                detail: text_encode(format!("object {i} with worn texture").as_bytes()),
                mask: mask_encode(&m).unwrap(),
            })
            .collect();
        SemanticContainer::new(
            image.width(),
            image.height(),
            Some(RefPayload {
                codec_id: 0,
                bytes: payload,
            }),
            Some(text_encode(b"a small synthetic scene")),
            objects,
        )
    }

    #[test]
    fn zero_object_container_runs_one_stage_without_guidance() {
        let img = fixtures::synthetic_photo(64, 64, 1);
        let container = container_with_objects(&img, vec![]);
        let denoiser = MockDenoiser::new(1);
        let (out, trace) =
            decode(&container, &test_config(4), &denoiser, &CodecRegistry::builtin()).unwrap();
        assert_eq!((out.width(), out.height()), (64, 64));
        assert_eq!(trace.stage_images.len(), 1);
        assert_eq!(trace.stage_energies.len(), 1);
        assert!(trace.stage_energies[0].is_empty(), "no guidance entries");
    }

    #[test]
    fn guided_step_count_is_t_minus_threshold() {
        let img = fixtures::synthetic_photo(64, 64, 2);
        let mask = SemanticMask::from_rect(64, 64, 8, 8, 40, 40);
        let container = container_with_objects(&img, vec![mask]);
        let denoiser = MockDenoiser::new(3);
        let config = DecodeConfig {
            steps: 8,
            guidance_threshold: 4,
            ..test_config(8)
        };
        let (_, trace) = decode(&container, &config, &denoiser, &CodecRegistry::builtin()).unwrap();
        assert_eq!(trace.stage_energies.len(), 2);
        let ts: Vec<usize> = trace.stage_energies[0].iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![8, 7, 6, 5], "guided exactly while t > T'");
    }

    #[test]
    fn stage_count_is_objects_plus_one() {
        let img = fixtures::synthetic_photo(64, 64, 3);
        let masks = vec![
            SemanticMask::from_rect(64, 64, 0, 0, 64, 32),
            SemanticMask::from_rect(64, 64, 0, 32, 64, 64),
        ];
        let container = container_with_objects(&img, masks);
        let denoiser = MockDenoiser::new(5);
        let (_, trace) =
            decode(&container, &test_config(4), &denoiser, &CodecRegistry::builtin()).unwrap();
        assert_eq!(trace.stage_images.len(), 3);
    }

    #[test]
    fn outside_mask_latents_match_previous_trajectory_exactly() {
        let img = fixtures::synthetic_photo(64, 64, 4);
        let denoiser = MockDenoiser::new(9);
        let config = test_config(6);

        let reference_condition = denoiser.encode_condition(&img).unwrap();
        let prev: Vec<LatentGrid> = (0..=config.steps)
            .map(|t| denoiser.noised_reference(&reference_condition, t, config.seed).unwrap())
            .collect();

        let mask_latent = SemanticMask::from_rect(8, 8, 2, 2, 6, 6);
        let embedding = denoiser.text_embed("worn red paint").unwrap();
        let state = DecodeState::begin_stage(
            0,
            &config,
            reference_condition,
            embedding,
            prev.clone(),
        );
        let (state, _) = run_object_stage(state, &mask_latent, &config, &denoiser).unwrap();
        let traj = state.into_trajectory();

        for t in 0..config.steps {
            for m in 0..64usize {
                if !mask_latent.bits()[m] {
                    for c in 0..4 {
                        assert_eq!(
                            traj[t].get(m, c).to_bits(),
                            prev[t].get(m, c).to_bits(),
                            "outside-mask latent must be bit-equal at t={t}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn all_zero_mask_reduces_stage_to_previous_trajectory() {
        let img = fixtures::synthetic_photo(64, 64, 4);
        let denoiser = MockDenoiser::new(7);
        let config = test_config(5);
        let cond = denoiser.encode_condition(&img).unwrap();
        let prev: Vec<LatentGrid> = (0..=config.steps)
            .map(|t| denoiser.noised_reference(&cond, t, config.seed).unwrap())
            .collect();
        let embedding = denoiser.text_embed("anything").unwrap();
        let state = DecodeState::begin_stage(0, &config, cond, embedding, prev.clone());
        let mask = SemanticMask::filled(8, 8, false);
        let (state, _) = run_object_stage(state, &mask, &config, &denoiser).unwrap();
        assert_eq!(state.latent, prev[0], "M=0 forces the previous trajectory");
    }

    #[test]
    fn final_stage_runs_exactly_t_denoise_steps() {
        let img = fixtures::synthetic_photo(64, 64, 4);
        let denoiser = MockDenoiser::new(7);
        let config = DecodeConfig {
            steps: 1,
            guidance_threshold: 0,
            ..test_config(1)
        };
        let cond = denoiser.encode_condition(&img).unwrap();
        let emb = denoiser.text_embed("whole scene").unwrap();
        let prev = vec![cond.clone(), cond.clone()];
        let state = DecodeState::begin_stage(0, &config, cond.clone(), emb.clone(), prev);
        let before = state.latent.clone();
        let state = run_final_stage(state, &config, &denoiser).unwrap();
        let expected = denoiser.denoise_step(&before, 1, &cond, &emb).unwrap();
        assert_eq!(state.latent, expected);
    }

    #[test]
    fn decode_is_deterministic() {
        let img = fixtures::synthetic_photo(64, 64, 8);
        let mask = SemanticMask::from_rect(64, 64, 8, 16, 56, 48);
        let container = container_with_objects(&img, vec![mask]);
        let denoiser = MockDenoiser::new(13);
        let a = decode(&container, &test_config(6), &denoiser, &CodecRegistry::builtin()).unwrap();
        let b = decode(&container, &test_config(6), &denoiser, &CodecRegistry::builtin()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.stage_images, b.1.stage_images);
    }

    #[test]
    fn empty_container_rejected() {
        let container = SemanticContainer::new(64, 64, None, None, vec![]);
        let denoiser = MockDenoiser::new(1);
        assert!(matches!(
            decode(&container, &test_config(4), &denoiser, &CodecRegistry::builtin()),
            Err(DecodeError::EmptyContainer)
        ));
    }

    #[test]
    fn missing_reference_decodes_from_gray_canvas() {
        let container = SemanticContainer::new(
            64,
            64,
            None,
            Some(text_encode(b"just words, no pixels")),
            vec![],
        );
        let denoiser = MockDenoiser::new(1);
        let (out, _) =
            decode(&container, &test_config(4), &denoiser, &CodecRegistry::builtin()).unwrap();
        assert_eq!((out.width(), out.height()), (64, 64));
    }

    #[test]
    fn end_to_end_mock_roundtrip() {
        let img = fixtures::default_photo();
        let backends = Backends::mock(21);
        let (bytes, _) = encode(&img, 0.045, &backends, &EncodeOptions::default()).unwrap();
        let container = crate::container::parse(&bytes).unwrap();
        let config = DecodeConfig {
            steps: 6,
            guidance_threshold: 3,
            eta: 1.0,
            seed: 21,
            record_trace: true,
        };
        let (out, trace) = decode(
            &container,
            &config,
            backends.denoiser.as_ref(),
            &CodecRegistry::builtin(),
        )
        .unwrap();
        assert_eq!((out.width(), out.height()), (768, 512));
        assert_eq!(trace.stage_images.len(), 4, "three objects plus final");
    }
}
