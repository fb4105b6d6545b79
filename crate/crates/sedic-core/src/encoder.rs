//! End-to-end encoding: rate policy, textualization, hallucination
//! filtering, mask generation, budget fitting, and container assembly.
//!
//! The bit budget splits in one direction: text and masks are
//! incompressible commitments once the policy fixes their word caps, and
//! whatever remains of the target goes to the reference image via a
//! quality search. Object names never enter the container; they exist
//! only to ground detection and to label the encoder report.

use serde::Serialize;

use crate::container::{
    self, bpp, ContainerError, ObjectEntry, RefPayload, SemanticContainer, HEADER_LEN,
    SECTION_OVERHEAD,
};
use crate::imageio::Image;
use crate::mask_codec::{mask_encode, MaskCodecError, SemanticMask};
use crate::model_clients::{
    truncate_words, BackendError, Backends, CaptionBudgets, CaptionResult, Detector,
    ObjectDescription, Segmenter,
};
use crate::ref_codec::{self, RefCodecError, CODEC_ID_TINY};
use crate::text_codec::text_encode;

/// Word-budget ceiling for detail and overall descriptions.
pub const WORD_CAP: usize = 50;
/// Object names are capped at three words.
pub const NAME_WORD_CAP: usize = 3;
/// Default open-set detection confidence threshold.
pub const DEFAULT_DETECTION_THRESHOLD: f64 = 0.35;

#[derive(Debug, thiserror::Error)]
pub enum EncodeError {
    #[error("target bitrate must be positive, got {target_bpp}")]
    NonPositiveTarget { target_bpp: f64 },
    #[error(
        "budget infeasible: committed sections need {committed_bits} bits of the \
         {target_bits}-bit target; smallest feasible target is about {suggested_min_bpp:.6} bpp"
    )]
    BudgetInfeasible {
        committed_bits: u64,
        target_bits: u64,
        suggested_min_bpp: f64,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Ref(#[from] RefCodecError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Mask(#[from] MaskCodecError),
}

/// Object count and word budgets chosen from a target bitrate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePolicy {
    pub j_objects: usize,
    pub l_d: usize,
    pub l_all: usize,
    pub l_n: usize,
    pub target_bpp: f64,
}

/// Piecewise policy over the target bitrate:
///
/// | target bpp        | J | l_d | l_all |
/// |-------------------|---|-----|-------|
/// | below 0.02        | 0 |  0  |  20   |
/// | 0.02 ..= 0.035    | 1 | 20  |  30   |
/// | above 0.035       | 3 | 30  |  50   |
///
/// Targets above 0.05 clamp to the last row. Word caps never exceed 50
/// and names stay capped at 3 words.
pub fn rate_control(target_bpp: f64) -> Result<RatePolicy, EncodeError> {
    if !(target_bpp > 0.0) {
        return Err(EncodeError::NonPositiveTarget { target_bpp });
    }
    let (j_objects, l_d, l_all) = if target_bpp < 0.02 {
        (0, 0, 20)
    } else if target_bpp <= 0.035 {
        (1, 20, 30)
    } else {
        (3, 30, 50)
    };
    debug_assert!(l_d <= WORD_CAP && l_all <= WORD_CAP);
    Ok(RatePolicy {
        j_objects,
        l_d,
        l_all,
        l_n: NAME_WORD_CAP,
        target_bpp,
    })
}

#[derive(Debug, Clone)]
pub struct EncodeOptions {
    pub seed: u64,
    pub detection_threshold: f64,
    /// Extra caption candidates requested beyond J, so filtering and
    /// empty-mask skips still leave enough objects.
    pub candidate_extra: usize,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            detection_threshold: DEFAULT_DETECTION_THRESHOLD,
            candidate_extra: 2,
        }
    }
}

/// Byte/bit attribution for one container component.
#[derive(Debug, Clone, Serialize)]
pub struct ComponentBits {
    pub label: String,
    pub bits: u64,
}

/// Everything an operator needs to know about one encode run. Component
/// bits sum exactly to eight times the container byte length.
#[derive(Debug, Clone, Serialize)]
pub struct EncodeReport {
    pub width: u32,
    pub height: u32,
    pub target_bpp: f64,
    pub achieved_bpp: f64,
    pub container_bytes: u64,
    pub quality: u8,
    pub policy: RatePolicy,
    pub components: Vec<ComponentBits>,
    pub dropped_hallucinations: Vec<String>,
    pub skipped_empty_masks: Vec<String>,
}

/// Keep exactly the objects the detector can find at or above the
/// confidence threshold, preserving order; returns the dropped names.
pub fn filter_hallucinations(
    objects: &[ObjectDescription],
    image: &Image,
    detector: &dyn Detector,
    threshold: f64,
) -> Result<(Vec<ObjectDescription>, Vec<String>), EncodeError> {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for obj in objects {
        let boxes = detector.detect(image, &obj.name)?;
        if boxes.iter().any(|b| b.confidence >= threshold) {
            kept.push(obj.clone());
        } else {
            tracing::warn!(target: "sedic::encode", name = %obj.name, "hallucinated object removed");
            dropped.push(obj.name.clone());
        }
    }
    Ok((kept, dropped))
}

/// An object ready for container assembly. The name stays encoder-side.
#[derive(Debug, Clone)]
pub struct BuiltObject {
    pub name: String,
    pub detail: String,
    pub mask: SemanticMask,
}

/// Ground each surviving caption object with detect -> segment, order by
/// descending mask area (big objects first, so later stages refine over
/// them), and keep at most J. Candidates whose masks come back empty are
/// skipped and reported, promoting the next candidate.
pub fn build_objects(
    image: &Image,
    policy: &RatePolicy,
    caption: &CaptionResult,
    detector: &dyn Detector,
    segmenter: &dyn Segmenter,
    threshold: f64,
) -> Result<(Vec<BuiltObject>, Vec<String>), EncodeError> {
    let mut candidates = Vec::new();
    let mut skipped = Vec::new();
    for obj in &caption.objects {
        let boxes = detector.detect(image, &obj.name)?;
        let Some(best) = boxes.iter().find(|b| b.confidence >= threshold) else {
            skipped.push(obj.name.clone());
            continue;
        };
        match segmenter.segment(image, best) {
            Ok(mask) if !mask.is_empty() => candidates.push(BuiltObject {
                name: obj.name.clone(),
                detail: truncate_words(&obj.detail, policy.l_d),
                mask,
            }),
            Ok(_) | Err(BackendError::EmptyMask) => {
                tracing::warn!(target: "sedic::encode", name = %obj.name, "empty mask; skipping object");
                skipped.push(obj.name.clone());
            }
            Err(e) => return Err(e.into()),
        }
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(candidates[i].mask.area()), i));
    order.truncate(policy.j_objects);
    let mut picked: Vec<Option<BuiltObject>> = candidates.into_iter().map(Some).collect();
    let objects = order
        .into_iter()
        .map(|i| picked[i].take().expect("each index picked once"))
        .collect();
    Ok((objects, skipped))
}

/// Encode an image against a target bitrate with the given backends.
/// Deterministic for mock backends and a fixed seed.
pub fn encode(
    image: &Image,
    target_bpp: f64,
    backends: &Backends,
    options: &EncodeOptions,
) -> Result<(Vec<u8>, EncodeReport), EncodeError> {
    let policy = rate_control(target_bpp)?;
    let (width, height) = (image.width(), image.height());
    let pixels = u64::from(width) * u64::from(height);

    let budgets = CaptionBudgets {
        max_objects: if policy.j_objects == 0 {
            0
        } else {
            policy.j_objects + options.candidate_extra
        },
        l_n: policy.l_n,
        l_d: policy.l_d,
        l_all: policy.l_all,
    };
    let caption = backends.captioner.caption(image, &budgets)?;

    let (surviving, dropped) = if caption.objects.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        filter_hallucinations(
            &caption.objects,
            image,
            backends.detector.as_ref(),
            options.detection_threshold,
        )?
    };
    let filtered_caption = CaptionResult {
        objects: surviving,
        overall: caption.overall,
    };
    let (built, skipped) = build_objects(
        image,
        &policy,
        &filtered_caption,
        backends.detector.as_ref(),
        backends.segmenter.as_ref(),
        options.detection_threshold,
    )?;

    let overall_blob = text_encode(filtered_caption.overall.as_bytes());
    let entries: Vec<(String, ObjectEntry)> = built
        .into_iter()
        .map(|obj| {
            let mask = mask_encode(&obj.mask)?;
            Ok((
                obj.name,
                ObjectEntry {
                    detail: text_encode(obj.detail.as_bytes()),
                    mask,
                },
            ))
        })
        .collect::<Result<_, EncodeError>>()?;

    // Bits already spoken for: header, section framing, the reference
    // codec id, and every text/mask blob. The remainder buys reference
    // image quality.
    let n_sections = 2 + entries.len(); // reference + overall text + objects
    let mut committed = (HEADER_LEN + SECTION_OVERHEAD * n_sections + 1) as u64;
    committed += overall_blob.wire_len() as u64;
    for (_, e) in &entries {
        committed += e.payload_len() as u64;
    }
    let committed_bits = committed * 8;

    let target_bits = (target_bpp * pixels as f64).floor() as u64;
    let ref_budget = target_bits.saturating_sub(committed_bits);
    let quality = match ref_codec::fit_quality(image, ref_budget) {
        Ok(q) => q,
        Err(RefCodecError::BudgetInfeasible { min_bits, .. }) => {
            return Err(EncodeError::BudgetInfeasible {
                committed_bits,
                target_bits,
                suggested_min_bpp: (committed_bits + min_bits) as f64 / pixels as f64,
            });
        }
        Err(e) => return Err(e.into()),
    };
    let ref_payload = ref_codec::ref_encode(image, quality)?;

    let mut components = vec![
        ComponentBits {
            label: "header_and_framing".into(),
            bits: ((HEADER_LEN + SECTION_OVERHEAD * n_sections) * 8) as u64,
        },
        ComponentBits {
            label: "reference".into(),
            bits: ((1 + ref_payload.len()) * 8) as u64,
        },
        ComponentBits {
            label: "overall_text".into(),
            bits: (overall_blob.wire_len() * 8) as u64,
        },
    ];
    for (i, (_, e)) in entries.iter().enumerate() {
        components.push(ComponentBits {
            label: format!("object[{i}].text"),
            bits: (e.detail.wire_len() * 8) as u64,
        });
        components.push(ComponentBits {
            label: format!("object[{i}].mask"),
            bits: (e.mask.wire_len() * 8) as u64,
        });
    }

    let container = SemanticContainer::new(
        width,
        height,
        Some(RefPayload {
            codec_id: CODEC_ID_TINY,
            bytes: ref_payload,
        }),
        Some(overall_blob),
        entries.into_iter().map(|(_, e)| e).collect(),
    );
    let bytes = container::serialize(&container)?;
    let achieved_bpp = bpp(bytes.len() as u64, width, height)?;

    debug_assert_eq!(
        components.iter().map(|c| c.bits).sum::<u64>(),
        bytes.len() as u64 * 8,
        "component bits must cover the container exactly"
    );

    let report = EncodeReport {
        width,
        height,
        target_bpp,
        achieved_bpp,
        container_bytes: bytes.len() as u64,
        quality: quality.get(),
        policy,
        components,
        dropped_hallucinations: dropped,
        skipped_empty_masks: skipped,
    };
    Ok((bytes, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model_clients::mock::{DetectPolicy, MockCaptioner, MockDetector, MockSegmenter};
    use crate::model_clients::{word_count, DetectionBox};

    fn mock_backends(seed: u64) -> Backends {
        Backends::mock(seed)
    }

    #[test]
    fn rate_policy_matches_published_rows() {
        let low = rate_control(0.025).unwrap();
        assert_eq!((low.j_objects, low.l_d, low.l_all), (1, 20, 30));
        let high = rate_control(0.045).unwrap();
        assert_eq!((high.j_objects, high.l_d, high.l_all), (3, 30, 50));
        let floor = rate_control(0.01).unwrap();
        assert_eq!((floor.j_objects, floor.l_d, floor.l_all), (0, 0, 20));
        // Boundaries and the clamp row.
        assert_eq!(rate_control(0.02).unwrap().j_objects, 1);
        assert_eq!(rate_control(0.035).unwrap().j_objects, 1);
        assert_eq!(rate_control(0.0351).unwrap().j_objects, 3);
        let clamped = rate_control(0.2).unwrap();
        assert_eq!((clamped.j_objects, clamped.l_d, clamped.l_all), (3, 30, 50));
        assert!(matches!(
            rate_control(0.0),
            Err(EncodeError::NonPositiveTarget { .. })
        ));
        assert!(matches!(
            rate_control(-1.0),
            Err(EncodeError::NonPositiveTarget { .. })
        ));
        assert!(matches!(
            rate_control(f64::NAN),
            Err(EncodeError::NonPositiveTarget { .. })
        ));
    }

    #[test]
    fn policy_monotone_in_target() {
        let targets = [0.001, 0.01, 0.02, 0.03, 0.035, 0.04, 0.05, 0.1];
        let mut prev = rate_control(targets[0]).unwrap();
        for &t in &targets[1..] {
            let p = rate_control(t).unwrap();
            assert!(p.j_objects >= prev.j_objects);
            assert!(p.l_d >= prev.l_d);
            assert!(p.l_all >= prev.l_all);
            prev = p;
        }
    }

    #[test]
    fn hallucination_filter_drops_rejected_names() {
        let img = fixtures::synthetic_photo(64, 64, 1);
        let detector = MockDetector::new(1).with_rejects(["unicorn"]);
        let objects = vec![
            ObjectDescription {
                name: "boat".into(),
                detail: "weathered hull".into(),
            },
            ObjectDescription {
                name: "unicorn".into(),
                detail: "glittering horn".into(),
            },
        ];
        let (kept, dropped) =
            filter_hallucinations(&objects, &img, &detector, 0.35).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].name, "boat");
        assert_eq!(dropped, vec!["unicorn".to_string()]);

        let (kept, dropped) = filter_hallucinations(&[], &img, &detector, 0.35).unwrap();
        assert!(kept.is_empty() && dropped.is_empty());
    }

    #[test]
    fn build_objects_orders_by_area_and_truncates() {
        let img = fixtures::synthetic_photo(64, 64, 1);
        // Scripted boxes with known areas: half, quarter, full.
        let detector = MockDetector::new(1)
            .with_scripted(
                "half",
                vec![DetectionBox {
                    x0: 0.0,
                    y0: 0.0,
                    x1: 1.0,
                    y1: 0.5,
                    confidence: 0.9,
                }],
            )
            .with_scripted(
                "quarter",
                vec![DetectionBox {
                    x0: 0.0,
                    y0: 0.0,
                    x1: 0.5,
                    y1: 0.5,
                    confidence: 0.9,
                }],
            )
            .with_scripted("full", vec![DetectionBox::full_image(0.9)]);
        let caption = CaptionResult {
            objects: ["half", "quarter", "full"]
                .iter()
                .map(|n| ObjectDescription {
                    name: (*n).into(),
                    detail: "one two three four five six".into(),
                })
                .collect(),
            overall: "scene".into(),
        };
        let policy = RatePolicy {
            j_objects: 1,
            l_d: 4,
            l_all: 20,
            l_n: 3,
            target_bpp: 0.03,
        };
        let (objs, skipped) =
            build_objects(&img, &policy, &caption, &detector, &MockSegmenter, 0.35).unwrap();
        assert!(skipped.is_empty());
        assert_eq!(objs.len(), 1);
        assert_eq!(objs[0].name, "full", "largest mask wins the single slot");
        assert_eq!(word_count(&objs[0].detail), 4);

        let policy3 = RatePolicy {
            j_objects: 3,
            ..policy
        };
        let (objs, _) =
            build_objects(&img, &policy3, &caption, &detector, &MockSegmenter, 0.35).unwrap();
        let areas: Vec<u64> = objs.iter().map(|o| o.mask.area()).collect();
        assert!(areas.windows(2).all(|w| w[0] >= w[1]), "descending areas");
    }

    #[test]
    fn empty_mask_candidates_are_skipped_with_note() {
        let img = fixtures::synthetic_photo(64, 64, 1);
        let degenerate = DetectionBox {
            x0: 0.5,
            y0: 0.25,
            x1: 0.5,
            y1: 0.75,
            confidence: 0.9,
        };
        let detector = MockDetector::new(1)
            .with_scripted("ghost", vec![degenerate])
            .with_scripted("real", vec![DetectionBox::full_image(0.9)]);
        let caption = CaptionResult {
            objects: vec![
                ObjectDescription {
                    name: "ghost".into(),
                    detail: "nothing".into(),
                },
                ObjectDescription {
                    name: "real".into(),
                    detail: "something".into(),
                },
            ],
            overall: "scene".into(),
        };
        let policy = RatePolicy {
            j_objects: 2,
            l_d: 10,
            l_all: 20,
            l_n: 3,
            target_bpp: 0.05,
        };
        let (objs, skipped) =
            build_objects(&img, &policy, &caption, &detector, &MockSegmenter, 0.35).unwrap();
        assert_eq!(objs.len(), 1);
        assert_eq!(objs[0].name, "real");
        assert_eq!(skipped, vec!["ghost".to_string()]);
    }

    #[test]
    fn encode_produces_expected_sections_per_policy() {
        let img = fixtures::default_photo();
        let backends = mock_backends(7);
        let (bytes, report) = encode(&img, 0.045, &backends, &EncodeOptions::default()).unwrap();
        let container = container::parse(&bytes).unwrap();
        assert!(container.reference.is_some());
        assert!(container.overall_text.is_some());
        assert_eq!(container.objects.len(), 3);
        assert_eq!(report.policy.j_objects, 3);

        let (bytes, report) = encode(&img, 0.01, &backends, &EncodeOptions::default()).unwrap();
        let container = container::parse(&bytes).unwrap();
        assert!(container.objects.is_empty());
        assert!(container.reference.is_some() && container.overall_text.is_some());
        assert_eq!(report.policy.j_objects, 0);
    }

    #[test]
    fn absurd_target_is_infeasible() {
        let img = fixtures::default_photo();
        let backends = mock_backends(7);
        match encode(&img, 0.0001, &backends, &EncodeOptions::default()) {
            Err(EncodeError::BudgetInfeasible {
                suggested_min_bpp, ..
            }) => assert!(suggested_min_bpp > 0.0001),
            other => panic!("expected BudgetInfeasible, got {other:?}"),
        }
    }

    #[test]
    fn report_bits_sum_to_container_size() {
        let img = fixtures::default_photo();
        let backends = mock_backends(3);
        let (bytes, report) = encode(&img, 0.03, &backends, &EncodeOptions::default()).unwrap();
        let total: u64 = report.components.iter().map(|c| c.bits).sum();
        assert_eq!(total, bytes.len() as u64 * 8);
        assert_eq!(report.container_bytes, bytes.len() as u64);
        assert!((report.achieved_bpp - total as f64 / (768.0 * 512.0 * 8.0) * 8.0).abs() < 1e-12);
    }

    #[test]
    fn encode_is_deterministic_with_mocks() {
        let img = fixtures::default_photo();
        let a = encode(&img, 0.045, &mock_backends(11), &EncodeOptions::default()).unwrap();
        let b = encode(&img, 0.045, &mock_backends(11), &EncodeOptions::default()).unwrap();
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn sentinel_names_never_reach_the_container() {
        let img = fixtures::default_photo();
        let sentinel_a = "zxunicornqx";
        let sentinel_b = "qqgriffinzz";
        let captioner = MockCaptioner::new(
            vec![
                (sentinel_a.into(), "glittering horn above the waves".into()),
                (sentinel_b.into(), "broad wings folded against stone".into()),
            ],
            "a quiet cove under an amber sky".into(),
        );
        let backends = Backends {
            captioner: Box::new(captioner),
            detector: Box::new(MockDetector::new(5).with_rejects([sentinel_a])),
            segmenter: Box::new(MockSegmenter),
            denoiser: Box::new(crate::model_clients::mock::MockDenoiser::new(5)),
        };
        let (bytes, report) = encode(&img, 0.03, &backends, &EncodeOptions::default()).unwrap();
        assert_eq!(report.dropped_hallucinations, vec![sentinel_a.to_string()]);
        for sentinel in [sentinel_a, sentinel_b] {
            let needle = sentinel.as_bytes();
            let found = bytes.windows(needle.len()).any(|w| w == needle);
            assert!(!found, "container leaked object name {sentinel}");
        }
        let container = container::parse(&bytes).unwrap();
        assert_eq!(container.objects.len(), 1);
    }

    #[test]
    fn full_image_detector_policy_also_encodes() {
        let img = fixtures::default_photo();
        let backends = Backends {
            captioner: Box::new(MockCaptioner::default()),
            detector: Box::new(MockDetector::new(2).with_policy(DetectPolicy::FullImage)),
            segmenter: Box::new(MockSegmenter),
            denoiser: Box::new(crate::model_clients::mock::MockDenoiser::new(2)),
        };
        let (bytes, _) = encode(&img, 0.045, &backends, &EncodeOptions::default()).unwrap();
        let container = container::parse(&bytes).unwrap();
        assert_eq!(container.objects.len(), 3);
    }
}
