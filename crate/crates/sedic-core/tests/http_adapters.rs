//! HTTP adapters against in-process stub servers. The denoiser stub
//! delegates to the deterministic mock, so adapter results must agree
//! with direct mock calls through the JSON round trip.

use std::sync::Arc;

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;

use sedic_core::fixtures;
use sedic_core::imageio;
use sedic_core::mask_codec::{mask_encode, SemanticMask};
use sedic_core::model_clients::http::{
    AttentionRequest, AttentionResponse, AttentionWire, DecodeLatentRequest,
    DecodeLatentResponse, DenoiseStepRequest, DetectRequest, DetectResponse, EmbeddingResponse,
    EmbeddingWire, EncodeConditionRequest, HttpCaptioner, HttpDenoiser, HttpDetector,
    HttpSegmenter, LatentResponse, LatentWire, NoisedReferenceRequest, SegmentRequest,
    SegmentResponse, TextEmbedRequest,
};
use sedic_core::model_clients::mock::MockDenoiser;
use sedic_core::model_clients::{
    BackendConfig, BackendError, CaptionBudgets, Captioner, Denoiser, DetectionBox, Detector,
    Segmenter,
};

/// Serve a router on an ephemeral localhost port from a dedicated
/// runtime; keep the runtime alive for the test's duration.
fn serve(router: Router) -> (String, tokio::runtime::Runtime) {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .unwrap();
    let listener = rt
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .unwrap();
    let addr = listener.local_addr().unwrap();
    rt.spawn(async move {
        axum::serve(listener, router).await.unwrap();
    });
    (format!("http://{addr}"), rt)
}

fn cfg(endpoint: String) -> BackendConfig {
    BackendConfig {
        endpoint,
        auth_token_env: None,
        timeout_secs: 5.0,
        retries: 1,
    }
}

fn budgets() -> CaptionBudgets {
    CaptionBudgets {
        max_objects: 3,
        l_n: 3,
        l_d: 20,
        l_all: 30,
    }
}

#[test]
fn captioner_parses_strict_json_and_enforces_caps() {
    let content = serde_json::json!({
        "objects": [
            {"name": "red rowing boat with extra words", "detail":
                "a long detail that greatly exceeds the twenty word cap because it keeps \
                 adding adjectives and clauses well past any reasonable stopping point"},
        ],
        "overall": "a quiet harbor at dusk",
    })
    .to_string();
    let body = serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}]
    });
    let router = Router::new().route(
        "/v1/chat/completions",
        post(move || {
            let body = body.clone();
            async move { Json(body) }
        }),
    );
    let (base, _rt) = serve(router);
    let captioner =
        HttpCaptioner::new(cfg(format!("{base}/v1/chat/completions")), "test-model").unwrap();
    let img = fixtures::synthetic_photo(32, 32, 1);
    let result = captioner.caption(&img, &budgets()).unwrap();
    assert_eq!(result.objects.len(), 1);
    assert_eq!(result.objects[0].name, "red rowing boat");
    assert_eq!(
        result.objects[0].detail.split_whitespace().count(),
        20,
        "detail truncated to the cap"
    );
    assert_eq!(result.overall, "a quiet harbor at dusk");
}

#[test]
fn captioner_accepts_fenced_json_and_rejects_prose() {
    let fenced = format!(
        "```json\n{}\n```",
        serde_json::json!({"objects": [], "overall": "a plain scene"})
    );
    let make_body = move |content: String| {
        serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
    };
    let fenced_body = make_body(fenced);
    let prose_body = make_body("Sure! Here is a description: a nice image.".to_string());
    let router = Router::new()
        .route(
            "/fenced",
            post(move || {
                let b = fenced_body.clone();
                async move { Json(b) }
            }),
        )
        .route(
            "/prose",
            post(move || {
                let b = prose_body.clone();
                async move { Json(b) }
            }),
        );
    let (base, _rt) = serve(router);
    let img = fixtures::synthetic_photo(32, 32, 1);

    let ok = HttpCaptioner::new(cfg(format!("{base}/fenced")), "m").unwrap();
    assert_eq!(ok.caption(&img, &budgets()).unwrap().overall, "a plain scene");

    let bad = HttpCaptioner::new(cfg(format!("{base}/prose")), "m").unwrap();
    assert!(matches!(
        bad.caption(&img, &budgets()),
        Err(BackendError::MalformedResponse(_))
    ));
}

#[test]
fn server_errors_become_unavailable_after_retries() {
    let router = Router::new().route(
        "/v1/chat/completions",
        post(|| async {
            (
                axum::http::StatusCode::INTERNAL_SERVER_ERROR,
                "backend exploded",
            )
        }),
    );
    let (base, _rt) = serve(router);
    let captioner =
        HttpCaptioner::new(cfg(format!("{base}/v1/chat/completions")), "m").unwrap();
    let img = fixtures::synthetic_photo(32, 32, 1);
    let started = std::time::Instant::now();
    let err = captioner.caption(&img, &budgets()).unwrap_err();
    assert!(matches!(err, BackendError::Unavailable { .. }));
    // timeout 5s x (1 retry + 1) bounds the wall time; failing fast is fine.
    assert!(started.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn unreachable_endpoint_is_unavailable_within_the_time_bound() {
    // Port 9 on localhost is discard/unassigned; connection is refused
    // immediately, exercising the transport-error retry path.
    let mut config = cfg("http://127.0.0.1:9/nothing".into());
    config.timeout_secs = 0.5;
    config.retries = 2;
    let detector = HttpDetector::new(config).unwrap();
    let img = fixtures::synthetic_photo(32, 32, 1);
    let started = std::time::Instant::now();
    let err = detector.detect(&img, "boat").unwrap_err();
    assert!(matches!(err, BackendError::Unavailable { .. }));
    assert!(
        started.elapsed().as_secs_f64() <= 0.5 * 3.0 + 1.0,
        "never blocks past timeout x (retries + 1)"
    );
}

#[test]
fn detector_sorts_and_validates_boxes() {
    async fn detect(Json(req): Json<DetectRequest>) -> Json<DetectResponse> {
        assert!(!req.image_b64.is_empty());
        let boxes = if req.query == "bad" {
            vec![DetectionBox {
                x0: 0.9,
                y0: 0.0,
                x1: 0.1,
                y1: 1.0,
                confidence: 0.5,
            }
            .into()]
        } else {
            vec![
                DetectionBox {
                    x0: 0.0,
                    y0: 0.0,
                    x1: 0.5,
                    y1: 0.5,
                    confidence: 0.4,
                }
                .into(),
                DetectionBox {
                    x0: 0.2,
                    y0: 0.2,
                    x1: 0.9,
                    y1: 0.9,
                    confidence: 0.9,
                }
                .into(),
            ]
        };
        Json(DetectResponse { boxes })
    }
    let router = Router::new().route("/detect", post(detect));
    let (base, _rt) = serve(router);
    let detector = HttpDetector::new(cfg(format!("{base}/detect"))).unwrap();
    let img = fixtures::synthetic_photo(32, 32, 1);

    let boxes = detector.detect(&img, "boat").unwrap();
    assert_eq!(boxes.len(), 2);
    assert!(boxes[0].confidence >= boxes[1].confidence);

    assert!(matches!(
        detector.detect(&img, "bad"),
        Err(BackendError::MalformedResponse(_))
    ));
}

#[test]
fn segmenter_decodes_mask_blobs_and_checks_dimensions() {
    async fn segment(Json(req): Json<SegmentRequest>) -> Json<SegmentResponse> {
        // Respond with a 32x32 rectangle mask regardless of the request box.
        let _ = req;
        let mask = SemanticMask::from_rect(32, 32, 4, 4, 20, 28);
        let blob = mask_encode(&mask).unwrap();
        Json(SegmentResponse {
            mask_rle: B64.encode(blob.to_bytes()),
        })
    }
    let router = Router::new().route("/segment", post(segment));
    let (base, _rt) = serve(router);
    let segmenter = HttpSegmenter::new(cfg(format!("{base}/segment"))).unwrap();

    let img = fixtures::synthetic_photo(32, 32, 1);
    let mask = segmenter
        .segment(&img, &DetectionBox::full_image(1.0))
        .unwrap();
    assert_eq!(mask.area(), 16 * 24);

    // Wrong dimensions are rejected.
    let img64 = fixtures::synthetic_photo(64, 64, 1);
    assert!(matches!(
        segmenter.segment(&img64, &DetectionBox::full_image(1.0)),
        Err(BackendError::MalformedResponse(_))
    ));
}

/// Denoiser stub state: the mock that answers every route.
#[derive(Clone)]
struct StubDenoiser(Arc<MockDenoiser>);

fn denoiser_router(seed: u64) -> Router {
    async fn encode_condition(
        State(stub): State<StubDenoiser>,
        Json(req): Json<EncodeConditionRequest>,
    ) -> Json<LatentResponse> {
        let png = B64.decode(&req.image_b64).unwrap();
        let image = imageio::from_bytes(&png).unwrap();
        let latent = stub.0.encode_condition(&image).unwrap();
        Json(LatentResponse {
            latent: LatentWire::from_grid(&latent),
        })
    }
    async fn text_embed(
        State(stub): State<StubDenoiser>,
        Json(req): Json<TextEmbedRequest>,
    ) -> Json<EmbeddingResponse> {
        let emb = stub.0.text_embed(&req.text).unwrap();
        Json(EmbeddingResponse {
            embedding: EmbeddingWire::from_embedding(&emb),
        })
    }
    async fn attention(
        State(stub): State<StubDenoiser>,
        Json(req): Json<AttentionRequest>,
    ) -> Json<AttentionResponse> {
        let z = req.latent.to_grid().unwrap();
        let emb = req.embedding.to_embedding();
        let map = stub.0.attention(&z, &emb).unwrap();
        Json(AttentionResponse {
            attention: AttentionWire::from_map(&map),
        })
    }
    async fn attention_vjp(
        State(stub): State<StubDenoiser>,
        Json(req): Json<sedic_core::model_clients::http::AttentionVjpRequest>,
    ) -> Json<LatentResponse> {
        let z = req.latent.to_grid().unwrap();
        let emb = req.embedding.to_embedding();
        let grad_a = req.grad_attention.to_map().unwrap();
        let grad_z = stub.0.attention_vjp(&z, &emb, &grad_a).unwrap();
        Json(LatentResponse {
            latent: LatentWire::from_grid(&grad_z),
        })
    }
    async fn denoise_step(
        State(stub): State<StubDenoiser>,
        Json(req): Json<DenoiseStepRequest>,
    ) -> Json<LatentResponse> {
        let z = req.latent.to_grid().unwrap();
        let cond = req.condition.to_grid().unwrap();
        let emb = req.embedding.to_embedding();
        let out = stub.0.denoise_step(&z, req.t, &cond, &emb).unwrap();
        Json(LatentResponse {
            latent: LatentWire::from_grid(&out),
        })
    }
    async fn decode_latent(
        State(stub): State<StubDenoiser>,
        Json(req): Json<DecodeLatentRequest>,
    ) -> Json<DecodeLatentResponse> {
        let z = req.latent.to_grid().unwrap();
        let image = stub.0.decode(&z).unwrap();
        Json(DecodeLatentResponse {
            image_b64: B64.encode(imageio::to_png_bytes(&image).unwrap()),
        })
    }
    async fn noised_reference(
        State(stub): State<StubDenoiser>,
        Json(req): Json<NoisedReferenceRequest>,
    ) -> Json<LatentResponse> {
        let cond = req.condition.to_grid().unwrap();
        let out = stub.0.noised_reference(&cond, req.t, req.seed).unwrap();
        Json(LatentResponse {
            latent: LatentWire::from_grid(&out),
        })
    }

    Router::new()
        .route("/encode_condition", post(encode_condition))
        .route("/text_embed", post(text_embed))
        .route("/attention", post(attention))
        .route("/attention_vjp", post(attention_vjp))
        .route("/denoise_step", post(denoise_step))
        .route("/decode", post(decode_latent))
        .route("/noised_reference", post(noised_reference))
        .with_state(StubDenoiser(Arc::new(MockDenoiser::new(seed))))
}

#[test]
fn http_denoiser_agrees_with_direct_mock() {
    let seed = 31u64;
    let (base, _rt) = serve(denoiser_router(seed));
    let remote = HttpDenoiser::new(cfg(base)).unwrap();
    let local = MockDenoiser::new(seed);
    let img = fixtures::synthetic_photo(64, 64, 3);

    let cond_remote = remote.encode_condition(&img).unwrap();
    let cond_local = local.encode_condition(&img).unwrap();
    // The image travels as 8-bit PNG, so the pooled latents agree to
    // 8-bit precision; everything downstream of latents is bit-exact.
    assert_eq!(cond_remote.spatial(), cond_local.spatial());
    for (a, b) in cond_remote.values().iter().zip(cond_local.values()) {
        assert!((a - b).abs() <= 1.0 / 255.0);
    }

    let emb_remote = remote.text_embed("crimson hull").unwrap();
    let emb_local = local.text_embed("crimson hull").unwrap();
    assert_eq!(emb_remote, emb_local);

    let z = cond_local;
    let map_remote = remote.attention(&z, &emb_local).unwrap();
    let map_local = local.attention(&z, &emb_local).unwrap();
    assert_eq!(map_remote, map_local);

    let grad_a = AttentionWire::from_map(&map_local).to_map().unwrap();
    let vjp_remote = remote.attention_vjp(&z, &emb_local, &grad_a).unwrap();
    let vjp_local = local.attention_vjp(&z, &emb_local, &grad_a).unwrap();
    assert_eq!(vjp_remote, vjp_local);

    let step_remote = remote.denoise_step(&z, 5, &z, &emb_local).unwrap();
    let step_local = local.denoise_step(&z, 5, &z, &emb_local).unwrap();
    assert_eq!(step_remote, step_local);

    let noised_remote = remote.noised_reference(&z, 3, 77).unwrap();
    let noised_local = local.noised_reference(&z, 3, 77).unwrap();
    assert_eq!(noised_remote, noised_local);

    let img_remote = remote.decode(&z).unwrap();
    let img_local = local.decode(&z).unwrap();
    assert!(img_remote.max_abs_diff(&img_local) <= 1.0 / 255.0 + 1e-6);
}

#[test]
fn bearer_token_read_from_configured_env_var() {
    async fn check(headers: axum::http::HeaderMap, Json(req): Json<DetectRequest>) -> Json<DetectResponse> {
        let _ = req;
        let auth = headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .unwrap_or_default();
        assert_eq!(auth, "Bearer sekrit-token");
        Json(DetectResponse { boxes: vec![] })
    }
    let router = Router::new().route("/detect", post(check));
    let (base, _rt) = serve(router);
    // Safety: tests in this binary that read the environment tolerate
    // this variable existing.
    unsafe { std::env::set_var("SEDIC_TEST_TOKEN_VAR", "sekrit-token") };
    let mut config = cfg(format!("{base}/detect"));
    config.auth_token_env = Some("SEDIC_TEST_TOKEN_VAR".into());
    let detector = HttpDetector::new(config).unwrap();
    let img = fixtures::synthetic_photo(32, 32, 1);
    assert!(detector.detect(&img, "x").unwrap().is_empty());
}
