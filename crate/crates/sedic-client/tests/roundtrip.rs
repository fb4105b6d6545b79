//! Client-to-service round trip over a real socket.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use sedic_api as api;
use sedic_client::{Client, ClientError};
use sedic_core::{fixtures, imageio};
use sedic_service::ServiceConfig;

/// Serve on an ephemeral port from a background runtime; the runtime
/// must outlive the test.
fn spawn_service() -> (Client, tokio::runtime::Runtime) {
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
        sedic_service::serve(listener, ServiceConfig::default(), std::future::pending())
            .await
            .unwrap();
    });
    (Client::new(format!("http://{addr}")).unwrap(), rt)
}

#[test]
fn typed_roundtrip_through_the_client() {
    let (client, _rt) = spawn_service();
    assert_eq!(client.health().unwrap().status, "ok");

    let img = fixtures::synthetic_photo(128, 96, 21);
    let encode = client
        .encode(&api::EncodeRequest {
            image_b64: B64.encode(imageio::to_png_bytes(&img).unwrap()),
            target_bpp: 0.5,
            seed: Some(2),
        })
        .unwrap();
    assert_eq!(encode.report.policy.j_objects, 3);

    let decode = client
        .decode(&api::DecodeRequest {
            container_b64: encode.container_b64.clone(),
            seed: Some(2),
            steps: Some(4),
            guidance_threshold: None,
            eta: None,
            trace: true,
        })
        .unwrap();
    let out = imageio::from_bytes(&B64.decode(&decode.image_b64).unwrap()).unwrap();
    assert_eq!((out.width(), out.height()), (128, 96));
    assert_eq!(decode.trace.unwrap().stage_images_b64.len(), 4);

    let inspect = client
        .inspect(&api::InspectRequest {
            container_b64: encode.container_b64,
        })
        .unwrap();
    assert!(inspect.report.total_bpp > 0.0);

    let selftest = client
        .selftest(&api::SelftestRequest {
            suite: Some("policy".into()),
        })
        .unwrap();
    assert!(selftest.passed);
}

#[test]
fn api_errors_surface_with_kind_and_status() {
    let (client, _rt) = spawn_service();
    let err = client
        .decode(&api::DecodeRequest {
            container_b64: B64.encode(b"XXXX"),
            seed: None,
            steps: None,
            guidance_threshold: None,
            eta: None,
            trace: false,
        })
        .unwrap_err();
    match err {
        ClientError::Api { kind, status, .. } => {
            assert_eq!(kind, api::ErrorKind::Parse);
            assert_eq!(status, 422);
        }
        other => panic!("expected Api error, got {other:?}"),
    }
}

#[test]
fn unreachable_service_is_a_transport_error() {
    let client = Client::new("http://127.0.0.1:9").unwrap();
    assert!(matches!(client.health(), Err(ClientError::Transport(_))));
}
