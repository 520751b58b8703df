use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use confill::pipeline::Model;
use confill::trainer::{TrainConfig, Trainer};
use confill::{Image, Mask};
use confill_service::api::{parse_request, ApiError, InpaintResponse, TraceFrame};
use confill_service::{router, AppState, ServiceConfig, TraceCache};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn tiny_model() -> Model {
    let cfg = TrainConfig {
        resolution: 16,
        batch_size: 2,
        gen_base_channels: 2,
        gen_depth: 2,
        disc_base_channels: 2,
        disc_stages: 2,
        validation_size: 1,
        pool_size: 8,
        ups_base_channels: 2,
        ups_batch_size: 2,
        ..TrainConfig::default()
    };
    Model::from_container("tiny", &Trainer::new(cfg).unwrap().to_container()).unwrap()
}

fn app(model: Option<Model>, config: ServiceConfig) -> Router {
    router(AppState::new(model, config))
}

fn b64(bytes: Vec<u8>) -> String {
    STANDARD.encode(bytes)
}

fn picture(w: usize, h: usize) -> Image {
    Image::from_fn(w, h, |c, y, x| ((c * 31 + y * 7 + x * 3) % 17) as f64 / 16.0)
}

fn square_hole(w: usize, h: usize) -> Mask {
    Mask::from_fn(w, h, |y, x| (h / 4..h / 2).contains(&y) && (w / 4..w / 2).contains(&x))
}

fn request(img: &Image, hole: &Mask, extra: Value) -> Value {
    let mut v = json!({
        "image": b64(img.encode_png().unwrap()),
        "mask": b64(hole.encode_png().unwrap()),
    });
    for (k, x) in extra.as_object().unwrap() {
        v[k] = x.clone();
    }
    v
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Vec<u8>>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn post(app: &Router, body: &Value) -> (StatusCode, Value) {
    call(app, "POST", "/v1/inpaint", Some(serde_json::to_vec(body).unwrap())).await
}

fn decode_image(s: &Value) -> Image {
    Image::decode_png(&STANDARD.decode(s.as_str().unwrap()).unwrap()).unwrap()
}

#[tokio::test]
async fn health_reports_the_loaded_checkpoint() {
    let (s, v) = call(&app(Some(tiny_model()), ServiceConfig::default()), "GET", "/v1/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({"status": "ok", "checkpoint": "tiny"}));
    let (s, _) = call(&app(None, ServiceConfig::default()), "GET", "/v1/health", None).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn inpaint_without_a_model_is_503() {
    let (img, hole) = (picture(16, 16), square_hole(16, 16));
    let (s, v) = post(&app(None, ServiceConfig::default()), &request(&img, &hole, json!({}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["error"]["code"], "model_not_loaded");
    let app = app(Some(tiny_model()), ServiceConfig::default());
    let (s, _) = post(&app, &request(&img, &hole, json!({"checkpoint": "other"}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn single_iteration_returns_a_trace_of_length_one() {
    let app = app(Some(tiny_model()), ServiceConfig::default());
    let (img, hole) = (picture(24, 20), square_hole(24, 20));
    let (s, v) = post(&app, &request(&img, &hole, json!({"iterations": 1}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let r: InpaintResponse = serde_json::from_value(v.clone()).unwrap();
    assert_eq!(r.trace.len(), 1);
    assert_eq!(r.checkpoint, "tiny");
    let out = decode_image(&v["image"]);
    let known = hole.not();
    let rgb_in = img.to_rgb8();
    let rgb_out = out.to_rgb8();
    for i in 0..24 * 20 {
        if known.bits()[i] != 0 {
            assert_eq!(rgb_in[3 * i..3 * i + 3], rgb_out[3 * i..3 * i + 3]);
        }
    }
    assert!(r.timings_ms.contains_key("total"));
}

#[tokio::test]
async fn trace_frames_are_served_per_iteration() {
    let app = app(Some(tiny_model()), ServiceConfig::default());
    let (img, hole) = (picture(16, 16), square_hole(16, 16));
    let (_, v) = post(&app, &request(&img, &hole, json!({"iterations": 3}))).await;
    let job = v["job"].as_str().unwrap().to_owned();
    assert_eq!(v["trace"].as_array().unwrap().len(), 3);
    for t in 1..=3 {
        let (s, f) = call(&app, "GET", &format!("/v1/trace/{job}/{t}"), None).await;
        assert_eq!(s, StatusCode::OK);
        let f: TraceFrame = serde_json::from_value(f).unwrap();
        assert_eq!(f.t, t);
        let m = Mask::decode_png(&STANDARD.decode(&f.m).unwrap()).unwrap();
        assert_eq!(m.count(), v["trace"][t - 1]["accepted"].as_u64().unwrap() as usize + v["trace"][t - 1]["remaining"].as_u64().unwrap() as usize);
    }
    for uri in [format!("/v1/trace/{job}/0"), format!("/v1/trace/{job}/4"), "/v1/trace/nope/1".to_owned()] {
        assert_eq!(call(&app, "GET", &uri, None).await.0, StatusCode::NOT_FOUND, "{uri}");
    }
}

#[tokio::test]
async fn malformed_requests_are_400() {
    let app = app(Some(tiny_model()), ServiceConfig::default());
    let (img, hole) = (picture(16, 16), square_hole(16, 16));
    let good = request(&img, &hole, json!({}));
    let mut cases = vec![
        call(&app, "POST", "/v1/inpaint", Some(b"{not json".to_vec())).await,
        post(&app, &json!({"image": good["image"]})).await,
        post(&app, &request(&img, &hole, json!({"image": "!!!"}))).await,
        post(&app, &request(&img, &hole, json!({"image": b64(b"hello".to_vec())}))).await,
        post(&app, &request(&img, &hole, json!({"iterations": 0}))).await,
        post(&app, &request(&img, &hole, json!({"mode": "sideways"}))).await,
        post(&app, &request(&img, &hole, json!({"colour": "red"}))).await,
    ];
    cases.push(post(&app, &request(&img, &hole, json!({"avoid": [[[0, 0], [4, 0], [4, 4]]]}))).await);
    for (i, (s, v)) in cases.into_iter().enumerate() {
        assert_eq!(s, StatusCode::BAD_REQUEST, "case {i}: {v}");
        assert_eq!(v["error"]["code"], "bad_request");
    }
}

#[tokio::test]
async fn extent_mismatch_is_422() {
    let app = app(Some(tiny_model()), ServiceConfig::default());
    let img = picture(16, 16);
    let (s, v) = post(&app, &request(&img, &square_hole(16, 12), json!({}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "extent_mismatch");
    let odd = picture(15, 16);
    let (s, _) = post(&app, &request(&odd, &square_hole(15, 16), json!({"mode": "upsampled"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn polygon_masks_match_their_raster() {
    let app = app(Some(tiny_model()), ServiceConfig::default());
    let img = picture(16, 16);
    let poly = json!([[[4.0, 4.0], [12.0, 4.0], [12.0, 10.0], [4.0, 10.0]]]);
    let raster = Mask::from_fn(16, 16, |y, x| (4..10).contains(&y) && (4..12).contains(&x));
    let (s1, a) = post(&app, &request(&img, &raster, json!({"mask": poly}))).await;
    let (s2, b) = post(&app, &request(&img, &raster, json!({}))).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(a["image"], b["image"]);
}

#[tokio::test]
async fn concurrent_identical_requests_agree() {
    let app = app(Some(tiny_model()), ServiceConfig { workers: 2, ..ServiceConfig::default() });
    let body = request(&picture(32, 32), &square_hole(32, 32), json!({"iterations": 2}));
    let handles: Vec<_> = (0..6)
        .map(|_| {
            let (app, body) = (app.clone(), body.clone());
            tokio::spawn(async move { post(&app, &body).await })
        })
        .collect();
    let mut outs = Vec::new();
    for h in handles {
        let (s, mut v) = h.await.unwrap();
        assert_eq!(s, StatusCode::OK);
        v.as_object_mut().unwrap().remove("timings_ms");
        outs.push(v);
    }
    assert!(outs.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn upsampled_mode_reports_a_residual_and_keeps_known_pixels() {
    let app = app(Some(tiny_model()), ServiceConfig::default());
    let (img, hole) = (picture(32, 32), square_hole(32, 32));
    let controls = Image::from_fn(32, 32, |c, y, _| if (c == 0 && y < 4) || (c == 1 && y >= 28) { 1.0 } else { 0.0 });
    let (s, v) = post(&app, &request(&img, &hole, json!({"mode": "upsampled", "controls": b64(controls.encode_png().unwrap())}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let residual = Mask::decode_png(&STANDARD.decode(v["residual"].as_str().unwrap()).unwrap()).unwrap();
    assert!(residual.is_subset_of(&hole));
    let (a, b) = (img.to_rgb8(), decode_image(&v["image"]).to_rgb8());
    assert!((0..32 * 32).filter(|&i| hole.bits()[i] == 0).all(|i| a[3 * i..3 * i + 3] == b[3 * i..3 * i + 3]));
    assert_eq!(v["mode"], "upsampled");
}

#[tokio::test]
async fn zero_deadline_is_503() {
    let app = app(Some(tiny_model()), ServiceConfig { deadline: Duration::ZERO, ..ServiceConfig::default() });
    let (s, v) = post(&app, &request(&picture(64, 64), &square_hole(64, 64), json!({}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["error"]["code"], "deadline_exceeded");
}

#[tokio::test]
async fn checkpoints_lists_the_directory() {
    let dir = tempfile::tempdir().unwrap();
    for n in ["b.ckpt", "a.ckpt", "notes.txt"] {
        std::fs::write(dir.path().join(n), b"").unwrap();
    }
    let cfg = ServiceConfig { checkpoint_dir: Some(dir.path().to_path_buf()), ..ServiceConfig::default() };
    let (s, v) = call(&app(None, cfg), "GET", "/v1/checkpoints", None).await;
    assert_eq!(s, StatusCode::OK);
    let ids: Vec<&str> = v.as_array().unwrap().iter().map(|e| e["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["a", "b"]);
}

#[test]
fn trace_cache_expires_and_caps() {
    let cache = TraceCache::new(Duration::ZERO, 4);
    cache.insert("a".into(), Default::default());
    assert!(cache.get("a").is_none());
    let cache = TraceCache::new(Duration::from_secs(60), 2);
    for k in ["a", "b", "c"] {
        cache.insert(k.into(), Default::default());
        std::thread::sleep(Duration::from_millis(2));
    }
    assert_eq!(cache.len(), 2);
    assert!(cache.get("a").is_none() && cache.get("c").is_some());
}

#[test]
fn parse_request_rejects_oversized_headers_before_decoding() {
    let mut png = vec![0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a, 0, 0, 0, 13];
    png.extend_from_slice(b"IHDR");
    png.extend_from_slice(&100_000u32.to_be_bytes());
    png.extend_from_slice(&100_000u32.to_be_bytes());
    let body = json!({"image": b64(png.clone()), "mask": b64(png)});
    assert!(matches!(parse_request(body.to_string().as_bytes()), Err(ApiError::BadRequest(_))));
}

#[test]
fn app_state_refuses_a_broken_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.ckpt");
    std::fs::write(&path, b"nope").unwrap();
    assert!(AppState::load(ServiceConfig { checkpoint: Some(path), ..ServiceConfig::default() }).is_err());
    assert!(AppState::load(ServiceConfig::default()).unwrap().model().is_none());
}
