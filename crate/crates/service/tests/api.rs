use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use motionprobe::image::{GrayImage, Roi};
use motionprobe::io::{decode_rgb, load_rgb, save_gray};
use motionprobe::pipeline::{analyze_pair, frame_file_name, result_json, run_sweep, sweep_json, AnalysisParams, FrameStore};
use motionprobe::synth::{export_scene, random_block_scene};
use motionprobe_service::{router, AppState, SessionInfo, CACHE_HEADER, OVERLAY_HEADER};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap()
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> Reply {
    let request = Request::builder().method(method).uri(uri);
    let request = match body {
        Some(b) => request
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => request.body(Body::empty()).unwrap(),
    };
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let headers = response.headers().clone();
    let body = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}

fn block_scene(dir: &Path) {
    export_scene(&random_block_scene(21, 320, 240, 0.1, 8.0, true), dir).unwrap();
}

fn app(artifacts: &Path) -> Router {
    router(Arc::new(AppState::new(artifacts)))
}

async fn open(app: &Router, frames: &Path) -> SessionInfo {
    let reply = call(app, "POST", "/sessions", Some(json!({ "frames_dir": frames }))).await;
    assert_eq!(reply.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&reply.body));
    serde_json::from_slice(&reply.body).unwrap()
}

#[tokio::test]
async fn sessions_report_their_store() {
    let frames = tempfile::tempdir().unwrap();
    for k in 1..=10 {
        save_gray(&GrayImage::filled(20, 10, k as f32 / 10.0), &frames.path().join(frame_file_name(k))).unwrap();
    }
    let runs = tempfile::tempdir().unwrap();
    let app = app(runs.path());
    let info = open(&app, frames.path()).await;
    assert_eq!((info.frame_count, info.width, info.height), (10, 20, 10));
    let again = call(&app, "GET", &format!("/sessions/{}", info.id), None).await;
    assert_eq!(again.status, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<SessionInfo>(&again.body).unwrap(), info);

    let missing = call(&app, "GET", "/sessions/nope", None).await;
    assert_eq!(missing.status, StatusCode::NOT_FOUND);
    assert_eq!(missing.json()["code"], "unknown_session");
}

#[tokio::test]
async fn bad_frame_stores_are_rejected() {
    let runs = tempfile::tempdir().unwrap();
    let app = app(runs.path());
    let empty = tempfile::tempdir().unwrap();
    let reply = call(&app, "POST", "/sessions", Some(json!({ "frames_dir": empty.path() }))).await;
    assert_eq!(reply.status, StatusCode::BAD_REQUEST);
    assert_eq!(reply.json()["code"], "bad_frame_store");
    assert_eq!(reply.json()["detail"]["code"], "no_frames");

    let mixed = tempfile::tempdir().unwrap();
    save_gray(&GrayImage::filled(20, 10, 0.5), &mixed.path().join(frame_file_name(1))).unwrap();
    save_gray(&GrayImage::filled(21, 10, 0.5), &mixed.path().join(frame_file_name(2))).unwrap();
    let reply = call(&app, "POST", "/sessions", Some(json!({ "frames_dir": mixed.path() }))).await;
    assert_eq!(reply.status, StatusCode::BAD_REQUEST);
    let body = reply.json();
    assert_eq!(body["detail"]["code"], "inconsistent_dimensions");
    assert!(body["detail"]["message"].as_str().unwrap().contains("21x10"));

    let garbage = call(&app, "POST", "/sessions", Some(json!({ "dir": "x" }))).await;
    assert_eq!(garbage.status, StatusCode::BAD_REQUEST);
    assert_eq!(garbage.json()["code"], "bad_request");
}

#[tokio::test]
async fn frames_are_served_verbatim_cropped_and_brightened() {
    let frames = tempfile::tempdir().unwrap();
    block_scene(frames.path());
    let runs = tempfile::tempdir().unwrap();
    let app = app(runs.path());
    let id = open(&app, frames.path()).await.id;

    let full = call(&app, "GET", &format!("/sessions/{id}/frames/1"), None).await;
    assert_eq!(full.status, StatusCode::OK);
    assert_eq!(full.headers["content-type"], "image/png");
    assert_eq!(full.body, std::fs::read(frames.path().join(frame_file_name(1))).unwrap());
    let twice = call(&app, "GET", &format!("/sessions/{id}/frames/1"), None).await;
    assert_eq!(full.body, twice.body);

    let cropped = call(&app, "GET", &format!("/sessions/{id}/frames/2?roi=10,20,30,40&gain=1.5"), None).await;
    assert_eq!(cropped.status, StatusCode::OK);
    let got = decode_rgb(&cropped.body).unwrap();
    let expected = load_rgb(&frames.path().join(frame_file_name(2)))
        .unwrap()
        .crop(&Roi::new(10, 20, 30, 40))
        .unwrap()
        .brightened(1.5)
        .unwrap();
    assert_eq!(got, expected);

    let zero = call(&app, "GET", &format!("/sessions/{id}/frames/0"), None).await;
    assert_eq!(zero.status, StatusCode::NOT_FOUND);
    assert_eq!(zero.json()["code"], "invalid_index");
    let outside = call(&app, "GET", &format!("/sessions/{id}/frames/1?roi=300,0,50,50"), None).await;
    assert_eq!(outside.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(outside.json()["code"], "roi_out_of_bounds");
}

#[tokio::test]
async fn analyze_matches_the_cli_bytes_and_caches_upstream_work() {
    let frames = tempfile::tempdir().unwrap();
    block_scene(frames.path());
    let runs = tempfile::tempdir().unwrap();
    let app = app(runs.path());
    let id = open(&app, frames.path()).await.id;
    let params = AnalysisParams {
        seed: 4,
        ..Default::default()
    };

    let first = call(
        &app,
        "POST",
        &format!("/sessions/{id}/analyze"),
        Some(json!({ "pair": [1, 2], "params": params })),
    )
    .await;
    assert_eq!(first.status, StatusCode::OK, "{}", String::from_utf8_lossy(&first.body));
    assert_eq!(first.headers[CACHE_HEADER], "miss");

    // What `motionprobe analyze` prints for the same inputs.
    let store = FrameStore::open(frames.path()).unwrap();
    let cli_root = tempfile::tempdir().unwrap();
    let cli = analyze_pair(&store, 1, 2, &params, cli_root.path()).unwrap();
    assert_eq!(first.body, result_json(&cli.result).unwrap().into_bytes());

    let overlay_url = first.headers[OVERLAY_HEADER].to_str().unwrap().to_string();
    let overlay = call(&app, "GET", &overlay_url, None).await;
    assert_eq!(overlay.status, StatusCode::OK);
    assert_eq!(overlay.body, std::fs::read(cli.run_dir.join("overlay.png")).unwrap());

    let changed = AnalysisParams {
        ts: 1.0,
        ..params.clone()
    };
    let second = call(
        &app,
        "POST",
        &format!("/sessions/{id}/analyze"),
        Some(json!({ "pair": [1, 2], "params": changed })),
    )
    .await;
    assert_eq!(second.headers[CACHE_HEADER], "hit");
    let (a, b) = (first.json(), second.json());
    assert_eq!(a["homography"], b["homography"]);
    assert_eq!(a["unfiltered"], b["unfiltered"]);
    assert_ne!(a["filtered"], b["filtered"]);

    // Cached and cold paths agree.
    let cold = analyze_pair(&store, 1, 2, &changed, cli_root.path()).unwrap();
    assert_eq!(second.body, result_json(&cold.result).unwrap().into_bytes());
}

#[tokio::test]
async fn analyze_errors() {
    let frames = tempfile::tempdir().unwrap();
    block_scene(frames.path());
    let runs = tempfile::tempdir().unwrap();
    let app = app(runs.path());
    let id = open(&app, frames.path()).await.id;

    let same = call(&app, "POST", &format!("/sessions/{id}/analyze"), Some(json!({ "pair": [2, 2] }))).await;
    assert_eq!(same.status, StatusCode::UNPROCESSABLE_ENTITY);
    let body = same.json();
    assert_eq!(body["code"], "invalid_pair");
    assert!(body.get("message").is_some() && body.get("detail").is_some());

    let negative = call(
        &app,
        "POST",
        &format!("/sessions/{id}/analyze"),
        Some(json!({ "pair": [1, 2], "params": { "ts": -1.0 } })),
    )
    .await;
    assert_eq!(negative.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(negative.json()["code"], "negative_threshold");

    let unknown = call(&app, "POST", "/sessions/zzz/analyze", Some(json!({ "pair": [1, 2] }))).await;
    assert_eq!(unknown.status, StatusCode::NOT_FOUND);

    let escape = call(&app, "GET", &format!("/artifacts/{}/..", "a".repeat(64)), None).await;
    assert_eq!(escape.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn sweep_matches_run_sweep() {
    let frames = tempfile::tempdir().unwrap();
    block_scene(frames.path());
    let runs = tempfile::tempdir().unwrap();
    let app = app(runs.path());
    let id = open(&app, frames.path()).await.id;

    let zero = call(
        &app,
        "POST",
        &format!("/sessions/{id}/sweep"),
        Some(json!({ "pair": [1, 2], "ts_values": [0.0] })),
    )
    .await;
    assert_eq!(zero.status, StatusCode::OK, "{}", String::from_utf8_lossy(&zero.body));
    let z = zero.json();
    assert_eq!(
        z["sweep"]["entries"][0]["surviving_count"].as_u64().unwrap() as usize,
        z["sweep"]["entries"][0]["field"]["vectors"].as_array().unwrap().len()
    );

    let reply = call(
        &app,
        "POST",
        &format!("/sessions/{id}/sweep"),
        Some(json!({ "pair": [1, 2], "ts_grid": "0:0.5:10" })),
    )
    .await;
    assert_eq!(reply.headers[CACHE_HEADER], "hit");
    let counts: Vec<u64> = reply.json()["sweep"]["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["surviving_count"].as_u64().unwrap())
        .collect();
    assert_eq!(counts.len(), 21);
    assert!(counts.windows(2).all(|w| w[0] >= w[1]));
    assert!(reply.json()["plateau"].is_object());

    let store = FrameStore::open(frames.path()).unwrap();
    let other = tempfile::tempdir().unwrap();
    let grid = motionprobe::motion::parse_grid("0:0.5:10").unwrap();
    let (report, _) = run_sweep(&store, 1, 2, &AnalysisParams::default(), &grid, other.path()).unwrap();
    assert_eq!(reply.body, sweep_json(&report).unwrap().into_bytes());
}
