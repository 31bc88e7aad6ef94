//! HTTP sessions over a frame store.
//!
//! Each session caches everything upstream of the threshold (matches, `H`,
//! unfiltered field) per [`AnalysisParams::upstream_key`], so changing only
//! the threshold or the arrow style re-renders without re-tracking. Analysis
//! and sweep responses carry exactly the bytes the CLI prints for the same
//! inputs; artifact URLs travel in response headers.

use std::collections::HashMap;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use motionprobe::image::Roi;
use motionprobe::io::encode_rgb;
use motionprobe::motion::{default_grid, parse_grid};
use motionprobe::pipeline::{
    finish_analysis, prepare_pair, result_json, sweep_json, sweep_prepared, AnalysisParams, FrameStore,
    PreparedPair,
};
use motionprobe::{Error, ErrorKind};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const CACHE_HEADER: &str = "x-cache";
pub const OVERLAY_HEADER: &str = "x-artifact-overlay";
pub const DIFFERENCE_HEADER: &str = "x-artifact-difference";
pub const SWEEP_HEADER: &str = "x-artifact-sweep";

/// Error body: `{code, message, detail}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
    detail: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.into(),
            message: message.into(),
            detail: serde_json::Value::Null,
        }
    }

    fn unknown_session(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session '{id}'"))
    }

    fn bad_frame_store(e: Error) -> Self {
        ApiError {
            detail: json!({ "code": e.code(), "message": e.to_string() }),
            ..ApiError::new(StatusCode::BAD_REQUEST, "bad_frame_store", "not a usable frame directory")
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match (&e, e.kind()) {
            (Error::InvalidIndex { .. }, _) => StatusCode::NOT_FOUND,
            (Error::Io { .. } | Error::Codec { .. }, _) => StatusCode::INTERNAL_SERVER_ERROR,
            (_, ErrorKind::Data | ErrorKind::Analysis) => StatusCode::UNPROCESSABLE_ENTITY,
        };
        let detail = match &e {
            Error::StabilizationFailed {
                source,
                detected,
                tracked,
            } => json!({ "cause": source.code(), "detected": detected, "tracked": tracked }),
            _ => serde_json::Value::Null,
        };
        ApiError {
            status,
            code: e.code().into(),
            message: e.to_string(),
            detail,
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message, "detail": self.detail });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Session {
    store: FrameStore,
    cache: Mutex<HashMap<String, Arc<PreparedPair>>>,
}

/// Shared server state: open sessions and the artifact root.
pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    artifacts: PathBuf,
}

impl AppState {
    pub fn new(artifacts: impl Into<PathBuf>) -> Self {
        AppState {
            sessions: RwLock::new(HashMap::new()),
            artifacts: artifacts.into(),
        }
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Session>> {
        self.sessions
            .read()
            .expect("session lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::unknown_session(id))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/frames/{index}", get(get_frame))
        .route("/sessions/{id}/analyze", post(analyze))
        .route("/sessions/{id}/sweep", post(sweep))
        .route("/artifacts/{run}/{name}", get(get_artifact))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub frames_dir: PathBuf,
    pub fps: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SessionInfo {
    pub id: String,
    pub frames_dir: PathBuf,
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
}

fn info(id: &str, store: &FrameStore) -> SessionInfo {
    let (width, height) = store.dimensions();
    SessionInfo {
        id: id.into(),
        frames_dir: store.dir().to_path_buf(),
        frame_count: store.frame_count(),
        width,
        height,
        fps: store.fps(),
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Error> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionInfo>)> {
    let Json(req) = body?;
    let dir = req.frames_dir.clone();
    let store = tokio::task::spawn_blocking(move || FrameStore::open(dir))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::bad_frame_store)?;
    let store = match req.fps {
        Some(fps) => store.with_fps(fps)?,
        None => store,
    };
    let id = format!("{:032x}", rand::random::<u128>());
    let body = info(&id, &store);
    let session = Arc::new(Session {
        store,
        cache: Mutex::new(HashMap::new()),
    });
    state.sessions.write().expect("session lock").insert(id, session);
    Ok((StatusCode::CREATED, Json(body)))
}

async fn get_session(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionInfo>> {
    let session = state.session(&id)?;
    Ok(Json(info(&id, &session.store)))
}

#[derive(Debug, Deserialize)]
pub struct FrameQuery {
    pub roi: Option<String>,
    pub gain: Option<f64>,
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn get_frame(
    State(state): State<Arc<AppState>>,
    UrlPath((id, index)): UrlPath<(String, usize)>,
    Query(query): Query<FrameQuery>,
) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let roi: Option<Roi> = match &query.roi {
        Some(text) => Some(text.parse().map_err(Error::InvalidParams)?),
        None => None,
    };
    if roi.is_none() && query.gain.is_none() {
        // Unmodified frames are served verbatim.
        let path = session.store.path(index)?;
        let bytes = blocking(move || std::fs::read(&path).map_err(|e| Error::Io { path, source: e })).await?;
        return Ok(png(bytes));
    }
    let bytes = blocking(move || {
        let mut frame = session.store.load(index)?;
        if let Some(roi) = roi {
            frame = frame.crop(&roi)?;
        }
        if let Some(gain) = query.gain {
            frame = frame.brightened(gain)?;
        }
        Ok(encode_rgb(&frame))
    })
    .await?;
    Ok(png(bytes))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeRequest {
    pub pair: [usize; 2],
    #[serde(default)]
    pub params: AnalysisParams,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRequest {
    pub pair: [usize; 2],
    #[serde(default)]
    pub params: AnalysisParams,
    /// `START:STEP:STOP`; defaults to the standard grid.
    pub ts_grid: Option<String>,
    /// Explicit thresholds; takes precedence over `ts_grid`.
    pub ts_values: Option<Vec<f64>>,
}

/// Prepared state for `pair`, from the session cache when possible.
async fn prepared(session: &Arc<Session>, pair: [usize; 2], params: &AnalysisParams) -> ApiResult<(Arc<PreparedPair>, bool)> {
    params.validate()?;
    let key = params.upstream_key(pair[0], pair[1]);
    if let Some(hit) = session.cache.lock().expect("cache lock").get(&key).cloned() {
        return Ok((hit, true));
    }
    let (s, p) = (session.clone(), params.clone());
    let fresh = Arc::new(blocking(move || prepare_pair(&s.store, pair[0], pair[1], &p)).await?);
    let stored = session
        .cache
        .lock()
        .expect("cache lock")
        .entry(key)
        .or_insert(fresh)
        .clone();
    Ok((stored, false))
}

fn header_value(text: &str) -> HeaderValue {
    HeaderValue::from_str(text).expect("ascii header")
}

fn json_bytes(text: String, headers: HeaderMap) -> Response {
    let mut response = (headers, Bytes::from(text)).into_response();
    response
        .headers_mut()
        .insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    response
}

async fn analyze(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<AnalyzeRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    let session = state.session(&id)?;
    let (prepared, hit) = prepared(&session, req.pair, &req.params).await?;
    let root = state.artifacts.clone();
    let params = req.params;
    let result = blocking(move || finish_analysis(&session.store, &prepared, &params, &root).map(|(r, _)| r)).await?;
    let mut headers = HeaderMap::new();
    headers.insert(CACHE_HEADER, HeaderValue::from_static(if hit { "hit" } else { "miss" }));
    let base = format!("/artifacts/{}", result.run_id);
    headers.insert(OVERLAY_HEADER, header_value(&format!("{base}/{}", result.artifacts.overlay)));
    headers.insert(DIFFERENCE_HEADER, header_value(&format!("{base}/{}", result.artifacts.difference)));
    Ok(json_bytes(result_json(&result)?, headers))
}

async fn sweep(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<SweepRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    let session = state.session(&id)?;
    let grid = match (req.ts_values, &req.ts_grid) {
        (Some(values), _) => values,
        (None, Some(text)) => parse_grid(text)?,
        (None, None) => default_grid(),
    };
    let (prepared, hit) = prepared(&session, req.pair, &req.params).await?;
    let root = state.artifacts.clone();
    let params = req.params;
    let report =
        blocking(move || sweep_prepared(&session.store, &prepared, &params, &grid, &root).map(|(r, _)| r)).await?;
    let mut headers = HeaderMap::new();
    headers.insert(CACHE_HEADER, HeaderValue::from_static(if hit { "hit" } else { "miss" }));
    headers.insert(
        SWEEP_HEADER,
        header_value(&format!("/artifacts/{}/{}", report.run_id, motionprobe::pipeline::SWEEP_FILE)),
    );
    Ok(json_bytes(sweep_json(&report)?, headers))
}

fn safe_name(name: &str) -> bool {
    let mut parts = Path::new(name).components();
    matches!((parts.next(), parts.next()), (Some(Component::Normal(_)), None)) && !name.starts_with('.')
}

async fn get_artifact(
    State(state): State<Arc<AppState>>,
    UrlPath((run, name)): UrlPath<(String, String)>,
) -> ApiResult<Response> {
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no artifact {run}/{name}"));
    if run.len() != 64 || !run.bytes().all(|b| b.is_ascii_hexdigit()) || !safe_name(&name) {
        return Err(not_found());
    }
    let path = state.artifacts.join(&run).join(&name);
    if !path.is_file() {
        return Err(not_found());
    }
    let bytes = blocking(move || std::fs::read(&path).map_err(|e| Error::Io { path, source: e })).await?;
    let content_type = if name.ends_with(".png") { "image/png" } else { "application/json" };
    Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response())
}
