//! HTTP service for interactive segmentation sessions.
//!
//! All coordinates on the wire are voxel indices `(z, y, x)` in the
//! preprocessed grid reported by session creation. Masks travel as
//! run-length JSON; image slices as grayscale PNG.

pub mod rle;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lru::LruCache;
use promptseg::promptsim::Prompt;
use promptseg::segnet::{load_weights, SegError, Segmenter, SlidingWindow};
use promptseg::session::{Session, SessionConfig, SessionError};
use promptseg::volgrid::{mask_to_nifti_bytes, volume_from_nifti_bytes, PreprocessConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Instant;
use thiserror::Error;
use uuid::Uuid;

pub use rle::{decode as rle_decode, encode as rle_encode, Rle, RleError};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("capacity must be at least 1")]
    Capacity,
    #[error("loading weights: {0}")]
    Weights(#[from] SegError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Live sessions kept before the least recently used one is evicted.
    pub capacity: usize,
    pub preprocess: PreprocessConfig,
    /// Directory with built UI assets served under `/ui`.
    pub ui_dir: Option<PathBuf>,
    /// Upload size limit in bytes.
    pub max_upload: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { capacity: 16, preprocess: PreprocessConfig::default(), ui_dir: None, max_upload: 512 << 20 }
    }
}

struct Entry {
    session: Session,
    mask_version: u64,
    created: Instant,
}

type Handle = Arc<Mutex<Entry>>;

pub struct AppState {
    model: Arc<dyn Segmenter>,
    fingerprint: String,
    config: ServerConfig,
    sessions: Mutex<LruCache<Uuid, Handle>>,
}

impl AppState {
    pub fn new(model: Arc<dyn Segmenter>, fingerprint: impl Into<String>, config: ServerConfig) -> Result<Arc<Self>, ServerError> {
        let cap = NonZeroUsize::new(config.capacity).ok_or(ServerError::Capacity)?;
        Ok(Arc::new(AppState { model, fingerprint: fingerprint.into(), config, sessions: Mutex::new(LruCache::new(cap)) }))
    }

    pub fn from_weights_file(path: &std::path::Path, config: ServerConfig) -> Result<Arc<Self>, ServerError> {
        let w = load_weights(path, None)?;
        let model = SlidingWindow::from_weights(&w)?;
        Self::new(Arc::new(model), w.fingerprint(), config)
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    fn get(&self, id: &str) -> Result<Handle, ApiError> {
        let id = Uuid::parse_str(id).map_err(|_| ApiError::not_found("unknown session"))?;
        self.sessions.lock().unwrap().get(&id).cloned().ok_or_else(|| ApiError::not_found("unknown session"))
    }

    /// Inserts, evicting the least recently used idle session when full.
    fn insert(&self, entry: Entry) -> Result<Uuid, ApiError> {
        let mut map = self.sessions.lock().unwrap();
        if map.len() == map.cap().get() {
            let (_, victim) = map.peek_lru().expect("full cache has an lru entry");
            // A session that is mid-request stays.
            if Arc::strong_count(victim) > 1 || victim.try_lock().is_err() {
                return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "session capacity reached"));
            }
            if let Some((old, _)) = map.pop_lru() {
                log::info!("evicted session {old}");
            }
        }
        let id = Uuid::new_v4();
        map.put(id, Arc::new(Mutex::new(entry)));
        Ok(id)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Prompt(_) => ApiError::unprocessable(e.to_string()),
            SessionError::NothingToUndo | SessionError::NoPrediction => ApiError::new(StatusCode::CONFLICT, e.to_string()),
            other => ApiError::internal(other.to_string()),
        }
    }
}

/// Runs blocking work (inference, encoding) off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub rounds: usize,
    pub mask_version: u64,
    pub age_seconds: f64,
}

fn info(id: &str, e: &Entry) -> SessionInfo {
    let g = e.session.image().geometry();
    SessionInfo {
        session_id: id.to_string(),
        shape: g.shape,
        spacing: g.spacing,
        rounds: e.session.round(),
        mask_version: e.mask_version,
        age_seconds: e.created.elapsed().as_secs_f64(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptResponse {
    pub round: usize,
    pub changed_voxels: usize,
    pub mask_version: u64,
}

async fn health(State(app): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "model": app.fingerprint, "sessions": app.session_count() }))
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Json<SessionInfo>, ApiError> {
    let app2 = app.clone();
    let session = blocking(move || {
        let raw = volume_from_nifti_bytes(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
        Session::from_raw("upload", &raw, &app2.config.preprocess, app2.model.clone(), SessionConfig::default()).map_err(|e| match e {
            SessionError::Volume(v) => ApiError::new(StatusCode::BAD_REQUEST, v.to_string()),
            other => ApiError::from(other),
        })
    })
    .await?;
    let entry = Entry { session, mask_version: 0, created: Instant::now() };
    let shape = entry.session.image().geometry().clone();
    let id = app.insert(entry)?;
    log::info!("session {id} created, shape {:?}", shape.shape);
    Ok(Json(SessionInfo {
        session_id: id.to_string(),
        shape: shape.shape,
        spacing: shape.spacing,
        rounds: 0,
        mask_version: 0,
        age_seconds: 0.0,
    }))
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionInfo>, ApiError> {
    let h = app.get(&id)?;
    let e = h.lock().unwrap();
    Ok(Json(info(&id, &e)))
}

async fn delete_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let uid = Uuid::parse_str(&id).map_err(|_| ApiError::not_found("unknown session"))?;
    app.sessions.lock().unwrap().pop(&uid).ok_or_else(|| ApiError::not_found("unknown session"))?;
    Ok(StatusCode::NO_CONTENT)
}

async fn add_prompt(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Result<Json<PromptResponse>, ApiError> {
    let h = app.get(&id)?;
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::unprocessable("body is not UTF-8"))?;
    let prompt = Prompt::from_json(text).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    blocking(move || {
        let mut e = h.lock().unwrap();
        let before = e.session.current_mask().cloned();
        let mask = e.session.add_prompt(prompt)?;
        let changed = match &before {
            Some(b) => b.hamming(mask).map_err(|err| ApiError::internal(err.to_string()))?,
            None => mask.count(),
        };
        e.mask_version += 1;
        Ok(Json(PromptResponse { round: e.session.round(), changed_voxels: changed, mask_version: e.mask_version }))
    })
    .await
}

async fn undo(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let h = app.get(&id)?;
    let mut e = h.lock().unwrap();
    let round = e.session.undo()?;
    e.mask_version += 1;
    Ok(Json(json!({ "round": round, "mask_version": e.mask_version })))
}

#[derive(Deserialize)]
struct MaskQuery {
    slice: Option<usize>,
}

async fn get_mask(State(app): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<MaskQuery>) -> Result<Json<Rle>, ApiError> {
    let h = app.get(&id)?;
    blocking(move || {
        let e = h.lock().unwrap();
        let mask = e.session.current_mask().ok_or_else(|| ApiError::from(SessionError::NoPrediction))?;
        let [d, hh, w] = mask.shape();
        Ok(Json(match q.slice {
            Some(z) if z >= d => return Err(ApiError::not_found(format!("slice {z} out of range 0..{d}"))),
            Some(z) => rle_encode(&[hh, w], mask.slice(z)),
            None => rle_encode(&[d, hh, w], mask.data()),
        }))
    })
    .await
}

#[derive(Deserialize)]
struct SliceQuery {
    window: Option<String>,
}

fn parse_window(s: &str) -> Result<(f32, f32), ApiError> {
    let bad = || ApiError::new(StatusCode::BAD_REQUEST, "window must be lo,hi with lo < hi");
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    let lo: f32 = a.trim().parse().map_err(|_| bad())?;
    let hi: f32 = b.trim().parse().map_err(|_| bad())?;
    if !(lo < hi) {
        return Err(bad());
    }
    Ok((lo, hi))
}

/// 8-bit grayscale PNG of `data` linearly windowed to `[lo, hi]`.
pub fn slice_png(data: &[f32], h: usize, w: usize, lo: f32, hi: f32) -> Vec<u8> {
    let span = hi - lo;
    let px: Vec<u8> = data
        .iter()
        .map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 })
        .collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut wr = enc.write_header().expect("in-memory png header");
        wr.write_image_data(&px).expect("in-memory png data");
    }
    out
}

async fn get_slice(
    State(app): State<Arc<AppState>>,
    Path((id, z)): Path<(String, usize)>,
    Query(q): Query<SliceQuery>,
) -> Result<Response, ApiError> {
    let h = app.get(&id)?;
    let window = q.window.as_deref().map(parse_window).transpose()?;
    blocking(move || {
        let e = h.lock().unwrap();
        let img = e.session.image();
        let [d, hh, w] = img.shape();
        if z >= d {
            return Err(ApiError::not_found(format!("slice {z} out of range 0..{d}")));
        }
        let (lo, hi) = window.unwrap_or_else(|| img.min_max());
        let png = slice_png(img.slice(z), hh, w, lo, hi);
        Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
    })
    .await
}

async fn export(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let h = app.get(&id)?;
    blocking(move || {
        let e = h.lock().unwrap();
        let mask = e.session.export()?;
        let bytes = mask_to_nifti_bytes(&mask, false);
        Ok((
            [(header::CONTENT_TYPE, "application/octet-stream"), (header::CONTENT_DISPOSITION, "attachment; filename=\"mask.nii\"")],
            bytes,
        )
            .into_response())
    })
    .await
}

async fn transcript(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let h = app.get(&id)?;
    let e = h.lock().unwrap();
    Ok(([(header::CONTENT_TYPE, "application/json")], e.session.transcript().to_json()).into_response())
}

async fn no_ui() -> ApiError {
    ApiError::not_found("no UI assets configured; start the server with a UI directory")
}

pub fn router(app: Arc<AppState>) -> Router {
    let limit = app.config.max_upload;
    let ui = app.config.ui_dir.clone();
    let api = Router::new()
        .route("/v1/health", get(health))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session).delete(delete_session))
        .route("/v1/sessions/{id}/prompts", post(add_prompt))
        .route("/v1/sessions/{id}/undo", post(undo))
        .route("/v1/sessions/{id}/mask", get(get_mask))
        .route("/v1/sessions/{id}/slice/{z}", get(get_slice))
        .route("/v1/sessions/{id}/export", get(export))
        .route("/v1/sessions/{id}/transcript", get(transcript))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(app);
    match ui {
        Some(dir) => api.nest_service("/ui", tower_http::services::ServeDir::new(dir)),
        None => api.route("/ui", get(no_ui)).route("/ui/{*rest}", get(no_ui)),
    }
}

/// Endpoint table logged at startup.
pub const ENDPOINTS: &[(&str, &str)] = &[
    ("GET", "/v1/health"),
    ("POST", "/v1/sessions"),
    ("GET", "/v1/sessions/{id}"),
    ("DELETE", "/v1/sessions/{id}"),
    ("POST", "/v1/sessions/{id}/prompts"),
    ("POST", "/v1/sessions/{id}/undo"),
    ("GET", "/v1/sessions/{id}/mask[?slice=k]"),
    ("GET", "/v1/sessions/{id}/slice/{z}[?window=lo,hi]"),
    ("GET", "/v1/sessions/{id}/export"),
    ("GET", "/v1/sessions/{id}/transcript"),
    ("GET", "/ui"),
];

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(app)).with_graceful_shutdown(shutdown).await
}
