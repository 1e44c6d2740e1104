//! HTTP API for the studio.
//!
//! Decompositions run one at a time on a FIFO worker; finished layer sets
//! live in a small LRU cache keyed by the id of the job that produced them.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use layerbuild::layers::{compose_frame, LayerSet};
use layerbuild::pipeline::{decompose, DecomposeConfig, DecomposeReport};
use layerbuild::pixel::{decode_image, PixelVolume, Rgb32};
use layerbuild::solver::{Stroke, StrokeDoc};
use layerbuild::Error;
use lru::LruCache;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::mpsc;
use tower_http::cors::CorsLayer;

use crate::args::ServeArgs;
use crate::{is_config_error, layer_meta, plane_png, UsageError};

/// Uploads carry whole frame sequences.
const BODY_LIMIT: usize = 512 * 1024 * 1024;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }

    fn unknown_layer(id: u64) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_layer", format!("no cached layer set {id}"))
    }
}

impl From<Error> for ApiError {
    fn from(err: Error) -> Self {
        let input_fault = is_config_error(&err) || matches!(err.root(), Error::Decode { .. } | Error::FrameSizeMismatch { .. });
        if input_fault {
            Self::bad_request(err.to_string())
        } else {
            Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", err.to_string())
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "error": {"status": self.status.as_u16(), "code": self.code, "message": self.message}
        });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobStatus {
    pub job_id: u64,
    pub state: JobState,
    /// Set once the job is done; equal to the job id.
    pub layer_id: Option<u64>,
    pub report: Option<DecomposeReport>,
    pub error: Option<String>,
}

/// Optional tuning sent alongside the uploaded frames. Omitted fields take the
/// command-line defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeParams {
    pub superpixels: Option<usize>,
    pub num_layers: Option<usize>,
    pub seed: Option<u64>,
    pub palette: Option<Vec<[f64; 3]>>,
    pub lambda_m: Option<f64>,
    pub lambda_r: Option<f64>,
    pub lambda_u: Option<f64>,
    pub lambda_e: Option<f64>,
    pub lambda_n: Option<f64>,
    pub suppression_iters: Option<usize>,
    pub tau: Option<f64>,
    pub auto_constraints: Option<bool>,
    pub strokes: Option<Vec<Stroke>>,
}

impl DecomposeParams {
    pub fn config(&self, volume: &PixelVolume) -> layerbuild::Result<DecomposeConfig> {
        let mut config = DecomposeConfig::for_volume(volume);
        let palette = self
            .palette
            .as_deref()
            .map(layerbuild::palette::Palette::from_f64)
            .transpose()?;
        if let Some(s) = self.superpixels {
            config.superpixels = s;
        }
        if let Some(n) = self.num_layers.or(palette.as_ref().map(|p| p.len())) {
            config.layers = n;
        }
        config.palette = palette;
        config.seed = self.seed.unwrap_or(config.seed);
        let p = &mut config.params;
        p.lambda_m = self.lambda_m.unwrap_or(p.lambda_m);
        p.lambda_r = self.lambda_r.unwrap_or(p.lambda_r);
        p.lambda_u = self.lambda_u.unwrap_or(p.lambda_u);
        p.lambda_e = self.lambda_e.unwrap_or(p.lambda_e);
        p.lambda_n = self.lambda_n.unwrap_or(p.lambda_n);
        p.suppression_iters = self.suppression_iters.unwrap_or(p.suppression_iters);
        config.tau = self.tau.unwrap_or(config.tau);
        config.auto_constraints = self.auto_constraints.unwrap_or(config.auto_constraints);
        config.strokes = self.strokes.clone().map(|strokes| StrokeDoc { strokes });
        check_config(&config, volume)?;
        Ok(config)
    }
}

/// Rejects what would otherwise only fail once the job is running.
fn check_config(config: &DecomposeConfig, volume: &PixelVolume) -> layerbuild::Result<()> {
    config.validate()?;
    if config.superpixels > volume.num_pixels() {
        return Err(Error::SuperpixelCount {
            requested: config.superpixels,
            pixels: volume.num_pixels(),
        });
    }
    if let Some(doc) = &config.strokes {
        doc.validate((volume.width(), volume.height(), volume.frames()), config.layers)?;
    }
    Ok(())
}

pub struct LayerEntry {
    pub layers: LayerSet,
    pub volume: Arc<PixelVolume>,
    pub config: DecomposeConfig,
}

struct Job {
    id: u64,
    volume: Arc<PixelVolume>,
    config: DecomposeConfig,
}

struct Inner {
    next_id: u64,
    jobs: HashMap<u64, JobStatus>,
    cache: LruCache<u64, Arc<LayerEntry>>,
}

pub struct AppState {
    inner: Mutex<Inner>,
    queue: mpsc::UnboundedSender<Job>,
}

impl AppState {
    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn enqueue(&self, volume: Arc<PixelVolume>, config: DecomposeConfig) -> ApiResult<u64> {
        let id = {
            let mut inner = self.lock();
            inner.next_id += 1;
            let id = inner.next_id;
            inner.jobs.insert(
                id,
                JobStatus {
                    job_id: id,
                    state: JobState::Queued,
                    layer_id: None,
                    report: None,
                    error: None,
                },
            );
            id
        };
        self.queue
            .send(Job { id, volume, config })
            .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "worker_stopped", "job worker has stopped"))?;
        Ok(id)
    }

    fn layer(&self, id: u64) -> ApiResult<Arc<LayerEntry>> {
        self.lock().cache.get(&id).cloned().ok_or(ApiError::unknown_layer(id))
    }

    fn update(&self, id: u64, f: impl FnOnce(&mut JobStatus)) {
        if let Some(job) = self.lock().jobs.get_mut(&id) {
            f(job);
        }
    }
}

async fn worker(state: Arc<AppState>, mut jobs: mpsc::UnboundedReceiver<Job>) {
    while let Some(job) = jobs.recv().await {
        state.update(job.id, |s| s.state = JobState::Running);
        let (volume, config) = (job.volume.clone(), job.config.clone());
        let outcome = tokio::task::spawn_blocking(move || decompose(&volume, &config)).await;
        match outcome {
            Ok(Ok(result)) => {
                let entry = Arc::new(LayerEntry {
                    layers: result.layers,
                    volume: job.volume,
                    config: job.config,
                });
                let mut inner = state.lock();
                inner.cache.put(job.id, entry);
                if let Some(s) = inner.jobs.get_mut(&job.id) {
                    s.state = JobState::Done;
                    s.layer_id = Some(job.id);
                    s.report = Some(result.report);
                }
            }
            Ok(Err(e)) => {
                log::warn!("job {} failed: {e}", job.id);
                state.update(job.id, |s| {
                    s.state = JobState::Failed;
                    s.error = Some(e.to_string());
                });
            }
            Err(e) => {
                log::error!("job {} aborted: {e}", job.id);
                state.update(job.id, |s| {
                    s.state = JobState::Failed;
                    s.error = Some(format!("job aborted: {e}"));
                });
            }
        }
    }
}

/// Builds the router and starts its job worker. Must be called from within a
/// Tokio runtime.
pub fn app(cache_size: NonZeroUsize) -> Router {
    let (tx, rx) = mpsc::unbounded_channel();
    let state = Arc::new(AppState {
        inner: Mutex::new(Inner {
            next_id: 0,
            jobs: HashMap::new(),
            cache: LruCache::new(cache_size),
        }),
        queue: tx,
    });
    tokio::spawn(worker(state.clone(), rx));
    Router::new()
        .route("/decompose", post(post_decompose))
        .route("/jobs/{id}", get(get_job))
        .route("/layers/{id}/meta", get(get_meta))
        .route("/layers/{id}/plane/{file}", get(get_plane))
        .route("/layers/{id}/reconstruction.png", get(get_reconstruction))
        .route("/layers/{id}/recolor", post(post_recolor))
        .route("/layers/{id}/constraints", post(post_constraints))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub async fn run(args: &ServeArgs) -> anyhow::Result<()> {
    let cache = NonZeroUsize::new(args.cache_size).ok_or_else(|| UsageError("--cache-size must be ≥ 1".into()))?;
    let listener = match tokio::net::TcpListener::bind((args.host.as_str(), args.port)).await {
        Ok(l) => l,
        Err(e) if e.kind() == std::io::ErrorKind::AddrInUse => {
            return Err(UsageError(format!("port {} is busy: {e}", args.port)).into())
        }
        Err(e) => return Err(anyhow::Error::new(e).context(format!("binding {}:{}", args.host, args.port))),
    };
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app(cache)).await?;
    Ok(())
}

fn parse_id(raw: &str) -> ApiResult<u64> {
    raw.parse()
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("malformed id {raw:?}")))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Error> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

async fn post_decompose(State(state): State<Arc<AppState>>, mut form: Multipart) -> ApiResult<Response> {
    let mut frames = Vec::new();
    let mut params = DecomposeParams::default();
    while let Some(field) = form.next_field().await.map_err(|e| ApiError::bad_request(e.body_text()))? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
        match name.as_str() {
            "image" => frames.push(decode_image(&bytes)?),
            "params" => {
                params = serde_json::from_slice(&bytes)
                    .map_err(|e| ApiError::bad_request(format!("params: {e}")))?
            }
            other => return Err(ApiError::bad_request(format!("unexpected form field {other:?}"))),
        }
    }
    if frames.is_empty() {
        return Err(ApiError::bad_request("at least one \"image\" field is required"));
    }
    let volume = PixelVolume::stack(&frames)?;
    let config = params.config(&volume)?;
    let id = state.enqueue(Arc::new(volume), config)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": id }))).into_response())
}

async fn get_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<JobStatus>> {
    let id = parse_id(&id)?;
    let job = state.lock().jobs.get(&id).cloned();
    job.map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_job", format!("no job {id}")))
}

async fn get_meta(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let id = parse_id(&id)?;
    let entry = state.layer(id)?;
    let mut meta = serde_json::to_value(layer_meta(&entry.layers)).expect("meta serializes");
    meta["layer_id"] = id.into();
    Ok(Json(meta))
}

#[derive(Debug, Default, Deserialize)]
struct FrameQuery {
    #[serde(default)]
    frame: usize,
    #[serde(default)]
    tint: bool,
}

fn frame_query(q: Result<Query<FrameQuery>, axum::extract::rejection::QueryRejection>) -> ApiResult<FrameQuery> {
    q.map(|Query(q)| q).map_err(|e| ApiError::bad_request(e.body_text()))
}

async fn get_plane(
    State(state): State<Arc<AppState>>,
    Path((id, file)): Path<(String, String)>,
    query: Result<Query<FrameQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let id = parse_id(&id)?;
    let entry = state.layer(id)?;
    let query = frame_query(query)?;
    let layer = file
        .strip_suffix(".png")
        .and_then(|j| j.parse::<usize>().ok())
        .filter(|&j| j < entry.layers.num_layers())
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_plane", format!("no plane {file:?}")))?;
    let bytes = blocking(move || plane_png(&entry.layers, layer, query.frame, query.tint)).await?;
    Ok(png(bytes))
}

async fn get_reconstruction(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    query: Result<Query<FrameQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let id = parse_id(&id)?;
    let entry = state.layer(id)?;
    let frame = frame_query(query)?.frame;
    let bytes = blocking(move || {
        let colors = entry.layers.palette().colors().to_vec();
        compose_frame(&entry.layers, &colors, frame)?.encode_png(0)
    })
    .await?;
    Ok(png(bytes))
}

#[derive(Debug, Deserialize)]
struct RecolorBody {
    colors: Vec<[f64; 3]>,
}

async fn post_recolor(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    query: Result<Query<FrameQuery>, axum::extract::rejection::QueryRejection>,
    body: Bytes,
) -> ApiResult<Response> {
    let id = parse_id(&id)?;
    let entry = state.layer(id)?;
    let frame = frame_query(query)?.frame;
    let body: RecolorBody = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("body: {e}")))?;
    if body.colors.len() != entry.layers.num_layers() {
        return Err(ApiError::bad_request(format!(
            "{} colors sent for {} layers",
            body.colors.len(),
            entry.layers.num_layers()
        )));
    }
    let colors: Vec<Rgb32> = body.colors.iter().map(|c| [c[0] as f32, c[1] as f32, c[2] as f32]).collect();
    let bytes = blocking(move || compose_frame(&entry.layers, &colors, frame)?.encode_png(0)).await?;
    Ok(png(bytes))
}

async fn post_constraints(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let id = parse_id(&id)?;
    let entry = state.layer(id)?;
    let doc: StrokeDoc = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("body: {e}")))?;
    let mut config = entry.config.clone();
    // keep the palette so stroke layer ids refer to the same colors
    config.palette = Some(entry.layers.palette().clone());
    config.layers = entry.layers.num_layers();
    config.strokes = Some(doc);
    check_config(&config, &entry.volume)?;
    let job = state.enqueue(entry.volume.clone(), config)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job }))).into_response())
}
