//! `/v1` HTTP API: synchronous inpainting over an immutable model, a bounded
//! worker pool, and a TTL cache of per-iteration traces.
//!
//! | route | method | |
//! |---|---|---|
//! | `/v1/health` | GET | `{"status":"ok","checkpoint":id}`, 503 without a model |
//! | `/v1/checkpoints` | GET | checkpoints in the checkpoint directory |
//! | `/v1/inpaint` | POST | [`api::InpaintRequest`] to [`api::InpaintResponse`] |
//! | `/v1/trace/{job}/{t}` | GET | [`api::TraceFrame`] for iteration `t` (1-based) |

pub mod api;
mod traces;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use confill::pipeline::{self, Model};
use serde::Serialize;
use tokio::sync::Semaphore;

use api::{ApiError, ErrorBody, ErrorDetail, InpaintResponse, StepSummary, TraceFrame};
pub use traces::TraceCache;

pub const ENV_CHECKPOINT: &str = "CONFILL_CHECKPOINT";
pub const ENV_CHECKPOINT_DIR: &str = "CONFILL_CHECKPOINT_DIR";
pub const ENV_WORKERS: &str = "CONFILL_WORKERS";
pub const ENV_DEADLINE_MS: &str = "CONFILL_DEADLINE_MS";
pub const ENV_TRACE_TTL_S: &str = "CONFILL_TRACE_TTL_S";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub checkpoint: Option<PathBuf>,
    /// Listed by `/v1/checkpoints`; defaults to the checkpoint's directory.
    pub checkpoint_dir: Option<PathBuf>,
    pub workers: usize,
    pub deadline: Duration,
    pub trace_ttl: Duration,
    pub trace_capacity: usize,
    pub max_body_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            checkpoint_dir: None,
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            deadline: Duration::from_secs(30),
            trace_ttl: Duration::from_secs(600),
            trace_capacity: 64,
            max_body_bytes: 64 << 20,
        }
    }
}

impl ServiceConfig {
    /// Defaults overridden by `CONFILL_*` environment variables.
    pub fn from_env() -> Result<Self, String> {
        let mut c = Self::default();
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let num = |k: &str, v: String| v.parse::<u64>().map_err(|_| format!("{k}: expected an integer, got {v:?}"));
        c.checkpoint = var(ENV_CHECKPOINT).map(PathBuf::from);
        c.checkpoint_dir = var(ENV_CHECKPOINT_DIR).map(PathBuf::from);
        if let Some(v) = var(ENV_WORKERS) {
            c.workers = num(ENV_WORKERS, v)?.max(1) as usize;
        }
        if let Some(v) = var(ENV_DEADLINE_MS) {
            c.deadline = Duration::from_millis(num(ENV_DEADLINE_MS, v)?);
        }
        if let Some(v) = var(ENV_TRACE_TTL_S) {
            c.trace_ttl = Duration::from_secs(num(ENV_TRACE_TTL_S, v)?);
        }
        Ok(c)
    }
}

#[derive(Clone)]
pub struct AppState {
    model: Option<Arc<Model>>,
    config: Arc<ServiceConfig>,
    pool: Arc<Semaphore>,
    traces: Arc<TraceCache>,
}

impl AppState {
    pub fn new(model: Option<Model>, config: ServiceConfig) -> Self {
        Self {
            model: model.map(Arc::new),
            pool: Arc::new(Semaphore::new(config.workers.max(1))),
            traces: Arc::new(TraceCache::new(config.trace_ttl, config.trace_capacity)),
            config: Arc::new(config),
        }
    }

    /// Load the configured checkpoint, if any. A configured checkpoint that
    /// fails to load is an error rather than a model-less server.
    pub fn load(config: ServiceConfig) -> confill::Result<Self> {
        let model = config.checkpoint.as_ref().map(Model::load).transpose()?;
        Ok(Self::new(model, config))
    }

    pub fn model(&self) -> Option<&Model> {
        self.model.as_deref()
    }

    pub fn traces(&self) -> &TraceCache {
        &self.traces
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = ErrorBody { error: ErrorDetail { code: self.code().into(), message: self.to_string() } };
        (status, Json(body)).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.config.max_body_bytes;
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/checkpoints", get(checkpoints))
        .route("/v1/inpaint", post(inpaint))
        .route("/v1/trace/{job}/{t}", get(trace))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Bind and serve until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

#[derive(Serialize)]
struct Health<'a> {
    status: &'a str,
    checkpoint: Option<&'a str>,
}

async fn health(State(s): State<AppState>) -> Response {
    match s.model() {
        Some(m) => Json(Health { status: "ok", checkpoint: Some(&m.id) }).into_response(),
        None => (StatusCode::SERVICE_UNAVAILABLE, Json(Health { status: "no_model", checkpoint: None })).into_response(),
    }
}

#[derive(Serialize)]
struct CheckpointEntry {
    id: String,
    path: String,
    loaded: bool,
}

async fn checkpoints(State(s): State<AppState>) -> Result<Json<Vec<CheckpointEntry>>, ApiError> {
    let dir = s
        .config
        .checkpoint_dir
        .clone()
        .or_else(|| s.config.checkpoint.as_ref().and_then(|p| p.parent()).map(PathBuf::from));
    let loaded = s.model().map(|m| m.id.clone());
    let mut out = Vec::new();
    if let Some(dir) = dir {
        let entries = std::fs::read_dir(&dir).map_err(|e| ApiError::Internal(format!("{}: {e}", dir.display())))?;
        for e in entries.flatten() {
            let path = e.path();
            if path.extension().is_some_and(|x| x == "ckpt") {
                let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                out.push(CheckpointEntry { loaded: loaded.as_deref() == Some(id.as_str()), id, path: path.display().to_string() });
            }
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Json(out))
}

async fn inpaint(State(s): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let model = s.model.clone().ok_or(ApiError::NoModel)?;
    let job = api::parse_request(&body)?;
    if job.checkpoint.as_ref().is_some_and(|c| *c != model.id) {
        return Err(ApiError::NoModel);
    }
    let id = api::job_id(&model.id, &body);
    let deadline = job
        .deadline_ms
        .map(Duration::from_millis)
        .map_or(s.config.deadline, |d| d.min(s.config.deadline));
    let started = Instant::now();
    let work = async {
        let permit = s.pool.clone().acquire_owned().await.map_err(|e| ApiError::Internal(e.to_string()))?;
        let mode = job.mode;
        let run = tokio::task::spawn_blocking(move || {
            let _permit = permit;
            pipeline::inpaint(&model, &job.image, &job.hole, job.iterations, job.mode, &job.controls)
        });
        let out = run.await.map_err(|e| ApiError::Internal(e.to_string()))??;
        Ok::<_, ApiError>((out, mode))
    };
    let (out, mode) = tokio::time::timeout(deadline, work)
        .await
        .map_err(|_| ApiError::Deadline(deadline.as_millis() as u64))??;

    let body = InpaintResponse {
        job: id.clone(),
        checkpoint: s.model().map(|m| m.id.clone()).unwrap_or_default(),
        mode: match mode {
            pipeline::Mode::Direct => "direct".into(),
            pipeline::Mode::Upsampled => "upsampled".into(),
        },
        image: api::b64_encode(&out.image.encode_png()?),
        trace: out
            .trace
            .steps
            .iter()
            .map(|st| {
                Ok(StepSummary {
                    t: st.t,
                    accepted: st.u.count(),
                    remaining: st.m.count() - st.u.count(),
                    y: api::b64_encode(&st.y.encode_png()?),
                    c: api::b64_encode(&st.c.encode_png()?),
                    m: api::b64_encode(&st.m.encode_png()?),
                })
            })
            .collect::<confill::Result<_>>()?,
        residual: out.residual.as_ref().map(|r| r.encode_png().map(|b| api::b64_encode(&b))).transpose()?,
        fallback: out.fallback,
        timings_ms: out
            .timings
            .iter()
            .map(|(k, v)| (k.to_string(), v * 1e3))
            .chain([("total".to_string(), started.elapsed().as_secs_f64() * 1e3)])
            .collect(),
    };
    s.traces.insert(id, out.trace);
    Ok(Json(body).into_response())
}

async fn trace(State(s): State<AppState>, Path((job, t)): Path<(String, usize)>) -> Result<Json<TraceFrame>, ApiError> {
    let trace = s.traces.get(&job).ok_or_else(|| ApiError::NotFound(format!("no trace for job {job}")))?;
    let step = t
        .checked_sub(1)
        .and_then(|i| trace.steps.get(i))
        .ok_or_else(|| ApiError::NotFound(format!("job {job} has {} iterations", trace.steps.len())))?;
    let png = |b: confill::Result<Vec<u8>>| b.map(|b| api::b64_encode(&b));
    Ok(Json(TraceFrame {
        job,
        t: step.t,
        y: png(step.y.encode_png())?,
        c: png(step.c.encode_png())?,
        m: png(step.m.encode_png())?,
        u: png(step.u.encode_png())?,
    }))
}
