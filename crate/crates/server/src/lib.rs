//! HTTP/JSON service over the engine plus the interactive stream. Routes are
//! listed in [`colnav_proto::api`].

pub mod interactive;
pub mod stream;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::net::TcpListener;

use colnav_core::config::Config;
use colnav_core::io::FrameStream;
use colnav_core::metrics::{kappa_table, read_annotations};
use colnav_core::replay::{run_replay, simulate, write_outputs, ReplayOptions};
use colnav_core::Error;
use colnav_proto::api::{ApiError, ConfigSource, ErrorKind, EvalRequest, ReplayRequest, SimulateRequest};

#[derive(Clone)]
pub struct AppState {
    pub config: Arc<Config>,
    busy: Arc<AtomicBool>,
}

impl AppState {
    pub fn new(config: Config) -> Self {
        Self {
            config: Arc::new(config),
            busy: Arc::new(AtomicBool::new(false)),
        }
    }
}

pub fn router(config: Config) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/config", get(config_handler))
        .route("/v1/simulate", post(simulate_handler))
        .route("/v1/replay", post(replay_handler))
        .route("/v1/eval", post(eval_handler))
        .route("/v1/stream", get(stream::handler))
        .with_state(AppState::new(config))
}

pub async fn serve(listener: TcpListener, config: Config) -> std::io::Result<()> {
    axum::serve(listener, router(config)).await
}

/// Binds `addr` and serves in the background; returns the bound address.
pub async fn spawn(addr: &str, config: Config) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, tokio::spawn(serve(listener, config))))
}

/// Whether an engine error stems from the request (bad input) or from the
/// run itself.
pub fn classify(e: &Error) -> ErrorKind {
    match e {
        Error::Config(_)
        | Error::Format(_)
        | Error::NoFrames
        | Error::InvalidIntrinsics(_)
        | Error::OutOfRange { .. }
        | Error::LengthMismatch(..)
        | Error::DimensionMismatch { .. }
        | Error::CameraOutsideTube { .. }
        | Error::DegenerateTrajectory { .. }
        | Error::InsufficientTrajectory { .. }
        | Error::DuplicateFrame(_)
        | Error::UnknownFrame(_)
        | Error::UnknownSegment(_)
        | Error::SegmentExists(_) => ErrorKind::Input,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => ErrorKind::Input,
        _ => ErrorKind::Runtime,
    }
}

pub struct Failure(ApiError);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(ApiError {
            kind: classify(&e),
            message: e.to_string(),
        })
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let status = match self.0.kind {
            ErrorKind::Input => StatusCode::BAD_REQUEST,
            ErrorKind::Runtime => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(self.0)).into_response()
    }
}

fn runtime(message: impl ToString) -> Failure {
    Failure(ApiError {
        kind: ErrorKind::Runtime,
        message: message.to_string(),
    })
}

fn resolve_config(base: &Config, src: &ConfigSource) -> Result<Config, Error> {
    let cfg = match &src.config_text {
        Some(text) => Config::parse(text)?,
        None => base.clone(),
    };
    cfg.with_overrides(src.overrides.iter().map(|(k, v)| (k.as_str(), v.as_str())))
}

/// Runs engine work off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Error> + Send + 'static) -> Result<T, Failure> {
    tokio::task::spawn_blocking(f).await.map_err(runtime)?.map_err(Failure::from)
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn config_handler(State(st): State<AppState>) -> Json<Value> {
    Json(Value::Object(st.config.to_map()))
}

async fn simulate_handler(State(st): State<AppState>, Json(req): Json<SimulateRequest>) -> Result<Json<Value>, Failure> {
    let cfg = resolve_config(&st.config, &req.config)?;
    tracing::info!(out = %req.out_dir, "simulate");
    let summary = blocking(move || simulate(&cfg, Path::new(&req.out_dir))).await?;
    Ok(Json(serde_json::to_value(summary).map_err(runtime)?))
}

async fn replay_handler(State(st): State<AppState>, Json(req): Json<ReplayRequest>) -> Result<Json<Value>, Failure> {
    let cfg = resolve_config(&st.config, &req.config)?;
    tracing::info!(input = %req.input_dir, "replay");
    let report = blocking(move || {
        let stream = FrameStream::open(Path::new(&req.input_dir))?;
        let outcome = run_replay(
            &stream,
            &cfg,
            ReplayOptions {
                compass: req.compass,
                omit_timing: req.omit_timing,
            },
        )?;
        if let Some(out) = &req.out_dir {
            write_outputs(Path::new(out), &outcome)?;
        }
        Ok(outcome.report)
    })
    .await?;
    Ok(Json(serde_json::to_value(report).map_err(runtime)?))
}

async fn eval_handler(Json(req): Json<EvalRequest>) -> Result<Json<Value>, Failure> {
    let reference = read_annotations(req.annotations_csv.as_bytes())?;
    let predicted = read_annotations(req.predictions_csv.as_bytes())?;
    let table = kappa_table(&reference, &predicted)?;
    Ok(Json(serde_json::to_value(table).map_err(runtime)?))
}
