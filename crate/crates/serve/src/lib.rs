//! HTTP control surface for a running pipeline.
//!
//! | route          | purpose                                              |
//! |----------------|------------------------------------------------------|
//! | `GET /status`  | latest frame report and the active config            |
//! | `GET /stream`  | server-sent events: `report`, `frame`, `end`         |
//! | `POST /config` | apply a config patch                                 |
//! | `GET /eoq`     | most recent End-of-Queue record                      |
//!
//! The server only reads pipeline output and writes config patches, so it
//! never blocks the vision loop.

use std::convert::Infallible;
use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use base64::Engine;
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::sync::oneshot;
use tower_http::cors::CorsLayer;

use eoq_core::pipeline::{ConfigPatch, FieldError, FrameReport, PipelineConfig, SharedState};

/// How often `/stream` checks for a new report.
const POLL_INTERVAL: Duration = Duration::from_millis(5);

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("cannot bind port {port}: {source}")]
    Bind { port: u16, source: std::io::Error },
    #[error("runtime: {0}")]
    Runtime(#[from] std::io::Error),
}

/// A running server. Dropping it shuts the server down.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Starts serving `state` on localhost. Port 0 picks a free port.
pub fn serve(state: Arc<SharedState>, port: u16) -> Result<ServerHandle, ServeError> {
    let listener = TcpListener::bind(("127.0.0.1", port)).map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServeError::PortInUse(port),
        _ => ServeError::Bind { port, source: e },
    })?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .thread_name("serve")
        .enable_all()
        .build()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(state);
    let thread = thread::Builder::new().name("serve".into()).spawn(move || {
        runtime.block_on(async move {
            let listener = match tokio::net::TcpListener::from_std(listener) {
                Ok(l) => l,
                Err(e) => {
                    tracing::error!(error = %e, "cannot adopt listener");
                    return;
                }
            };
            let server = axum::serve(listener, app).with_graceful_shutdown(async {
                let _ = rx.await;
            });
            if let Err(e) = server.await {
                tracing::error!(error = %e, "server stopped");
            }
        });
        // streams may still be open; do not wait for them
        runtime.shutdown_background();
    })?;
    tracing::info!(%addr, "control endpoint listening");
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

pub fn router(state: Arc<SharedState>) -> Router {
    Router::new()
        .route("/status", get(status))
        .route("/stream", get(stream))
        .route("/config", get(get_config).post(post_config))
        .route("/eoq", get(eoq))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Status {
    pub report: Option<FrameReport>,
    pub config: PipelineConfig,
    pub sequence: u64,
    pub finished: bool,
}

async fn status(State(state): State<Arc<SharedState>>) -> Json<Status> {
    Json(Status {
        report: state.report().as_ref().clone(),
        config: state.config().as_ref().clone(),
        sequence: state.sequence(),
        finished: state.is_finished(),
    })
}

async fn get_config(State(state): State<Arc<SharedState>>) -> Json<PipelineConfig> {
    Json(state.config().as_ref().clone())
}

fn errors(status: StatusCode, errors: Vec<FieldError>) -> Response {
    (status, Json(json!({ "errors": errors }))).into_response()
}

async fn post_config(State(state): State<Arc<SharedState>>, body: Bytes) -> Response {
    let patch: ConfigPatch = match serde_json::from_slice(&body) {
        Ok(p) => p,
        Err(e) => {
            let status = if e.is_data() { StatusCode::UNPROCESSABLE_ENTITY } else { StatusCode::BAD_REQUEST };
            return errors(
                status,
                vec![FieldError {
                    field: String::new(),
                    message: e.to_string(),
                }],
            );
        }
    };
    match state.apply_patch(&patch) {
        Ok(cfg) => {
            tracing::info!(version = cfg.version, "config updated");
            Json(json!({ "version": cfg.version, "config": cfg.as_ref() })).into_response()
        }
        Err(e) => errors(StatusCode::UNPROCESSABLE_ENTITY, e.errors),
    }
}

async fn eoq(State(state): State<Arc<SharedState>>) -> Response {
    match state.eoq().as_ref() {
        Some(r) => Json(r).into_response(),
        None => (StatusCode::NOT_FOUND, Json(json!({ "error": "no queue yet" }))).into_response(),
    }
}

#[derive(Debug, Deserialize)]
struct StreamParams {
    /// Include the luminance frame with every report.
    #[serde(default = "yes")]
    frames: bool,
}

fn yes() -> bool {
    true
}

/// Frame payload of a `frame` event. Overlay boxes travel in the matching
/// `report` event.
#[derive(Debug, Serialize, Deserialize)]
pub struct FramePayload {
    pub frame: u64,
    pub t: f64,
    pub width: u32,
    pub height: u32,
    /// Base64 of the row-major luminance bytes.
    pub pixels: String,
}

struct Cursor {
    state: Arc<SharedState>,
    seen: u64,
    frames: bool,
    pending: Option<Event>,
    done: bool,
}

async fn stream(State(state): State<Arc<SharedState>>, Query(params): Query<StreamParams>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let cursor = Cursor {
        seen: 0,
        state,
        frames: params.frames,
        pending: None,
        done: false,
    };
    let events = futures::stream::unfold(cursor, |mut c| async move {
        if let Some(ev) = c.pending.take() {
            return Some((Ok(ev), c));
        }
        if c.done {
            return None;
        }
        loop {
            let seq = c.state.sequence();
            if seq != c.seen {
                c.seen = seq;
                let report = c.state.report();
                let frame = c.state.frame();
                let Some(report) = report.as_ref() else { continue };
                if c.frames {
                    if let Some(f) = frame.as_ref() {
                        let payload = FramePayload {
                            frame: report.frame,
                            t: f.timestamp(),
                            width: f.width(),
                            height: f.height(),
                            pixels: base64::engine::general_purpose::STANDARD.encode(f.pixels()),
                        };
                        c.pending = Event::default().event("frame").json_data(payload).ok();
                    }
                }
                let ev = Event::default().event("report").id(seq.to_string()).json_data(report);
                match ev {
                    Ok(ev) => return Some((Ok(ev), c)),
                    Err(_) => continue,
                }
            }
            if c.state.is_finished() && c.state.sequence() == c.seen {
                c.done = true;
                return Some((Ok(Event::default().event("end").data("source exhausted")), c));
            }
            tokio::time::sleep(POLL_INTERVAL).await;
        }
    });
    Sse::new(events).keep_alive(KeepAlive::default())
}
