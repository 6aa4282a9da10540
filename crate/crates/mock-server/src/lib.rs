//! HTTP front for the deterministic mock model services, so integration
//! tests and local runs exercise the real HTTP client.

use std::io;
use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::State;
pub use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use granary_core::clients::wire::*;
use granary_core::clients::{ClientError, ModelBackend, Window};
use tokio::sync::oneshot;

#[derive(Clone)]
struct AppState {
    backend: Arc<dyn ModelBackend>,
    hits: Arc<AtomicU64>,
}

fn failure(e: ClientError) -> Response {
    (StatusCode::INTERNAL_SERVER_ERROR, Json(ErrorResponse { error: e.to_string() })).into_response()
}

async fn detect_language(State(s): State<AppState>, Json(req): Json<DetectLanguageRequest>) -> Response {
    s.hits.fetch_add(1, Ordering::Relaxed);
    match s.backend.detect_language(&req.audio_ref) {
        Ok(g) => Json(DetectLanguageResponse { lang: g.lang, prob: g.prob }).into_response(),
        Err(e) => failure(e),
    }
}

async fn transcribe(State(s): State<AppState>, Json(req): Json<TranscribeRequest>) -> Response {
    s.hits.fetch_add(1, Ordering::Relaxed);
    match s.backend.transcribe(&req.audio_ref, &req.lang_hint, Window::new(req.start, req.end)) {
        Ok(r) => Json(r).into_response(),
        Err(e) => failure(e),
    }
}

async fn translate(State(s): State<AppState>, Json(req): Json<TranslateRequest>) -> Response {
    s.hits.fetch_add(1, Ordering::Relaxed);
    match s.backend.translate(&req.text, &req.src, &req.tgt) {
        Ok(text) => Json(TextResponse { text }).into_response(),
        Err(e) => failure(e),
    }
}

async fn qe_score(State(s): State<AppState>, Json(req): Json<QeRequest>) -> Response {
    s.hits.fetch_add(1, Ordering::Relaxed);
    match s.backend.qe_score(&req.src_text, &req.tgt_text, &req.src, &req.tgt) {
        Ok(score) => Json(QeResponse { score }).into_response(),
        Err(e) => failure(e),
    }
}

async fn restore(State(s): State<AppState>, Json(req): Json<RestoreRequest>) -> Response {
    s.hits.fetch_add(1, Ordering::Relaxed);
    match s.backend.restore(&req.prompt, &req.lang) {
        Ok(text) => Json(TextResponse { text }).into_response(),
        Err(e) => failure(e),
    }
}

pub fn router(backend: Arc<dyn ModelBackend>, hits: Arc<AtomicU64>) -> Router {
    Router::new()
        .route(DETECT_LANGUAGE, post(detect_language))
        .route(TRANSCRIBE, post(transcribe))
        .route(TRANSLATE, post(translate))
        .route(QE_SCORE, post(qe_score))
        .route(RESTORE_PNC, post(restore))
        .with_state(AppState { backend, hits })
}

/// Answers every request with `status`; for exercising client retries.
pub fn failing_router(status: StatusCode, hits: Arc<AtomicU64>) -> Router {
    Router::new().fallback(move || {
        let hits = hits.clone();
        async move {
            hits.fetch_add(1, Ordering::Relaxed);
            (status, Json(ErrorResponse { error: "injected failure".into() }))
        }
    })
}

/// A server running on a background thread; shut down on drop.
pub struct MockServer {
    addr: SocketAddr,
    hits: Arc<AtomicU64>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn spawn(backend: Arc<dyn ModelBackend>, addr: SocketAddr) -> io::Result<Self> {
        let hits = Arc::new(AtomicU64::new(0));
        Self::spawn_router(router(backend, hits.clone()), hits, addr)
    }

    pub fn spawn_failing(status: StatusCode, addr: SocketAddr) -> io::Result<Self> {
        let hits = Arc::new(AtomicU64::new(0));
        Self::spawn_router(failing_router(status, hits.clone()), hits, addr)
    }

    fn spawn_router(app: Router, hits: Arc<AtomicU64>, addr: SocketAddr) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener registers");
                let shutdown = async {
                    let _ = rx.await;
                };
                if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
                    log::error!("mock server: {e}");
                }
            });
        });
        Ok(Self { addr, hits, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests received so far.
    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    /// Block until the server stops.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
