//! JSON-over-HTTP service for the clinician review loop.
//!
//! Every response is a projection of stored [`ExpertSession`]s and run files;
//! the service keeps no state of its own beyond the session table.

mod error;
mod handlers;

use std::collections::BTreeMap;
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Request, State};
use axum::http::header::AUTHORIZATION;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use cogscreen_core::classifier::ClassifyOptions;
use cogscreen_core::corpus::{prompt_library, save_run, RunStoreError};
use cogscreen_core::expert::ExpertSession;
use cogscreen_core::{ChatBackend, Dataset, GenerationParams, OrchestratorConfig, PromptConfig, StopReason};
use tokio::net::TcpListener;
use tower_http::services::ServeDir;
use tracing::{info, warn};

pub use error::ApiError;

pub struct ServiceConfig {
    pub dataset: Dataset,
    pub backend: Arc<dyn ChatBackend>,
    pub orchestrator: OrchestratorConfig,
    pub classify: ClassifyOptions,
    pub params: GenerationParams,
    /// Read-only directory of stored run files.
    pub runs_dir: Option<PathBuf>,
    /// Where open sessions are written on shutdown.
    pub sessions_dir: Option<PathBuf>,
    pub token: Option<String>,
    /// Built review UI, served under `/`.
    pub ui_dir: Option<PathBuf>,
    pub presets: Vec<PromptConfig>,
    /// Cases sampled per class when a session does not ask for a size.
    pub default_sample_size: usize,
}

impl ServiceConfig {
    pub fn new(dataset: Dataset, backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            dataset,
            backend,
            orchestrator: OrchestratorConfig::default(),
            classify: ClassifyOptions::default(),
            params: GenerationParams::default(),
            runs_dir: None,
            sessions_dir: None,
            token: None,
            ui_dir: None,
            presets: prompt_library(),
            default_sample_size: cogscreen_core::expert::DEFAULT_SAMPLE_SIZE,
        }
    }
}

pub(crate) type SessionHandle = Arc<Mutex<ExpertSession>>;

pub(crate) struct Inner {
    pub config: ServiceConfig,
    pub dataset: Arc<Dataset>,
    pub sessions: RwLock<BTreeMap<String, SessionHandle>>,
    next_session: AtomicU64,
}

#[derive(Clone)]
pub struct AppState(pub(crate) Arc<Inner>);

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        let dataset = Arc::new(config.dataset.clone());
        Self(Arc::new(Inner {
            config,
            dataset,
            sessions: RwLock::new(BTreeMap::new()),
            next_session: AtomicU64::new(1),
        }))
    }

    pub(crate) fn next_session_id(&self) -> String {
        format!("s{}", self.0.next_session.fetch_add(1, Ordering::Relaxed))
    }

    pub(crate) fn session(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.0
            .sessions
            .read()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }

    pub fn session_snapshot(&self, id: &str) -> Option<ExpertSession> {
        self.session(id).ok().map(|s| s.lock().expect("session lock").clone())
    }

    /// Closes every session that is still open as interrupted and writes all
    /// sessions to the sessions directory. Returns the files written.
    pub fn persist_sessions(&self) -> Result<Vec<PathBuf>, RunStoreError> {
        let handles: Vec<SessionHandle> =
            self.0.sessions.read().expect("session table lock").values().cloned().collect();
        let mut written = Vec::new();
        for h in handles {
            let mut s = h.lock().expect("session lock");
            s.close(StopReason::Interrupted);
            if let Some(dir) = &self.0.config.sessions_dir {
                let path = dir.join(format!("{}.json", s.run.run_id));
                save_run(&s.run, &path)?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.0.config.token {
        let ok = request
            .headers()
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::unauthorized().into_response();
        }
    }
    next.run(request).await
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/api/health", get(handlers::health))
        .route("/api/prompts", get(handlers::prompts))
        .route("/api/sessions", post(handlers::create_session).get(handlers::list_sessions))
        .route("/api/sessions/{id}", get(handlers::get_session))
        .route("/api/sessions/{id}/prompts", post(handlers::submit_prompt))
        .route("/api/sessions/{id}/close", post(handlers::close_session))
        .route("/api/sessions/{id}/iterations/{i}/misclassified", get(handlers::misclassified))
        .route("/api/sessions/{id}/compare", get(handlers::compare))
        .route("/api/runs", get(handlers::list_runs))
        .route("/api/runs/{id}", get(handlers::get_run))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state.clone());
    match &state.0.config.ui_dir {
        Some(dir) if Path::new(dir).is_dir() => api.fallback_service(ServeDir::new(dir)),
        _ => api,
    }
}

/// Serves until `shutdown` resolves, then persists open sessions.
pub async fn serve<F>(listener: TcpListener, state: AppState, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    info!(addr = %listener.local_addr()?, "api listening");
    axum::serve(listener, router(state.clone())).with_graceful_shutdown(shutdown).await?;
    match state.persist_sessions() {
        Ok(files) => info!(count = files.len(), "sessions persisted"),
        Err(e) => warn!(error = %e, "could not persist sessions"),
    }
    Ok(())
}
