use std::path::Path;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::Json;
use cogscreen_core::agentic::{RefinementAction, RunRecord};
use cogscreen_core::classifier::classify_cohort;
use cogscreen_core::corpus::load_run;
use cogscreen_core::expert::{DeltaReport, ExpertSession, PendingClassification, SessionStatus};
use cogscreen_core::{ConfusionCounts, Lineage, MetricsReport, PromptConfig, StopReason};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::warn;

use crate::{ApiError, AppState, SessionHandle};

type ApiResult<T> = Result<T, ApiError>;

pub async fn health(State(state): State<AppState>) -> Json<Value> {
    let ds = &state.0.dataset;
    Json(json!({
        "status": "ok",
        "dataset_id": ds.id(),
        "patients": ds.patient_count(),
        "notes": ds.note_count(),
    }))
}

#[derive(Serialize)]
pub struct SessionPrompts {
    session_id: String,
    prompts: Vec<PromptConfig>,
}

pub async fn prompts(State(state): State<AppState>) -> Json<Value> {
    let sessions: Vec<SessionPrompts> = state
        .0
        .sessions
        .read()
        .expect("session table lock")
        .iter()
        .map(|(id, s)| SessionPrompts {
            session_id: id.clone(),
            prompts: s.lock().expect("session lock").run.prompts().cloned().collect(),
        })
        .collect();
    Json(json!({"presets": state.0.config.presets, "sessions": sessions}))
}

#[derive(Debug, Deserialize)]
pub struct PromptBody {
    #[serde(default)]
    pub prompt_id: Option<String>,
    pub system_text: String,
    pub user_template: String,
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub p0_id: Option<String>,
    #[serde(default)]
    pub prompt: Option<PromptBody>,
    #[serde(default)]
    pub sample_size: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Serialize)]
pub struct IterationSummary {
    index: u32,
    prompt: PromptConfig,
    counts: ConfusionCounts,
    metrics: MetricsReport,
    uncertain: u64,
    advised_action: RefinementAction,
}

#[derive(Serialize)]
pub struct SessionSummary {
    session_id: String,
    status: SessionStatus,
    sample_size: usize,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pending_prompt: Option<PromptConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    last_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    outcome: Option<StopReason>,
    iterations: Vec<IterationSummary>,
}

fn summary(s: &ExpertSession) -> SessionSummary {
    SessionSummary {
        session_id: s.session_id.clone(),
        status: s.status,
        sample_size: s.sample_size,
        seed: s.seed,
        pending_prompt: s.pending_prompt.clone(),
        last_error: s.last_error.clone(),
        outcome: s.run.outcome,
        iterations: s
            .run
            .iterations
            .iter()
            .map(|it| IterationSummary {
                index: it.index,
                prompt: it.prompt.clone(),
                counts: it.counts,
                metrics: it.report,
                uncertain: it.counts.uncertain,
                advised_action: it.action,
            })
            .collect(),
    }
}

/// Runs the accepted prompt on the blocking pool and records the outcome.
fn spawn_classification(state: &AppState, handle: SessionHandle, pending: PendingClassification) {
    let state = state.clone();
    tokio::task::spawn_blocking(move || {
        let inner = &state.0;
        let result = classify_cohort(
            &inner.dataset,
            &pending.prompt,
            inner.config.backend.as_ref(),
            &inner.config.params,
            &inner.config.classify,
        );
        let mut s = handle.lock().expect("session lock");
        match result {
            Ok(cohort) => {
                if let Err(e) = s.finish_classification(&inner.dataset, cohort) {
                    warn!(session = %s.session_id, error = %e, "could not record classification");
                }
            }
            Err(e) => {
                warn!(session = %s.session_id, error = %e, "classification failed");
                s.fail_classification(e.to_string());
            }
        }
    });
}

pub async fn create_session(
    State(state): State<AppState>,
    Json(body): Json<CreateSession>,
) -> ApiResult<(StatusCode, Json<SessionSummary>)> {
    let p0 = match (&body.p0_id, body.prompt) {
        (Some(_), Some(_)) => return Err(ApiError::bad_request("give either p0_id or prompt, not both")),
        (Some(id), None) => state
            .0
            .config
            .presets
            .iter()
            .find(|p| &p.prompt_id == id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no preset {id}")))?,
        (None, Some(p)) => PromptConfig::new(p.prompt_id.unwrap_or_else(|| "P0".into()), p.system_text, p.user_template)
            .with_lineage(Lineage::initial()),
        (None, None) => state
            .0
            .config
            .presets
            .iter()
            .find(|p| p.prompt_id == "P0")
            .cloned()
            .ok_or_else(|| ApiError::bad_request("no prompt given and no P0 preset"))?,
    };
    p0.validate()?;
    let mut config = state.0.config.orchestrator.clone();
    if let Some(seed) = body.seed {
        config.rng_seed = seed;
    }
    let mut session = ExpertSession::new(state.next_session_id(), &state.0.dataset, &config);
    let n = body.sample_size.unwrap_or(state.0.config.default_sample_size);
    if n == 0 {
        return Err(ApiError::bad_request("sample_size must be positive"));
    }
    session = session.with_sample_size(n);
    let pending = session.begin_initial(p0)?;
    let out = summary(&session);
    let handle: SessionHandle = std::sync::Arc::new(std::sync::Mutex::new(session));
    state.0.sessions.write().expect("session table lock").insert(out.session_id.clone(), handle.clone());
    spawn_classification(&state, handle, pending);
    Ok((StatusCode::ACCEPTED, Json(out)))
}

pub async fn list_sessions(State(state): State<AppState>) -> Json<Vec<SessionSummary>> {
    let table = state.0.sessions.read().expect("session table lock");
    Json(table.values().map(|s| summary(&s.lock().expect("session lock"))).collect())
}

pub async fn get_session(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionSummary>> {
    let h = state.session(&id)?;
    let s = h.lock().expect("session lock");
    Ok(Json(summary(&s)))
}

pub async fn submit_prompt(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<PromptBody>,
) -> ApiResult<(StatusCode, Json<SessionSummary>)> {
    let h = state.session(&id)?;
    let (pending, out) = {
        let mut s = h.lock().expect("session lock");
        let prompt_id = body.prompt_id.unwrap_or_else(|| format!("XP{}", s.run.iterations.len()));
        let pending = s.begin_revision(PromptConfig::new(prompt_id, body.system_text, body.user_template))?;
        (pending, summary(&s))
    };
    spawn_classification(&state, h, pending);
    Ok((StatusCode::ACCEPTED, Json(out)))
}

pub async fn close_session(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionSummary>> {
    let h = state.session(&id)?;
    let mut s = h.lock().expect("session lock");
    if s.status == SessionStatus::Classifying {
        return Err(ApiError::from(cogscreen_core::expert::SessionError::SessionBusy(s.status)));
    }
    s.close(StopReason::Closed);
    Ok(Json(summary(&s)))
}

#[derive(Debug, Deserialize)]
pub struct ClassQuery {
    #[serde(default)]
    class: Option<String>,
}

pub async fn misclassified(
    State(state): State<AppState>,
    UrlPath((id, i)): UrlPath<(String, usize)>,
    Query(q): Query<ClassQuery>,
) -> ApiResult<Json<Value>> {
    let h = state.session(&id)?;
    let bundle = h.lock().expect("session lock").review_bundle_for(&state.0.dataset, i)?;
    let body = match q.class.as_deref() {
        None => serde_json::to_value(&bundle).expect("bundle serializes"),
        Some(class @ ("fp" | "fn")) => {
            let cases = if class == "fp" { &bundle.sampled_fp } else { &bundle.sampled_fn };
            json!({
                "iteration_index": bundle.iteration_index,
                "class": class,
                "sample_seed": bundle.sample_seed,
                "sample_size": bundle.sample_size,
                "cases": cases,
            })
        }
        Some(other) => return Err(ApiError::bad_request(format!("class must be fp or fn, got {other}"))),
    };
    Ok(Json(body))
}

#[derive(Debug, Deserialize)]
pub struct CompareQuery {
    i: usize,
    j: usize,
}

pub async fn compare(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<CompareQuery>,
) -> ApiResult<Json<DeltaReport>> {
    let h = state.session(&id)?;
    let s = h.lock().expect("session lock");
    Ok(Json(s.compare_iterations(q.i, q.j)?))
}

fn stored_runs(dir: Option<&Path>) -> Vec<(String, RunRecord)> {
    let Some(dir) = dir else { return Vec::new() };
    let Ok(entries) = std::fs::read_dir(dir) else { return Vec::new() };
    let mut paths: Vec<_> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .filter_map(|p| match load_run(&p) {
            Ok(r) => Some((p.file_stem()?.to_string_lossy().into_owned(), r)),
            Err(e) => {
                warn!(path = %p.display(), error = %e, "skipping unreadable run file");
                None
            }
        })
        .collect()
}

pub async fn list_runs(State(state): State<AppState>) -> Json<Vec<Value>> {
    let runs = stored_runs(state.0.config.runs_dir.as_deref());
    Json(
        runs.into_iter()
            .map(|(file, r)| {
                json!({
                    "run_id": r.run_id,
                    "file": file,
                    "mode": r.mode,
                    "dataset_id": r.dataset_id,
                    "iterations": r.iterations.len(),
                    "outcome": r.outcome,
                    "prompts": r.prompts().map(|p| p.prompt_id.clone()).collect::<Vec<_>>(),
                })
            })
            .collect(),
    )
}

pub async fn get_run(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<RunRecord>> {
    stored_runs(state.0.config.runs_dir.as_deref())
        .into_iter()
        .find(|(file, r)| r.run_id == id || *file == id)
        .map(|(_, r)| Json(r))
        .ok_or_else(|| ApiError::not_found(format!("no run {id}")))
}
