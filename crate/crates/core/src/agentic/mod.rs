//! The automated refinement loop: classify, evaluate, route, improve,
//! summarize, repeat.

pub mod agents;
pub mod router;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

pub use agents::{
    improve_sensitivity, improve_specificity, summarize, summarize_sensitivity, summarize_specificity,
    truncate_head_biased, wrap_prompt, AgentError, AgentProfile, AgentProfiles, AgentTranscript, ImproverSettings,
};
pub use router::{route, ActionKind, RefinementAction, RoutedStep, StopReason};

use crate::classifier::{classify_cohort, ClassifyError, ClassifyOptions, CohortVerdicts};
use crate::corpus::Dataset;
use crate::domain::{
    AgentRole, ConfigError, ConfusionCounts, MetricsReport, OrchestratorConfig, PromptConfig, SopDocument,
    SopRouting, SummarizerPairing, TemplateError,
};
use crate::evaluator::{evaluate, misclassified, EvalError, ReportRow};
use crate::gateway::ChatBackend;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: u32,
    pub prompt: PromptConfig,
    pub cohort: CohortVerdicts,
    pub counts: ConfusionCounts,
    pub report: MetricsReport,
    /// In expert runs this is the router's advice; the reviewer decides.
    pub action: RefinementAction,
    pub agent_transcripts: Vec<AgentTranscript>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunMode {
    Agentic,
    Expert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub mode: RunMode,
    pub dataset_id: String,
    pub config: OrchestratorConfig,
    pub iterations: Vec<IterationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sop: Option<SopDocument>,
    /// Set once the run has stopped.
    #[serde(default)]
    pub outcome: Option<StopReason>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("iteration {index}: stored {field} differs from the recomputed value")]
    Diverged { index: u32, field: &'static str },
}

impl RunRecord {
    pub fn is_stopped(&self) -> bool {
        self.outcome.is_some()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.iterations.last()
    }

    pub fn prompts(&self) -> impl Iterator<Item = &PromptConfig> {
        self.iterations.iter().map(|it| &it.prompt)
    }

    /// One table row per iteration, labelled by prompt id.
    pub fn report_rows(&self) -> Vec<ReportRow> {
        self.iterations
            .iter()
            .map(|it| {
                let row = ReportRow::new(it.prompt.prompt_id.clone(), it.counts);
                match it.action.stop_reason {
                    Some(r) if it.action.is_stop() => row.with_note(format!("{r:?}")),
                    _ => row,
                }
            })
            .collect()
    }

    /// Recomputes labels, counts and metrics for every iteration from the
    /// stored note verdicts alone, and checks them against the record.
    pub fn replay(&self, dataset: &Dataset) -> Result<Vec<(ConfusionCounts, MetricsReport)>, ReplayError> {
        let mut out = Vec::with_capacity(self.iterations.len());
        for it in &self.iterations {
            let cohort =
                CohortVerdicts::from_verdicts(it.cohort.prompt_id.clone(), dataset, it.cohort.verdicts.clone())?;
            if cohort.labels != it.cohort.labels {
                return Err(ReplayError::Diverged { index: it.index, field: "labels" });
            }
            let (counts, report) = evaluate(dataset, &cohort)?;
            if counts != it.counts {
                return Err(ReplayError::Diverged { index: it.index, field: "counts" });
            }
            if report != it.report {
                return Err(ReplayError::Diverged { index: it.index, field: "report" });
            }
            out.push((counts, report));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgenticError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("SOP document has an empty body")]
    EmptySop,
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub fn run_id(dataset_id: &str, seed: u64) -> String {
    format!("agentic-{dataset_id}-{seed}")
}

struct Refinement {
    prompt: Result<PromptConfig, (StopReason, String)>,
    transcripts: Vec<AgentTranscript>,
}

#[allow(clippy::too_many_arguments)]
fn refine(
    action: RefinementAction,
    index: u32,
    dataset: &Dataset,
    cohort: &CohortVerdicts,
    current: &PromptConfig,
    config: &OrchestratorConfig,
    profiles: &AgentProfiles,
    sop: Option<&SopDocument>,
    backend: &dyn ChatBackend,
) -> Result<Refinement, AgenticError> {
    let cases = misclassified(dataset, cohort)?;
    let settings = ImproverSettings {
        case_cap: config.improver_case_cap,
        char_budget: config.improver_char_budget,
        seed: config.rng_seed.wrapping_add(u64::from(index)),
    };
    let mut transcripts = Vec::new();
    let new_id = format!("AP{}", index + 1);

    let (role, inputs) = match action.kind {
        ActionKind::ImproveSpecificity => {
            let improver_sop = match config.sop_routing {
                SopRouting::SpecificityImprover => sop,
                SopRouting::Summarizer1 => None,
            };
            let role = match config.pairing {
                SummarizerPairing::ByRole => AgentRole::Summarizer1,
                SummarizerPairing::Swapped => AgentRole::Summarizer2,
            };
            let r = improve_specificity(
                &cases.fp_cases,
                improver_sop,
                current,
                backend,
                profiles.get(AgentRole::SpecificityImprover),
                settings,
                &mut transcripts,
            );
            (role, r)
        }
        ActionKind::ImproveSensitivity => {
            let role = match config.pairing {
                SummarizerPairing::ByRole => AgentRole::Summarizer2,
                SummarizerPairing::Swapped => AgentRole::Summarizer1,
            };
            let r = improve_sensitivity(
                &cases.fn_cases,
                current,
                backend,
                profiles.get(AgentRole::SensitivityImprover),
                settings,
                &mut transcripts,
            );
            (role, r)
        }
        ActionKind::Stop => unreachable!("refine called for a stop action"),
    };

    let inputs = match inputs {
        Ok(v) => v,
        Err(e) => return Ok(Refinement { prompt: Err((StopReason::NoCases, e.to_string())), transcripts }),
    };
    let summarizer_sop = match (role, config.sop_routing, action.kind) {
        (AgentRole::Summarizer2, _, _) => sop,
        (AgentRole::Summarizer1, SopRouting::Summarizer1, ActionKind::ImproveSpecificity) => sop,
        _ => None,
    };
    let prompt = summarize(role, &inputs, summarizer_sop, current, &new_id, backend, profiles.get(role), &mut transcripts)
        .map_err(|e| (StopReason::RefinementFailed, e.to_string()));
    Ok(Refinement { prompt, transcripts })
}

/// Runs the automated loop until a stop rule fires.
///
/// Iteration 0 classifies with `p0`. Every later iteration classifies with
/// the prompt produced by the previous iteration's summarizer. When the
/// routed improver has nothing to work with, or the summarizer output is
/// unusable, the current iteration is recorded as the final one with the
/// failure attached.
#[allow(clippy::too_many_arguments)]
pub fn run_agentic(
    dataset: &Dataset,
    p0: &PromptConfig,
    config: &OrchestratorConfig,
    profiles: &AgentProfiles,
    sop: Option<&SopDocument>,
    backend: &dyn ChatBackend,
    options: &ClassifyOptions,
) -> Result<RunRecord, AgenticError> {
    config.validate()?;
    p0.validate()?;
    if sop.is_some_and(|s| s.body.trim().is_empty()) {
        return Err(AgenticError::EmptySop);
    }
    let mut record = RunRecord {
        run_id: run_id(dataset.id(), config.rng_seed),
        mode: RunMode::Agentic,
        dataset_id: dataset.id().to_string(),
        config: config.clone(),
        iterations: Vec::new(),
        sop: sop.cloned(),
        outcome: None,
    };
    let mut history: Vec<RoutedStep> = Vec::new();
    let mut current = p0.clone();
    let specialist = &profiles.get(AgentRole::Specialist).params;

    for index in 0.. {
        let cohort = classify_cohort(dataset, &current, backend, specialist, options)?;
        let (counts, report) = evaluate(dataset, &cohort)?;
        let mut action = route(&report, &history, config, index);
        info!(iteration = index, prompt = %current.prompt_id, metrics = %report.summary_line(), ?action, "iteration evaluated");

        let mut transcripts = Vec::new();
        let mut failure = None;
        let mut next = None;
        if !action.is_stop() {
            let r = refine(action, index, dataset, &cohort, &current, config, profiles, sop, backend)?;
            transcripts = r.transcripts;
            match r.prompt {
                Ok(p) => next = Some(p),
                Err((reason, message)) => {
                    warn!(iteration = index, %message, "refinement failed; stopping");
                    action = RefinementAction::stop(reason);
                    failure = Some(message);
                }
            }
        }
        history.push(RoutedStep { report, action });
        record.iterations.push(IterationRecord {
            index,
            prompt: current.clone(),
            cohort,
            counts,
            report,
            action,
            agent_transcripts: transcripts,
            failure,
        });
        match next {
            Some(p) => current = p,
            None => {
                record.outcome = action.stop_reason;
                break;
            }
        }
    }
    Ok(record)
}
