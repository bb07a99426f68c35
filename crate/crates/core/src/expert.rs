//! Clinician-in-the-loop sessions: run a prompt, hand sampled errors to a
//! reviewer, take a revised prompt, run again.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agentic::{route, IterationRecord, RoutedStep, RunMode, RunRecord, StopReason};
use crate::classifier::{classify_cohort, ClassifyError, ClassifyOptions, CohortVerdicts};
use crate::corpus::Dataset;
use crate::domain::{
    ConfigError, GenerationParams, Lineage, MetricKind, OrchestratorConfig, PatientLabel, Producer,
    PromptConfig, TemplateError,
};
use crate::evaluator::{evaluate, misclassified, sample_cases, EvalError, MisclassifiedCase};
use crate::gateway::ChatBackend;

pub const DEFAULT_SAMPLE_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionStatus {
    AwaitingPrompt,
    Classifying,
    AwaitingReview,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewBundle {
    pub iteration_index: u32,
    pub sampled_fp: Vec<MisclassifiedCase>,
    pub sampled_fn: Vec<MisclassifiedCase>,
    pub sample_seed: u64,
    pub sample_size: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("session is closed")]
    SessionClosed,
    #[error("session is busy ({0:?})")]
    SessionBusy(SessionStatus),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("iteration index {index} out of range (have {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("no classification in progress")]
    NotClassifying,
}

/// A prompt accepted for classification; produced by the `begin_*` calls.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingClassification {
    pub index: u32,
    pub prompt: PromptConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertSession {
    pub session_id: String,
    pub run: RunRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending_review: Option<ReviewBundle>,
    pub status: SessionStatus,
    pub sample_size: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending_prompt: Option<PromptConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_error: Option<String>,
}

impl ExpertSession {
    pub fn new(session_id: impl Into<String>, dataset: &Dataset, config: &OrchestratorConfig) -> Self {
        Self {
            session_id: session_id.into(),
            run: RunRecord {
                run_id: String::new(),
                mode: RunMode::Expert,
                dataset_id: dataset.id().to_string(),
                config: config.clone(),
                iterations: Vec::new(),
                sop: None,
                outcome: None,
            },
            pending_review: None,
            status: SessionStatus::AwaitingPrompt,
            sample_size: DEFAULT_SAMPLE_SIZE,
            seed: config.rng_seed,
            pending_prompt: None,
            last_error: None,
        }
        .with_run_id()
    }

    fn with_run_id(mut self) -> Self {
        self.run.run_id = format!("expert-{}", self.session_id);
        self
    }

    pub fn with_sample_size(mut self, n: usize) -> Self {
        self.sample_size = n;
        self
    }

    fn check_open(&self) -> Result<(), SessionError> {
        if self.status == SessionStatus::Closed {
            Err(SessionError::SessionClosed)
        } else {
            Ok(())
        }
    }

    /// Accepts the baseline prompt. Only valid before any iteration ran.
    pub fn begin_initial(&mut self, p0: PromptConfig) -> Result<PendingClassification, SessionError> {
        self.check_open()?;
        if self.status != SessionStatus::AwaitingPrompt || !self.run.iterations.is_empty() {
            return Err(SessionError::SessionBusy(self.status));
        }
        p0.validate()?;
        self.start(0, p0)
    }

    /// Accepts a reviewer's revision of the latest prompt. Lineage is
    /// rewritten to point at that prompt with a human producer.
    pub fn begin_revision(&mut self, revised: PromptConfig) -> Result<PendingClassification, SessionError> {
        self.check_open()?;
        if self.status != SessionStatus::AwaitingReview {
            return Err(SessionError::SessionBusy(self.status));
        }
        revised.validate()?;
        let last = self.run.iterations.last().expect("reviewed session has iterations");
        let prompt = revised.with_lineage(Lineage::derived(last.prompt.prompt_id.clone(), Producer::Human));
        self.start(last.index + 1, prompt)
    }

    fn start(&mut self, index: u32, prompt: PromptConfig) -> Result<PendingClassification, SessionError> {
        self.status = SessionStatus::Classifying;
        self.pending_prompt = Some(prompt.clone());
        self.last_error = None;
        Ok(PendingClassification { index, prompt })
    }

    /// Records a finished classification and prepares the next review.
    pub fn finish_classification(&mut self, dataset: &Dataset, cohort: CohortVerdicts) -> Result<(), SessionError> {
        if self.status != SessionStatus::Classifying {
            return Err(SessionError::NotClassifying);
        }
        let prompt = self.pending_prompt.take().ok_or(SessionError::NotClassifying)?;
        let (counts, report) = match evaluate(dataset, &cohort) {
            Ok(v) => v,
            Err(e) => {
                self.fail_classification(e.to_string());
                return Err(e.into());
            }
        };
        let index = self.run.iterations.len() as u32;
        let history: Vec<RoutedStep> =
            self.run.iterations.iter().map(|it| RoutedStep { report: it.report, action: it.action }).collect();
        let action = route(&report, &history, &self.run.config, index);
        self.run.iterations.push(IterationRecord {
            index,
            prompt,
            cohort,
            counts,
            report,
            action,
            agent_transcripts: Vec::new(),
            failure: None,
        });
        self.pending_review = Some(self.review_bundle_for(dataset, index as usize)?);
        self.status = SessionStatus::AwaitingReview;
        Ok(())
    }

    /// Rolls back a classification that did not complete. The session
    /// returns to the state it was in before the prompt was accepted.
    pub fn fail_classification(&mut self, message: impl Into<String>) {
        if self.status != SessionStatus::Classifying {
            return;
        }
        self.pending_prompt = None;
        self.last_error = Some(message.into());
        self.status =
            if self.run.iterations.is_empty() { SessionStatus::AwaitingPrompt } else { SessionStatus::AwaitingReview };
    }

    pub fn close(&mut self, reason: StopReason) {
        if self.status == SessionStatus::Closed {
            return;
        }
        self.status = SessionStatus::Closed;
        self.pending_prompt = None;
        self.run.outcome = Some(reason);
    }

    /// Seeded per-class sample for iteration `index`, reproducible from the
    /// stored run, the session seed and the sample size.
    pub fn review_bundle_for(&self, dataset: &Dataset, index: usize) -> Result<ReviewBundle, SessionError> {
        let it = self.iteration(index)?;
        let cases = misclassified(dataset, &it.cohort)?;
        let seed = self.seed.wrapping_add(index as u64);
        let pick = |v: &[MisclassifiedCase]| sample_cases(v, self.sample_size, seed).into_iter().cloned().collect();
        Ok(ReviewBundle {
            iteration_index: it.index,
            sampled_fp: pick(&cases.fp_cases),
            sampled_fn: pick(&cases.fn_cases),
            sample_seed: seed,
            sample_size: self.sample_size,
        })
    }

    pub fn iteration(&self, index: usize) -> Result<&IterationRecord, SessionError> {
        self.run
            .iterations
            .get(index)
            .ok_or(SessionError::IndexOutOfRange { index, len: self.run.iterations.len() })
    }

    pub fn compare_iterations(&self, i: usize, j: usize) -> Result<DeltaReport, SessionError> {
        Ok(DeltaReport::between(self.iteration(i)?, self.iteration(j)?))
    }
}

fn run_classification(
    session: &mut ExpertSession,
    dataset: &Dataset,
    pending: PendingClassification,
    backend: &dyn ChatBackend,
    params: &GenerationParams,
    options: &ClassifyOptions,
) -> Result<(), SessionError> {
    match classify_cohort(dataset, &pending.prompt, backend, params, options) {
        Ok(cohort) => session.finish_classification(dataset, cohort),
        Err(e) => {
            session.fail_classification(e.to_string());
            Err(e.into())
        }
    }
}

/// Creates a session and classifies with `p0` in one blocking call.
pub fn start_session(
    session_id: impl Into<String>,
    dataset: &Dataset,
    p0: PromptConfig,
    backend: &dyn ChatBackend,
    config: &OrchestratorConfig,
    options: &ClassifyOptions,
) -> Result<ExpertSession, SessionError> {
    config.validate()?;
    let mut session = ExpertSession::new(session_id, dataset, config);
    let pending = session.begin_initial(p0)?;
    let params = GenerationParams::default();
    run_classification(&mut session, dataset, pending, backend, &params, options)?;
    Ok(session)
}

/// Submits a revision and classifies with it in one blocking call. On a
/// validation error the session is left untouched.
pub fn submit_prompt(
    session: &mut ExpertSession,
    dataset: &Dataset,
    revised: PromptConfig,
    backend: &dyn ChatBackend,
    options: &ClassifyOptions,
) -> Result<(), SessionError> {
    let pending = session.begin_revision(revised)?;
    let params = GenerationParams::default();
    run_classification(session, dataset, pending, backend, &params, options)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: MetricKind,
    pub from: Option<f64>,
    pub to: Option<f64>,
    /// `to - from`; absent when either side is undefined.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelFlip {
    pub patient_id: String,
    pub from: PatientLabel,
    pub to: PatientLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub from_index: u32,
    pub to_index: u32,
    pub metrics: Vec<MetricDelta>,
    pub flips: Vec<LabelFlip>,
    pub uncertain_delta: i64,
}

impl DeltaReport {
    pub fn between(a: &IterationRecord, b: &IterationRecord) -> Self {
        let metrics = MetricKind::ALL
            .iter()
            .map(|&k| {
                let from = a.report.get(k).value();
                let to = b.report.get(k).value();
                let delta = from.zip(to).map(|(f, t)| t - f);
                MetricDelta { metric: k, from, to, delta }
            })
            .collect();
        let flips = a
            .cohort
            .labels
            .iter()
            .filter_map(|(p, &from)| {
                let to = *b.cohort.labels.get(p)?;
                (from != to).then(|| LabelFlip { patient_id: p.clone(), from, to })
            })
            .collect();
        Self {
            from_index: a.index,
            to_index: b.index,
            metrics,
            flips,
            uncertain_delta: b.counts.uncertain as i64 - a.counts.uncertain as i64,
        }
    }

    pub fn get(&self, kind: MetricKind) -> Option<&MetricDelta> {
        self.metrics.iter().find(|m| m.metric == kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Dataset;
    use crate::domain::{ClinicalNote, ConfusionCounts, Reference, ReferenceLabel};
    use crate::gateway::{StubBackend, StubMatch, StubRule, StubScript};

    fn note(p: &str, n: &str) -> ClinicalNote {
        ClinicalNote { patient_id: p.into(), note_id: n.into(), date: None, text: format!("Body [{n}].") }
    }

    // A..D positive, E..H negative; one note each.
    fn fixture() -> Dataset {
        let ids = ["A", "B", "C", "D", "E", "F", "G", "H"];
        let notes = ids.iter().map(|p| note(p, &format!("{p}1"))).collect();
        let labels = ids
            .iter()
            .enumerate()
            .map(|(i, p)| ReferenceLabel {
                patient_id: p.to_string(),
                label: if i < 4 { Reference::WithConcerns } else { Reference::WithoutConcerns },
            })
            .collect();
        Dataset::new("fx", notes, labels).unwrap()
    }

    fn script(yes: &[&str], prompt: &str) -> Vec<StubRule> {
        yes.iter()
            .map(|n| StubRule::reply(StubMatch::prompt(prompt).and_user_contains(format!("[{n}]")), "Yes."))
            .collect()
    }

    fn backend() -> StubBackend {
        let mut s = StubScript::new("No.");
        // P0: A,B,C,E,F say yes -> tp3 fn1 fp2 tn2.
        for r in script(&["A1", "B1", "C1", "E1", "F1"], "P0") {
            s = s.rule(r);
        }
        // XP1: A..D yes -> perfect.
        for r in script(&["A1", "B1", "C1", "D1"], "XP1") {
            s = s.rule(r);
        }
        StubBackend::new(s)
    }

    fn p0() -> PromptConfig {
        PromptConfig::new("P0", "You are a neurologist.", "yes or no? \n {note}").with_lineage(Lineage::initial())
    }

    fn xp1() -> PromptConfig {
        PromptConfig::new("XP1", "You are an expert.", "Concern? {note}")
    }

    fn opts() -> ClassifyOptions {
        ClassifyOptions { parallelism: 1, ..Default::default() }
    }

    #[test]
    fn start_then_revise() {
        let ds = fixture();
        let b = backend();
        let mut s = start_session("s1", &ds, p0(), &b, &OrchestratorConfig::default(), &opts()).unwrap();
        assert_eq!(s.status, SessionStatus::AwaitingReview);
        assert_eq!(s.run.iterations[0].counts, ConfusionCounts::new(3, 2, 2, 1, 0));
        let bundle = s.pending_review.clone().unwrap();
        assert_eq!(bundle.sampled_fp.len(), 2);
        assert_eq!(bundle.sampled_fn.len(), 1);

        submit_prompt(&mut s, &ds, xp1(), &b, &opts()).unwrap();
        let it = &s.run.iterations[1];
        assert_eq!(it.prompt.lineage, Some(Lineage::derived("P0", Producer::Human)));
        assert_eq!(it.counts, ConfusionCounts::new(4, 0, 4, 0, 0));
        let empty = s.pending_review.as_ref().unwrap();
        assert!(empty.sampled_fp.is_empty() && empty.sampled_fn.is_empty());
        assert_eq!(s.status, SessionStatus::AwaitingReview);

        let d = s.compare_iterations(0, 1).unwrap();
        assert_eq!(d.flips.len(), 3);
        assert_eq!(d.uncertain_delta, 0);
        assert!((d.get(MetricKind::Specificity).unwrap().delta.unwrap() - 0.5).abs() < 1e-12);
        let same = s.compare_iterations(1, 1).unwrap();
        assert!(same.flips.is_empty());
        assert!(same.metrics.iter().all(|m| m.delta == Some(0.0)));
        assert!(matches!(s.compare_iterations(0, 5), Err(SessionError::IndexOutOfRange { index: 5, len: 2 })));
    }

    #[test]
    fn bad_revision_leaves_state() {
        let ds = fixture();
        let b = backend();
        let mut s = start_session("s1", &ds, p0(), &b, &OrchestratorConfig::default(), &opts()).unwrap();
        let before = s.clone();
        let bad = PromptConfig::new("XP1", "sys", "no placeholder");
        assert!(matches!(
            submit_prompt(&mut s, &ds, bad, &b, &opts()),
            Err(SessionError::Template(TemplateError::MissingPlaceholder))
        ));
        assert_eq!(s, before);
    }

    #[test]
    fn state_machine_guards() {
        let ds = fixture();
        let mut s = ExpertSession::new("s", &ds, &OrchestratorConfig::default());
        assert!(matches!(s.begin_revision(xp1()), Err(SessionError::SessionBusy(SessionStatus::AwaitingPrompt))));
        s.begin_initial(p0()).unwrap();
        assert!(matches!(s.begin_revision(xp1()), Err(SessionError::SessionBusy(SessionStatus::Classifying))));
        assert!(matches!(s.begin_initial(p0()), Err(SessionError::SessionBusy(SessionStatus::Classifying))));
        s.fail_classification("boom");
        assert_eq!(s.status, SessionStatus::AwaitingPrompt);
        assert_eq!(s.last_error.as_deref(), Some("boom"));
        s.close(StopReason::Closed);
        assert!(matches!(s.begin_initial(p0()), Err(SessionError::SessionClosed)));
        assert_eq!(s.run.outcome, Some(StopReason::Closed));
    }

    #[test]
    fn bundles_are_reproducible() {
        let ds = fixture();
        let b = backend();
        let s = start_session("s1", &ds, p0(), &b, &OrchestratorConfig::default(), &opts()).unwrap();
        let s = s.with_sample_size(1);
        assert_eq!(s.review_bundle_for(&ds, 0).unwrap(), s.review_bundle_for(&ds, 0).unwrap());
        assert_eq!(s.review_bundle_for(&ds, 0).unwrap().sampled_fp.len(), 1);
    }
}
