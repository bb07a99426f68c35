//! The Evaluator: patient labels against reference labels.
//!
//! Pure arithmetic. Uncertain patients are counted separately and never enter
//! a metric denominator.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::CohortVerdicts;
use crate::corpus::Dataset;
use crate::domain::{
    ClinicalNote, ConfusionCounts, Metric, MetricKind, MetricsReport, NoteVerdict, PatientLabel, Reference,
    Verdict,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("label/reference key mismatch: missing {missing:?}, extra {extra:?}")]
    KeyMismatch { missing: Vec<String>, extra: Vec<String> },
}

fn check_keys<A, B>(labels: &BTreeMap<String, A>, reference: &BTreeMap<String, B>) -> Result<(), EvalError> {
    let l: BTreeSet<&String> = labels.keys().collect();
    let r: BTreeSet<&String> = reference.keys().collect();
    if l == r {
        return Ok(());
    }
    Err(EvalError::KeyMismatch {
        missing: r.difference(&l).map(|s| s.to_string()).collect(),
        extra: l.difference(&r).map(|s| s.to_string()).collect(),
    })
}

pub fn confusion(
    labels: &BTreeMap<String, PatientLabel>,
    reference: &BTreeMap<String, Reference>,
) -> Result<ConfusionCounts, EvalError> {
    check_keys(labels, reference)?;
    let mut c = ConfusionCounts::default();
    for (patient, label) in labels {
        match (label, reference[patient]) {
            (PatientLabel::Uncertain, _) => c.uncertain += 1,
            (PatientLabel::WithConcerns, Reference::WithConcerns) => c.tp += 1,
            (PatientLabel::WithConcerns, Reference::WithoutConcerns) => c.fp += 1,
            (PatientLabel::WithoutConcerns, Reference::WithoutConcerns) => c.tn += 1,
            (PatientLabel::WithoutConcerns, Reference::WithConcerns) => c.r#fn += 1,
        }
    }
    Ok(c)
}

pub fn metrics(c: &ConfusionCounts) -> MetricsReport {
    MetricsReport {
        sensitivity: Metric::ratio(c.tp, c.tp + c.r#fn),
        specificity: Metric::ratio(c.tn, c.tn + c.fp),
        ppv: Metric::ratio(c.tp, c.tp + c.fp),
        npv: Metric::ratio(c.tn, c.tn + c.r#fn),
        accuracy: Metric::ratio(c.tp + c.tn, c.evaluated()),
        f1: Metric::ratio(2 * c.tp, 2 * c.tp + c.fp + c.r#fn),
    }
}

/// Counts and metrics in one step.
pub fn evaluate(dataset: &Dataset, cohort: &CohortVerdicts) -> Result<(ConfusionCounts, MetricsReport), EvalError> {
    let counts = confusion(&cohort.labels, dataset.reference())?;
    Ok((counts, metrics(&counts)))
}

// ---------------------------------------------------------------------------
// Misclassified cases
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseNote {
    pub note: ClinicalNote,
    pub verdict: NoteVerdict,
    /// For false positives: this note's Yes produced the patient's label.
    pub driving: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MisclassifiedCase {
    pub patient_id: String,
    pub reference: Reference,
    pub notes: Vec<CaseNote>,
}

impl MisclassifiedCase {
    pub fn driving_notes(&self) -> impl Iterator<Item = &CaseNote> {
        self.notes.iter().filter(|n| n.driving)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Misclassified {
    pub fp_cases: Vec<MisclassifiedCase>,
    pub fn_cases: Vec<MisclassifiedCase>,
}

/// False positives and false negatives, each in patient-id order.
pub fn misclassified(dataset: &Dataset, cohort: &CohortVerdicts) -> Result<Misclassified, EvalError> {
    let reference = dataset.reference();
    check_keys(&cohort.labels, reference)?;
    let mut out = Misclassified::default();
    for (patient, label) in &cohort.labels {
        let truth = reference[patient];
        let is_fp = *label == PatientLabel::WithConcerns && truth == Reference::WithoutConcerns;
        let is_fn = *label == PatientLabel::WithoutConcerns && truth == Reference::WithConcerns;
        if !is_fp && !is_fn {
            continue;
        }
        let notes = dataset
            .notes_for(patient)
            .filter_map(|n| {
                let v = cohort.verdicts.get(&n.note_id)?;
                Some(CaseNote { note: n.clone(), verdict: v.clone(), driving: is_fp && v.verdict == Verdict::Yes })
            })
            .collect();
        let case = MisclassifiedCase { patient_id: patient.clone(), reference: truth, notes };
        if is_fp {
            out.fp_cases.push(case);
        } else {
            out.fn_cases.push(case);
        }
    }
    Ok(out)
}

/// Seeded sample of at most `cap` cases without replacement, returned in the
/// input order. Returns everything when the population fits.
pub fn sample_cases<T>(cases: &[T], cap: usize, seed: u64) -> Vec<&T> {
    if cases.len() <= cap {
        return cases.iter().collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, cases.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| &cases[i]).collect()
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// One prompt's line in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub counts: ConfusionCounts,
    pub metrics: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ReportRow {
    pub fn new(label: impl Into<String>, counts: ConfusionCounts) -> Self {
        Self { label: label.into(), counts, metrics: metrics(&counts), note: None }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// Rows are prompts, columns are the six metrics plus the uncertain count.
pub fn metrics_table(rows: &[ReportRow]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max("Prompt".len());
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "Prompt");
    for k in MetricKind::ALL {
        let _ = write!(out, "  {:>11}", k.title());
    }
    let _ = write!(out, "  {:>9}", "Uncertain");
    let has_notes = rows.iter().any(|r| r.note.is_some());
    if has_notes {
        out.push_str("  Note");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{:<width$}", r.label);
        for k in MetricKind::ALL {
            let _ = write!(out, "  {:>11}", r.metrics.get(k).display());
        }
        let _ = write!(out, "  {:>9}", r.counts.uncertain);
        if let Some(n) = &r.note {
            let _ = write!(out, "  {n}");
        }
        out.push('\n');
    }
    out
}

/// Rows are metrics and counts, columns are prompts.
pub fn comparison_table(rows: &[ReportRow]) -> String {
    const HEAD: usize = 11;
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = write!(out, "{:<HEAD$}", "Metric");
    for r in rows {
        let _ = write!(out, "  {:>width$}", r.label);
    }
    out.push('\n');
    for k in MetricKind::ALL {
        let _ = write!(out, "{:<HEAD$}", k.title());
        for r in rows {
            let _ = write!(out, "  {:>width$}", r.metrics.get(k).display());
        }
        out.push('\n');
    }
    let counts: [(&str, fn(&ConfusionCounts) -> u64); 5] = [
        ("TN", |c| c.tn),
        ("FP", |c| c.fp),
        ("FN", |c| c.r#fn),
        ("TP", |c| c.tp),
        ("Uncertain", |c| c.uncertain),
    ];
    for (name, get) in counts {
        let _ = write!(out, "{name:<HEAD$}");
        for r in rows {
            let _ = write!(out, "  {:>width$}", get(&r.counts));
        }
        out.push('\n');
    }
    out
}
