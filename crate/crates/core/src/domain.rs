//! Shared domain types: notes, labels, prompts, verdicts, counts and metrics.
//!
//! Everything here is an immutable value object. The only behavior is the
//! prompt-template rendering rule and the arithmetic on confusion counts.

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The literal placeholder token that receives the note text.
pub const NOTE_PLACEHOLDER: &str = "{note}";

// ---------------------------------------------------------------------------
// Notes and reference labels
// ---------------------------------------------------------------------------

/// One clinical note, kept whole.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalNote {
    pub patient_id: String,
    pub note_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<NaiveDate>,
    pub text: String,
}

/// Chart-reviewed ground truth. Binary by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Reference {
    #[serde(rename = "with")]
    WithConcerns,
    #[serde(rename = "without")]
    WithoutConcerns,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceLabel {
    pub patient_id: String,
    pub label: Reference,
}

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

/// Who produced a prompt version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Producer {
    Initial,
    Summarizer1,
    Summarizer2,
    Human,
}

/// Where a prompt came from. `parent` is `None` only for `Producer::Initial`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub producer: Producer,
}

impl Lineage {
    pub fn initial() -> Self {
        Self { parent: None, producer: Producer::Initial }
    }

    pub fn derived(parent: impl Into<String>, producer: Producer) -> Self {
        Self { parent: Some(parent.into()), producer }
    }
}

/// A versioned system + user prompt pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub prompt_id: String,
    pub system_text: String,
    pub user_template: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lineage: Option<Lineage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("user template has no {{note}} placeholder")]
    MissingPlaceholder,
    #[error("user template has {count} {{note}} placeholders, expected exactly one")]
    MultiplePlaceholders { count: usize },
}

impl TemplateError {
    /// Stable machine-readable code, used in API error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            TemplateError::MissingPlaceholder => "MissingPlaceholder",
            TemplateError::MultiplePlaceholders { .. } => "MultiplePlaceholders",
        }
    }
}

impl PromptConfig {
    pub fn new(
        prompt_id: impl Into<String>,
        system_text: impl Into<String>,
        user_template: impl Into<String>,
    ) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            system_text: system_text.into(),
            user_template: user_template.into(),
            lineage: None,
        }
    }

    pub fn with_lineage(mut self, lineage: Lineage) -> Self {
        self.lineage = Some(lineage);
        self
    }

    /// Checks that the user template carries exactly one placeholder.
    pub fn validate(&self) -> Result<(), TemplateError> {
        match self.user_template.matches(NOTE_PLACEHOLDER).count() {
            0 => Err(TemplateError::MissingPlaceholder),
            1 => Ok(()),
            count => Err(TemplateError::MultiplePlaceholders { count }),
        }
    }

    pub fn producer(&self) -> Option<Producer> {
        self.lineage.as_ref().map(|l| l.producer)
    }

    pub fn parent(&self) -> Option<&str> {
        self.lineage.as_ref().and_then(|l| l.parent.as_deref())
    }
}

/// Rendered message pair ready for the gateway.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system_text: String,
    pub user_text: String,
}

/// Substitutes the note text for the single `{note}` token. Nothing else in
/// the template is touched.
pub fn render_prompt(config: &PromptConfig, note: &ClinicalNote) -> Result<RenderedPrompt, TemplateError> {
    config.validate()?;
    Ok(RenderedPrompt {
        system_text: config.system_text.clone(),
        user_text: config.user_template.replacen(NOTE_PLACEHOLDER, &note.text, 1),
    })
}

// ---------------------------------------------------------------------------
// Generation parameters
// ---------------------------------------------------------------------------

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Passed through to the backend request body untouched.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            extra: BTreeMap::new(),
        }
    }
}

impl GenerationParams {
    pub fn is_valid(&self) -> bool {
        (0.0..=2.0).contains(&self.temperature) && self.max_output_tokens > 0
    }
}

// ---------------------------------------------------------------------------
// Verdicts and labels
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Yes,
    No,
    Uncertain,
}

/// The Specialist's answer for one note.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteVerdict {
    pub note_id: String,
    pub verdict: Verdict,
    pub rationale: String,
    pub raw_completion: String,
    /// Set when the backend call failed and the verdict was forced to Uncertain.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub transport_failure: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PatientLabel {
    WithConcerns,
    WithoutConcerns,
    Uncertain,
}

impl fmt::Display for PatientLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatientLabel::WithConcerns => "with",
            PatientLabel::WithoutConcerns => "without",
            PatientLabel::Uncertain => "uncertain",
        })
    }
}

// ---------------------------------------------------------------------------
// Counts and metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub r#fn: u64,
    pub uncertain: u64,
}

impl ConfusionCounts {
    pub const fn new(tp: u64, fp: u64, tn: u64, fn_: u64, uncertain: u64) -> Self {
        Self { tp, fp, tn, r#fn: fn_, uncertain }
    }

    pub fn evaluated(&self) -> u64 {
        self.tp + self.fp + self.tn + self.r#fn
    }

    pub fn total(&self) -> u64 {
        self.evaluated() + self.uncertain
    }
}

/// A metric value, or `Undefined` when its denominator is zero.
///
/// Serializes as a JSON number or `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "Option<f64>", into = "Option<f64>")]
pub enum Metric {
    Value(f64),
    Undefined,
}

impl From<Option<f64>> for Metric {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Metric::Undefined, Metric::Value)
    }
}

impl From<Metric> for Option<f64> {
    fn from(m: Metric) -> Self {
        m.value()
    }
}

/// Text rendering of an undefined metric.
pub const UNDEFINED_DISPLAY: &str = "nan*";

impl Metric {
    pub fn ratio(numerator: u64, denominator: u64) -> Self {
        if denominator == 0 {
            Metric::Undefined
        } else {
            Metric::Value(numerator as f64 / denominator as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(v),
            Metric::Undefined => None,
        }
    }

    pub fn is_undefined(self) -> bool {
        matches!(self, Metric::Undefined)
    }

    /// True when defined and at least `threshold`. Undefined never passes.
    pub fn at_least(self, threshold: f64) -> bool {
        self.value().is_some_and(|v| v >= threshold)
    }

    /// Value rounded half-up to two decimals.
    pub fn rounded(self) -> Option<f64> {
        self.value().map(round2)
    }

    /// Two-decimal text form, `nan*` when undefined.
    pub fn display(self) -> String {
        match self.rounded() {
            Some(v) => format!("{v:.2}"),
            None => UNDEFINED_DISPLAY.to_string(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display())
    }
}

/// Half-up rounding to two decimals. The small bias absorbs binary
/// representation error at exact midpoints such as 0.845.
pub fn round2(x: f64) -> f64 {
    let scaled = x * 100.0;
    let bias = 1e-9 * scaled.abs().max(1.0);
    if x >= 0.0 {
        (scaled + 0.5 + bias).floor() / 100.0
    } else {
        -((-scaled + 0.5 + bias).floor() / 100.0)
    }
}

/// The six reported metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sensitivity: Metric,
    pub specificity: Metric,
    pub ppv: Metric,
    pub npv: Metric,
    pub accuracy: Metric,
    pub f1: Metric,
}

/// Metric selector, in the column order used by every report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Sensitivity,
    Specificity,
    Ppv,
    Npv,
    Accuracy,
    F1,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::Sensitivity,
        MetricKind::Specificity,
        MetricKind::Ppv,
        MetricKind::Npv,
        MetricKind::Accuracy,
        MetricKind::F1,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            MetricKind::Sensitivity => "sens",
            MetricKind::Specificity => "spec",
            MetricKind::Ppv => "ppv",
            MetricKind::Npv => "npv",
            MetricKind::Accuracy => "acc",
            MetricKind::F1 => "f1",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            MetricKind::Sensitivity => "Sensitivity",
            MetricKind::Specificity => "Specificity",
            MetricKind::Ppv => "PPV",
            MetricKind::Npv => "NPV",
            MetricKind::Accuracy => "Accuracy",
            MetricKind::F1 => "F1-score",
        }
    }
}

impl MetricsReport {
    pub fn get(&self, kind: MetricKind) -> Metric {
        match kind {
            MetricKind::Sensitivity => self.sensitivity,
            MetricKind::Specificity => self.specificity,
            MetricKind::Ppv => self.ppv,
            MetricKind::Npv => self.npv,
            MetricKind::Accuracy => self.accuracy,
            MetricKind::F1 => self.f1,
        }
    }

    /// `sens 0.94 spec 0.20 ppv 0.56 npv 0.75 acc 0.59 f1 0.70`
    pub fn summary_line(&self) -> String {
        MetricKind::ALL
            .iter()
            .map(|&k| format!("{} {}", k.short_name(), self.get(k).display()))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

// ---------------------------------------------------------------------------
// SOP and orchestration settings
// ---------------------------------------------------------------------------

/// User-supplied chart-review guideline document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SopDocument {
    pub title: String,
    pub body: String,
}

/// Which improver gets first go when both metrics are below threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RoutingPriority {
    #[default]
    SensitivityFirst,
    SpecificityFirst,
}

/// Improver to summarizer wiring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SummarizerPairing {
    /// Specificity improver feeds Summarizer 1, sensitivity improver feeds Summarizer 2.
    #[default]
    ByRole,
    /// Sensitivity improver feeds Summarizer 1, specificity improver feeds Summarizer 2.
    Swapped,
}

/// Where the SOP goes on the specificity path. Summarizer 2 always gets it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SopRouting {
    #[default]
    SpecificityImprover,
    /// Summarizer 1 receives the SOP and the specificity improver does not.
    Summarizer1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrchestratorConfig {
    pub sensitivity_threshold: f64,
    pub specificity_threshold: f64,
    /// Refinement iterations after the baseline prompt.
    pub max_iterations: u32,
    pub sensitivity_delta_stop: f64,
    pub improver_case_cap: usize,
    /// Character budget for the note text inside one improver request.
    pub improver_char_budget: usize,
    pub rng_seed: u64,
    #[serde(default)]
    pub priority: RoutingPriority,
    #[serde(default)]
    pub pairing: SummarizerPairing,
    #[serde(default)]
    pub sop_routing: SopRouting,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            sensitivity_threshold: 0.8,
            specificity_threshold: 0.8,
            max_iterations: 3,
            sensitivity_delta_stop: 0.1,
            improver_case_cap: 5,
            improver_char_budget: 12_000,
            rng_seed: 0,
            priority: RoutingPriority::default(),
            pairing: SummarizerPairing::default(),
            sop_routing: SopRouting::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid orchestrator config: {0}")]
pub struct ConfigError(pub String);

impl OrchestratorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.sensitivity_threshold) || !unit(self.specificity_threshold) {
            return Err(ConfigError("thresholds must lie in (0, 1]".into()));
        }
        if !(self.sensitivity_delta_stop > 0.0 && self.sensitivity_delta_stop < 1.0) {
            return Err(ConfigError("sensitivity delta must lie in (0, 1)".into()));
        }
        if self.max_iterations == 0 {
            return Err(ConfigError("max_iterations must be positive".into()));
        }
        if self.improver_case_cap == 0 {
            return Err(ConfigError("improver_case_cap must be positive".into()));
        }
        if self.improver_char_budget == 0 {
            return Err(ConfigError("improver_char_budget must be positive".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Agent roles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentRole {
    Specialist,
    Evaluator,
    SpecificityImprover,
    SensitivityImprover,
    Summarizer1,
    Summarizer2,
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}
