//! LLM-backed refinement agents: the two improvers and the two summarizers.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::domain::{
    AgentRole, GenerationParams, Lineage, Producer, PromptConfig, SopDocument, NOTE_PLACEHOLDER,
};
use crate::evaluator::{sample_cases, MisclassifiedCase};
use crate::gateway::{ChatBackend, ChatRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub role: AgentRole,
    pub system_text: String,
    pub params: GenerationParams,
}

const SPECIALIST_SYSTEM: &str = "You are an expert in evaluating patients with cognitive concerns.";
const EVALUATOR_SYSTEM: &str = "You are a helpful assistant.";
const SPECIFICITY_SYSTEM: &str = "You are a clinician specialised in cognitive disorders and an experienced \
prompt engineer. You review clinical notes that a classification prompt wrongly flagged as showing cognitive \
concerns, work out what misled the model, and propose a precise change to the prompt that prevents the error.";
const SENSITIVITY_SYSTEM: &str = "You are a clinician specialised in cognitive disorders and an experienced \
prompt engineer. You review clinical notes of patients with documented cognitive concerns that a classification \
prompt missed, identify the evidence the model overlooked, and describe what the prompt should direct attention to.";
const SUMMARIZER1_SYSTEM: &str = "You are a helpful assistant. You merge several suggested prompt changes into \
one improved classification prompt.";
const SUMMARIZER2_SYSTEM: &str = "You are a clinician specialised in cognitive disorders and an experienced \
prompt engineer. You condense findings about missed cases and combine them with a chart-review guideline into \
one improved classification prompt.";

impl AgentProfile {
    pub fn default_for(role: AgentRole) -> Self {
        let system_text = match role {
            AgentRole::Specialist => SPECIALIST_SYSTEM,
            AgentRole::Evaluator => EVALUATOR_SYSTEM,
            AgentRole::SpecificityImprover => SPECIFICITY_SYSTEM,
            AgentRole::SensitivityImprover => SENSITIVITY_SYSTEM,
            AgentRole::Summarizer1 => SUMMARIZER1_SYSTEM,
            AgentRole::Summarizer2 => SUMMARIZER2_SYSTEM,
        };
        Self { role, system_text: system_text.to_string(), params: GenerationParams::default() }
    }
}

/// One profile per role. The Specialist's system text is unused at
/// classification time (the prompt carries its own), only its params are.
/// The Evaluator is plain arithmetic and never called.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfiles {
    profiles: BTreeMap<AgentRole, AgentProfile>,
}

impl Default for AgentProfiles {
    fn default() -> Self {
        let roles = [
            AgentRole::Specialist,
            AgentRole::Evaluator,
            AgentRole::SpecificityImprover,
            AgentRole::SensitivityImprover,
            AgentRole::Summarizer1,
            AgentRole::Summarizer2,
        ];
        Self { profiles: roles.into_iter().map(|r| (r, AgentProfile::default_for(r))).collect() }
    }
}

impl AgentProfiles {
    pub fn get(&self, role: AgentRole) -> &AgentProfile {
        &self.profiles[&role]
    }

    pub fn set(&mut self, profile: AgentProfile) {
        self.profiles.insert(profile.role, profile);
    }
}

/// One agent call as sent and received.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTranscript {
    pub role: AgentRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient_id: Option<String>,
    pub request: ChatRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("{0} was dispatched with no cases")]
    NoCases(AgentRole),
    #[error("{0} was given nothing to summarize")]
    NothingToSummarize(AgentRole),
    #[error("{role} returned an unusable prompt: {reason}")]
    MalformedPromptOutput { role: AgentRole, reason: String },
}

/// Knobs shared by both improvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImproverSettings {
    pub case_cap: usize,
    pub char_budget: usize,
    pub seed: u64,
}

const TRUNCATION_MARK: &str = "\n[... truncated ...]\n";

/// Keeps the first three quarters of the budget and the last quarter.
pub fn truncate_head_biased(text: &str, budget: usize) -> Cow<'_, str> {
    let len = text.chars().count();
    if len <= budget {
        return Cow::Borrowed(text);
    }
    let head = budget * 3 / 4;
    let tail = budget - head;
    let head_end = text.char_indices().nth(head).map_or(text.len(), |(i, _)| i);
    let tail_start = text.char_indices().nth(len - tail).map_or(text.len(), |(i, _)| i);
    Cow::Owned(format!("{}{TRUNCATION_MARK}{}", &text[..head_end], &text[tail_start..]))
}

fn prompt_block(prompt: &PromptConfig) -> String {
    format!("System: {}\nUser: {}", prompt.system_text, prompt.user_template)
}

fn sop_block(sop: &SopDocument) -> String {
    format!("Chart-review guideline ({}):\n{}\n\n", sop.title, sop.body)
}

pub(crate) fn specificity_request_text(
    case: &MisclassifiedCase,
    sop: Option<&SopDocument>,
    current: &PromptConfig,
    budget: usize,
) -> String {
    let mut notes = String::new();
    let mut rationales = String::new();
    for n in case.driving_notes() {
        let _ = write!(notes, "--- Note {} ---\n{}\n", n.note.note_id, n.note.text);
        let _ = writeln!(rationales, "- Note {}: {}", n.note.note_id, n.verdict.rationale);
    }
    let mut out = String::new();
    if let Some(sop) = sop {
        out.push_str(&sop_block(sop));
    }
    let _ = write!(
        out,
        "Current classification prompt:\n{}\n\n\
         Patient {} was labeled as having cognitive concerns, but chart review found none. \
         The notes answered \"yes\":\n{}\n\
         The model's reasons:\n{}\n\
         Explain what led to this false positive and suggest one specific change to the prompt that would \
         prevent it. Reply with the suggestion only.",
        prompt_block(current),
        case.patient_id,
        truncate_head_biased(&notes, budget),
        rationales,
    );
    out
}

pub(crate) fn sensitivity_request_text(case: &MisclassifiedCase, current: &PromptConfig, budget: usize) -> String {
    let mut notes = String::new();
    for n in &case.notes {
        let _ = write!(notes, "--- Note {} ---\n{}\n", n.note.note_id, n.note.text);
    }
    format!(
        "Current classification prompt:\n{}\n\n\
         Chart review found cognitive concerns for patient {}, but the prompt answered \"no\" for every note. \
         The patient's notes:\n{}\n\
         Identify any evidence of cognitive concerns the model missed and describe what the prompt should look \
         for. Reply with the finding only.",
        prompt_block(current),
        case.patient_id,
        truncate_head_biased(&notes, budget),
    )
}

pub(crate) fn summarizer_request_text(
    role: AgentRole,
    inputs: &[String],
    sop: Option<&SopDocument>,
    current: &PromptConfig,
) -> String {
    let heading = match role {
        AgentRole::Summarizer2 => "Findings from reviewed missed cases:",
        _ => "Suggested improvements, one per reviewed case:",
    };
    let mut out = format!("Current classification prompt:\n{}\n\n{heading}\n", prompt_block(current));
    for (i, s) in inputs.iter().enumerate() {
        let _ = writeln!(out, "{}. {}", i + 1, s.trim());
    }
    out.push('\n');
    if let Some(sop) = sop {
        out.push_str(&sop_block(sop));
    }
    out.push_str(
        "Write one improved version of the user prompt that incorporates the points above. Keep the yes/no \
         question. Reply with the new prompt text only; the note will be appended after it.",
    );
    out
}

fn call(
    backend: &dyn ChatBackend,
    profile: &AgentProfile,
    prompt_id: &str,
    patient_id: Option<&str>,
    user_text: String,
    transcripts: &mut Vec<AgentTranscript>,
) -> Option<String> {
    let request = ChatRequest::new(profile.system_text.clone(), user_text, profile.params.clone())
        .for_prompt(prompt_id)
        .for_role(profile.role);
    let result = backend.complete(&request);
    let (completion, error) = match &result {
        Ok(text) => (Some(text.clone()), None),
        Err(e) => {
            warn!(role = %profile.role, patient = patient_id.unwrap_or("-"), error = %e, "agent call failed");
            (None, Some(e.to_string()))
        }
    };
    transcripts.push(AgentTranscript {
        role: profile.role,
        patient_id: patient_id.map(str::to_owned),
        request,
        completion: completion.clone(),
        error,
    });
    completion
}

fn run_improver<F>(
    role: AgentRole,
    cases: &[MisclassifiedCase],
    current: &PromptConfig,
    backend: &dyn ChatBackend,
    profile: &AgentProfile,
    settings: ImproverSettings,
    transcripts: &mut Vec<AgentTranscript>,
    build: F,
) -> Result<Vec<String>, AgentError>
where
    F: Fn(&MisclassifiedCase) -> String,
{
    if cases.is_empty() {
        return Err(AgentError::NoCases(role));
    }
    let mut out = Vec::new();
    for case in sample_cases(cases, settings.case_cap, settings.seed) {
        let text = build(case);
        if let Some(reply) = call(backend, profile, &current.prompt_id, Some(&case.patient_id), text, transcripts) {
            out.push(reply);
        }
    }
    Ok(out)
}

/// One suggestion per sampled false-positive case. Failed calls are logged
/// and contribute nothing.
pub fn improve_specificity(
    fp_cases: &[MisclassifiedCase],
    sop: Option<&SopDocument>,
    current: &PromptConfig,
    backend: &dyn ChatBackend,
    profile: &AgentProfile,
    settings: ImproverSettings,
    transcripts: &mut Vec<AgentTranscript>,
) -> Result<Vec<String>, AgentError> {
    run_improver(AgentRole::SpecificityImprover, fp_cases, current, backend, profile, settings, transcripts, |c| {
        specificity_request_text(c, sop, current, settings.char_budget)
    })
}

/// One finding per sampled false-negative case, in patient-id order.
pub fn improve_sensitivity(
    fn_cases: &[MisclassifiedCase],
    current: &PromptConfig,
    backend: &dyn ChatBackend,
    profile: &AgentProfile,
    settings: ImproverSettings,
    transcripts: &mut Vec<AgentTranscript>,
) -> Result<Vec<String>, AgentError> {
    run_improver(AgentRole::SensitivityImprover, fn_cases, current, backend, profile, settings, transcripts, |c| {
        sensitivity_request_text(c, current, settings.char_budget)
    })
}

/// Turns summarizer output into a prompt that inherits the parent's system
/// text. A completion without the placeholder gets `\n{note}` appended.
pub fn wrap_prompt(
    completion: &str,
    current: &PromptConfig,
    new_id: &str,
    role: AgentRole,
) -> Result<PromptConfig, AgentError> {
    let producer = match role {
        AgentRole::Summarizer1 => Producer::Summarizer1,
        AgentRole::Summarizer2 => Producer::Summarizer2,
        other => {
            return Err(AgentError::MalformedPromptOutput { role: other, reason: "not a summarizer role".into() })
        }
    };
    let text = completion.trim();
    if text.is_empty() {
        return Err(AgentError::MalformedPromptOutput { role, reason: "empty completion".into() });
    }
    let user_template = match text.matches(NOTE_PLACEHOLDER).count() {
        0 => format!("{text}\n{NOTE_PLACEHOLDER}"),
        1 => text.to_string(),
        n => {
            return Err(AgentError::MalformedPromptOutput { role, reason: format!("{n} {{note}} placeholders") });
        }
    };
    Ok(PromptConfig {
        prompt_id: new_id.to_string(),
        system_text: current.system_text.clone(),
        user_template,
        lineage: Some(Lineage::derived(current.prompt_id.clone(), producer)),
    })
}

/// Shared body of both summarizers.
#[allow(clippy::too_many_arguments)]
pub fn summarize(
    role: AgentRole,
    inputs: &[String],
    sop: Option<&SopDocument>,
    current: &PromptConfig,
    new_id: &str,
    backend: &dyn ChatBackend,
    profile: &AgentProfile,
    transcripts: &mut Vec<AgentTranscript>,
) -> Result<PromptConfig, AgentError> {
    if inputs.is_empty() {
        return Err(AgentError::NothingToSummarize(role));
    }
    let text = summarizer_request_text(role, inputs, sop, current);
    let reply = call(backend, profile, &current.prompt_id, None, text, transcripts).ok_or_else(|| {
        AgentError::MalformedPromptOutput { role, reason: "summarizer call failed".into() }
    })?;
    wrap_prompt(&reply, current, new_id, role)
}

/// Summarizer 1: folds specificity suggestions into a new prompt.
pub fn summarize_specificity(
    suggestions: &[String],
    current: &PromptConfig,
    new_id: &str,
    backend: &dyn ChatBackend,
    profile: &AgentProfile,
    transcripts: &mut Vec<AgentTranscript>,
) -> Result<PromptConfig, AgentError> {
    summarize(AgentRole::Summarizer1, suggestions, None, current, new_id, backend, profile, transcripts)
}

/// Summarizer 2: folds sensitivity findings and the SOP into a new prompt.
pub fn summarize_sensitivity(
    findings: &[String],
    sop: Option<&SopDocument>,
    current: &PromptConfig,
    new_id: &str,
    backend: &dyn ChatBackend,
    profile: &AgentProfile,
    transcripts: &mut Vec<AgentTranscript>,
) -> Result<PromptConfig, AgentError> {
    summarize(AgentRole::Summarizer2, findings, sop, current, new_id, backend, profile, transcripts)
}
