//! The Specialist: runs one prompt over every note, parses each completion
//! into a verdict, and folds verdicts into patient labels.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::corpus::Dataset;
use crate::domain::{
    render_prompt, AgentRole, ClinicalNote, GenerationParams, NoteVerdict, PatientLabel, PromptConfig,
    TemplateError, Verdict,
};
use crate::gateway::{ChatBackend, ChatRequest};

// ---------------------------------------------------------------------------
// Response parsing
// ---------------------------------------------------------------------------

/// Byte span of one alphanumeric word.
#[derive(Clone, Copy)]
struct Word<'a> {
    start: usize,
    end: usize,
    text: &'a str,
}

fn words(s: &str) -> impl Iterator<Item = Word<'_>> {
    let mut iter = s.char_indices().peekable();
    std::iter::from_fn(move || {
        while let Some(&(_, c)) = iter.peek() {
            if c.is_alphanumeric() {
                break;
            }
            iter.next();
        }
        let (start, _) = *iter.peek()?;
        let mut end = start;
        while let Some(&(i, c)) = iter.peek() {
            if !c.is_alphanumeric() {
                break;
            }
            end = i + c.len_utf8();
            iter.next();
        }
        Some(Word { start, end, text: &s[start..end] })
    })
}

fn first_sentence(s: &str) -> &str {
    let end = s.find(['.', '!', '?', '\n']).unwrap_or(s.len());
    &s[..end]
}

/// Offset just past a leading `Answer:` / `Final answer:` label, if present.
fn answer_label_end(s: &str) -> Option<usize> {
    let mut ws = words(s);
    let first = ws.next()?;
    let label = if first.text.eq_ignore_ascii_case("final") { ws.next()? } else { first };
    if !label.text.eq_ignore_ascii_case("answer") || s[..first.start].chars().any(char::is_alphanumeric) {
        return None;
    }
    let rest = &s[label.end..];
    let colon = rest.find(':')?;
    rest[..colon].chars().all(|c| !c.is_alphanumeric()).then_some(label.end + colon + 1)
}

/// Position of the first `yes` and first `no` word in `sentence`, offset by `base`.
fn scan_answers(sentence: &str, base: usize) -> (Option<usize>, Option<usize>) {
    let mut yes = None;
    let mut no = None;
    for w in words(sentence) {
        if yes.is_none() && w.text.eq_ignore_ascii_case("yes") {
            yes = Some(base + w.end);
        } else if no.is_none() && w.text.eq_ignore_ascii_case("no") {
            no = Some(base + w.end);
        }
    }
    (yes, no)
}

fn rationale_after(text: &str, offset: usize) -> String {
    text[offset..]
        .trim_start_matches(|c: char| c.is_whitespace() || matches!(c, ',' | '.' | ':' | ';' | '!' | '-' | ')' | '*' | '"' | '\''))
        .trim()
        .to_string()
}

/// Maps raw completion text to a verdict. Total: every input yields one.
///
/// Only the first sentence (up to `.`, `!`, `?` or newline) is scanned, so a
/// restated "yes or no?" later in the text cannot flip the answer. A leading
/// `Answer:` label extends the scan to the sentence after it. Finding both
/// words, or neither, is `Uncertain`.
pub fn parse_response(raw_completion: &str) -> NoteVerdict {
    let text = raw_completion.trim_start();
    let (mut yes, mut no) = scan_answers(first_sentence(text), 0);
    if yes.is_none() && no.is_none() {
        if let Some(label_end) = answer_label_end(text) {
            let after = &text[label_end..];
            let lead = after.len() - after.trim_start().len();
            let base = label_end + lead;
            (yes, no) = scan_answers(first_sentence(&text[base..]), base);
        }
    }
    let (verdict, rationale) = match (yes, no) {
        (Some(end), None) => (Verdict::Yes, rationale_after(text, end)),
        (None, Some(end)) => (Verdict::No, rationale_after(text, end)),
        _ => (Verdict::Uncertain, String::new()),
    };
    NoteVerdict {
        note_id: String::new(),
        verdict,
        rationale,
        raw_completion: raw_completion.to_string(),
        transport_failure: false,
    }
}

// ---------------------------------------------------------------------------
// Patient aggregation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("cannot aggregate an empty verdict list")]
pub struct EmptyVerdictList;

/// Any Yes wins; all No is WithoutConcerns; otherwise Uncertain.
pub fn aggregate_patient<I>(verdicts: I) -> Result<PatientLabel, EmptyVerdictList>
where
    I: IntoIterator<Item = Verdict>,
{
    let mut seen_any = false;
    let mut all_no = true;
    for v in verdicts {
        seen_any = true;
        match v {
            Verdict::Yes => return Ok(PatientLabel::WithConcerns),
            Verdict::No => {}
            Verdict::Uncertain => all_no = false,
        }
    }
    match (seen_any, all_no) {
        (false, _) => Err(EmptyVerdictList),
        (true, true) => Ok(PatientLabel::WithoutConcerns),
        (true, false) => Ok(PatientLabel::Uncertain),
    }
}

// ---------------------------------------------------------------------------
// Cohort classification
// ---------------------------------------------------------------------------

/// One prompt's verdicts over a whole dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortVerdicts {
    pub prompt_id: String,
    pub verdicts: BTreeMap<String, NoteVerdict>,
    pub labels: BTreeMap<String, PatientLabel>,
}

impl CohortVerdicts {
    /// Rebuilds patient labels from stored verdicts and the dataset's
    /// note-to-patient mapping.
    pub fn from_verdicts(
        prompt_id: impl Into<String>,
        dataset: &Dataset,
        verdicts: BTreeMap<String, NoteVerdict>,
    ) -> Result<Self, ClassifyError> {
        let labels = aggregate_labels(dataset, &verdicts)?;
        Ok(Self { prompt_id: prompt_id.into(), verdicts, labels })
    }

    pub fn transport_failures(&self) -> usize {
        self.verdicts.values().filter(|v| v.transport_failure).count()
    }

    pub fn verdicts_for<'a>(&'a self, dataset: &'a Dataset, patient_id: &str) -> Vec<&'a NoteVerdict> {
        dataset.notes_for(patient_id).filter_map(|n| self.verdicts.get(&n.note_id)).collect()
    }
}

pub fn aggregate_labels(
    dataset: &Dataset,
    verdicts: &BTreeMap<String, NoteVerdict>,
) -> Result<BTreeMap<String, PatientLabel>, ClassifyError> {
    dataset
        .patient_ids()
        .map(|p| {
            let vs = dataset.notes_for(p).map(|n| {
                verdicts
                    .get(&n.note_id)
                    .map(|v| v.verdict)
                    .ok_or_else(|| ClassifyError::MissingVerdict(n.note_id.clone()))
            });
            let vs: Vec<Verdict> = vs.collect::<Result<_, _>>()?;
            Ok((p.to_string(), aggregate_patient(vs)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    /// Worker pool size; at least 1.
    pub parallelism: usize,
    /// Abort when strictly more than this fraction of notes fail in transport.
    pub abort_fraction: f64,
    /// Extra attempts when a well-formed completion parses as Uncertain.
    pub content_retries: u32,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self { parallelism: 4, abort_fraction: 0.2, content_retries: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifyError {
    #[error("run aborted: {failed} of {total} notes failed at transport level")]
    AbortedRun { failed: usize, total: usize },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    EmptyVerdictList(#[from] EmptyVerdictList),
    #[error("no verdict stored for note {0}")]
    MissingVerdict(String),
    #[error("parallelism must be at least 1")]
    InvalidParallelism,
}

fn classify_note(
    note: &ClinicalNote,
    prompt: &PromptConfig,
    backend: &dyn ChatBackend,
    params: &GenerationParams,
    content_retries: u32,
) -> Result<NoteVerdict, TemplateError> {
    let rendered = render_prompt(prompt, note)?;
    let request = ChatRequest::new(rendered.system_text, rendered.user_text, params.clone())
        .for_prompt(prompt.prompt_id.clone())
        .for_role(AgentRole::Specialist);
    let mut attempt = 0;
    loop {
        let mut verdict = match backend.complete(&request) {
            Ok(text) => parse_response(&text),
            Err(e) => {
                warn!(note_id = %note.note_id, error = %e, "note classification failed");
                NoteVerdict {
                    note_id: String::new(),
                    verdict: Verdict::Uncertain,
                    rationale: String::new(),
                    raw_completion: String::new(),
                    transport_failure: true,
                }
            }
        };
        verdict.note_id = note.note_id.clone();
        if verdict.verdict != Verdict::Uncertain || verdict.transport_failure || attempt >= content_retries {
            return Ok(verdict);
        }
        attempt += 1;
    }
}

/// Classifies every note with `prompt` and aggregates per patient.
///
/// Notes are dispatched in note-id order over a pool of `parallelism`
/// workers; the result does not depend on scheduling.
pub fn classify_cohort(
    dataset: &Dataset,
    prompt: &PromptConfig,
    backend: &dyn ChatBackend,
    params: &GenerationParams,
    options: &ClassifyOptions,
) -> Result<CohortVerdicts, ClassifyError> {
    if options.parallelism == 0 {
        return Err(ClassifyError::InvalidParallelism);
    }
    prompt.validate()?;
    let mut notes: Vec<&ClinicalNote> = dataset.notes().iter().collect();
    notes.sort_by(|a, b| a.note_id.cmp(&b.note_id));

    let run = |n: &&ClinicalNote| classify_note(n, prompt, backend, params, options.content_retries);
    let results: Vec<NoteVerdict> = if options.parallelism == 1 {
        notes.iter().map(run).collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.parallelism)
            .build()
            .expect("thread pool construction");
        pool.install(|| notes.par_iter().map(run).collect::<Result<_, _>>())?
    };

    let failed = results.iter().filter(|v| v.transport_failure).count();
    let total = results.len();
    if total > 0 && failed as f64 > options.abort_fraction * total as f64 {
        return Err(ClassifyError::AbortedRun { failed, total });
    }
    let verdicts = results.into_iter().map(|v| (v.note_id.clone(), v)).collect();
    CohortVerdicts::from_verdicts(prompt.prompt_id.clone(), dataset, verdicts)
}
