//! Synthetic cohorts paired with stub scripts that reproduce chosen
//! confusion counts exactly.

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dataset;
use crate::domain::{AgentRole, ClinicalNote, ConfusionCounts, PatientLabel, Reference, ReferenceLabel};
use crate::gateway::{StubMatch, StubRule, StubScript};

/// Target counts for one prompt id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptProfile {
    pub prompt_id: String,
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub patients: usize,
    pub positives: usize,
    /// Inclusive range.
    pub notes_per_patient: (usize, usize),
    pub profiles: Vec<PromptProfile>,
    /// Fixed replies for the refinement agents.
    pub agent_replies: BTreeMap<AgentRole, String>,
}

impl SyntheticSpec {
    pub fn new(patients: usize, positives: usize, notes_per_patient: (usize, usize)) -> Self {
        let agent_replies = [
            (AgentRole::SpecificityImprover, "Do not count risk factors or normal screening results as evidence of cognitive concerns."),
            (AgentRole::SensitivityImprover, "Look for caregiver-reported memory complaints."),
            (AgentRole::Summarizer1, "Is this note indicative of any cognitive concern, yes or no? Only documented symptoms or findings count."),
            (AgentRole::Summarizer2, "Is this note indicative of any cognitive concern, yes or no? Include reported memory complaints."),
        ]
        .into_iter()
        .map(|(r, s)| (r, s.to_string()))
        .collect();
        Self { patients, positives, notes_per_patient, profiles: Vec::new(), agent_replies }
    }

    pub fn profile(mut self, prompt_id: impl Into<String>, counts: ConfusionCounts) -> Self {
        self.profiles.push(PromptProfile { prompt_id: prompt_id.into(), counts });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("infeasible synthetic spec: {0}")]
pub struct InfeasibleSpec(pub String);

pub const YES_COMPLETION: &str = "Yes, the note documents progressive memory complaints.";
pub const NO_COMPLETION: &str = "No, there is no evidence of cognitive concern.";
pub const UNCERTAIN_COMPLETION: &str = "Based on the provided note, more information would be needed.";

/// Unique, substring-safe marker embedded in a note's text.
pub fn note_marker(note_id: &str) -> String {
    format!("[[note {note_id}]]")
}

const FILLER: [&str; 6] = [
    "Seen in clinic for follow-up of hypertension.",
    "Reviewed medications and recent laboratory results.",
    "Patient accompanied by spouse.",
    "Vital signs stable. No acute distress.",
    "Plan discussed and questions answered.",
    "Follow up in three months.",
];

fn check(spec: &SyntheticSpec) -> Result<(), InfeasibleSpec> {
    let (lo, hi) = spec.notes_per_patient;
    if spec.patients == 0 {
        return Err(InfeasibleSpec("no patients".into()));
    }
    if spec.positives > spec.patients {
        return Err(InfeasibleSpec("more positives than patients".into()));
    }
    if lo == 0 || lo > hi {
        return Err(InfeasibleSpec(format!("bad notes-per-patient range {lo}..={hi}")));
    }
    let negatives = spec.patients - spec.positives;
    for p in &spec.profiles {
        let c = &p.counts;
        let id = &p.prompt_id;
        if c.tp + c.r#fn > spec.positives as u64 {
            return Err(InfeasibleSpec(format!("{id}: tp+fn exceeds {} positives", spec.positives)));
        }
        if c.tn + c.fp > negatives as u64 {
            return Err(InfeasibleSpec(format!("{id}: tn+fp exceeds {negatives} negatives")));
        }
        if c.total() != spec.patients as u64 {
            return Err(InfeasibleSpec(format!("{id}: counts sum to {}, not {}", c.total(), spec.patients)));
        }
    }
    Ok(())
}

/// Builds the dataset and a script under which classifying with each
/// profiled prompt yields exactly its counts. Unprofiled prompt ids see
/// every note answered "no".
pub fn generate_synthetic_cohort(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, StubScript), InfeasibleSpec> {
    check(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = spec.patients.to_string().len().max(3);
    let ids: Vec<String> = (1..=spec.patients).map(|i| format!("p{i:0width$}")).collect();

    let mut order: Vec<usize> = (0..spec.patients).collect();
    order.shuffle(&mut rng);
    let mut positive = vec![false; spec.patients];
    for &i in &order[..spec.positives] {
        positive[i] = true;
    }

    let base = NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date");
    let mut notes = Vec::new();
    let mut patient_notes: Vec<Vec<String>> = Vec::new();
    for (i, pid) in ids.iter().enumerate() {
        let n = rng.gen_range(spec.notes_per_patient.0..=spec.notes_per_patient.1);
        let mut mine = Vec::new();
        for k in 1..=n {
            let note_id = format!("{pid}-{k:02}");
            let mut text = String::new();
            for _ in 0..3 {
                text.push_str(FILLER[rng.gen_range(0..FILLER.len())]);
                text.push(' ');
            }
            if positive[i] && k == 1 {
                text.push_str("Family reports increasing forgetfulness. ");
            }
            text.push_str(&note_marker(&note_id));
            let date = base.checked_add_days(Days::new(rng.gen_range(0..1500)));
            notes.push(ClinicalNote { patient_id: pid.clone(), note_id: note_id.clone(), date, text });
            mine.push(note_id);
        }
        patient_notes.push(mine);
    }
    let labels = ids
        .iter()
        .zip(&positive)
        .map(|(p, &pos)| ReferenceLabel {
            patient_id: p.clone(),
            label: if pos { Reference::WithConcerns } else { Reference::WithoutConcerns },
        })
        .collect();
    let dataset = Dataset::from_parts(notes, labels).map_err(|e| InfeasibleSpec(e.to_string()))?;

    let mut script = StubScript::new(NO_COMPLETION);
    for profile in &spec.profiles {
        let c = &profile.counts;
        let mut pos: Vec<usize> = (0..spec.patients).filter(|&i| positive[i]).collect();
        let mut neg: Vec<usize> = (0..spec.patients).filter(|&i| !positive[i]).collect();
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let mut assigned: Vec<(usize, PatientLabel)> = Vec::new();
        let (tp, fn_) = (c.tp as usize, c.r#fn as usize);
        let (fp, tn) = (c.fp as usize, c.tn as usize);
        for (k, &i) in pos.iter().enumerate() {
            let label = if k < tp {
                PatientLabel::WithConcerns
            } else if k < tp + fn_ {
                PatientLabel::WithoutConcerns
            } else {
                PatientLabel::Uncertain
            };
            assigned.push((i, label));
        }
        for (k, &i) in neg.iter().enumerate() {
            let label = if k < fp {
                PatientLabel::WithConcerns
            } else if k < fp + tn {
                PatientLabel::WithoutConcerns
            } else {
                PatientLabel::Uncertain
            };
            assigned.push((i, label));
        }
        assigned.sort_unstable_by_key(|&(i, _)| i);

        for (i, label) in assigned {
            let mine = &patient_notes[i];
            let pick = rng.gen_range(0..mine.len());
            let reply = match label {
                PatientLabel::WithConcerns => YES_COMPLETION,
                PatientLabel::Uncertain => UNCERTAIN_COMPLETION,
                PatientLabel::WithoutConcerns => continue,
            };
            let matcher = StubMatch::prompt(profile.prompt_id.clone())
                .and_role(AgentRole::Specialist)
                .and_user_contains(note_marker(&mine[pick]));
            script = script.rule(StubRule::reply(matcher, reply));
        }
    }
    for (role, reply) in &spec.agent_replies {
        script = script.rule(StubRule::reply(StubMatch::role(*role), reply.clone()));
    }
    Ok((dataset, script))
}
