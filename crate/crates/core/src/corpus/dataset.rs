use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{ClinicalNote, Reference, ReferenceLabel};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("{}:{line}: {message}", path.display())]
    ParseError { path: PathBuf, line: usize, message: String },
    #[error("cannot read {}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("note {note_id} (line {line}) belongs to patient {patient_id}, who has no reference label")]
    OrphanNote { note_id: String, patient_id: String, line: usize },
    #[error("patient {patient_id} has a reference label but no notes")]
    ChildlessPatient { patient_id: String },
    #[error("duplicate note id {note_id} at line {line}")]
    DuplicateNoteId { note_id: String, line: usize },
    #[error("duplicate reference label for patient {patient_id} at line {line}")]
    DuplicateLabel { patient_id: String, line: usize },
    #[error("note line {line}: {message}")]
    InvalidRecord { line: usize, message: String },
    #[error("label line {line}: {message}")]
    InvalidLabel { line: usize, message: String },
}

/// A validated set of notes with their patients' reference labels.
///
/// Construction checks every invariant, so holding a `Dataset` means note ids
/// are unique, every note's patient is labeled, and every labeled patient has
/// at least one note.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    id: String,
    notes: Vec<ClinicalNote>,
    reference: BTreeMap<String, Reference>,
    by_patient: BTreeMap<String, Vec<usize>>,
}

impl Dataset {
    /// Validates notes and labels. Line numbers in errors are 1-based
    /// positions within `notes` / `labels`.
    pub fn new(
        id: impl Into<String>,
        notes: Vec<ClinicalNote>,
        labels: Vec<ReferenceLabel>,
    ) -> Result<Self, DatasetError> {
        let mut reference = BTreeMap::new();
        for (i, l) in labels.into_iter().enumerate() {
            if l.patient_id.is_empty() {
                return Err(DatasetError::InvalidLabel { line: i + 1, message: "empty patient_id".into() });
            }
            if reference.insert(l.patient_id.clone(), l.label).is_some() {
                return Err(DatasetError::DuplicateLabel { patient_id: l.patient_id, line: i + 1 });
            }
        }

        let mut seen = HashMap::new();
        let mut by_patient: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, n) in notes.iter().enumerate() {
            let line = i + 1;
            if n.patient_id.is_empty() {
                return Err(DatasetError::InvalidRecord { line, message: "empty patient_id".into() });
            }
            if n.note_id.is_empty() {
                return Err(DatasetError::InvalidRecord { line, message: "empty note_id".into() });
            }
            if n.text.is_empty() {
                return Err(DatasetError::InvalidRecord { line, message: format!("note {} has empty text", n.note_id) });
            }
            if seen.insert(n.note_id.as_str(), line).is_some() {
                return Err(DatasetError::DuplicateNoteId { note_id: n.note_id.clone(), line });
            }
            if !reference.contains_key(&n.patient_id) {
                return Err(DatasetError::OrphanNote {
                    note_id: n.note_id.clone(),
                    patient_id: n.patient_id.clone(),
                    line,
                });
            }
            by_patient.entry(n.patient_id.clone()).or_default().push(i);
        }
        if let Some(p) = reference.keys().find(|p| !by_patient.contains_key(*p)) {
            return Err(DatasetError::ChildlessPatient { patient_id: p.clone() });
        }

        Ok(Self { id: id.into(), notes, reference, by_patient })
    }

    /// Like [`Dataset::new`] with a content-derived id.
    pub fn from_parts(notes: Vec<ClinicalNote>, labels: Vec<ReferenceLabel>) -> Result<Self, DatasetError> {
        let id = content_id(&notes, &labels);
        Self::new(id, notes, labels)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn notes(&self) -> &[ClinicalNote] {
        &self.notes
    }

    pub fn reference(&self) -> &BTreeMap<String, Reference> {
        &self.reference
    }

    pub fn patient_ids(&self) -> impl Iterator<Item = &str> {
        self.reference.keys().map(String::as_str)
    }

    pub fn notes_for<'a>(&'a self, patient_id: &str) -> impl Iterator<Item = &'a ClinicalNote> + 'a {
        self.by_patient.get(patient_id).into_iter().flatten().map(|&i| &self.notes[i])
    }

    pub fn note_count(&self) -> usize {
        self.notes.len()
    }

    pub fn patient_count(&self) -> usize {
        self.reference.len()
    }

    pub fn positive_count(&self) -> usize {
        self.reference.values().filter(|&&r| r == Reference::WithConcerns).count()
    }

    /// Subset restricted to the given patients, keeping note order.
    fn restrict(&self, id: String, patients: &BTreeSet<&str>) -> Dataset {
        let notes: Vec<_> = self.notes.iter().filter(|n| patients.contains(n.patient_id.as_str())).cloned().collect();
        let labels: Vec<_> = self
            .reference
            .iter()
            .filter(|(p, _)| patients.contains(p.as_str()))
            .map(|(p, &label)| ReferenceLabel { patient_id: p.clone(), label })
            .collect();
        Dataset::new(id, notes, labels).expect("subset of a valid dataset is valid")
    }
}

fn content_id(notes: &[ClinicalNote], labels: &[ReferenceLabel]) -> String {
    let mut h = Sha256::new();
    for n in notes {
        for part in [&n.patient_id, &n.note_id, &n.text] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
    }
    for l in labels {
        h.update(l.patient_id.as_bytes());
        h.update(if l.label == Reference::WithConcerns { b"+" } else { b"-" });
    }
    let digest = h.finalize();
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoteLine {
    patient_id: String,
    note_id: String,
    #[serde(default)]
    date: Option<chrono::NaiveDate>,
    text: String,
}

/// Loads notes and labels from JSON Lines files and validates them.
///
/// Notes: `{"patient_id", "note_id", "date"?, "text"}` per line.
/// Labels: `{"patient_id", "label": "with" | "without"}` per line.
pub fn load_dataset(notes_path: &Path, labels_path: &Path) -> Result<Dataset, DatasetError> {
    let note_lines = read_numbered::<NoteLine>(notes_path)?;
    let label_lines = read_numbered::<ReferenceLabel>(labels_path)?;

    let labels: Vec<ReferenceLabel> = label_lines.iter().map(|(_, l)| l.clone()).collect();
    let notes: Vec<ClinicalNote> = note_lines
        .iter()
        .map(|(_, n)| ClinicalNote {
            patient_id: n.patient_id.clone(),
            note_id: n.note_id.clone(),
            date: n.date,
            text: n.text.clone(),
        })
        .collect();

    // Translate record positions to file line numbers.
    let note_line = |pos: usize| note_lines[pos - 1].0;
    let label_line = |pos: usize| label_lines[pos - 1].0;
    let id = content_id(&notes, &labels);
    Dataset::new(id, notes, labels).map_err(|e| match e {
        DatasetError::DuplicateNoteId { note_id, line } => DatasetError::DuplicateNoteId { note_id, line: note_line(line) },
        DatasetError::OrphanNote { note_id, patient_id, line } => {
            DatasetError::OrphanNote { note_id, patient_id, line: note_line(line) }
        }
        DatasetError::DuplicateLabel { patient_id, line } => {
            DatasetError::DuplicateLabel { patient_id, line: label_line(line) }
        }
        DatasetError::InvalidRecord { line, message } => DatasetError::InvalidRecord { line: note_line(line), message },
        DatasetError::InvalidLabel { line, message } => DatasetError::InvalidLabel { line: label_line(line), message },
        other => other,
    })
}

fn read_numbered<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>, DatasetError> {
    let file = File::open(path).map_err(|e| DatasetError::Io { path: path.to_owned(), message: e.to_string() })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DatasetError::Io { path: path.to_owned(), message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| DatasetError::ParseError {
            path: path.to_owned(),
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, record));
    }
    Ok(out)
}

/// Writes a dataset back out as the two JSON Lines files `load_dataset` reads.
pub fn write_dataset(dataset: &Dataset, notes_path: &Path, labels_path: &Path) -> std::io::Result<()> {
    use std::io::Write;
    let mut notes = std::io::BufWriter::new(File::create(notes_path)?);
    for n in dataset.notes() {
        serde_json::to_writer(&mut notes, n)?;
        notes.write_all(b"\n")?;
    }
    notes.flush()?;
    let mut labels = std::io::BufWriter::new(File::create(labels_path)?);
    for (p, &label) in dataset.reference() {
        serde_json::to_writer(&mut labels, &ReferenceLabel { patient_id: p.clone(), label })?;
        labels.write_all(b"\n")?;
    }
    labels.flush()
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("refinement fraction must lie strictly between 0 and 1, got {0}")]
pub struct SplitError(pub f64);

/// Random patient-level split. A patient's notes always travel together.
///
/// The refinement side receives `round(patients * fraction)` patients.
pub fn split_dataset(dataset: &Dataset, refinement_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), SplitError> {
    if !(refinement_fraction > 0.0 && refinement_fraction < 1.0) {
        return Err(SplitError(refinement_fraction));
    }
    let mut patients: Vec<&str> = dataset.patient_ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);
    let cut = (patients.len() as f64 * refinement_fraction).round() as usize;
    let refinement: BTreeSet<&str> = patients[..cut].iter().copied().collect();
    let validation: BTreeSet<&str> = patients[cut..].iter().copied().collect();
    Ok((
        dataset.restrict(format!("{}-refinement-{seed}", dataset.id()), &refinement),
        dataset.restrict(format!("{}-validation-{seed}", dataset.id()), &validation),
    ))
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn note(p: &str, n: &str) -> ClinicalNote {
        ClinicalNote { patient_id: p.into(), note_id: n.into(), date: None, text: format!("text of {n}") }
    }

    fn label(p: &str, with: bool) -> ReferenceLabel {
        ReferenceLabel {
            patient_id: p.into(),
            label: if with { Reference::WithConcerns } else { Reference::WithoutConcerns },
        }
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn loads_minimal_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let notes = write(
            dir.path(),
            "notes.jsonl",
            concat!(
                r#"{"patient_id":"A","note_id":"n1","date":"2017-03-01","text":"one"}"#, "\n",
                r#"{"patient_id":"A","note_id":"n2","text":"two"}"#, "\n",
                r#"{"patient_id":"B","note_id":"n3","text":"three"}"#, "\n",
                r#"{"patient_id":"B","note_id":"n4","text":"four"}"#, "\n",
            ),
        );
        let labels = write(
            dir.path(),
            "labels.jsonl",
            "{\"patient_id\":\"A\",\"label\":\"with\"}\n{\"patient_id\":\"B\",\"label\":\"without\"}\n",
        );
        let ds = load_dataset(&notes, &labels).unwrap();
        assert_eq!(ds.patient_count(), 2);
        assert_eq!(ds.note_count(), 4);
        assert_eq!(ds.notes()[0].date, chrono::NaiveDate::from_ymd_opt(2017, 3, 1));
        assert_eq!(ds.notes_for("B").count(), 2);
    }

    #[test]
    fn error_taxonomy() {
        let dir = tempfile::tempdir().unwrap();
        let labels = write(dir.path(), "l.jsonl", "{\"patient_id\":\"A\",\"label\":\"with\"}\n{\"patient_id\":\"C\",\"label\":\"without\"}\n");
        let notes = write(dir.path(), "n.jsonl", "{\"patient_id\":\"A\",\"note_id\":\"n1\",\"text\":\"x\"}\n");
        assert_eq!(
            load_dataset(&notes, &labels),
            Err(DatasetError::ChildlessPatient { patient_id: "C".into() })
        );

        let labels = write(dir.path(), "l2.jsonl", "{\"patient_id\":\"A\",\"label\":\"with\"}\n");
        let dup = write(
            dir.path(),
            "dup.jsonl",
            "{\"patient_id\":\"A\",\"note_id\":\"n1\",\"text\":\"x\"}\n\n{\"patient_id\":\"A\",\"note_id\":\"n1\",\"text\":\"y\"}\n",
        );
        assert_eq!(load_dataset(&dup, &labels), Err(DatasetError::DuplicateNoteId { note_id: "n1".into(), line: 3 }));

        let orphan = write(dir.path(), "o.jsonl", "{\"patient_id\":\"Z\",\"note_id\":\"n9\",\"text\":\"x\"}\n");
        assert!(matches!(load_dataset(&orphan, &labels), Err(DatasetError::OrphanNote { line: 1, .. })));

        let garbage = write(dir.path(), "g.jsonl", "{\"patient_id\":\"A\",\"note_id\":\"n1\",\"text\":\"x\"}\nnot json\n");
        assert!(matches!(load_dataset(&garbage, &labels), Err(DatasetError::ParseError { line: 2, .. })));

        let bad_label = write(dir.path(), "bl.jsonl", "{\"patient_id\":\"A\",\"label\":\"maybe\"}\n");
        assert!(matches!(load_dataset(&notes, &bad_label), Err(DatasetError::ParseError { line: 1, .. })));

        let empty_text = write(dir.path(), "e.jsonl", "{\"patient_id\":\"A\",\"note_id\":\"n1\",\"text\":\"\"}\n");
        assert!(matches!(load_dataset(&empty_text, &labels), Err(DatasetError::InvalidRecord { line: 1, .. })));

        let missing = dir.path().join("missing.jsonl");
        assert!(matches!(load_dataset(&missing, &labels), Err(DatasetError::Io { .. })));
    }

    #[test]
    fn duplicate_label_rejected() {
        let err = Dataset::from_parts(vec![note("A", "n1")], vec![label("A", true), label("A", false)]).unwrap_err();
        assert_eq!(err, DatasetError::DuplicateLabel { patient_id: "A".into(), line: 2 });
    }

    #[test]
    fn split_is_patient_level_and_deterministic() {
        let mut notes = Vec::new();
        let mut labels = Vec::new();
        for p in 0..20 {
            let pid = format!("p{p:02}");
            for k in 0..(1 + p % 3) {
                notes.push(note(&pid, &format!("{pid}-{k}")));
            }
            labels.push(label(&pid, p % 2 == 0));
        }
        let ds = Dataset::from_parts(notes, labels).unwrap();
        let (a, b) = split_dataset(&ds, 0.5, 7).unwrap();
        let (a2, b2) = split_dataset(&ds, 0.5, 7).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        assert_eq!(a.patient_count(), 10);
        assert_eq!(b.patient_count(), 10);
        assert_eq!(a.note_count() + b.note_count(), ds.note_count());
        assert!(a.patient_ids().all(|p| !b.reference().contains_key(p)));
        assert!(split_dataset(&ds, 1.0, 7).is_err());
        assert!(split_dataset(&ds, 0.0, 7).is_err());
    }
}
