//! Shipped prompt presets and user prompt files, in one JSONL schema.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::domain::{PromptConfig, TemplateError};

const LIBRARY: &str = include_str!("../../data/prompts.jsonl");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LibraryError {
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("prompt {prompt_id}: {source}")]
    Template { prompt_id: String, source: TemplateError },
    #[error("no prompts found")]
    Empty,
}

/// Parses JSONL prompt records, or a single JSON object spanning the whole
/// text. Every prompt is template-validated.
pub fn parse_prompts(text: &str) -> Result<Vec<PromptConfig>, LibraryError> {
    let prompts = match serde_json::from_str::<PromptConfig>(text) {
        Ok(p) => vec![p],
        Err(_) => text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<PromptConfig>(l)
                    .map_err(|e| LibraryError::Parse { line: i + 1, message: e.to_string() })
            })
            .collect::<Result<Vec<_>, _>>()?,
    };
    if prompts.is_empty() {
        return Err(LibraryError::Empty);
    }
    for p in &prompts {
        p.validate().map_err(|source| LibraryError::Template { prompt_id: p.prompt_id.clone(), source })?;
    }
    Ok(prompts)
}

pub fn load_prompts(path: &Path) -> Result<Vec<PromptConfig>, LibraryError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LibraryError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    parse_prompts(&text)
}

/// The seven shipped presets: P0, AP1, AP2, XP1..XP4.
pub fn prompt_library() -> Vec<PromptConfig> {
    parse_prompts(LIBRARY).expect("shipped prompt library is valid")
}

pub fn preset(prompt_id: &str) -> Option<PromptConfig> {
    prompt_library().into_iter().find(|p| p.prompt_id == prompt_id)
}
