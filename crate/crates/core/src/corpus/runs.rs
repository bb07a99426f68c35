//! Versioned JSON persistence for run records.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agentic::RunRecord;

pub const RUN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunStoreError {
    #[error("{}: schema version {found}, expected {expected}", path.display())]
    SchemaVersionMismatch { path: PathBuf, found: u64, expected: u32 },
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("{}: {message}", path.display())]
    Malformed { path: PathBuf, message: String },
    #[error("run {0} has not stopped")]
    RunNotStopped(String),
}

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    schema_version: u32,
    run: &'a RunRecord,
}

#[derive(Deserialize)]
struct EnvelopeIn {
    schema_version: u64,
    run: serde_json::Value,
}

pub fn save_run(run: &RunRecord, path: &Path) -> Result<(), RunStoreError> {
    if !run.is_stopped() {
        return Err(RunStoreError::RunNotStopped(run.run_id.clone()));
    }
    let io = |e: std::io::Error| RunStoreError::Io { path: path.to_path_buf(), message: e.to_string() };
    let body = serde_json::to_string_pretty(&EnvelopeOut { schema_version: RUN_SCHEMA_VERSION, run })
        .expect("run records serialize");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, body + "\n").map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn load_run(path: &Path) -> Result<RunRecord, RunStoreError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunStoreError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    let malformed = |e: serde_json::Error| RunStoreError::Malformed { path: path.to_path_buf(), message: e.to_string() };
    let env: EnvelopeIn = serde_json::from_str(&text).map_err(malformed)?;
    if env.schema_version != u64::from(RUN_SCHEMA_VERSION) {
        return Err(RunStoreError::SchemaVersionMismatch {
            path: path.to_path_buf(),
            found: env.schema_version,
            expected: RUN_SCHEMA_VERSION,
        });
    }
    serde_json::from_value(env.run).map_err(malformed)
}
