//! Datasets, the prompt library, run persistence and synthetic fixtures.

pub mod dataset;
pub mod library;
pub mod runs;
pub mod synthetic;

pub use dataset::{load_dataset, split_dataset, write_dataset, Dataset, DatasetError, SplitError};
pub use library::{load_prompts, parse_prompts, preset, prompt_library, LibraryError};
pub use runs::{load_run, save_run, RunStoreError, RUN_SCHEMA_VERSION};
pub use synthetic::{generate_synthetic_cohort, InfeasibleSpec, PromptProfile, SyntheticSpec};
