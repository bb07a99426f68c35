//! Screening clinical notes for cognitive concerns with an LLM, measuring
//! the result against chart review, and refining the prompt either with a
//! team of LLM agents or with a clinician in the loop.

pub mod agentic;
pub mod classifier;
pub mod corpus;
pub mod domain;
pub mod evaluator;
pub mod expert;
pub mod gateway;

pub use agentic::{
    route, run_agentic, ActionKind, AgentProfile, AgentProfiles, AgentTranscript, AgenticError, IterationRecord,
    RefinementAction, RunMode, RunRecord, StopReason,
};
pub use classifier::{
    aggregate_patient, classify_cohort, parse_response, ClassifyError, ClassifyOptions, CohortVerdicts,
};
pub use corpus::{load_dataset, prompt_library, split_dataset, Dataset, DatasetError};
pub use domain::*;
pub use evaluator::{confusion, evaluate, metrics, misclassified, Misclassified, MisclassifiedCase};
pub use expert::{start_session, submit_prompt, DeltaReport, ExpertSession, ReviewBundle, SessionError, SessionStatus};
pub use gateway::{
    Backend, BackendConfig, BackendKind, ChatBackend, ChatRequest, GatewayError, StubBackend, StubScript,
};
