//! Seeded, resumable experiments and parameter sweeps.
//!
//! An experiment selects quotes from corpus documents per topic, generates
//! several continuations per quote, and runs the span, attribution and
//! report stages over the results. Everything lands in `output_dir`:
//!
//! ```text
//! records.jsonl       one GenerationRecord per job, canonical job order
//! windows.jsonl       flagged windows
//! attributions.jsonl  one WindowAttribution per window
//! manifest.json       config hash, seed, counts, per-job failures
//! report/             tables and plot data
//! ```

mod config;
mod prompts;
mod run;
mod sweep;

use std::path::PathBuf;

use thiserror::Error;

use crate::attribution::AttributionError;
use crate::corpus::CorpusError;
use crate::index::IndexError;
use crate::lm::ProviderError;
use crate::report::ReportError;
use crate::spans::SpanError;

pub use config::{
    build_provider, config_hash, ExperimentConfig, ProviderSpec, ReplaySpec, TopicSpec, ToySpec,
};
pub use prompts::{job_seed, jobs, load_prompts_file, prompt_hash, select_prompts, Job, Prompt};
pub use run::{
    analyze_records, run_experiment, AnalysisOutcome, JobFailure, Manifest, PromptBreakdown,
    RunStatus, RunSummary, Stage,
};
pub use sweep::{sweep, SweepAxis, SweepRow, SweepSpec, SweepValue};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("cannot parse config {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
    #[error("topic {topic:?} has {available} eligible documents, {required} required")]
    InsufficientDocuments {
        topic: String,
        available: usize,
        required: usize,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Span(#[from] SpanError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> HarnessError {
        let context = context.into();
        move |source| HarnessError::Io { context, source }
    }

    /// Process exit code: 1 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::InvalidConfig(_)
            | HarnessError::ConfigParse { .. }
            | HarnessError::InsufficientDocuments { .. } => 1,
            _ => 3,
        }
    }
}
