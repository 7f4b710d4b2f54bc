//! Trace low-perplexity spans of language-model generations back to the
//! training corpus.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`corpus`] holds pre-tokenized documents separated by a sentinel word
//!    and persists them as a small file set.
//! 2. [`index`] builds a suffix array over that token stream and answers
//!    exact n-gram `count` / `locate` / `context` queries.
//! 3. [`lm`] generates continuations through a pluggable provider and
//!    records the probability of every emitted token; [`spans`] cuts the
//!    runs of confident tokens into fixed-size windows.
//! 4. [`attribution`] matches each window against the index and assigns a
//!    match category; [`report`] aggregates the results into tables and
//!    plot data.
//!
//! [`harness`] wires the stages into resumable, seeded experiments and
//! parameter sweeps.

pub mod attribution;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod index;
pub mod lm;
pub mod report;
pub mod spans;

pub use attribution::{Category, MatchResult, WindowAttribution};
pub use corpus::{Corpus, Document, TokenId, Vocabulary, SENTINEL};
pub use error::{Error, Result};
pub use index::{Occurrence, SuffixIndex};
pub use lm::{GenerationRecord, LanguageModel, SamplingParams, ScoredToken};
pub use spans::{AnalysisConfig, LowPerplexitySpan, Window};
