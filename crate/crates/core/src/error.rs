use thiserror::Error;

use crate::attribution::AttributionError;
use crate::corpus::CorpusError;
use crate::harness::HarnessError;
use crate::index::IndexError;
use crate::lm::ProviderError;
use crate::report::ReportError;
use crate::spans::SpanError;

/// Crate-wide error, wrapping the error type of each stage.
#[derive(Debug, Error)]
pub enum Error {
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
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
