//! Next-token providers, sampling and perplexity.
//!
//! Every provider implements [`LanguageModel`]: a full next-token
//! distribution for a context, plus teacher-forced scoring. Three
//! implementations ship here: [`ToyNgramLm`] (count-based, trained on a
//! corpus), [`ReplayLm`] (answers from recorded generations) and
//! [`HttpLm`] (completions-style endpoint with per-token logprobs).

mod generate;
mod http;
mod perplexity;
mod record;
mod replay;
mod sampling;
mod toy;

use thiserror::Error;

use crate::corpus::TokenId;

pub use generate::generate;
pub use http::{HttpConfig, HttpLm};
pub use perplexity::{log2_token_perplexity, token_perplexity};
pub use record::{read_records, write_record, GenerationRecord, ScoredToken};
pub use replay::ReplayLm;
pub use sampling::{apply_sampling, sample, softmax, Candidate, SamplingParams};
pub use toy::{DeterministicLm, ToyNgramLm, PROB_FLOOR};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("context of {len} tokens exceeds the provider limit of {max}")]
    ContextTooLong { len: usize, max: usize },
    #[error("logit {index} is not finite")]
    NonFiniteLogit { index: usize },
    #[error("probability {0} is outside (0, 1]")]
    ProbOutOfRange(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("token {token} is outside the provider vocabulary (size {vocab_size})")]
    TokenOutOfRange { token: u32, vocab_size: usize },
    #[error("cannot train on an empty corpus")]
    EmptyCorpus,
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("malformed generation record on line {line}: {source}")]
    MalformedRecord {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

/// Unnormalized log-scores over the whole vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenDistribution {
    logits: Vec<f64>,
}

impl NextTokenDistribution {
    pub fn new(logits: Vec<f64>) -> Result<Self, ProviderError> {
        let dist = NextTokenDistribution { logits };
        dist.check_finite()?;
        Ok(dist)
    }

    /// Log-probabilities as logits; zero probabilities are floored at
    /// [`PROB_FLOOR`] so every logit stays finite.
    pub fn from_probs(probs: &[f64]) -> Self {
        NextTokenDistribution {
            logits: probs.iter().map(|&p| p.max(PROB_FLOOR).ln()).collect(),
        }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    fn check_finite(&self) -> Result<(), ProviderError> {
        match self.logits.iter().position(|z| !z.is_finite()) {
            Some(index) => Err(ProviderError::NonFiniteLogit { index }),
            None if self.logits.is_empty() => {
                Err(ProviderError::InvalidParams("distribution has no entries".into()))
            }
            None => Ok(()),
        }
    }

    /// Softmax probability of `token` at temperature `t`.
    pub fn prob(&self, token: TokenId, temperature: f64) -> Result<f64, ProviderError> {
        if token.0 as usize >= self.logits.len() {
            return Err(ProviderError::TokenOutOfRange {
                token: token.0,
                vocab_size: self.logits.len(),
            });
        }
        Ok(softmax(&self.logits, temperature)[token.0 as usize])
    }
}

/// A source of next-token distributions.
///
/// Implementations must be safe to call from several threads at once.
pub trait LanguageModel: Send + Sync {
    /// Stable name recorded in every generation.
    fn provider_id(&self) -> &str;

    fn vocab_size(&self) -> usize;

    /// Token that ends a generation; it is not emitted into the output.
    fn end_of_text(&self) -> Option<TokenId> {
        None
    }

    /// Distribution of the token following `context`. An empty context
    /// means the start of a text.
    fn next_distribution(&self, context: &[TokenId]) -> Result<NextTokenDistribution, ProviderError>;

    /// Teacher-forced probabilities (temperature 1) of each of `tokens`
    /// given `context` followed by the preceding tokens.
    fn score(&self, tokens: &[TokenId], context: &[TokenId]) -> Result<Vec<f64>, ProviderError> {
        self.score_at_temperature(tokens, context, 1.0)
    }

    /// Like [`LanguageModel::score`], with a temperature-scaled softmax.
    fn score_at_temperature(
        &self,
        tokens: &[TokenId],
        context: &[TokenId],
        temperature: f64,
    ) -> Result<Vec<f64>, ProviderError> {
        let mut ctx = context.to_vec();
        let mut probs = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let dist = self.next_distribution(&ctx)?;
            probs.push(dist.prob(t, temperature)?);
            ctx.push(t);
        }
        Ok(probs)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for Box<T> {
    fn provider_id(&self) -> &str {
        (**self).provider_id()
    }
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn end_of_text(&self) -> Option<TokenId> {
        (**self).end_of_text()
    }
    fn next_distribution(&self, context: &[TokenId]) -> Result<NextTokenDistribution, ProviderError> {
        (**self).next_distribution(context)
    }
    fn score(&self, tokens: &[TokenId], context: &[TokenId]) -> Result<Vec<f64>, ProviderError> {
        (**self).score(tokens, context)
    }
    fn score_at_temperature(
        &self,
        tokens: &[TokenId],
        context: &[TokenId],
        temperature: f64,
    ) -> Result<Vec<f64>, ProviderError> {
        (**self).score_at_temperature(tokens, context, temperature)
    }
}
