//! Provider backed by previously recorded generations.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use super::{read_records, GenerationRecord, LanguageModel, NextTokenDistribution, ProviderError, PROB_FLOOR};
use crate::corpus::TokenId;

/// Answers `next_distribution` for every context that some recorded
/// generation passed through (its prompt followed by a prefix of its
/// output). The recorded token gets its recorded `raw_prob`; the remaining
/// mass is spread evenly over the rest of the vocabulary. Any other
/// context, including one past the end of a recording, is unavailable.
#[derive(Debug, Clone)]
pub struct ReplayLm {
    id: String,
    vocab_size: usize,
    steps: HashMap<Vec<TokenId>, (TokenId, f64)>,
    records: HashMap<String, GenerationRecord>,
}

impl ReplayLm {
    pub fn from_records(
        records: Vec<GenerationRecord>,
        vocab_size: usize,
    ) -> Result<Self, ProviderError> {
        if vocab_size < 2 {
            return Err(ProviderError::InvalidParams("vocab_size must be at least 2".into()));
        }
        let mut steps = HashMap::new();
        let mut by_id = HashMap::new();
        for rec in records {
            let mut ctx = rec.prompt.clone();
            for s in &rec.output {
                if s.token.0 as usize >= vocab_size {
                    return Err(ProviderError::TokenOutOfRange { token: s.token.0, vocab_size });
                }
                steps.entry(ctx.clone()).or_insert((s.token, s.raw_prob));
                ctx.push(s.token);
            }
            by_id.insert(rec.record_id.clone(), rec);
        }
        Ok(ReplayLm {
            id: "replay".to_string(),
            vocab_size,
            steps,
            records: by_id,
        })
    }

    pub fn open(path: impl AsRef<Path>, vocab_size: usize) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| ProviderError::Io {
            context: format!("opening {}", path.display()),
            source: e,
        })?;
        Self::from_records(read_records(BufReader::new(file))?, vocab_size)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// The recorded generation with this id, if any.
    pub fn record(&self, record_id: &str) -> Option<&GenerationRecord> {
        self.records.get(record_id)
    }
}

impl LanguageModel for ReplayLm {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<NextTokenDistribution, ProviderError> {
        let &(token, prob) = self.steps.get(context).ok_or_else(|| {
            ProviderError::ProviderUnavailable(format!(
                "no recorded step for a context of {} tokens",
                context.len()
            ))
        })?;
        let prob = prob.clamp(PROB_FLOOR, 1.0);
        let rest = ((1.0 - prob) / (self.vocab_size - 1) as f64).max(PROB_FLOOR);
        let mut logits = vec![rest.ln(); self.vocab_size];
        logits[token.0 as usize] = prob.ln();
        NextTokenDistribution::new(logits)
    }
}
