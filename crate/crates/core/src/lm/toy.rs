//! Count-based providers that run offline.

use std::collections::HashMap;

use super::{LanguageModel, NextTokenDistribution, ProviderError};
use crate::corpus::{Corpus, TokenId};

/// Smallest probability a provider reports; zero-count events under
/// unsmoothed estimates are raised to this so logits stay finite.
pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Default, Clone)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

/// N-gram model with add-λ smoothing and backoff.
///
/// For a context, the model looks up the longest suffix (at most
/// `order - 1` tokens) that was followed by some token in training and
/// estimates `p(t) = (count(h t) + λ) / (count(h) + λ |V|)`. The empty
/// context is the unigram distribution, which is always observed. Counts
/// never span documents.
#[derive(Debug, Clone)]
pub struct ToyNgramLm {
    id: String,
    order: usize,
    smoothing: f64,
    vocab_size: usize,
    end_of_text: Option<TokenId>,
    tables: Vec<HashMap<Vec<u32>, ContextCounts>>,
}

impl ToyNgramLm {
    pub fn train(corpus: &Corpus, order: usize, smoothing: f64) -> Result<Self, ProviderError> {
        Self::train_with_end_of_text(corpus, order, smoothing, None)
    }

    /// Trains with `end_of_text` appended after every document, so that
    /// generation can learn where documents stop.
    pub fn train_with_end_of_text(
        corpus: &Corpus,
        order: usize,
        smoothing: f64,
        end_of_text: Option<TokenId>,
    ) -> Result<Self, ProviderError> {
        if order == 0 {
            return Err(ProviderError::InvalidParams("order must be at least 1".into()));
        }
        if !(smoothing.is_finite() && smoothing >= 0.0) {
            return Err(ProviderError::InvalidParams(format!(
                "smoothing must be a finite non-negative number, got {smoothing}"
            )));
        }
        if corpus.total_tokens() == 0 {
            return Err(ProviderError::EmptyCorpus);
        }
        let vocab_size = corpus.vocabulary().vocab_size() as usize;
        if let Some(eot) = end_of_text {
            if eot.0 as usize >= vocab_size {
                return Err(ProviderError::TokenOutOfRange { token: eot.0, vocab_size });
            }
        }

        let mut tables: Vec<HashMap<Vec<u32>, ContextCounts>> = vec![HashMap::new(); order];
        let mut seq: Vec<u32> = Vec::new();
        for doc in corpus.documents() {
            seq.clear();
            seq.extend(doc.tokens.iter().map(|t| t.0));
            seq.extend(end_of_text.map(|t| t.0));
            for target in 0..seq.len() {
                for (m, table) in tables.iter_mut().enumerate() {
                    if m > target {
                        break;
                    }
                    let entry = table.entry(seq[target - m..target].to_vec()).or_default();
                    entry.total += 1;
                    *entry.next.entry(seq[target]).or_default() += 1;
                }
            }
        }
        Ok(ToyNgramLm {
            id: format!("toy-ngram-o{order}-l{smoothing}"),
            order,
            smoothing,
            vocab_size,
            end_of_text,
            tables,
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn counts_for(&self, context: &[TokenId]) -> &ContextCounts {
        let longest = context.len().min(self.order - 1);
        let key: Vec<u32> = context[context.len() - longest..].iter().map(|t| t.0).collect();
        (0..=longest)
            .rev()
            .find_map(|m| self.tables[m].get(&key[longest - m..]))
            .expect("unigram table is never empty")
    }

    /// Exact conditional distribution; sums to one.
    pub fn probabilities(&self, context: &[TokenId]) -> Vec<f64> {
        let counts = self.counts_for(context);
        let denom = counts.total as f64 + self.smoothing * self.vocab_size as f64;
        let mut probs = vec![self.smoothing / denom; self.vocab_size];
        for (&tok, &c) in &counts.next {
            probs[tok as usize] = (c as f64 + self.smoothing) / denom;
        }
        probs
    }
}

impl LanguageModel for ToyNgramLm {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn end_of_text(&self) -> Option<TokenId> {
        self.end_of_text
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<NextTokenDistribution, ProviderError> {
        Ok(NextTokenDistribution::from_probs(&self.probabilities(context)))
    }

    fn score(&self, tokens: &[TokenId], context: &[TokenId]) -> Result<Vec<f64>, ProviderError> {
        let mut ctx = context.to_vec();
        let mut out = Vec::with_capacity(tokens.len());
        for &t in tokens {
            if t.0 as usize >= self.vocab_size {
                return Err(ProviderError::TokenOutOfRange {
                    token: t.0,
                    vocab_size: self.vocab_size,
                });
            }
            out.push(self.probabilities(&ctx)[t.0 as usize].max(PROB_FLOOR));
            ctx.push(t);
        }
        Ok(out)
    }
}

/// Provider whose every prediction has probability one.
///
/// `successor` predicts `(last + 1) mod |V|` (token 0 for an empty
/// context); `constant` always predicts the same token.
#[derive(Debug, Clone)]
pub struct DeterministicLm {
    id: String,
    vocab_size: usize,
    constant: Option<TokenId>,
    end_of_text: Option<TokenId>,
}

// Logit gap that makes every other token underflow to probability zero.
const DETERMINISTIC_GAP: f64 = 1e4;

impl DeterministicLm {
    pub fn successor(vocab_size: usize) -> Self {
        DeterministicLm {
            id: format!("deterministic-successor-v{vocab_size}"),
            vocab_size,
            constant: None,
            end_of_text: None,
        }
    }

    pub fn constant(vocab_size: usize, token: TokenId) -> Self {
        DeterministicLm {
            id: format!("deterministic-constant-{token}-v{vocab_size}"),
            vocab_size,
            constant: Some(token),
            end_of_text: None,
        }
    }

    pub fn with_end_of_text(mut self, token: TokenId) -> Self {
        self.end_of_text = Some(token);
        self
    }

    fn predict(&self, context: &[TokenId]) -> TokenId {
        match (self.constant, context.last()) {
            (Some(t), _) => t,
            (None, Some(last)) => TokenId(((last.0 as usize + 1) % self.vocab_size) as u32),
            (None, None) => TokenId(0),
        }
    }
}

impl LanguageModel for DeterministicLm {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn end_of_text(&self) -> Option<TokenId> {
        self.end_of_text
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<NextTokenDistribution, ProviderError> {
        let mut logits = vec![-DETERMINISTIC_GAP; self.vocab_size];
        logits[self.predict(context).0 as usize] = 0.0;
        NextTokenDistribution::new(logits)
    }

    fn score(&self, tokens: &[TokenId], context: &[TokenId]) -> Result<Vec<f64>, ProviderError> {
        let mut ctx = context.to_vec();
        let mut out = Vec::with_capacity(tokens.len());
        for &t in tokens {
            out.push(if self.predict(&ctx) == t { 1.0 } else { PROB_FLOOR });
            ctx.push(t);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_documents, tokens, Vocabulary};
    use crate::lm::{generate, SamplingParams};
    use proptest::prelude::*;

    fn corpus(docs: &[&[u32]], vocab: u32) -> Corpus {
        ingest_documents(
            docs.iter().map(|d| ("t".to_string(), tokens(d))),
            Vocabulary::new(vocab, "t").unwrap(),
        )
        .unwrap()
    }

    fn argmax(v: &[f64]) -> usize {
        (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b]).then(b.cmp(&a))).unwrap()
    }

    #[test]
    fn unigram_frequencies() {
        let lm = ToyNgramLm::train(&corpus(&[&[0, 0, 1, 0]], 2), 1, 0.0).unwrap();
        assert_eq!(lm.probabilities(&[]), vec![0.75, 0.25]);
        assert_eq!(lm.probabilities(&tokens(&[1, 1])), vec![0.75, 0.25]);
    }

    #[test]
    fn alternating_bigram_prefers_successor() {
        let lm = ToyNgramLm::train(&corpus(&[&[0, 1, 0, 1, 0, 1, 0, 1]], 3), 2, 1.0).unwrap();
        let d = lm.next_distribution(&tokens(&[0])).unwrap();
        assert_eq!(argmax(d.logits()), 1);
        // empty context falls back to unigram counts: 0 and 1 tie, 2 unseen
        let p = lm.probabilities(&[]);
        assert_eq!(p[0], p[1]);
        assert!((p[0] - 5.0 / 11.0).abs() < 1e-12);
        assert!((p[2] - 1.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn laplace_mass_for_unseen_token() {
        // context [0] seen 3 times, always followed by 1; vocab 4, λ = 1
        let lm = ToyNgramLm::train(&corpus(&[&[0, 1, 0, 1, 0, 1]], 4), 2, 1.0).unwrap();
        let probs = lm.score(&tokens(&[3]), &tokens(&[0])).unwrap();
        assert!((probs[0] - 1.0 / (3.0 + 4.0)).abs() < 1e-12);
        let seen = lm.score(&tokens(&[1]), &tokens(&[0])).unwrap();
        assert!((seen[0] - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn heavy_smoothing_tends_to_uniform() {
        let lm = ToyNgramLm::train(&corpus(&[&[0, 0, 0, 1]], 3), 2, 1e9).unwrap();
        for p in lm.probabilities(&tokens(&[0])) {
            assert!((p - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn score_is_the_chain_rule() {
        let lm = ToyNgramLm::train(&corpus(&[&[2, 0, 1, 2, 2, 1, 0, 0, 2]], 3), 3, 0.3).unwrap();
        let window = tokens(&[2, 1, 0, 2]);
        let scored = lm.score(&window, &[]).unwrap();
        for i in 0..window.len() {
            let expected = lm.probabilities(&window[..i])[window[i].0 as usize];
            assert!((scored[i] - expected).abs() < 1e-15);
        }
        let via_default = lm.score_at_temperature(&window, &[], 1.0).unwrap();
        for (a, b) in scored.iter().zip(&via_default) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_replays_training_document() {
        let doc: Vec<u32> = (0..60).map(|i| (i * 7 + 3) % 50).collect();
        let lm = ToyNgramLm::train(&corpus(&[&doc], 50), 6, 0.0).unwrap();
        let params = SamplingParams {
            temperature: 0.1,
            top_k: 1,
            top_p: 1.0,
            seed: 0,
            max_new_tokens: 40,
        };
        let rec = generate(&lm, &tokens(&doc[..10]), &params).unwrap();
        assert_eq!(rec.output_tokens(), tokens(&doc[10..50]));
    }

    #[test]
    fn end_of_text_closes_documents() {
        let c = corpus(&[&[1, 2, 3, 4]], 6);
        let lm = ToyNgramLm::train_with_end_of_text(&c, 3, 0.0, Some(TokenId(5))).unwrap();
        let params = SamplingParams { top_k: 1, max_new_tokens: 20, ..SamplingParams::default() };
        let rec = generate(&lm, &tokens(&[1, 2]), &params).unwrap();
        assert_eq!(rec.output_tokens(), tokens(&[3, 4]));
        assert!(ToyNgramLm::train_with_end_of_text(&c, 3, 0.0, Some(TokenId(6))).is_err());
    }

    #[test]
    fn training_errors() {
        let c = corpus(&[&[0, 1]], 2);
        assert!(matches!(ToyNgramLm::train(&c, 0, 1.0), Err(ProviderError::InvalidParams(_))));
        assert!(ToyNgramLm::train(&c, 2, -1.0).is_err());
        let empty = ingest_documents(Vec::new(), Vocabulary::new(2, "t").unwrap()).unwrap();
        assert!(matches!(ToyNgramLm::train(&empty, 2, 1.0), Err(ProviderError::EmptyCorpus)));
    }

    #[test]
    fn deterministic_scores_are_certain() {
        let lm = DeterministicLm::successor(5);
        assert_eq!(lm.score(&tokens(&[0, 1, 2, 3, 4, 0]), &[]).unwrap(), vec![1.0; 6]);
        let d = lm.next_distribution(&tokens(&[4])).unwrap();
        assert_eq!(d.prob(TokenId(0), 1.0).unwrap(), 1.0);
        let c = DeterministicLm::constant(3, TokenId(2));
        assert_eq!(c.score(&tokens(&[2, 2]), &tokens(&[0])).unwrap(), vec![1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn conditional_probabilities_sum_to_one(
            docs in prop::collection::vec(prop::collection::vec(0u32..8, 1..30), 1..6),
            order in 1usize..5,
            smoothing in prop_oneof![Just(0.0), 0.0f64..3.0],
            context in prop::collection::vec(0u32..8, 0..6),
        ) {
            let refs: Vec<&[u32]> = docs.iter().map(|d| d.as_slice()).collect();
            let lm = ToyNgramLm::train(&corpus(&refs, 8), order, smoothing).unwrap();
            let sum: f64 = lm.probabilities(&tokens(&context)).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}
