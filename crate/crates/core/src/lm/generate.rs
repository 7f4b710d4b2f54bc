use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sampling::{apply_sampling, sample};
use super::{GenerationRecord, LanguageModel, ProviderError, SamplingParams, ScoredToken};
use crate::corpus::TokenId;

/// Samples a continuation of `prompt` token by token.
///
/// The PRNG is seeded from `params.seed`, so the result is reproducible for
/// a deterministic provider. Stops after `max_new_tokens` or when the
/// provider emits its end-of-text token. `record_id` and `topic` are left
/// empty for the caller to fill in.
pub fn generate(
    provider: &dyn LanguageModel,
    prompt: &[TokenId],
    params: &SamplingParams,
) -> Result<GenerationRecord, ProviderError> {
    if prompt.is_empty() {
        return Err(ProviderError::EmptyPrompt);
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut context = prompt.to_vec();
    let mut output = Vec::new();
    let eot = provider.end_of_text();
    while output.len() < params.max_new_tokens {
        let dist = provider.next_distribution(&context)?;
        let candidates = apply_sampling(&dist, params)?;
        let pick = sample(&candidates, &mut rng);
        if Some(pick.token) == eot {
            break;
        }
        output.push(ScoredToken {
            token: pick.token,
            prob: pick.prob,
            raw_prob: pick.raw_prob,
        });
        context.push(pick.token);
    }
    Ok(GenerationRecord {
        record_id: String::new(),
        topic: String::new(),
        prompt: prompt.to_vec(),
        output,
        params: params.clone(),
        provider_id: provider.provider_id().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_documents, tokens, Vocabulary};
    use crate::lm::{DeterministicLm, ToyNgramLm};

    fn params(seed: u64, max_new_tokens: usize) -> SamplingParams {
        SamplingParams {
            seed,
            max_new_tokens,
            ..SamplingParams::default()
        }
    }

    #[test]
    fn degenerate_provider_ignores_seed() {
        let lm = DeterministicLm::successor(10);
        let a = generate(&lm, &tokens(&[3]), &params(1, 5)).unwrap();
        let b = generate(&lm, &tokens(&[3]), &params(99, 5)).unwrap();
        assert_eq!(a.output_tokens(), b.output_tokens());
        assert_eq!(a.output_tokens(), tokens(&[4, 5, 6, 7, 8]));
        assert!(a.output.iter().all(|s| s.prob == 1.0 && s.raw_prob == 1.0));
    }

    #[test]
    fn same_seed_same_record() {
        let corpus = ingest_documents(
            vec![("a".to_string(), tokens(&[0, 1, 2, 0, 2, 1, 0, 0, 1, 2, 2, 0]))],
            Vocabulary::new(3, "t").unwrap(),
        )
        .unwrap();
        let lm = ToyNgramLm::train(&corpus, 2, 0.5).unwrap();
        let p = SamplingParams {
            temperature: 1.5,
            top_k: 3,
            top_p: 1.0,
            seed: 11,
            max_new_tokens: 64,
        };
        let a = generate(&lm, &tokens(&[0]), &p).unwrap();
        let b = generate(&lm, &tokens(&[0]), &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.output.len(), 64);
        let c = generate(&lm, &tokens(&[0]), &SamplingParams { seed: 12, ..p }).unwrap();
        assert_ne!(a.output_tokens(), c.output_tokens());
    }

    #[test]
    fn zero_budget_gives_empty_output() {
        let lm = DeterministicLm::successor(4);
        let rec = generate(&lm, &tokens(&[1]), &params(0, 0)).unwrap();
        assert!(rec.output.is_empty());
        assert_eq!(rec.prompt, tokens(&[1]));
    }

    #[test]
    fn empty_prompt_is_rejected() {
        let lm = DeterministicLm::successor(4);
        assert!(matches!(
            generate(&lm, &[], &params(0, 3)),
            Err(ProviderError::EmptyPrompt)
        ));
    }

    #[test]
    fn stops_at_end_of_text() {
        let lm = DeterministicLm::successor(6).with_end_of_text(TokenId(5));
        let rec = generate(&lm, &tokens(&[1]), &params(0, 50)).unwrap();
        assert_eq!(rec.output_tokens(), tokens(&[2, 3, 4]));
    }
}
