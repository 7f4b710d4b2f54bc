use super::ProviderError;

fn check(prob: f64) -> Result<(), ProviderError> {
    if prob > 0.0 && prob <= 1.0 {
        Ok(())
    } else {
        Err(ProviderError::ProbOutOfRange(prob))
    }
}

/// Perplexity of a single emitted token: `1 / p`.
pub fn token_perplexity(prob: f64) -> Result<f64, ProviderError> {
    check(prob)?;
    Ok(1.0 / prob)
}

/// `log2` of [`token_perplexity`], i.e. the token's surprisal in bits.
pub fn log2_token_perplexity(prob: f64) -> Result<f64, ProviderError> {
    check(prob)?;
    Ok(-prob.log2())
}
