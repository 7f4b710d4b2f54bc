//! Temperature, top-k and nucleus truncation of a next-token distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NextTokenDistribution, ProviderError};
use crate::corpus::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_k: usize,
    pub top_p: f64,
    pub seed: u64,
    pub max_new_tokens: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.7,
            top_k: 20,
            top_p: 0.8,
            seed: 0,
            max_new_tokens: 256,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(ProviderError::InvalidParams(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.top_k == 0 {
            return Err(ProviderError::InvalidParams("top_k must be at least 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ProviderError::InvalidParams(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        Ok(())
    }
}

/// `exp(z_i / T) / sum_j exp(z_j / T)`, computed after subtracting the max.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|&z| ((z - max) / temperature).exp()).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    probs
}

/// One token of a truncated sampling distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub token: TokenId,
    /// Renormalized probability among survivors.
    pub prob: f64,
    /// Temperature-scaled softmax probability before truncation.
    pub raw_prob: f64,
}

/// Applies temperature, then top-k, then top-p, then renormalizes.
///
/// Survivors are returned in descending probability (ties by ascending
/// token id). The nucleus is the shortest prefix of the top-k survivors
/// whose untruncated mass reaches `top_p`; if the survivors never reach
/// it, all of them are kept.
pub fn apply_sampling(
    dist: &NextTokenDistribution,
    params: &SamplingParams,
) -> Result<Vec<Candidate>, ProviderError> {
    params.validate()?;
    dist.check_finite()?;
    let raw = softmax(dist.logits(), params.temperature);
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]).then(a.cmp(&b)));
    order.truncate(params.top_k);

    let mut cumulative = 0.0;
    let mut keep = order.len();
    for (i, &tok) in order.iter().enumerate() {
        cumulative += raw[tok];
        if cumulative >= params.top_p {
            keep = i + 1;
            break;
        }
    }
    order.truncate(keep);

    let mass: f64 = order.iter().map(|&t| raw[t]).sum();
    Ok(order
        .into_iter()
        .map(|t| Candidate {
            token: TokenId(t as u32),
            prob: raw[t] / mass,
            raw_prob: raw[t],
        })
        .collect())
}

/// Draws one candidate by inverse-CDF sampling.
pub fn sample<R: Rng + ?Sized>(candidates: &[Candidate], rng: &mut R) -> Candidate {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for c in candidates {
        cumulative += c.prob;
        if u < cumulative {
            return *c;
        }
    }
    *candidates.last().expect("sampling distribution is never empty")
}
