//! Completions-style HTTP provider.
//!
//! Requests go to an OpenAI-compatible `/v1/completions` endpoint that
//! accepts token-id prompts and returns per-token log-probabilities (vLLM
//! and similar servers). Token strings in the response are either plain
//! integers or `token_id:<n>`, as produced with `return_tokens_as_token_ids`.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{LanguageModel, NextTokenDistribution, ProviderError, PROB_FLOOR};
use crate::corpus::TokenId;

pub const API_KEY_ENV: &str = "PLEXITRACE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub url: String,
    pub model: String,
    pub vocab_size: usize,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    /// Prepended when scoring or predicting from an empty context.
    pub bos_token_id: Option<u32>,
    pub end_of_text: Option<u32>,
    /// Number of alternatives requested per position.
    pub top_logprobs: usize,
    pub max_context: Option<usize>,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            url: "http://127.0.0.1:8000/v1/completions".into(),
            model: String::new(),
            vocab_size: 50_254,
            api_key_env: API_KEY_ENV.into(),
            bos_token_id: None,
            end_of_text: None,
            top_logprobs: 20,
            max_context: None,
            max_in_flight: 8,
            max_attempts: 3,
            backoff_base_ms: 500,
            timeout_secs: 60,
        }
    }
}

struct InFlight {
    active: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpLm {
    id: String,
    config: HttpConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    in_flight: InFlight,
}

impl std::fmt::Debug for HttpLm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpLm").field("id", &self.id).field("config", &self.config).finish()
    }
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    logprobs: Option<Logprobs>,
}

#[derive(Debug, Deserialize)]
struct Logprobs {
    #[serde(default)]
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    top_logprobs: Vec<Option<HashMap<String, f64>>>,
}

fn parse_token(raw: &str) -> Option<u32> {
    raw.strip_prefix("token_id:").unwrap_or(raw).trim().parse().ok()
}

impl HttpLm {
    pub fn new(config: HttpConfig) -> Result<Self, ProviderError> {
        if config.vocab_size < 2 {
            return Err(ProviderError::InvalidParams("vocab_size must be at least 2".into()));
        }
        if config.max_attempts == 0 || config.max_in_flight == 0 {
            return Err(ProviderError::InvalidParams(
                "max_attempts and max_in_flight must be positive".into(),
            ));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(HttpLm {
            id: format!("http:{}", config.model),
            in_flight: InFlight {
                active: Mutex::new(0),
                freed: Condvar::new(),
                limit: config.max_in_flight,
            },
            config,
            agent,
            api_key,
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn post(&self, body: &Value) -> Result<CompletionResponse, ProviderError> {
        let _slot = self.in_flight.acquire();
        let mut last_error = String::new();
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                let delay = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1));
                thread::sleep(Duration::from_millis(delay));
            }
            let mut request = self.agent.post(&self.config.url);
            if let Some(key) = &self.api_key {
                request = request.header("Authorization", &format!("Bearer {key}"));
            }
            match request.send_json(body) {
                Ok(mut response) => {
                    return response.body_mut().read_json().map_err(|e| {
                        ProviderError::ProviderUnavailable(format!("malformed response: {e}"))
                    })
                }
                Err(ureq::Error::StatusCode(code)) if code != 429 && code < 500 => {
                    return Err(ProviderError::ProviderUnavailable(format!(
                        "server rejected request with status {code}"
                    )));
                }
                Err(e) => {
                    log::warn!("completion request attempt {} failed: {e}", attempt + 1);
                    last_error = e.to_string();
                }
            }
        }
        Err(ProviderError::ProviderUnavailable(format!(
            "{} attempts failed, last error: {last_error}",
            self.config.max_attempts
        )))
    }

    /// Prompt prefix and its length; an empty context needs a BOS token.
    fn prefix(&self, context: &[TokenId]) -> Result<Vec<u32>, ProviderError> {
        if let Some(max) = self.config.max_context {
            if context.len() > max {
                return Err(ProviderError::ContextTooLong { len: context.len(), max });
            }
        }
        let mut prompt: Vec<u32> = self.config.bos_token_id.into_iter().collect();
        prompt.extend(context.iter().map(|t| t.0));
        if prompt.is_empty() {
            return Err(ProviderError::ProviderUnavailable(
                "an empty context requires bos_token_id".into(),
            ));
        }
        Ok(prompt)
    }

    fn logprobs(response: CompletionResponse) -> Result<Logprobs, ProviderError> {
        response
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.logprobs)
            .ok_or_else(|| ProviderError::ProviderUnavailable("response carries no logprobs".into()))
    }
}

impl LanguageModel for HttpLm {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn end_of_text(&self) -> Option<TokenId> {
        self.config.end_of_text.map(TokenId)
    }

    /// The returned top alternatives keep their log-probabilities; the
    /// unlisted remainder of the mass is spread evenly over the other ids.
    fn next_distribution(&self, context: &[TokenId]) -> Result<NextTokenDistribution, ProviderError> {
        let prompt = self.prefix(context)?;
        let body = json!({
            "model": self.config.model,
            "prompt": prompt,
            "max_tokens": 1,
            "temperature": 1.0,
            "top_p": 1.0,
            "logprobs": self.config.top_logprobs,
            "echo": false,
            "return_tokens_as_token_ids": true,
        });
        let lp = Self::logprobs(self.post(&body)?)?;
        let top = lp
            .top_logprobs
            .into_iter()
            .next()
            .flatten()
            .ok_or_else(|| ProviderError::ProviderUnavailable("response has no top_logprobs".into()))?;
        let vocab = self.config.vocab_size;
        let mut listed: Vec<(usize, f64)> = Vec::with_capacity(top.len());
        for (raw, logprob) in top {
            let id = parse_token(&raw).filter(|&id| (id as usize) < vocab).ok_or_else(|| {
                ProviderError::ProviderUnavailable(format!("unexpected token {raw:?} in response"))
            })?;
            listed.push((id as usize, logprob));
        }
        let listed_mass: f64 = listed.iter().map(|(_, lp)| lp.exp()).sum();
        let unlisted = vocab.saturating_sub(listed.len()).max(1) as f64;
        let rest = ((1.0 - listed_mass) / unlisted).max(PROB_FLOOR);
        let mut logits = vec![rest.ln(); vocab];
        for (id, logprob) in listed {
            logits[id] = logprob.max(PROB_FLOOR.ln());
        }
        NextTokenDistribution::new(logits)
    }

    /// One echo request per call: the prompt is `[bos] ++ context ++
    /// tokens` and the echoed log-probabilities of the last positions are
    /// returned.
    fn score(&self, tokens: &[TokenId], context: &[TokenId]) -> Result<Vec<f64>, ProviderError> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let mut prompt = self.prefix(context)?;
        let offset = prompt.len();
        prompt.extend(tokens.iter().map(|t| t.0));
        let body = json!({
            "model": self.config.model,
            "prompt": prompt,
            "max_tokens": 1,
            "temperature": 1.0,
            "logprobs": 1,
            "echo": true,
            "return_tokens_as_token_ids": true,
        });
        let lp = Self::logprobs(self.post(&body)?)?;
        if lp.token_logprobs.len() < offset + tokens.len() {
            return Err(ProviderError::ProviderUnavailable(format!(
                "echo returned {} logprobs for a {}-token prompt",
                lp.token_logprobs.len(),
                offset + tokens.len()
            )));
        }
        lp.token_logprobs[offset..offset + tokens.len()]
            .iter()
            .map(|v| {
                v.map(|l| l.exp().clamp(PROB_FLOOR, 1.0)).ok_or_else(|| {
                    ProviderError::ProviderUnavailable("echo returned a null logprob".into())
                })
            })
            .collect()
    }
}
