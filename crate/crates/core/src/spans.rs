//! Low-perplexity spans and the fixed-size windows cut from them.
//!
//! A span is a maximal run of generated tokens whose sampling probability
//! is at least `prob_threshold` (0.9, i.e. a token perplexity of at most
//! about 0.152 bits). Spans shorter than the window size are dropped; every
//! remaining span of length `L` yields `L - w + 1` overlapping windows.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TokenId;
use crate::lm::{GenerationRecord, ScoredToken};

#[derive(Debug, Error)]
pub enum SpanError {
    #[error("span of {len} tokens is shorter than the window size {window}")]
    SpanTooShort { len: usize, window: usize },
    #[error("invalid analysis config: {0}")]
    InvalidConfig(String),
    #[error("writing windows: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepetitionMode {
    /// The window occurs verbatim inside the prompt.
    #[default]
    WindowInPrompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub prob_threshold: f64,
    pub window_size: usize,
    pub min_span_len: usize,
    /// Smallest match count that is no longer memorization.
    pub mem_upper: u64,
    /// Smallest match count counted as frequently encountered text.
    pub seg_upper: u64,
    pub repetition_mode: RepetitionMode,
    /// Occurrences kept per window.
    pub sample_occurrences: usize,
    /// Softmax temperature used for standalone perplexity.
    pub standalone_temperature: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            prob_threshold: 0.9,
            window_size: 6,
            min_span_len: 6,
            mem_upper: 5,
            seg_upper: 50,
            repetition_mode: RepetitionMode::WindowInPrompt,
            sample_occurrences: 10,
            standalone_temperature: 1.0,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), SpanError> {
        let bad = |msg: String| Err(SpanError::InvalidConfig(msg));
        if !(self.prob_threshold > 0.0 && self.prob_threshold <= 1.0) {
            return bad(format!("prob_threshold {} outside (0, 1]", self.prob_threshold));
        }
        if self.window_size == 0 {
            return bad("window_size must be positive".into());
        }
        if self.min_span_len < self.window_size {
            return bad(format!(
                "min_span_len {} is below window_size {}",
                self.min_span_len, self.window_size
            ));
        }
        if !(0 < self.mem_upper && self.mem_upper < self.seg_upper) {
            return bad(format!(
                "thresholds must satisfy 0 < mem_upper ({}) < seg_upper ({})",
                self.mem_upper, self.seg_upper
            ));
        }
        if !(self.standalone_temperature.is_finite() && self.standalone_temperature > 0.0) {
            return bad("standalone_temperature must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowPerplexitySpan {
    pub record_id: String,
    /// Offset into the record's output.
    pub start: usize,
    pub tokens: Vec<ScoredToken>,
}

impl LowPerplexitySpan {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_ids(&self) -> Vec<TokenId> {
        self.tokens.iter().map(|s| s.token).collect()
    }
}

/// One `w`-token slice of a span; serialized as a line of the analysis
/// output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub record_id: String,
    pub topic: String,
    pub span_start: usize,
    pub span_len: usize,
    /// Offset of the window inside its span.
    pub window_offset: usize,
    pub tokens: Vec<TokenId>,
    pub is_prompt_repetition: bool,
}

/// All maximal runs of tokens with `prob >= prob_threshold` that are at
/// least `min_span_len` long, in output order.
pub fn extract_spans(record: &GenerationRecord, cfg: &AnalysisConfig) -> Vec<LowPerplexitySpan> {
    let mut spans = Vec::new();
    let mut run_start = None;
    let out = &record.output;
    for i in 0..=out.len() {
        let confident = out.get(i).is_some_and(|s| s.prob >= cfg.prob_threshold);
        match (confident, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(start)) => {
                if i - start >= cfg.min_span_len {
                    spans.push(LowPerplexitySpan {
                        record_id: record.record_id.clone(),
                        start,
                        tokens: out[start..i].to_vec(),
                    });
                }
                run_start = None;
            }
            _ => {}
        }
    }
    spans
}

/// Stride-1 windows of a span. Prompt repetition is left unset; see
/// [`record_windows`].
pub fn windows(
    span: &LowPerplexitySpan,
    topic: &str,
    cfg: &AnalysisConfig,
) -> Result<Vec<Window>, SpanError> {
    let w = cfg.window_size;
    if span.len() < w || w == 0 {
        return Err(SpanError::SpanTooShort { len: span.len(), window: w });
    }
    let ids = span.token_ids();
    Ok(ids
        .windows(w)
        .enumerate()
        .map(|(offset, slice)| Window {
            record_id: span.record_id.clone(),
            topic: topic.to_string(),
            span_start: span.start,
            span_len: span.len(),
            window_offset: offset,
            tokens: slice.to_vec(),
            is_prompt_repetition: false,
        })
        .collect())
}

/// True iff the window occurs contiguously inside the prompt.
pub fn is_prompt_repetition(window: &[TokenId], prompt: &[TokenId]) -> bool {
    !window.is_empty()
        && window.len() <= prompt.len()
        && prompt.windows(window.len()).any(|p| p == window)
}

/// Spans and flagged windows of one record.
pub fn record_windows(
    record: &GenerationRecord,
    cfg: &AnalysisConfig,
) -> Result<(Vec<LowPerplexitySpan>, Vec<Window>), SpanError> {
    cfg.validate()?;
    let spans = extract_spans(record, cfg);
    let mut out = Vec::new();
    for span in &spans {
        for mut w in windows(span, &record.topic, cfg)? {
            w.is_prompt_repetition = match cfg.repetition_mode {
                RepetitionMode::WindowInPrompt => is_prompt_repetition(&w.tokens, &record.prompt),
            };
            out.push(w);
        }
    }
    Ok((spans, out))
}

/// Writes windows as JSON lines.
pub fn write_windows<W: Write>(out: &mut W, windows: &[Window]) -> Result<(), SpanError> {
    for w in windows {
        serde_json::to_writer(&mut *out, w).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Degeneration {
    pub period: usize,
    pub start: usize,
    pub repeats: usize,
}

/// Finds the first position where a block of `period` tokens (smallest
/// period in `[min_period, max_period]` that qualifies) repeats at least
/// `min_repeats` times back to back.
pub fn detect_degeneration(
    tokens: &[TokenId],
    min_period: usize,
    max_period: usize,
    min_repeats: usize,
) -> Option<Degeneration> {
    let n = tokens.len();
    let min_period = min_period.max(1);
    let min_repeats = min_repeats.max(2);
    for start in 0..n {
        for period in min_period..=max_period {
            if start + period * min_repeats > n {
                break;
            }
            let mut matched = 0;
            while start + matched + period < n && tokens[start + matched] == tokens[start + matched + period] {
                matched += 1;
            }
            let repeats = 1 + matched / period;
            if repeats >= min_repeats {
                return Some(Degeneration { period, start, repeats });
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LengthStats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn span_length_stats(lengths: &[usize]) -> Option<LengthStats> {
    if lengths.is_empty() {
        return None;
    }
    let n = lengths.len() as f64;
    let mean = lengths.iter().map(|&l| l as f64).sum::<f64>() / n;
    let var = lengths.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
    Some(LengthStats { count: lengths.len(), mean, std: var.sqrt() })
}
