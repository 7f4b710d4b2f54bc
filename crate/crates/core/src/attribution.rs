//! Match windows against the corpus index and categorize them.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TokenId;
use crate::index::{IndexError, Occurrence, SuffixIndex};
use crate::lm::{GenerationRecord, LanguageModel, ProviderError};
use crate::spans::{record_windows, AnalysisConfig, SpanError, Window};

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Span(#[from] SpanError),
    #[error("malformed attribution on line {line}: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("attribution i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// How a window relates to the training data, by match count `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    /// Synthetic coherence: `c = 0`.
    #[serde(rename = "STH")]
    Sth,
    /// Memorization: `0 < c < mem_upper`.
    #[serde(rename = "MEM")]
    Mem,
    /// Segmental replication: `mem_upper <= c < seg_upper`.
    #[serde(rename = "SEG")]
    Seg,
    /// Frequently encountered text: `c >= seg_upper`.
    #[serde(rename = "FET")]
    Fet,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Sth, Category::Mem, Category::Seg, Category::Fet];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Sth => "STH",
            Category::Mem => "MEM",
            Category::Seg => "SEG",
            Category::Fet => "FET",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

pub fn categorize(c: u64, cfg: &AnalysisConfig) -> Category {
    if c == 0 {
        Category::Sth
    } else if c < cfg.mem_upper {
        Category::Mem
    } else if c < cfg.seg_upper {
        Category::Seg
    } else {
        Category::Fet
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    #[serde(rename = "c")]
    pub count: u64,
    #[serde(rename = "occurrences")]
    pub sample_occurrences: Vec<Occurrence>,
}

/// One analysed window; serialized flat as a line of `attributions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowAttribution {
    #[serde(flatten)]
    pub window: Window,
    #[serde(flatten)]
    pub match_result: MatchResult,
    pub category: Category,
    #[serde(rename = "log2_standalone_ppl")]
    pub standalone_log2_perplexity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StandalonePerplexity {
    pub log2: f64,
    pub linear: f64,
}

/// Perplexity of `tokens` scored from an empty context: the negated mean
/// of `log2 p(x_i | x_1..x_{i-1})` over the window, and `2^` of that.
pub fn standalone_perplexity(
    provider: &dyn LanguageModel,
    tokens: &[TokenId],
    temperature: f64,
) -> Result<StandalonePerplexity, ProviderError> {
    if tokens.is_empty() {
        return Err(ProviderError::InvalidParams("cannot score an empty window".into()));
    }
    let probs = if temperature == 1.0 {
        provider.score(tokens, &[])?
    } else {
        provider.score_at_temperature(tokens, &[], temperature)?
    };
    let mut bits = 0.0;
    for p in probs {
        if !(p > 0.0 && p <= 1.0) {
            return Err(ProviderError::ProbOutOfRange(p));
        }
        bits -= p.log2();
    }
    let log2 = bits / tokens.len() as f64;
    Ok(StandalonePerplexity { log2, linear: log2.exp2() })
}

pub fn attribute_window(
    index: &SuffixIndex,
    provider: &dyn LanguageModel,
    window: &Window,
    cfg: &AnalysisConfig,
) -> Result<WindowAttribution, AttributionError> {
    let count = index.count(&window.tokens)?;
    let sample_occurrences = if count == 0 || cfg.sample_occurrences == 0 {
        Vec::new()
    } else {
        index.locate(&window.tokens, cfg.sample_occurrences)?
    };
    let standalone = standalone_perplexity(provider, &window.tokens, cfg.standalone_temperature)?;
    Ok(WindowAttribution {
        window: window.clone(),
        match_result: MatchResult { count, sample_occurrences },
        category: categorize(count, cfg),
        standalone_log2_perplexity: standalone.log2,
    })
}

/// Spans, windows and attributions of one record, in window order.
pub fn attribute_record(
    index: &SuffixIndex,
    provider: &dyn LanguageModel,
    record: &GenerationRecord,
    cfg: &AnalysisConfig,
) -> Result<Vec<WindowAttribution>, AttributionError> {
    let (_, windows) = record_windows(record, cfg)?;
    windows
        .iter()
        .map(|w| attribute_window(index, provider, w, cfg))
        .collect()
}

pub fn write_attributions<W: Write>(
    out: &mut W,
    attributions: &[WindowAttribution],
) -> Result<(), AttributionError> {
    for a in attributions {
        serde_json::to_writer(&mut *out, a).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_attributions<R: BufRead>(reader: R) -> Result<Vec<WindowAttribution>, AttributionError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|source| AttributionError::Malformed { line: i + 1, source })?,
        );
    }
    Ok(out)
}
