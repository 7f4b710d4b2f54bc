//! `GenerationRecord` and its JSON-lines interchange format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{ProviderError, SamplingParams};
use crate::corpus::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredToken {
    pub token: TokenId,
    /// Probability under the truncated sampling distribution.
    pub prob: f64,
    /// Probability under the temperature-scaled softmax, before truncation.
    pub raw_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub record_id: String,
    pub topic: String,
    pub prompt: Vec<TokenId>,
    pub output: Vec<ScoredToken>,
    pub params: SamplingParams,
    pub provider_id: String,
}

impl GenerationRecord {
    pub fn output_tokens(&self) -> Vec<TokenId> {
        self.output.iter().map(|s| s.token).collect()
    }
}

/// Writes one record as a single JSON line.
pub fn write_record<W: Write>(out: &mut W, record: &GenerationRecord) -> Result<(), ProviderError> {
    let line = serde_json::to_string(record).expect("records serialize");
    writeln!(out, "{line}").map_err(|e| ProviderError::Io {
        context: "writing generation record".into(),
        source: e,
    })
}

/// Reads JSON-lines records, skipping blank lines.
pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<GenerationRecord>, ProviderError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ProviderError::Io {
            context: "reading generation records".into(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|source| ProviderError::MalformedRecord { line: i + 1, source })?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_shape() {
        let rec = GenerationRecord {
            record_id: "g/3/0".into(),
            topic: "g".into(),
            prompt: vec![TokenId(1), TokenId(2)],
            output: vec![ScoredToken { token: TokenId(7), prob: 1.0, raw_prob: 0.5 }],
            params: SamplingParams::default(),
            provider_id: "toy".into(),
        };
        let mut buf = Vec::new();
        write_record(&mut buf, &rec).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "{\"record_id\":\"g/3/0\",\"topic\":\"g\",\"prompt\":[1,2],\"output\":[{\"token\":7,\"prob\":1.0,\"raw_prob\":0.5}],\"params\":{"
        ));
        assert!(text.ends_with("\"provider_id\":\"toy\"}\n"));
        assert_eq!(read_records(&buf[..]).unwrap(), vec![rec]);
    }

    #[test]
    fn malformed_line_is_reported() {
        let err = read_records("\n{\"record_id\":1}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, ProviderError::MalformedRecord { line: 2, .. }));
    }
}
