use std::collections::HashSet;
use std::fs;
use std::str::FromStr;

use serde::Serialize;

use super::config::ProviderSpec;
use super::run::{run_experiment, RunStatus};
use super::{ExperimentConfig, HarnessError};
use crate::report::{self, format_percent, ExportFormat, Tabular};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Temperature,
    Provider,
}

impl FromStr for SweepAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "temperature" => Ok(SweepAxis::Temperature),
            "provider" => Ok(SweepAxis::Provider),
            other => Err(HarnessError::InvalidConfig(format!(
                "unknown sweep axis {other:?}; expected temperature or provider"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepValue {
    Temperature(f64),
    Provider(ProviderSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<SweepValue>,
    pub base: ExperimentConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.values.is_empty() {
            return Err(HarnessError::InvalidConfig("sweep needs at least one value".into()));
        }
        let mut seen = HashSet::new();
        for v in &self.values {
            let key = match (self.axis, v) {
                (SweepAxis::Temperature, SweepValue::Temperature(t)) => t.to_string(),
                (SweepAxis::Provider, SweepValue::Provider(p)) => {
                    serde_json::to_string(p).expect("provider spec serializes")
                }
                _ => {
                    return Err(HarnessError::InvalidConfig(format!(
                        "value {v:?} does not belong to axis {:?}",
                        self.axis
                    )))
                }
            };
            if !seen.insert(key) {
                return Err(HarnessError::InvalidConfig(format!("duplicate sweep value {v:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub provider_id: String,
    pub n: u64,
    pub n_match: u64,
    pub match_ratio: Option<f64>,
    pub n_rep: u64,
    pub mean_log2_standalone_ppl: Option<f64>,
    pub prompt_hash: String,
    pub status: RunStatus,
}

impl Tabular for SweepRow {
    fn header() -> &'static [&'static str] {
        &["value", "provider", "N", "N_{c>0}", "N_{c>0}/N", "N_rep", "mean_log2_P_hat", "prompt_hash"]
    }
    fn cells(&self) -> Vec<String> {
        vec![
            self.value.clone(),
            self.provider_id.clone(),
            self.n.to_string(),
            self.n_match.to_string(),
            format_percent(self.match_ratio),
            self.n_rep.to_string(),
            self.mean_log2_standalone_ppl.map(|v| format!("{v:.2}")).unwrap_or_default(),
            self.prompt_hash.clone(),
        ]
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Runs the base experiment once per value, each in its own subdirectory
/// of the base output directory. Prompts and per-job seeds depend only on
/// the corpus, topics and master seed, so every row sees the same prompts.
/// Writes `sweep.csv` and `sweep.json` to the base output directory.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>, HarnessError> {
    spec.validate()?;
    spec.base.validate()?;
    let mut rows = Vec::with_capacity(spec.values.len());
    for (i, value) in spec.values.iter().enumerate() {
        let mut cfg = spec.base.clone();
        let (label, dir) = match value {
            SweepValue::Temperature(t) => {
                cfg.sampling.temperature = *t;
                (t.to_string(), format!("temperature_{t}"))
            }
            SweepValue::Provider(p) => {
                cfg.provider = p.clone();
                (String::new(), format!("provider_{i}"))
            }
        };
        cfg.output_dir = spec.base.output_dir.join(sanitize(&dir));
        let summary = run_experiment(&cfg)?;
        let total = &summary.bundle.total;
        let m = &summary.manifest;
        rows.push(SweepRow {
            value: if label.is_empty() { m.provider_id.clone() } else { label },
            provider_id: m.provider_id.clone(),
            n: total.n,
            n_match: total.n_match,
            match_ratio: total.match_ratio,
            n_rep: total.n_rep,
            mean_log2_standalone_ppl: total.mean_log2_standalone_ppl,
            prompt_hash: m.prompt_hash.clone(),
            status: m.status,
        });
    }
    let out = &spec.base.output_dir;
    fs::create_dir_all(out).map_err(HarnessError::io(format!("creating {}", out.display())))?;
    report::export(&rows, ExportFormat::Csv, &out.join("sweep.csv"))?;
    report::export(&rows, ExportFormat::Json, &out.join("sweep.json"))?;
    Ok(rows)
}
