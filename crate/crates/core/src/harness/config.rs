use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::corpus::{load_corpus, Corpus, TokenId};
use crate::lm::{HttpConfig, HttpLm, LanguageModel, ReplayLm, SamplingParams, ToyNgramLm};
use crate::spans::AnalysisConfig;

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_docs_per_topic() -> usize {
    40
}
fn default_quote_min() -> usize {
    20
}
fn default_quote_max() -> usize {
    40
}
fn default_generations() -> usize {
    5
}
fn default_concurrency() -> usize {
    1
}
fn default_order() -> usize {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicSpec {
    pub name: String,
    /// Documents whose `source_label` equals this value; the topic name
    /// when absent.
    #[serde(default)]
    pub source_label: Option<String>,
    #[serde(default = "default_docs_per_topic")]
    pub docs_per_topic: usize,
}

impl TopicSpec {
    pub fn label(&self) -> &str {
        self.source_label.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub smoothing: f64,
    #[serde(default)]
    pub end_of_text: Option<u32>,
    /// Corpus to train on instead of the experiment corpus.
    #[serde(default)]
    pub train_corpus: Option<PathBuf>,
    #[serde(default)]
    pub id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySpec {
    pub path: PathBuf,
    pub vocab_size: usize,
    #[serde(default)]
    pub id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderSpec {
    Toy(ToySpec),
    Http(HttpConfig),
    Replay(ReplaySpec),
}

impl ProviderSpec {
    fn resolve_paths(&mut self, base: &Path) {
        match self {
            ProviderSpec::Toy(t) => {
                if let Some(p) = &mut t.train_corpus {
                    *p = base.join(&*p);
                }
            }
            ProviderSpec::Replay(r) => r.path = base.join(&r.path),
            ProviderSpec::Http(_) => {}
        }
    }

    /// Reads a single provider spec from a JSON or TOML file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let mut spec: ProviderSpec = parse_file(path)?;
        if let Some(dir) = path.parent() {
            spec.resolve_paths(dir);
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus_dir: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub provider: ProviderSpec,
    /// Provider for standalone perplexity; the generating provider if absent.
    #[serde(default)]
    pub scorer: Option<ProviderSpec>,
    pub topics: Vec<TopicSpec>,
    #[serde(default = "default_quote_min")]
    pub quote_min: usize,
    #[serde(default = "default_quote_max")]
    pub quote_max: usize,
    #[serde(default = "default_generations")]
    pub generations_per_prompt: usize,
    #[serde(default)]
    pub sampling: SamplingParams,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency_limit: usize,
    /// JSON lines of [`super::Prompt`], used instead of corpus quotes.
    #[serde(default)]
    pub prompts_file: Option<PathBuf>,
}

fn parse_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let parse_err = |message: String| HarnessError::ConfigParse { path: path.to_path_buf(), message };
    let text = fs::read_to_string(path).map_err(|e| parse_err(e.to_string()))?;
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    if is_toml {
        toml::from_str(&text).map_err(|e| parse_err(e.to_string()))
    } else {
        serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))
    }
}

impl ExperimentConfig {
    /// Parses a `.toml` file as TOML and anything else as JSON. Relative
    /// paths inside are taken relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let mut cfg: ExperimentConfig = parse_file(path)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.corpus_dir = base.join(&self.corpus_dir);
        self.output_dir = base.join(&self.output_dir);
        if let Some(p) = &mut self.prompts_file {
            *p = base.join(&*p);
        }
        self.provider.resolve_paths(base);
        if let Some(s) = &mut self.scorer {
            s.resolve_paths(base);
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::InvalidConfig(msg));
        if self.topics.is_empty() {
            return bad("at least one topic is required".into());
        }
        let mut names = HashSet::new();
        for t in &self.topics {
            if t.name.is_empty() || t.name.contains('/') {
                return bad(format!("topic name {:?} must be non-empty and free of '/'", t.name));
            }
            if !names.insert(&t.name) {
                return bad(format!("duplicate topic {:?}", t.name));
            }
            if t.docs_per_topic == 0 {
                return bad(format!("topic {:?}: docs_per_topic must be at least 1", t.name));
            }
        }
        if self.generations_per_prompt == 0 {
            return bad("generations_per_prompt must be at least 1".into());
        }
        if self.quote_min == 0 || self.quote_min > self.quote_max {
            return bad(format!("quote bounds [{}, {}] are invalid", self.quote_min, self.quote_max));
        }
        if self.concurrency_limit == 0 {
            return bad("concurrency_limit must be positive".into());
        }
        self.sampling
            .validate()
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        self.analysis
            .validate()
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    /// Jobs the config asks for.
    pub fn job_count(&self) -> usize {
        self.topics.iter().map(|t| t.docs_per_topic).sum::<usize>() * self.generations_per_prompt
    }
}

/// Hex SHA-256 of the config's canonical JSON form.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    hex(&Sha256::digest(bytes))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Instantiates a provider. `corpus` is the training corpus for a toy
/// spec without its own `train_corpus`.
pub fn build_provider(
    spec: &ProviderSpec,
    corpus: &Corpus,
) -> Result<Box<dyn LanguageModel>, HarnessError> {
    Ok(match spec {
        ProviderSpec::Toy(t) => {
            let owned;
            let train = match &t.train_corpus {
                Some(dir) => {
                    owned = load_corpus(dir)?;
                    &owned
                }
                None => corpus,
            };
            let mut lm =
                ToyNgramLm::train_with_end_of_text(train, t.order, t.smoothing, t.end_of_text.map(TokenId))?;
            if let Some(id) = &t.id {
                lm = lm.with_id(id.clone());
            }
            Box::new(lm)
        }
        ProviderSpec::Http(h) => Box::new(HttpLm::new(h.clone())?),
        ProviderSpec::Replay(r) => {
            let mut lm = ReplayLm::open(&r.path, r.vocab_size)?;
            if let Some(id) = &r.id {
                lm = lm.with_id(id.clone());
            }
            Box::new(lm)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const JSON: &str = r#"{
        "corpus_dir": "corpus",
        "provider": {"kind": "toy", "order": 4, "smoothing": 0.1},
        "topics": [{"name": "genetics"}, {"name": "physics", "source_label": "phys", "docs_per_topic": 2}],
        "master_seed": 7
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg: ExperimentConfig = serde_json::from_str(JSON).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.topics[0].docs_per_topic, 40);
        assert_eq!(cfg.topics[0].label(), "genetics");
        assert_eq!(cfg.topics[1].label(), "phys");
        assert_eq!((cfg.quote_min, cfg.quote_max, cfg.generations_per_prompt), (20, 40, 5));
        assert_eq!(cfg.sampling, SamplingParams::default());
        assert_eq!(cfg.job_count(), 42 * 5);
        assert!(matches!(cfg.provider, ProviderSpec::Toy(ToySpec { order: 4, .. })));
    }

    #[test]
    fn four_topics_of_forty_documents() {
        let mut cfg: ExperimentConfig = serde_json::from_str(JSON).unwrap();
        cfg.topics = ["a", "b", "c", "d"]
            .iter()
            .map(|n| TopicSpec { name: n.to_string(), source_label: None, docs_per_topic: 40 })
            .collect();
        assert_eq!(cfg.job_count(), 800);
    }

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let toml_text = r#"
corpus_dir = "corpus"
master_seed = 7

[provider]
kind = "toy"
order = 4
smoothing = 0.1

[[topics]]
name = "genetics"

[[topics]]
name = "physics"
source_label = "phys"
docs_per_topic = 2
"#;
        fs::write(dir.path().join("c.toml"), toml_text).unwrap();
        fs::write(dir.path().join("c.json"), JSON).unwrap();
        let a = ExperimentConfig::load(dir.path().join("c.toml")).unwrap();
        let b = ExperimentConfig::load(dir.path().join("c.json")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.corpus_dir, dir.path().join("corpus"));
        assert_eq!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn rejects_bad_configs() {
        let base: ExperimentConfig = serde_json::from_str(JSON).unwrap();
        let mut c = base.clone();
        c.generations_per_prompt = 0;
        assert!(matches!(c.validate(), Err(HarnessError::InvalidConfig(_))));
        let mut c = base.clone();
        c.topics[0].docs_per_topic = 0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.topics[1].name = "genetics".into();
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.concurrency_limit = 0;
        assert!(c.validate().is_err());
        let mut c = base;
        c.quote_min = 50;
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"corpus_dir": "x", "provider": {"kind": "toy"}, "topics": [], "bogus": 1}"#).is_err());
    }

    #[test]
    fn unparsable_file_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, "{not json").unwrap();
        let err = ExperimentConfig::load(&p).unwrap_err();
        assert!(matches!(err, HarnessError::ConfigParse { .. }));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn http_spec_parses_with_defaults() {
        let spec: ProviderSpec =
            serde_json::from_str(r#"{"kind": "http", "model": "example-7b", "vocab_size": 50304}"#).unwrap();
        let ProviderSpec::Http(h) = spec else { panic!() };
        assert_eq!(h.model, "example-7b");
        assert_eq!(h.vocab_size, 50304);
        assert_eq!(h.max_attempts, 3);
    }
}
