//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use plexitrace::corpus::{ingest_documents, save_corpus, Corpus, TokenId, Vocabulary};
use plexitrace::harness::{ExperimentConfig, ProviderSpec, TopicSpec, ToySpec};
use plexitrace::spans::AnalysisConfig;
use plexitrace::SamplingParams;
use rand::Rng;

/// Splits on whitespace and hands out ids in order of first appearance.
/// Pieces carry a leading space, so decoding yields `" w1 w2 .."`.
#[derive(Debug, Default)]
pub struct WhitespaceTokenizer {
    ids: HashMap<String, u32>,
    pieces: Vec<String>,
}

impl WhitespaceTokenizer {
    pub fn encode(&mut self, text: &str) -> Vec<TokenId> {
        text.split_whitespace()
            .map(|w| {
                let next = self.pieces.len() as u32;
                let id = *self.ids.entry(w.to_string()).or_insert(next);
                if id == next {
                    self.pieces.push(format!(" {w}"));
                }
                TokenId(id)
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    /// Vocabulary of `size` ids (at least the pieces seen so far), with
    /// placeholder pieces for unused ids.
    pub fn vocabulary(&self, size: u32) -> Vocabulary {
        assert!(size as usize >= self.pieces.len());
        let mut pieces = self.pieces.clone();
        pieces.extend((self.pieces.len()..size as usize).map(|i| format!("<unused{i}>")));
        Vocabulary::new(size, "whitespace")
            .unwrap()
            .with_decode_table(pieces)
            .unwrap()
    }
}

/// Documents of uniformly random tokens drawn from `token_range`.
pub fn random_documents<R: Rng>(
    rng: &mut R,
    labels: &[&str],
    docs_per_label: usize,
    doc_len: std::ops::RangeInclusive<usize>,
    token_range: std::ops::Range<u32>,
) -> Vec<(String, Vec<TokenId>)> {
    let mut out = Vec::new();
    for label in labels {
        for _ in 0..docs_per_label {
            let len = rng.random_range(doc_len.clone());
            let toks = (0..len).map(|_| TokenId(rng.random_range(token_range.clone()))).collect();
            out.push((label.to_string(), toks));
        }
    }
    out
}

pub fn corpus(docs: Vec<(String, Vec<TokenId>)>, vocab_size: u32) -> Corpus {
    ingest_documents(docs, Vocabulary::new(vocab_size, "synthetic").unwrap()).unwrap()
}

pub fn save(corpus: &Corpus, dir: &Path) -> PathBuf {
    save_corpus(corpus, dir).unwrap();
    dir.to_path_buf()
}

pub fn toy_provider(order: usize, smoothing: f64, end_of_text: Option<u32>) -> ProviderSpec {
    ProviderSpec::Toy(ToySpec { order, smoothing, end_of_text, train_corpus: None, id: None })
}

pub fn config(
    corpus_dir: &Path,
    output_dir: &Path,
    provider: ProviderSpec,
    topics: &[&str],
    docs_per_topic: usize,
    generations: usize,
) -> ExperimentConfig {
    ExperimentConfig {
        corpus_dir: corpus_dir.to_path_buf(),
        output_dir: output_dir.to_path_buf(),
        provider,
        scorer: None,
        topics: topics
            .iter()
            .map(|t| TopicSpec { name: t.to_string(), source_label: None, docs_per_topic })
            .collect(),
        quote_min: 20,
        quote_max: 40,
        generations_per_prompt: generations,
        sampling: SamplingParams { max_new_tokens: 64, ..SamplingParams::default() },
        analysis: AnalysisConfig::default(),
        master_seed: 17,
        concurrency_limit: 1,
        prompts_file: None,
    }
}

pub fn greedy() -> SamplingParams {
    SamplingParams { temperature: 0.1, top_k: 1, top_p: 1.0, seed: 0, max_new_tokens: 64 }
}
