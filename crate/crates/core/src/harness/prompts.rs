use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::hex;
use super::{ExperimentConfig, HarnessError};
use crate::corpus::{random_quote, Corpus, TokenId};

/// A quote used as a generation prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub topic: String,
    pub doc_id: u64,
    #[serde(default)]
    pub offset: usize,
    pub tokens: Vec<TokenId>,
}

/// Samples `docs_per_topic` documents per topic without replacement and one
/// quote from each. Topics keep config order; documents within a topic are
/// listed by id.
pub fn select_prompts<R: Rng + ?Sized>(
    corpus: &Corpus,
    config: &ExperimentConfig,
    rng: &mut R,
) -> Result<Vec<Prompt>, HarnessError> {
    let mut prompts = Vec::with_capacity(config.job_count());
    for topic in &config.topics {
        let eligible: Vec<_> = corpus
            .documents()
            .iter()
            .filter(|d| d.source_label == topic.label() && d.len() >= config.quote_min)
            .collect();
        if eligible.len() < topic.docs_per_topic {
            return Err(HarnessError::InsufficientDocuments {
                topic: topic.name.clone(),
                available: eligible.len(),
                required: topic.docs_per_topic,
            });
        }
        let mut picked: Vec<usize> = sample(rng, eligible.len(), topic.docs_per_topic).into_vec();
        picked.sort_unstable();
        for i in picked {
            let doc = eligible[i];
            let (offset, quote) = random_quote(doc, config.quote_min, config.quote_max, rng)?;
            prompts.push(Prompt {
                topic: topic.name.clone(),
                doc_id: doc.doc_id,
                offset,
                tokens: quote.to_vec(),
            });
        }
    }
    Ok(prompts)
}

/// Reads prompts from JSON lines.
pub fn load_prompts_file(path: impl AsRef<Path>) -> Result<Vec<Prompt>, HarnessError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(HarnessError::io(format!("opening {}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(HarnessError::io(format!("reading {}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prompt = serde_json::from_str(&line).map_err(|e| {
            HarnessError::InvalidConfig(format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        if p.tokens.is_empty() {
            return Err(HarnessError::InvalidConfig(format!(
                "{} line {}: empty prompt",
                path.display(),
                i + 1
            )));
        }
        out.push(p);
    }
    Ok(out)
}

/// Hex SHA-256 over the prompt set, equal across the rows of a sweep.
pub fn prompt_hash(prompts: &[Prompt]) -> String {
    hex(&Sha256::digest(serde_json::to_vec(prompts).expect("prompts serialize")))
}

/// Seed of one generation, derived from the master seed and the job key.
pub fn job_seed(master_seed: u64, topic: &str, doc_id: u64, generation: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update((topic.len() as u64).to_le_bytes());
    h.update(topic.as_bytes());
    h.update(doc_id.to_le_bytes());
    h.update((generation as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub record_id: String,
    pub prompt_index: usize,
    pub generation: usize,
    pub seed: u64,
}

/// Prompts × generations, in canonical order.
pub fn jobs(prompts: &[Prompt], generations_per_prompt: usize, master_seed: u64) -> Vec<Job> {
    let mut out = Vec::with_capacity(prompts.len() * generations_per_prompt);
    for (i, p) in prompts.iter().enumerate() {
        for g in 0..generations_per_prompt {
            out.push(Job {
                record_id: format!("{}/{}/{}", p.topic, p.doc_id, g),
                prompt_index: i,
                generation: g,
                seed: job_seed(master_seed, &p.topic, p.doc_id, g),
            });
        }
    }
    out
}
