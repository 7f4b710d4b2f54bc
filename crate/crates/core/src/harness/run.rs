use std::collections::{HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use super::config::{build_provider, config_hash};
use super::prompts::{jobs, load_prompts_file, prompt_hash, select_prompts, Job, Prompt};
use super::{ExperimentConfig, HarnessError};
use crate::attribution::{attribute_window, write_attributions, WindowAttribution};
use crate::corpus::{load_corpus, Corpus};
use crate::index::SuffixIndex;
use crate::lm::{generate, write_record, GenerationRecord, LanguageModel, SamplingParams};
use crate::report::{self, ReportBundle, ScatterMeta, SpanSummary, Tabular};
use crate::spans::{record_windows, write_windows, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RunStatus {
    Ok,
    Partial,
    Failed,
}

impl RunStatus {
    fn from_counts(failed: usize, total: usize) -> Self {
        match failed {
            0 => RunStatus::Ok,
            f if f >= total => RunStatus::Failed,
            _ => RunStatus::Partial,
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Ok => 0,
            RunStatus::Partial => 2,
            RunStatus::Failed => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Generate,
    Analyze,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobFailure {
    pub record_id: String,
    pub stage: Stage,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub master_seed: u64,
    pub provider_id: String,
    pub scorer_id: String,
    pub prompt_hash: String,
    pub jobs: usize,
    /// Records kept from an earlier run.
    pub reused: usize,
    /// Record ids generated by this run, in job order.
    pub generated: Vec<String>,
    pub records: usize,
    pub spans: usize,
    pub windows: usize,
    pub failures: Vec<JobFailure>,
    pub status: RunStatus,
}

/// Pooled counts for all generations of one prompt.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptBreakdown {
    pub prompt: String,
    pub topic: String,
    pub generations: usize,
    pub n: u64,
    pub n_match: u64,
    pub n_rep: u64,
}

impl Tabular for PromptBreakdown {
    fn header() -> &'static [&'static str] {
        &["prompt", "topic", "generations", "N", "N_{c>0}", "N_rep"]
    }
    fn cells(&self) -> Vec<String> {
        vec![
            self.prompt.clone(),
            self.topic.clone(),
            self.generations.to_string(),
            self.n.to_string(),
            self.n_match.to_string(),
            self.n_rep.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOutcome {
    pub spans: Vec<SpanSummary>,
    pub windows: Vec<Window>,
    pub attributions: Vec<WindowAttribution>,
    pub per_prompt: Vec<PromptBreakdown>,
    pub failures: Vec<JobFailure>,
    pub bundle: ReportBundle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub manifest: Manifest,
    pub bundle: ReportBundle,
    pub output_dir: PathBuf,
}

/// Corpus, index and providers shared by the stages of one run.
struct Pipeline {
    corpus: Corpus,
    index: SuffixIndex,
    provider: Box<dyn LanguageModel>,
    scorer: Option<Box<dyn LanguageModel>>,
    pool: ThreadPool,
}

impl Pipeline {
    fn open(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let corpus = load_corpus(&config.corpus_dir)?;
        let index = SuffixIndex::open_or_build(&config.corpus_dir)?;
        let vocab = corpus.vocabulary().vocab_size() as usize;
        let check = |lm: &dyn LanguageModel| {
            if lm.vocab_size() != vocab {
                return Err(HarnessError::InvalidConfig(format!(
                    "provider {} has vocab_size {}, corpus has {vocab}",
                    lm.provider_id(),
                    lm.vocab_size()
                )));
            }
            Ok(())
        };
        let provider = build_provider(&config.provider, &corpus)?;
        check(provider.as_ref())?;
        let scorer = match &config.scorer {
            Some(spec) => {
                let s = build_provider(spec, &corpus)?;
                check(s.as_ref())?;
                Some(s)
            }
            None => None,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.concurrency_limit)
            .build()
            .map_err(|e| HarnessError::InvalidConfig(format!("thread pool: {e}")))?;
        Ok(Pipeline { corpus, index, provider, scorer, pool })
    }

    fn scorer(&self) -> &dyn LanguageModel {
        self.scorer.as_deref().unwrap_or(self.provider.as_ref())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(HarnessError::io(format!("writing {}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(HarnessError::io(format!("renaming to {}", path.display())))
}

fn records_bytes<'a>(records: impl IntoIterator<Item = &'a GenerationRecord>) -> Result<Vec<u8>, HarnessError> {
    let mut buf = Vec::new();
    for r in records {
        write_record(&mut buf, r)?;
    }
    Ok(buf)
}

fn job_params(base: &SamplingParams, job: &Job) -> SamplingParams {
    SamplingParams { seed: job.seed, ..base.clone() }
}

/// Records from an earlier run that still match their job; unreadable
/// lines and records produced under different settings are dropped.
fn reusable_records(
    path: &Path,
    jobs: &[Job],
    prompts: &[Prompt],
    config: &ExperimentConfig,
    provider_id: &str,
) -> Result<HashMap<String, GenerationRecord>, HarnessError> {
    let mut out = HashMap::new();
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(HarnessError::io(format!("opening {}", path.display()))(e)),
    };
    let by_id: HashMap<&str, &Job> = jobs.iter().map(|j| (j.record_id.as_str(), j)).collect();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(HarnessError::io(format!("reading {}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GenerationRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("{} line {}: dropping unreadable record: {e}", path.display(), i + 1);
                continue;
            }
        };
        let Some(job) = by_id.get(rec.record_id.as_str()) else {
            log::warn!("dropping record {} which is not part of this experiment", rec.record_id);
            continue;
        };
        let prompt = &prompts[job.prompt_index];
        let current = rec.prompt == prompt.tokens
            && rec.topic == prompt.topic
            && rec.params == job_params(&config.sampling, job)
            && rec.provider_id == provider_id;
        if current {
            out.insert(rec.record_id.clone(), rec);
        } else {
            log::warn!("record {} was produced under other settings; regenerating", rec.record_id);
        }
    }
    Ok(out)
}

/// Generates the pending jobs on the pool. Finished records are appended
/// to `path` by a single writer thread as they arrive.
fn generate_pending(
    pipeline: &Pipeline,
    pending: &[&Job],
    prompts: &[Prompt],
    config: &ExperimentConfig,
    path: &Path,
) -> Result<Vec<Result<GenerationRecord, JobFailure>>, HarnessError> {
    let (tx, rx) = mpsc::channel::<GenerationRecord>();
    let provider = pipeline.provider.as_ref();
    thread::scope(|s| {
        let writer = s.spawn(move || -> Result<(), HarnessError> {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(HarnessError::io(format!("opening {}", path.display())))?;
            let mut out = BufWriter::new(file);
            for rec in rx {
                write_record(&mut out, &rec)?;
                out.flush().map_err(HarnessError::io(format!("writing {}", path.display())))?;
            }
            Ok(())
        });
        let results: Vec<_> = pipeline.pool.install(|| {
            pending
                .par_iter()
                .map_with(tx, |tx, job| {
                    let prompt = &prompts[job.prompt_index];
                    let params = job_params(&config.sampling, job);
                    match generate(provider, &prompt.tokens, &params) {
                        Ok(mut rec) => {
                            rec.record_id = job.record_id.clone();
                            rec.topic = prompt.topic.clone();
                            // a closed writer surfaces through join below
                            let _ = tx.send(rec.clone());
                            Ok(rec)
                        }
                        Err(e) => Err(JobFailure {
                            record_id: job.record_id.clone(),
                            stage: Stage::Generate,
                            error: e.to_string(),
                        }),
                    }
                })
                .collect()
        });
        writer.join().expect("record writer panicked")?;
        Ok(results)
    })
}

struct RecordAnalysis {
    spans: Vec<SpanSummary>,
    windows: Vec<Window>,
    attributions: Vec<WindowAttribution>,
}

fn analyze_one(
    pipeline: &Pipeline,
    record: &GenerationRecord,
    config: &ExperimentConfig,
) -> Result<RecordAnalysis, HarnessError> {
    let (spans, windows) = record_windows(record, &config.analysis)?;
    let attributions = windows
        .iter()
        .map(|w| attribute_window(&pipeline.index, pipeline.scorer(), w, &config.analysis))
        .collect::<Result<Vec<_>, _>>()?;
    let spans = spans
        .iter()
        .map(|s| SpanSummary {
            record_id: record.record_id.clone(),
            topic: record.topic.clone(),
            start: s.start,
            len: s.len(),
        })
        .collect();
    Ok(RecordAnalysis { spans, windows, attributions })
}

/// Key shared by all generations of a prompt: the record id without its
/// trailing generation index.
fn prompt_key(record_id: &str) -> &str {
    record_id.rsplit_once('/').map_or(record_id, |(head, _)| head)
}

fn per_prompt(records: &[GenerationRecord], analyses: &[Option<&RecordAnalysis>]) -> Vec<PromptBreakdown> {
    let mut order: Vec<PromptBreakdown> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for (rec, analysis) in records.iter().zip(analyses) {
        let key = prompt_key(&rec.record_id);
        let i = *slot.entry(key).or_insert_with(|| {
            order.push(PromptBreakdown {
                prompt: key.to_string(),
                topic: rec.topic.clone(),
                generations: 0,
                n: 0,
                n_match: 0,
                n_rep: 0,
            });
            order.len() - 1
        });
        let row = &mut order[i];
        row.generations += 1;
        if let Some(a) = analysis {
            row.n += a.attributions.len() as u64;
            row.n_match += a.attributions.iter().filter(|x| x.match_result.count > 0).count() as u64;
            row.n_rep += a.windows.iter().filter(|w| w.is_prompt_repetition).count() as u64;
        }
    }
    order
}

fn analyze_with(
    pipeline: &Pipeline,
    records: &[GenerationRecord],
    config: &ExperimentConfig,
) -> Result<AnalysisOutcome, HarnessError> {
    let results: Vec<Result<RecordAnalysis, HarnessError>> = pipeline
        .pool
        .install(|| records.par_iter().map(|r| analyze_one(pipeline, r, config)).collect());

    let mut failures = Vec::new();
    let mut ok = Vec::with_capacity(results.len());
    for (rec, res) in records.iter().zip(&results) {
        match res {
            Ok(a) => ok.push(Some(a)),
            Err(e) => {
                failures.push(JobFailure {
                    record_id: rec.record_id.clone(),
                    stage: Stage::Analyze,
                    error: e.to_string(),
                });
                ok.push(None);
            }
        }
    }
    let breakdown = per_prompt(records, &ok);
    let mut spans = Vec::new();
    let mut windows = Vec::new();
    let mut attributions = Vec::new();
    for a in ok.into_iter().flatten() {
        spans.extend(a.spans.iter().cloned());
        windows.extend(a.windows.iter().cloned());
        attributions.extend(a.attributions.iter().cloned());
    }

    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(HarnessError::io(format!("creating {}", out.display())))?;
    let mut buf = Vec::new();
    write_windows(&mut buf, &windows)?;
    write_atomic(&out.join("windows.jsonl"), &buf)?;
    let mut buf = Vec::new();
    write_attributions(&mut buf, &attributions)?;
    write_atomic(&out.join("attributions.jsonl"), &buf)?;

    let meta = ScatterMeta {
        mem_upper: config.analysis.mem_upper,
        seg_upper: config.analysis.seg_upper,
    };
    let report_dir = out.join("report");
    let bundle = report::write_tables(&attributions, &spans, meta, &report_dir)?;
    report::export(&breakdown, report::ExportFormat::Csv, &report_dir.join("per_prompt.csv"))?;

    Ok(AnalysisOutcome { spans, windows, attributions, per_prompt: breakdown, failures, bundle })
}

/// Runs the span, attribution and report stages over existing records,
/// writing `windows.jsonl`, `attributions.jsonl` and `report/` under the
/// config's output directory.
pub fn analyze_records(
    config: &ExperimentConfig,
    records: &[GenerationRecord],
) -> Result<AnalysisOutcome, HarnessError> {
    let pipeline = Pipeline::open(config)?;
    analyze_with(&pipeline, records, config)
}

/// Selects prompts, generates every job not already present in
/// `records.jsonl`, analyzes all records and writes the artifacts and
/// `manifest.json`. Per-job errors are collected in the manifest.
///
/// Each job samples with `sampling` except for the seed, which comes from
/// [`super::job_seed`].
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary, HarnessError> {
    let pipeline = Pipeline::open(config)?;
    let prompts = match &config.prompts_file {
        Some(p) => load_prompts_file(p)?,
        None => select_prompts(
            &pipeline.corpus,
            config,
            &mut ChaCha8Rng::seed_from_u64(config.master_seed),
        )?,
    };
    let jobs = jobs(&prompts, config.generations_per_prompt, config.master_seed);

    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(HarnessError::io(format!("creating {}", out.display())))?;
    let records_path = out.join("records.jsonl");
    let provider_id = pipeline.provider.provider_id().to_string();
    let mut done = reusable_records(&records_path, &jobs, &prompts, config, &provider_id)?;
    let reused = done.len();
    // drop anything stale before appending
    write_atomic(
        &records_path,
        &records_bytes(jobs.iter().filter_map(|j| done.get(&j.record_id)))?,
    )?;

    let pending: Vec<&Job> = jobs.iter().filter(|j| !done.contains_key(&j.record_id)).collect();
    log::info!("{} jobs, {} reused, {} to generate", jobs.len(), reused, pending.len());
    let mut failures = Vec::new();
    let mut generated = Vec::new();
    for res in generate_pending(&pipeline, &pending, &prompts, config, &records_path)? {
        match res {
            Ok(rec) => {
                generated.push(rec.record_id.clone());
                done.insert(rec.record_id.clone(), rec);
            }
            Err(f) => failures.push(f),
        }
    }

    let records: Vec<GenerationRecord> = jobs
        .iter()
        .filter_map(|j| done.remove(&j.record_id))
        .collect();
    write_atomic(&records_path, &records_bytes(&records)?)?;

    let analysis = analyze_with(&pipeline, &records, config)?;
    failures.extend(analysis.failures.iter().cloned());
    let failed: HashSet<&str> = failures.iter().map(|f| f.record_id.as_str()).collect();
    let status = RunStatus::from_counts(failed.len(), jobs.len());

    let manifest = Manifest {
        config_hash: config_hash(config),
        master_seed: config.master_seed,
        provider_id,
        scorer_id: pipeline.scorer().provider_id().to_string(),
        prompt_hash: prompt_hash(&prompts),
        jobs: jobs.len(),
        reused,
        generated,
        records: records.len(),
        spans: analysis.spans.len(),
        windows: analysis.windows.len(),
        failures,
        status,
    };
    write_atomic(&out.join("manifest.json"), &report::to_json(&manifest))?;
    Ok(RunSummary { manifest, bundle: analysis.bundle, output_dir: out.clone() })
}
