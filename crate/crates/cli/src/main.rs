use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use plexitrace::attribution::read_attributions;
use plexitrace::corpus::{ingest_jsonl, read_vocab_tsv, save_corpus, Vocabulary};
use plexitrace::harness::{
    analyze_records, run_experiment, sweep, ExperimentConfig, HarnessError, ProviderSpec,
    RunStatus, SweepAxis, SweepSpec, SweepValue,
};
use plexitrace::index::{IndexError, SuffixIndex};
use plexitrace::lm::read_records;
use plexitrace::report::{spans_from_attributions, write_tables, ScatterMeta};
use plexitrace::{Error, TokenId};

#[derive(Parser)]
#[command(name = "plexitrace", version, about = "Trace low-perplexity generations back to a training corpus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus ingestion.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Suffix-array build and queries.
    #[command(subcommand)]
    Index(IndexCmd),
    /// Run an experiment: prompts, generation, analysis and reports.
    Generate(ConfigArg),
    /// Analyze an existing records file.
    Analyze {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        records: PathBuf,
    },
    /// Report generation.
    #[command(subcommand)]
    Report(ReportCmd),
    /// Repeat an experiment across temperatures or providers.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        axis: String,
        /// Temperatures, or paths of provider spec files.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (JSON, or TOML by extension).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Build a corpus directory from JSON lines of {"source_label", "tokens"}.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        vocab_size: u32,
        #[arg(long, default_value = "unspecified")]
        tokenizer_id: String,
        /// Decode table in vocab.tsv format.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum IndexCmd {
    Build {
        #[arg(long)]
        corpus: PathBuf,
    },
    Query {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        tokens: Vec<u32>,
        /// Return up to N occurrences.
        #[arg(long)]
        locate: Option<usize>,
        /// Tokens of context on each side of every occurrence.
        #[arg(long)]
        context: Option<usize>,
    },
}

#[derive(Subcommand)]
enum ReportCmd {
    Tables {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        mem_upper: u64,
        #[arg(long, default_value_t = 50)]
        seg_upper: u64,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Harness(h) => h.exit_code() as u8,
            Error::Index(
                IndexError::EmptyQuery | IndexError::QueryTooLong { .. } | IndexError::TokenOutOfRange { .. },
            ) => 1,
            Error::Corpus(c) if !matches!(c, plexitrace::corpus::CorpusError::Io { .. }) => 1,
            _ => 3,
        };
        Failure { code, message: e.to_string() }
    }
}

macro_rules! impl_failure_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Error::from(e).into()
            }
        }
    )*};
}
impl_failure_from!(
    HarnessError,
    IndexError,
    plexitrace::corpus::CorpusError,
    plexitrace::lm::ProviderError,
    plexitrace::attribution::AttributionError,
    plexitrace::report::ReportError
);

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

fn open(path: &PathBuf) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| usage(format!("cannot open {}: {e}", path.display())))
}

fn print_json(value: &Value) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(io::Error::from)
        .and_then(|_| writeln!(out))
        .map_err(|e| Failure { code: 3, message: format!("writing stdout: {e}") })
}

fn status_code(status: RunStatus) -> u8 {
    status.exit_code() as u8
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Corpus(CorpusCmd::Ingest { input, out, vocab_size, tokenizer_id, vocab }) => {
            let mut vocabulary = Vocabulary::new(vocab_size, tokenizer_id)?;
            if let Some(path) = vocab {
                vocabulary = vocabulary.with_decode_table(read_vocab_tsv(path, vocab_size)?)?;
            }
            let corpus = ingest_jsonl(open(&input)?, vocabulary)?;
            let meta = save_corpus(&corpus, &out)?;
            print_json(&serde_json::to_value(meta).expect("meta serializes"))?;
            Ok(0)
        }
        Command::Index(IndexCmd::Build { corpus }) => {
            let idx = SuffixIndex::build(&corpus)?;
            print_json(&json!({
                "corpus": corpus,
                "total_tokens": idx.total_tokens(),
                "doc_count": idx.doc_count(),
            }))?;
            Ok(0)
        }
        Command::Index(IndexCmd::Query { corpus, tokens, locate, context }) => {
            let idx = SuffixIndex::open_or_build(&corpus)?;
            let query: Vec<TokenId> = tokens.into_iter().map(TokenId).collect();
            let count = idx.count(&query)?;
            let limit = locate.unwrap_or(if context.is_some() { 10 } else { 0 });
            let mut occurrences = Vec::new();
            for occ in idx.locate(&query, limit)? {
                let mut v = serde_json::to_value(occ).expect("occurrence serializes");
                if let Some(radius) = context {
                    let ctx = idx.context(&occ, query.len(), radius)?;
                    v["context"] = serde_json::to_value(ctx).expect("context serializes");
                }
                occurrences.push(v);
            }
            print_json(&json!({ "query": query, "count": count, "occurrences": occurrences }))?;
            Ok(0)
        }
        Command::Generate(ConfigArg { config }) => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = run_experiment(&cfg)?;
            let m = &summary.manifest;
            for f in &m.failures {
                log::error!("{}: {:?} failed: {}", f.record_id, f.stage, f.error);
            }
            print_json(&json!({
                "output_dir": summary.output_dir,
                "status": m.status,
                "jobs": m.jobs,
                "reused": m.reused,
                "generated": m.generated.len(),
                "failed": m.failures.len(),
                "windows": m.windows,
            }))?;
            Ok(status_code(m.status))
        }
        Command::Analyze { config: ConfigArg { config }, records } => {
            let cfg = ExperimentConfig::load(&config)?;
            let records = read_records(open(&records)?)?;
            let outcome = analyze_records(&cfg, &records)?;
            for f in &outcome.failures {
                log::error!("{}: analysis failed: {}", f.record_id, f.error);
            }
            let failed = outcome.failures.len();
            let status = if failed == 0 {
                RunStatus::Ok
            } else if failed >= records.len() {
                RunStatus::Failed
            } else {
                RunStatus::Partial
            };
            print_json(&json!({
                "output_dir": cfg.output_dir,
                "status": status,
                "records": records.len(),
                "windows": outcome.windows.len(),
                "failed": failed,
            }))?;
            Ok(status_code(status))
        }
        Command::Report(ReportCmd::Tables { input, out, mem_upper, seg_upper }) => {
            let attributions = read_attributions(open(&input)?)?;
            let spans = spans_from_attributions(&attributions);
            let bundle = write_tables(&attributions, &spans, ScatterMeta { mem_upper, seg_upper }, &out)?;
            print_json(&json!({ "out": out, "windows": bundle.total.n, "topics": bundle.topics.len() }))?;
            Ok(0)
        }
        Command::Sweep { config: ConfigArg { config }, axis, values } => {
            let base = ExperimentConfig::load(&config)?;
            let axis: SweepAxis = axis.parse()?;
            let values = values
                .iter()
                .map(|v| match axis {
                    SweepAxis::Temperature => v
                        .trim()
                        .parse::<f64>()
                        .map(SweepValue::Temperature)
                        .map_err(|_| usage(format!("temperature {v:?} is not a number"))),
                    SweepAxis::Provider => {
                        let path = PathBuf::from(v.trim());
                        ProviderSpec::load(path).map(SweepValue::Provider).map_err(Failure::from)
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            let rows = sweep(&SweepSpec { axis, values, base })?;
            let worst = rows.iter().map(|r| status_code(r.status)).max().unwrap_or(0);
            print_json(&serde_json::to_value(&rows).expect("rows serialize"))?;
            Ok(worst)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
