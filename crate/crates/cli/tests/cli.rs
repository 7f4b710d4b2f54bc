use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn plexitrace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plexitrace"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: stdout {:?} stderr {:?}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

/// Two labels, three documents each, over a 30-token vocabulary, with a
/// shared 8-token tail on every document.
fn ingest(dir: &Path) -> String {
    let mut lines = String::new();
    for d in 0..6u32 {
        let label = if d < 3 { "genetics" } else { "physics" };
        let mut toks: Vec<u32> = (0..40).map(|i| (d * 13 + i * 7 + i * i) % 20).collect();
        toks.extend(20..28);
        lines.push_str(&serde_json::json!({"source_label": label, "tokens": toks}).to_string());
        lines.push('\n');
    }
    let input = dir.join("docs.jsonl");
    fs::write(&input, lines).unwrap();
    let corpus = dir.join("corpus");
    let out = plexitrace(&[
        "corpus", "ingest", "--input", input.to_str().unwrap(), "--out", corpus.to_str().unwrap(),
        "--vocab-size", "30", "--tokenizer-id", "test",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta = json(&out);
    assert_eq!(meta["doc_count"], 6);
    assert_eq!(meta["total_tokens"], 6 * 48);
    corpus.to_str().unwrap().to_string()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let cfg = format!(
        r#"{{
  "corpus_dir": "corpus",
  "output_dir": "out",
  "provider": {{"kind": "toy", "order": 4, "smoothing": 0.05}},
  "topics": [{{"name": "genetics", "docs_per_topic": 2}}, {{"name": "physics", "docs_per_topic": 2}}],
  "quote_min": 10,
  "quote_max": 20,
  "generations_per_prompt": 1,
  "sampling": {{"temperature": 0.3, "max_new_tokens": 40}},
  "master_seed": 3{extra}
}}"#
    );
    let path = dir.join("c.json");
    fs::write(&path, cfg).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn index_build_and_query() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ingest(dir.path());
    let out = plexitrace(&["index", "build", "--corpus", &corpus]);
    assert!(out.status.success());
    assert_eq!(json(&out)["total_tokens"], 288);
    assert!(Path::new(&corpus).join("sa.bin").is_file());

    let out = plexitrace(&["index", "query", "--corpus", &corpus, "--tokens", "20,21,22"]);
    let v = json(&out);
    assert_eq!(v["count"], 6);
    assert_eq!(v["query"], serde_json::json!([20, 21, 22]));
    assert!(v["occurrences"].as_array().unwrap().is_empty());

    let out = plexitrace(&["index", "query", "--corpus", &corpus, "--tokens", "26,27", "--locate", "2", "--context", "3"]);
    let v = json(&out);
    let occ = v["occurrences"].as_array().unwrap();
    assert_eq!(occ.len(), 2);
    assert_eq!(occ[0]["doc_id"], 0);
    assert_eq!(occ[0]["offset"], 46);
    assert_eq!(occ[0]["context"]["before"], serde_json::json!([23, 24, 25]));
    assert_eq!(occ[0]["context"]["after"], serde_json::json!([]));
}

#[test]
fn query_errors_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ingest(dir.path());
    let out = plexitrace(&["index", "query", "--corpus", &corpus, "--tokens", "99"]);
    assert_eq!(out.status.code(), Some(1));
    let long = vec!["1"; 65].join(",");
    let out = plexitrace(&["index", "query", "--corpus", &corpus, "--tokens", &long]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(plexitrace(&["index", "frobnicate"]).status.code(), Some(1));
    assert_eq!(plexitrace(&["--help"]).status.code(), Some(0));
}

#[test]
fn generate_analyze_report() {
    let dir = tempfile::tempdir().unwrap();
    ingest(dir.path());
    let cfg = write_config(dir.path(), "");
    let out = plexitrace(&["generate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["status"], "OK");
    assert_eq!(v["jobs"], 4);
    let run_dir = dir.path().join("out");
    let records = run_dir.join("records.jsonl");
    assert_eq!(fs::read_to_string(&records).unwrap().lines().count(), 4);

    // a second invocation reuses everything
    let v = json(&plexitrace(&["generate", "--config", &cfg]));
    assert_eq!((v["reused"].as_u64(), v["generated"].as_u64()), (Some(4), Some(0)));

    let attributions = run_dir.join("attributions.jsonl");
    let before = fs::read(&attributions).unwrap();
    let out = plexitrace(&["analyze", "--config", &cfg, "--records", records.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fs::read(&attributions).unwrap(), before);

    let tables = dir.path().join("tables");
    let out = plexitrace(&["report", "tables", "--in", attributions.to_str().unwrap(), "--out", tables.to_str().unwrap()]);
    assert!(out.status.success());
    for f in ["table1_spans.csv", "table2_matches.csv", "table4_categories.csv", "fig2_boxplot.json", "fig3_scatter.csv"] {
        assert_eq!(
            fs::read(tables.join(f)).unwrap(),
            fs::read(run_dir.join("report").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn sweep_over_temperatures() {
    let dir = tempfile::tempdir().unwrap();
    ingest(dir.path());
    let cfg = write_config(dir.path(), "");
    let out = plexitrace(&["sweep", "--config", &cfg, "--axis", "temperature", "--values", "0.2,0.7"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = json(&out);
    assert_eq!(rows.as_array().unwrap().len(), 2);
    let csv = fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let out = plexitrace(&["sweep", "--config", &cfg, "--axis", "size", "--values", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let out = plexitrace(&["sweep", "--config", &cfg, "--axis", "temperature", "--values", "0.2,0.2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn provider_sweep_reads_spec_files() {
    let dir = tempfile::tempdir().unwrap();
    ingest(dir.path());
    let cfg = write_config(dir.path(), "");
    fs::write(dir.path().join("o2.json"), r#"{"kind": "toy", "order": 2, "smoothing": 0.05}"#).unwrap();
    fs::write(dir.path().join("o5.toml"), "kind = \"toy\"\norder = 5\nsmoothing = 0.05\n").unwrap();
    let values = format!("{},{}", dir.path().join("o2.json").display(), dir.path().join("o5.toml").display());
    let out = plexitrace(&["sweep", "--config", &cfg, "--axis", "provider", "--values", &values]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = json(&out);
    let ids: Vec<&str> = rows.as_array().unwrap().iter().map(|r| r["provider_id"].as_str().unwrap()).collect();
    assert_eq!(ids.len(), 2);
    assert_ne!(ids[0], ids[1]);
}

#[test]
fn config_problems_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    ingest(dir.path());
    let missing = dir.path().join("nope.json");
    assert_eq!(plexitrace(&["generate", "--config", missing.to_str().unwrap()]).status.code(), Some(1));
    let cfg = write_config(dir.path(), r#", "generations_per_prompt": 0"#);
    // duplicate key: serde rejects it
    assert_eq!(plexitrace(&["generate", "--config", &cfg]).status.code(), Some(1));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{").unwrap();
    assert_eq!(plexitrace(&["generate", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn unreachable_provider_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    ingest(dir.path());
    let cfg = r#"{
  "corpus_dir": "corpus",
  "provider": {"kind": "http", "url": "http://127.0.0.1:9/v1/completions", "vocab_size": 30, "max_attempts": 1, "timeout_secs": 2},
  "topics": [{"name": "genetics", "docs_per_topic": 1}],
  "quote_min": 5,
  "quote_max": 10,
  "generations_per_prompt": 2
}"#;
    let path = dir.path().join("http.json");
    fs::write(&path, cfg).unwrap();
    let out = plexitrace(&["generate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let manifest: Value = serde_json::from_slice(&fs::read(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "FAILED");
    assert_eq!(manifest["failures"].as_array().unwrap().len(), 2);
}
