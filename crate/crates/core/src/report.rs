//! Per-topic aggregates, category shares and plot data.
//!
//! Human-facing CSV tables render percentages to two significant figures;
//! the JSON exports keep full precision. Figures are written as data only.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{Category, WindowAttribution};
use crate::spans::span_length_stats;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("attribution and span streams disagree: {0}")]
    InconsistentStreams(String),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Identity and length of one low-perplexity span.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpanSummary {
    pub record_id: String,
    pub topic: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicReport {
    pub topic: String,
    /// Total windows.
    pub n: u64,
    /// Windows with distinct token content.
    pub n_unique: u64,
    /// Windows with at least one corpus match.
    pub n_match: u64,
    pub match_ratio: Option<f64>,
    /// Windows found verbatim in their prompt.
    pub n_rep: u64,
    pub rep_ratio: Option<f64>,
    pub span_count: usize,
    pub span_mean: Option<f64>,
    pub span_std: Option<f64>,
    pub mean_log2_standalone_ppl: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn topic_report(topic: &str, windows: &[&WindowAttribution], span_lengths: &[usize]) -> TopicReport {
    let n = windows.len() as u64;
    let n_unique = windows.iter().map(|a| &a.window.tokens).collect::<HashSet<_>>().len() as u64;
    let n_match = windows.iter().filter(|a| a.match_result.count > 0).count() as u64;
    let n_rep = windows.iter().filter(|a| a.window.is_prompt_repetition).count() as u64;
    let stats = span_length_stats(span_lengths);
    let ppl_sum: f64 = windows.iter().map(|a| a.standalone_log2_perplexity).sum();
    TopicReport {
        topic: topic.to_string(),
        n,
        n_unique,
        n_match,
        match_ratio: ratio(n_match, n),
        n_rep,
        rep_ratio: ratio(n_rep, n),
        span_count: span_lengths.len(),
        span_mean: stats.map(|s| s.mean),
        span_std: stats.map(|s| s.std),
        mean_log2_standalone_ppl: (n > 0).then(|| ppl_sum / n as f64),
    }
}

/// Spans implied by the windows: every span of length `L >= w` contributes
/// at least one window, so the set of `(record_id, span_start)` is complete.
pub fn spans_from_attributions(attributions: &[WindowAttribution]) -> Vec<SpanSummary> {
    let set: BTreeSet<SpanSummary> = attributions
        .iter()
        .map(|a| SpanSummary {
            record_id: a.window.record_id.clone(),
            topic: a.window.topic.clone(),
            start: a.window.span_start,
            len: a.window.span_len,
        })
        .collect();
    set.into_iter().collect()
}

fn check_consistency(
    attributions: &[WindowAttribution],
    spans: &[SpanSummary],
) -> Result<(), ReportError> {
    let mut windows_per_span: HashMap<(&str, usize), (usize, usize)> = HashMap::new();
    for s in spans {
        windows_per_span.insert((&s.record_id, s.start), (s.len, 0));
    }
    for a in attributions {
        let w = &a.window;
        let entry = windows_per_span
            .get_mut(&(w.record_id.as_str(), w.span_start))
            .ok_or_else(|| {
                ReportError::InconsistentStreams(format!(
                    "window of record {} at span {} has no span",
                    w.record_id, w.span_start
                ))
            })?;
        if entry.0 != w.span_len || w.tokens.len() > w.span_len {
            return Err(ReportError::InconsistentStreams(format!(
                "record {} span {}: span length {} vs window claims {}",
                w.record_id, w.span_start, entry.0, w.span_len
            )));
        }
        entry.1 += 1;
    }
    let window_len = attributions.first().map(|a| a.window.tokens.len());
    for ((record, start), (len, seen)) in windows_per_span {
        let expected = window_len.map_or(0, |w| len + 1 - w.min(len + 1));
        if window_len.is_some() && seen != expected {
            return Err(ReportError::InconsistentStreams(format!(
                "record {record} span {start} of length {len} has {seen} windows, expected {expected}"
            )));
        }
    }
    Ok(())
}

/// One [`TopicReport`] per topic, sorted by topic name.
pub fn aggregate(
    attributions: &[WindowAttribution],
    spans: &[SpanSummary],
) -> Result<Vec<TopicReport>, ReportError> {
    check_consistency(attributions, spans)?;
    let mut by_topic: BTreeMap<&str, (Vec<&WindowAttribution>, Vec<usize>)> = BTreeMap::new();
    for a in attributions {
        by_topic.entry(&a.window.topic).or_default().0.push(a);
    }
    for s in spans {
        by_topic.entry(&s.topic).or_default().1.push(s.len);
    }
    Ok(by_topic
        .into_iter()
        .map(|(topic, (ws, lens))| topic_report(topic, &ws, &lens))
        .collect())
}

/// Pooled report over every topic.
pub fn aggregate_total(
    attributions: &[WindowAttribution],
    spans: &[SpanSummary],
    label: &str,
) -> Result<TopicReport, ReportError> {
    check_consistency(attributions, spans)?;
    let ws: Vec<&WindowAttribution> = attributions.iter().collect();
    let lens: Vec<usize> = spans.iter().map(|s| s.len).collect();
    Ok(topic_report(label, &ws, &lens))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryDistribution {
    pub topic: String,
    pub counts: BTreeMap<Category, u64>,
    pub shares: BTreeMap<Category, f64>,
}

impl CategoryDistribution {
    pub fn share(&self, c: Category) -> f64 {
        self.shares.get(&c).copied().unwrap_or(0.0)
    }
}

pub fn category_distribution(attributions: &[WindowAttribution]) -> Vec<CategoryDistribution> {
    let mut by_topic: BTreeMap<&str, BTreeMap<Category, u64>> = BTreeMap::new();
    for a in attributions {
        let counts = by_topic
            .entry(&a.window.topic)
            .or_insert_with(|| Category::ALL.iter().map(|&c| (c, 0)).collect());
        *counts.get_mut(&a.category).unwrap() += 1;
    }
    by_topic
        .into_iter()
        .map(|(topic, counts)| {
            let total: u64 = counts.values().sum();
            let shares = counts.iter().map(|(&c, &k)| (c, k as f64 / total as f64)).collect();
            CategoryDistribution { topic: topic.to_string(), counts, shares }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotStats {
    pub topic: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub outliers: Vec<u64>,
}

/// Linear-interpolation quantile over sorted data, position `p (n - 1)`.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Five-number summary of match counts `c` (matched windows only). Values
/// beyond 1.5 IQR from the quartiles are also listed as outliers; `min`
/// and `max` are the raw extremes.
pub fn boxplot(topic: &str, counts: &[u64]) -> Option<BoxplotStats> {
    if counts.is_empty() {
        return None;
    }
    let mut sorted: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let mut outliers: Vec<u64> = counts
        .iter()
        .copied()
        .filter(|&c| (c as f64) < lo_fence || (c as f64) > hi_fence)
        .collect();
    outliers.sort_unstable();
    Some(BoxplotStats {
        topic: topic.to_string(),
        n: counts.len(),
        min: sorted[0],
        q1,
        median: quantile(&sorted, 0.5),
        q3,
        max: sorted[sorted.len() - 1],
        outliers,
    })
}

/// Boxplot per topic over windows with `c > 0`; topics without any match
/// are omitted.
pub fn boxplot_data(attributions: &[WindowAttribution]) -> Vec<BoxplotStats> {
    let mut by_topic: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for a in attributions {
        let entry = by_topic.entry(&a.window.topic).or_default();
        if a.match_result.count > 0 {
            entry.push(a.match_result.count);
        }
    }
    by_topic.into_iter().filter_map(|(t, c)| boxplot(t, &c)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub topic: String,
    pub record_id: String,
    pub span_start: usize,
    pub window_offset: usize,
    pub c: u64,
    pub log2_standalone_ppl: f64,
    pub category: Category,
}

/// Category boundaries accompanying the scatter data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScatterMeta {
    pub mem_upper: u64,
    pub seg_upper: u64,
}

/// One point per window, ordered by record, span and window offset.
pub fn scatter_data(attributions: &[WindowAttribution]) -> Vec<ScatterPoint> {
    let mut points: Vec<ScatterPoint> = attributions
        .iter()
        .map(|a| ScatterPoint {
            topic: a.window.topic.clone(),
            record_id: a.window.record_id.clone(),
            span_start: a.window.span_start,
            window_offset: a.window.window_offset,
            c: a.match_result.count,
            log2_standalone_ppl: a.standalone_log2_perplexity,
            category: a.category,
        })
        .collect();
    points.sort_by(|a, b| {
        (&a.record_id, a.span_start, a.window_offset).cmp(&(&b.record_id, b.span_start, b.window_offset))
    });
    points
}

/// Percentage with two significant figures ("38%", "7.9%", "0.52%").
pub fn format_percent(ratio: Option<f64>) -> String {
    let Some(r) = ratio else { return String::new() };
    let pct = r * 100.0;
    if pct == 0.0 {
        return "0%".into();
    }
    let mut decimals = (1 - pct.abs().log10().floor() as i32).max(0) as usize;
    // rounding can carry into a new digit, e.g. 9.96 -> "10.0"
    let rounded: f64 = format!("{pct:.decimals$}").parse().unwrap();
    if rounded != 0.0 {
        decimals = (1 - rounded.abs().log10().floor() as i32).max(0) as usize;
    }
    format!("{pct:.decimals$}%")
}

fn format_fixed(value: Option<f64>, decimals: usize) -> String {
    value.map(|v| format!("{v:.decimals$}")).unwrap_or_default()
}

/// A row type with a fixed CSV header and human-formatted cells.
pub trait Tabular: Serialize {
    fn header() -> &'static [&'static str];
    fn cells(&self) -> Vec<String>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanTableRow {
    pub topic: String,
    pub span_count: usize,
    pub span_mean: Option<f64>,
    pub span_std: Option<f64>,
}

impl Tabular for SpanTableRow {
    fn header() -> &'static [&'static str] {
        &["Topic", "L_bar", "sigma_L"]
    }
    fn cells(&self) -> Vec<String> {
        vec![self.topic.clone(), format_fixed(self.span_mean, 1), format_fixed(self.span_std, 1)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchTableRow {
    pub topic: String,
    pub n: u64,
    pub n_match: u64,
    pub match_ratio: Option<f64>,
    pub rep_ratio: Option<f64>,
}

impl Tabular for MatchTableRow {
    fn header() -> &'static [&'static str] {
        &["Topic", "N", "N_{c>0}", "N_{c>0}/N", "N_rep/N"]
    }
    fn cells(&self) -> Vec<String> {
        vec![
            self.topic.clone(),
            self.n.to_string(),
            self.n_match.to_string(),
            format_percent(self.match_ratio),
            format_percent(self.rep_ratio),
        ]
    }
}

impl From<&TopicReport> for SpanTableRow {
    fn from(r: &TopicReport) -> Self {
        SpanTableRow {
            topic: r.topic.clone(),
            span_count: r.span_count,
            span_mean: r.span_mean,
            span_std: r.span_std,
        }
    }
}

impl From<&TopicReport> for MatchTableRow {
    fn from(r: &TopicReport) -> Self {
        MatchTableRow {
            topic: r.topic.clone(),
            n: r.n,
            n_match: r.n_match,
            match_ratio: r.match_ratio,
            rep_ratio: r.rep_ratio,
        }
    }
}

impl Tabular for CategoryDistribution {
    fn header() -> &'static [&'static str] {
        &["Topic", "STH", "MEM", "SEG", "FET"]
    }
    fn cells(&self) -> Vec<String> {
        let mut cells = vec![self.topic.clone()];
        cells.extend(Category::ALL.iter().map(|&c| format_percent(Some(self.share(c)))));
        cells
    }
}

impl Tabular for ScatterPoint {
    fn header() -> &'static [&'static str] {
        &["topic", "record_id", "span_start", "window_offset", "c", "log2_standalone_ppl", "category"]
    }
    fn cells(&self) -> Vec<String> {
        vec![
            self.topic.clone(),
            self.record_id.clone(),
            self.span_start.to_string(),
            self.window_offset.to_string(),
            self.c.to_string(),
            self.log2_standalone_ppl.to_string(),
            self.category.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.display().to_string(), source }
}

/// CSV bytes: header row, RFC-4180 quoting, LF line endings.
pub fn to_csv<T: Tabular>(rows: &[T]) -> Result<Vec<u8>, ReportError> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(T::header())?;
    for row in rows {
        writer.write_record(row.cells())?;
    }
    writer.into_inner().map_err(|e| ReportError::Csv(e.into_error().into()))
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report values serialize");
    bytes.push(b'\n');
    bytes
}

/// Writes rows as CSV or JSON. Identical inputs give identical bytes.
pub fn export<T: Tabular>(rows: &[T], format: ExportFormat, path: &Path) -> Result<(), ReportError> {
    let bytes = match format {
        ExportFormat::Csv => to_csv(rows)?,
        ExportFormat::Json => to_json(rows),
    };
    fs::write(path, bytes).map_err(io_err(path))
}

/// Everything `report tables` emits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportBundle {
    pub topics: Vec<TopicReport>,
    pub total: TopicReport,
    pub categories: Vec<CategoryDistribution>,
    pub boxplots: Vec<BoxplotStats>,
    pub scatter_meta: ScatterMeta,
}

pub const TOTAL_LABEL: &str = "Total";

pub fn build_bundle(
    attributions: &[WindowAttribution],
    spans: &[SpanSummary],
    meta: ScatterMeta,
) -> Result<ReportBundle, ReportError> {
    Ok(ReportBundle {
        topics: aggregate(attributions, spans)?,
        total: aggregate_total(attributions, spans, TOTAL_LABEL)?,
        categories: category_distribution(attributions),
        boxplots: boxplot_data(attributions),
        scatter_meta: meta,
    })
}

/// Writes `table1_spans.csv`, `table2_matches.csv`, `table4_categories.csv`,
/// `fig2_boxplot.json`, `fig3_scatter.csv` (with `fig3_scatter.meta.json`)
/// and the full-precision `report.json` into `out_dir`.
pub fn write_tables(
    attributions: &[WindowAttribution],
    spans: &[SpanSummary],
    meta: ScatterMeta,
    out_dir: &Path,
) -> Result<ReportBundle, ReportError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let bundle = build_bundle(attributions, spans, meta)?;

    let span_rows: Vec<SpanTableRow> = bundle.topics.iter().map(SpanTableRow::from).collect();
    export(&span_rows, ExportFormat::Csv, &out_dir.join("table1_spans.csv"))?;

    let mut match_rows: Vec<MatchTableRow> = bundle.topics.iter().map(MatchTableRow::from).collect();
    match_rows.push(MatchTableRow::from(&bundle.total));
    export(&match_rows, ExportFormat::Csv, &out_dir.join("table2_matches.csv"))?;

    export(&bundle.categories, ExportFormat::Csv, &out_dir.join("table4_categories.csv"))?;

    let fig2 = out_dir.join("fig2_boxplot.json");
    fs::write(&fig2, to_json(&bundle.boxplots)).map_err(io_err(&fig2))?;

    export(&scatter_data(attributions), ExportFormat::Csv, &out_dir.join("fig3_scatter.csv"))?;
    let fig3_meta = out_dir.join("fig3_scatter.meta.json");
    fs::write(&fig3_meta, to_json(&meta)).map_err(io_err(&fig3_meta))?;

    let full = out_dir.join("report.json");
    fs::write(&full, to_json(&bundle)).map_err(io_err(&full))?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::MatchResult;
    use crate::corpus::tokens;
    use crate::spans::Window;
    use proptest::prelude::*;

    fn attr(topic: &str, record: &str, span_start: usize, offset: usize, c: u64, rep: bool) -> WindowAttribution {
        let cfg = crate::spans::AnalysisConfig::default();
        WindowAttribution {
            window: Window {
                record_id: record.into(),
                topic: topic.into(),
                span_start,
                span_len: 6,
                window_offset: offset,
                tokens: tokens(&[1, 2, 3, 4, 5, 6]),
                is_prompt_repetition: rep,
            },
            match_result: MatchResult { count: c, sample_occurrences: vec![] },
            category: crate::attribution::categorize(c, &cfg),
            standalone_log2_perplexity: 2.0,
        }
    }

    #[test]
    fn hand_counted_report() {
        let a = vec![
            attr("g", "g/0/0", 0, 0, 0, false),
            attr("g", "g/0/0", 10, 0, 2, true),
            attr("g", "g/1/0", 0, 0, 7, false),
        ];
        let spans = spans_from_attributions(&a);
        let r = aggregate(&a, &spans).unwrap();
        assert_eq!(r.len(), 1);
        let g = &r[0];
        assert_eq!((g.n, g.n_match, g.n_rep), (3, 2, 1));
        // all three windows carry the same tokens
        assert_eq!(g.n_unique, 1);
        assert!((g.match_ratio.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((g.rep_ratio.unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!((g.span_count, g.span_mean, g.span_std), (3, Some(6.0), Some(0.0)));
        assert_eq!(g.mean_log2_standalone_ppl, Some(2.0));
    }

    #[test]
    fn empty_group_has_null_ratios() {
        let total = aggregate_total(&[], &[], TOTAL_LABEL).unwrap();
        assert_eq!(total.n, 0);
        assert_eq!(total.match_ratio, None);
        assert_eq!(total.rep_ratio, None);
        assert!(aggregate(&[], &[]).unwrap().is_empty());
        let v = serde_json::to_value(&total).unwrap();
        assert!(v["match_ratio"].is_null());
    }

    #[test]
    fn inconsistent_streams() {
        let a = vec![attr("g", "g/0/0", 0, 0, 0, false)];
        assert!(matches!(aggregate(&a, &[]), Err(ReportError::InconsistentStreams(_))));
        let wrong_len = vec![SpanSummary { record_id: "g/0/0".into(), topic: "g".into(), start: 0, len: 7 }];
        assert!(aggregate(&a, &wrong_len).is_err());
        // a 7-token span must have two windows
        let mut b = attr("g", "g/0/0", 0, 0, 0, false);
        b.window.span_len = 7;
        assert!(aggregate(&[b], &wrong_len).is_err());
    }

    #[test]
    fn category_shares() {
        let a = vec![
            attr("t", "a", 0, 0, 0, false),
            attr("t", "b", 0, 0, 0, false),
            attr("t", "c", 0, 0, 1, false),
            attr("t", "d", 0, 0, 5, false),
        ];
        let d = &category_distribution(&a)[0];
        assert_eq!(d.share(Category::Sth), 0.5);
        assert_eq!(d.share(Category::Mem), 0.25);
        assert_eq!(d.share(Category::Seg), 0.25);
        assert_eq!(d.share(Category::Fet), 0.0);
        let all_sth = vec![attr("u", "a", 0, 0, 0, false)];
        let d = &category_distribution(&all_sth)[0];
        assert_eq!(
            Category::ALL.map(|c| d.share(c)),
            [1.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn boxplot_reference_cases() {
        let b = boxplot("t", &[1, 2, 3, 4, 5]).unwrap();
        assert_eq!((b.min, b.q1, b.median, b.q3, b.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        assert!(b.outliers.is_empty());
        let b = boxplot("t", &[7]).unwrap();
        assert_eq!((b.min, b.q1, b.median, b.q3, b.max), (7.0, 7.0, 7.0, 7.0, 7.0));
        let b = boxplot("t", &[1, 1, 1, 100]).unwrap();
        assert_eq!(b.outliers, vec![100]);
        assert!(boxplot("t", &[]).is_none());
    }

    #[test]
    fn boxplot_skips_unmatched_windows() {
        let a = vec![attr("t", "a", 0, 0, 0, false), attr("t", "b", 0, 0, 3, false), attr("u", "c", 0, 0, 0, false)];
        let b = boxplot_data(&a);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].n, 1);
    }

    #[test]
    fn scatter_points_are_ordered() {
        let a = vec![
            attr("t", "b", 0, 0, 60, false),
            attr("t", "a", 9, 1, 0, false),
            attr("t", "a", 9, 0, 3, false),
        ];
        let s = scatter_data(&a);
        let keys: Vec<_> = s.iter().map(|p| (p.record_id.as_str(), p.window_offset)).collect();
        assert_eq!(keys, vec![("a", 0), ("a", 1), ("b", 0)]);
        assert_eq!(s[2].category, Category::Fet);
        assert!(scatter_data(&[]).is_empty());
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(format_percent(Some(0.38)), "38%");
        assert_eq!(format_percent(Some(0.079)), "7.9%");
        assert_eq!(format_percent(Some(0.0789)), "7.9%");
        assert_eq!(format_percent(Some(2.0 / 3.0)), "67%");
        assert_eq!(format_percent(Some(1.0)), "100%");
        assert_eq!(format_percent(Some(0.0)), "0%");
        assert_eq!(format_percent(Some(0.0996)), "10%");
        assert_eq!(format_percent(Some(0.00523)), "0.52%");
        assert_eq!(format_percent(None), "");
    }

    #[test]
    fn csv_shape() {
        let rows = vec![MatchTableRow {
            topic: "Nuclear, physics".into(),
            n: 3,
            n_match: 2,
            match_ratio: Some(2.0 / 3.0),
            rep_ratio: Some(1.0 / 3.0),
        }];
        let bytes = to_csv(&rows).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "Topic,N,N_{c>0},N_{c>0}/N,N_rep/N\n\"Nuclear, physics\",3,2,67%,33%\n"
        );
        let empty: Vec<MatchTableRow> = vec![];
        assert_eq!(to_csv(&empty).unwrap(), b"Topic,N,N_{c>0},N_{c>0}/N,N_rep/N\n");
    }

    #[test]
    fn tables_are_byte_deterministic() {
        let a = vec![attr("g", "g/0/0", 0, 0, 0, false), attr("h", "h/0/0", 0, 0, 9, true)];
        let spans = spans_from_attributions(&a);
        let meta = ScatterMeta { mem_upper: 5, seg_upper: 50 };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_tables(&a, &spans, meta, d1.path()).unwrap();
        write_tables(&a, &spans, meta, d2.path()).unwrap();
        for f in ["table1_spans.csv", "table2_matches.csv", "table4_categories.csv", "fig2_boxplot.json", "fig3_scatter.csv", "fig3_scatter.meta.json", "report.json"] {
            assert_eq!(fs::read(d1.path().join(f)).unwrap(), fs::read(d2.path().join(f)).unwrap(), "{f}");
        }
    }

    proptest! {
        #[test]
        fn invariants_hold_on_random_counts(counts in prop::collection::vec((0u64..200, any::<bool>(), 0usize..3), 0..60)) {
            let topics = ["a", "b", "c"];
            let a: Vec<_> = counts
                .iter()
                .enumerate()
                .map(|(i, &(c, rep, t))| attr(topics[t], &format!("r{i}"), 0, 0, c, rep))
                .collect();
            let spans = spans_from_attributions(&a);
            for r in aggregate(&a, &spans).unwrap() {
                let mine: Vec<_> = a.iter().filter(|x| x.window.topic == r.topic).collect();
                let sth = mine.iter().filter(|x| x.category == Category::Sth).count() as u64;
                prop_assert_eq!(r.n, mine.len() as u64);
                prop_assert_eq!(r.n_match, r.n - sth);
                prop_assert!(r.n_rep <= r.n);
            }
            for d in category_distribution(&a) {
                let sum: f64 = d.shares.values().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                prop_assert_eq!(d.counts.values().sum::<u64>(), a.iter().filter(|x| x.window.topic == d.topic).count() as u64);
            }
            for b in boxplot_data(&a) {
                prop_assert!(b.min <= b.q1 && b.q1 <= b.median && b.median <= b.q3 && b.q3 <= b.max);
            }
        }
    }
}
