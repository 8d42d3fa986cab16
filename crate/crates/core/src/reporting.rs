//! Tabular exports of persisted run records.
//!
//! Every table is sorted by `(model, seed, ...)` and numbers are written
//! with six significant digits, so the same records always produce the same
//! bytes. Wall-clock times only ever appear in `timings.csv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::audit::RunRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Format> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::config(format!("unknown format `{other}` (csv or json)"))),
        }
    }
}

/// Six significant digits; `inf` / `-inf` for infinities.
pub fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    // normalise -0
    if rounded == 0.0 {
        "0".into()
    } else {
        rounded.to_string()
    }
}

fn round6(v: Option<f64>) -> Option<f64> {
    v.filter(|x| x.is_finite())
        .map(|x| fmt_value(x).parse().expect("formatted float parses"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_value).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub metric: String,
    pub subgroup: String,
    pub value: Option<f64>,
    pub model: String,
    pub seed: u64,
    pub value_defined: bool,
    pub record: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParityRow {
    pub metric: String,
    pub group: String,
    pub value: Option<f64>,
    pub kind: String,
    pub classification: String,
    pub model: String,
    pub seed: u64,
    pub value_defined: bool,
    pub note: String,
    pub record: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub model: String,
    pub seed: u64,
    pub method: String,
    pub alpha: f64,
    pub n: usize,
    pub coverage: Option<f64>,
    pub mean_width: Option<f64>,
    pub unbounded: usize,
    pub fits: usize,
    pub excluded: usize,
    pub error: String,
    pub record: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    /// `metric` or `parity`.
    pub table: String,
    pub model: String,
    pub metric: String,
    pub subgroup: String,
    pub runs: usize,
    pub defined: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub model: String,
    pub seed: u64,
    pub stage: String,
    pub wall_ms: f64,
    pub record: String,
}

fn sorted_records(records: &[RunRecord]) -> Vec<&RunRecord> {
    let mut v: Vec<&RunRecord> = records.iter().collect();
    v.sort_by(|a, b| (&a.model, a.seed, &a.dataset_id).cmp(&(&b.model, b.seed, &b.dataset_id)));
    v
}

pub fn metric_rows(records: &[RunRecord]) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for r in sorted_records(records) {
        let Some(table) = &r.metrics else { continue };
        for (metric, cells) in &table.cells {
            for (subgroup, v) in cells {
                rows.push(MetricRow {
                    metric: metric.clone(),
                    subgroup: subgroup.clone(),
                    value: round6(*v),
                    model: r.model.clone(),
                    seed: r.seed,
                    value_defined: v.is_some(),
                    record: r.stem(),
                });
            }
        }
    }
    rows
}

pub fn parity_rows(records: &[RunRecord]) -> Vec<ParityRow> {
    let mut rows = Vec::new();
    for r in sorted_records(records) {
        let Some(report) = &r.parity else { continue };
        let mut entries: Vec<_> = report.entries.iter().collect();
        entries.sort_by(|a, b| (a.metric.name(), &a.group).cmp(&(b.metric.name(), &b.group)));
        for e in entries {
            rows.push(ParityRow {
                metric: e.metric.name().to_string(),
                group: e.group.clone(),
                value: round6(e.value),
                kind: match e.kind {
                    crate::parity::ParityKind::Difference => "difference".into(),
                    crate::parity::ParityKind::Ratio => "ratio".into(),
                },
                classification: e.classification.name().to_string(),
                model: r.model.clone(),
                seed: r.seed,
                value_defined: e.value.is_some(),
                note: e.note.clone().unwrap_or_default(),
                record: r.stem(),
            });
        }
    }
    rows
}

pub fn comparison_rows(records: &[RunRecord]) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    for r in sorted_records(records) {
        let mut methods: Vec<_> = r.methods.iter().collect();
        methods.sort_by(|a, b| {
            (a.method.name(), a.alpha)
                .partial_cmp(&(b.method.name(), b.alpha))
                .expect("alphas are finite")
        });
        for m in methods {
            rows.push(ComparisonRow {
                model: r.model.clone(),
                seed: r.seed,
                method: m.method.name().to_string(),
                alpha: m.alpha,
                n: m.n,
                coverage: round6(m.coverage),
                mean_width: round6(m.mean_width),
                unbounded: m.unbounded,
                fits: m.fits,
                excluded: m.excluded,
                error: m.error.clone().unwrap_or_default(),
                record: r.stem(),
            });
        }
    }
    rows
}

pub fn timing_rows(records: &[RunRecord]) -> Vec<TimingRow> {
    let mut rows = Vec::new();
    for r in sorted_records(records) {
        for t in &r.timings {
            rows.push(TimingRow {
                model: r.model.clone(),
                seed: r.seed,
                stage: t.stage.clone(),
                wall_ms: t.seconds * 1e3,
                record: r.stem(),
            });
        }
    }
    rows
}

struct Acc {
    runs: usize,
    values: Vec<f64>,
}

fn aggregate_row(table: &str, key: &(String, String, String), acc: &Acc) -> AggregateRow {
    let n = acc.values.len();
    let mean = (n > 0).then(|| acc.values.iter().sum::<f64>() / n as f64);
    let std = mean.filter(|_| n > 1).map(|m| {
        (acc.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    });
    AggregateRow {
        table: table.to_string(),
        model: key.0.clone(),
        metric: key.1.clone(),
        subgroup: key.2.clone(),
        runs: acc.runs,
        defined: n,
        mean: round6(mean),
        std: round6(std),
        min: round6(acc.values.iter().copied().reduce(f64::min)),
        max: round6(acc.values.iter().copied().reduce(f64::max)),
    }
}

/// Mean, sample std, min and max across seeds for every model, metric and
/// subgroup (or parity group). Undefined values are skipped but counted in
/// `runs`.
pub fn aggregate_rows(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut metrics: BTreeMap<(String, String, String), Acc> = BTreeMap::new();
    let mut parity: BTreeMap<(String, String, String), Acc> = BTreeMap::new();
    let push = |map: &mut BTreeMap<_, Acc>, key, v: Option<f64>| {
        let acc = map.entry(key).or_insert(Acc {
            runs: 0,
            values: Vec::new(),
        });
        acc.runs += 1;
        acc.values.extend(v);
    };
    for r in sorted_records(records) {
        if let Some(t) = &r.metrics {
            for (metric, cells) in &t.cells {
                for (sg, v) in cells {
                    push(&mut metrics, (r.model.clone(), metric.clone(), sg.clone()), *v);
                }
            }
        }
        if let Some(p) = &r.parity {
            for e in &p.entries {
                push(
                    &mut parity,
                    (r.model.clone(), e.metric.name().to_string(), e.group.clone()),
                    e.value,
                );
            }
        }
    }
    metrics
        .iter()
        .map(|(k, a)| aggregate_row("metric", k, a))
        .chain(parity.iter().map(|(k, a)| aggregate_row("parity", k, a)))
        .collect()
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner()
        .map_err(|e| Error::validation(format!("csv buffer: {e}")))
}

fn json_bytes<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(rows).expect("rows serialize");
    v.push(b'\n');
    v
}

pub fn render_metrics(rows: &[MetricRow], format: Format) -> Result<Vec<u8>> {
    match format {
        Format::Json => Ok(json_bytes(rows)),
        Format::Csv => csv_bytes(
            &["metric", "subgroup", "value", "model", "seed", "value_defined", "record"],
            rows.iter().map(|r| {
                vec![
                    r.metric.clone(),
                    r.subgroup.clone(),
                    fmt_opt(r.value),
                    r.model.clone(),
                    r.seed.to_string(),
                    r.value_defined.to_string(),
                    r.record.clone(),
                ]
            }),
        ),
    }
}

pub fn render_parity(rows: &[ParityRow], format: Format) -> Result<Vec<u8>> {
    match format {
        Format::Json => Ok(json_bytes(rows)),
        Format::Csv => csv_bytes(
            &[
                "metric",
                "group",
                "value",
                "kind",
                "classification",
                "model",
                "seed",
                "value_defined",
                "note",
                "record",
            ],
            rows.iter().map(|r| {
                vec![
                    r.metric.clone(),
                    r.group.clone(),
                    fmt_opt(r.value),
                    r.kind.clone(),
                    r.classification.clone(),
                    r.model.clone(),
                    r.seed.to_string(),
                    r.value_defined.to_string(),
                    r.note.clone(),
                    r.record.clone(),
                ]
            }),
        ),
    }
}

pub fn render_comparison(rows: &[ComparisonRow], format: Format) -> Result<Vec<u8>> {
    match format {
        Format::Json => Ok(json_bytes(rows)),
        Format::Csv => csv_bytes(
            &[
                "model",
                "seed",
                "method",
                "alpha",
                "n",
                "coverage",
                "mean_width",
                "unbounded",
                "fits",
                "excluded",
                "error",
                "record",
            ],
            rows.iter().map(|r| {
                vec![
                    r.model.clone(),
                    r.seed.to_string(),
                    r.method.clone(),
                    fmt_value(r.alpha),
                    r.n.to_string(),
                    fmt_opt(r.coverage),
                    fmt_opt(r.mean_width),
                    r.unbounded.to_string(),
                    r.fits.to_string(),
                    r.excluded.to_string(),
                    r.error.clone(),
                    r.record.clone(),
                ]
            }),
        ),
    }
}

pub fn render_aggregates(rows: &[AggregateRow], format: Format) -> Result<Vec<u8>> {
    match format {
        Format::Json => Ok(json_bytes(rows)),
        Format::Csv => csv_bytes(
            &["table", "model", "metric", "subgroup", "runs", "defined", "mean", "std", "min", "max"],
            rows.iter().map(|r| {
                vec![
                    r.table.clone(),
                    r.model.clone(),
                    r.metric.clone(),
                    r.subgroup.clone(),
                    r.runs.to_string(),
                    r.defined.to_string(),
                    fmt_opt(r.mean),
                    fmt_opt(r.std),
                    fmt_opt(r.min),
                    fmt_opt(r.max),
                ]
            }),
        ),
    }
}

pub fn render_timings(rows: &[TimingRow]) -> Result<Vec<u8>> {
    csv_bytes(
        &["model", "seed", "stage", "wall_ms", "record"],
        rows.iter().map(|r| {
            vec![
                r.model.clone(),
                r.seed.to_string(),
                r.stage.clone(),
                fmt_value(r.wall_ms),
                r.record.clone(),
            ]
        }),
    )
}

/// Plain-text overview: run counts, failures, and how often each parity
/// classification occurred per model and group.
pub fn summary_text(records: &[RunRecord], load_errors: &[Error]) -> String {
    let mut s = String::new();
    let failed: Vec<&RunRecord> = records.iter().filter(|r| !r.status.is_ok()).collect();
    let _ = writeln!(s, "records: {}", records.len());
    let _ = writeln!(s, "failed runs: {}", failed.len());
    for r in sorted_records(records) {
        if let crate::audit::RunStatus::Failed { stage, message } = &r.status {
            let _ = writeln!(s, "  {} [{stage}] {message}", r.stem());
        }
    }
    if !load_errors.is_empty() {
        let _ = writeln!(s, "unreadable record files: {}", load_errors.len());
        for e in load_errors {
            let _ = writeln!(s, "  {e}");
        }
    }

    let mut counts: BTreeMap<(String, String, String), BTreeMap<&'static str, usize>> = BTreeMap::new();
    for r in records {
        let Some(p) = &r.parity else { continue };
        for e in &p.entries {
            *counts
                .entry((r.model.clone(), e.group.clone(), e.metric.name().to_string()))
                .or_default()
                .entry(e.classification.name())
                .or_default() += 1;
        }
    }
    if !counts.is_empty() {
        let _ = writeln!(s, "\nparity classifications (model / group / metric):");
        for ((model, group, metric), c) in &counts {
            let parts: Vec<String> = c.iter().map(|(k, v)| format!("{k} {v}")).collect();
            let _ = writeln!(s, "  {model} / {group} / {metric}: {}", parts.join(", "));
        }
    }
    s
}

fn write(path: PathBuf, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Wall time of each interval method's stage, keyed by (model, seed,
/// method name).
pub fn method_wall_ms(records: &[RunRecord]) -> BTreeMap<(String, u64, String), f64> {
    let mut out = BTreeMap::new();
    for r in records {
        for t in &r.timings {
            if let Some(m) = t.stage.strip_prefix("method:") {
                out.insert((r.model.clone(), r.seed, m.to_string()), t.seconds * 1e3);
            }
        }
    }
    out
}

/// Writes the full report bundle into `out_dir` and returns the paths.
pub fn write_bundle(
    records: &[RunRecord],
    load_errors: &[Error],
    out_dir: &Path,
    format: Format,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ext = format.extension();
    let mut written = Vec::new();
    write(
        out_dir.join(format!("metrics.{ext}")),
        &render_metrics(&metric_rows(records), format)?,
        &mut written,
    )?;
    write(
        out_dir.join(format!("parity.{ext}")),
        &render_parity(&parity_rows(records), format)?,
        &mut written,
    )?;
    write(
        out_dir.join(format!("method_comparison.{ext}")),
        &render_comparison(&comparison_rows(records), format)?,
        &mut written,
    )?;
    write(
        out_dir.join(format!("aggregates.{ext}")),
        &render_aggregates(&aggregate_rows(records), format)?,
        &mut written,
    )?;
    write(
        out_dir.join("timings.csv"),
        &render_timings(&timing_rows(records))?,
        &mut written,
    )?;
    write(
        out_dir.join("summary.txt"),
        summary_text(records, load_errors).as_bytes(),
        &mut written,
    )?;
    Ok(written)
}
