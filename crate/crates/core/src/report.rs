//! Run artifacts, summary tables and parameter sweeps.
//!
//! A run writes `metrics.json`, `requests.jsonl` and `summary.csv`. A sweep
//! writes one such directory per point plus `sweep.json` and `sweep.csv`.
//! Floats are printed in their shortest round-trip form, so identical runs
//! produce identical bytes.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{GroupMetrics, MetricsReport, RunOutput};
use crate::error::{ConfigError, Result, SimError};
use crate::scenario::{find_key_line, parse_scenario, run_scenario, ArchitectureConfig, Scenario, ARCHITECTURE_TAGS};

pub const METRICS_FILE: &str = "metrics.json";
pub const RECORDS_FILE: &str = "requests.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunArtifacts {
    pub metrics: PathBuf,
    pub records: PathBuf,
    pub summary: PathBuf,
}

pub fn metrics_json(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| SimError::io(path, e))
}

/// Writes the three run artifacts into `dir`, creating it if needed.
pub fn write_run_artifacts(dir: &Path, out: &RunOutput) -> Result<RunArtifacts> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    let arts = RunArtifacts {
        metrics: dir.join(METRICS_FILE),
        records: dir.join(RECORDS_FILE),
        summary: dir.join(SUMMARY_FILE),
    };
    fs::write(&arts.metrics, metrics_json(&out.report)).map_err(|e| SimError::io(&arts.metrics, e))?;

    let mut w = create(&arts.records)?;
    for r in &out.records {
        serde_json::to_writer(&mut w, r).expect("record serializes");
        w.write_all(b"\n").map_err(|e| SimError::io(&arts.records, e))?;
    }
    w.flush().map_err(|e| SimError::io(&arts.records, e))?;

    write_summary_csv(&arts.summary, &out.report)?;
    Ok(arts)
}

const SUMMARY_COLUMNS: [&str; 14] = [
    "scope",
    "request_count",
    "completed_count",
    "rejected_count",
    "mean_ms",
    "p50_ms",
    "p90_ms",
    "p99_ms",
    "prompt_hit_ratio",
    "semantic_hit_ratio",
    "early_exit_fraction",
    "sla_violation_fraction",
    "upstream_bytes_total",
    "architecture",
];

fn group_fields(g: &GroupMetrics) -> Vec<String> {
    let lat = |f: fn(&crate::engine::LatencySummary) -> f64| g.latency_ms.as_ref().map(|l| f(l).to_string()).unwrap_or_default();
    vec![
        g.request_count.to_string(),
        g.completed_count.to_string(),
        g.rejected_count.to_string(),
        lat(|l| l.mean),
        lat(|l| l.p50),
        lat(|l| l.p90),
        lat(|l| l.p99),
        g.prompt_hit_ratio.to_string(),
        g.semantic_hit_ratio.to_string(),
        g.early_exit_fraction.to_string(),
        g.sla_violation_fraction.to_string(),
        g.upstream_bytes_total.to_string(),
    ]
}

fn write_summary_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let csv_err = |e: csv::Error| SimError::io(path, e.into());
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(SUMMARY_COLUMNS).map_err(csv_err)?;
    let scopes = std::iter::once(("overall".to_string(), &report.overall))
        .chain(report.per_class.iter().map(|(c, g)| (c.to_string(), g)));
    for (scope, g) in scopes {
        let mut row = vec![scope];
        row.extend(group_fields(g));
        row.push(report.architecture.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| SimError::io(path, e))
}

fn fmt_ms(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into())
}

/// Human-readable per-class table.
pub fn summary_table(report: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "architecture: {}  seed: {}", report.architecture, report.seed);
    let _ = writeln!(
        s,
        "{:<16} {:>7} {:>10} {:>10} {:>10} {:>10} {:>8} {:>8} {:>8} {:>7}",
        "class", "count", "mean_ms", "p50_ms", "p90_ms", "p99_ms", "prompt%", "sem%", "exit%", "sla%"
    );
    let rows = report.per_class.iter().map(|(c, g)| (c.to_string(), g)).chain(std::iter::once(("all".into(), &report.overall)));
    for (name, g) in rows {
        let l = g.latency_ms.as_ref();
        let _ = writeln!(
            s,
            "{:<16} {:>7} {:>10} {:>10} {:>10} {:>10} {:>8.1} {:>8.1} {:>8.1} {:>7.1}",
            name,
            g.request_count,
            fmt_ms(l.map(|l| l.mean)),
            fmt_ms(l.map(|l| l.p50)),
            fmt_ms(l.map(|l| l.p90)),
            fmt_ms(l.map(|l| l.p99)),
            100.0 * g.prompt_hit_ratio,
            100.0 * g.semantic_hit_ratio,
            100.0 * g.early_exit_fraction,
            100.0 * g.sla_violation_fraction,
        );
    }
    s
}

/// A one-parameter sweep over a base scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Base scenario, relative to the sweep file.
    pub base: PathBuf,
    /// Dotted scenario key, e.g. `cache.similarity_threshold`, or
    /// `architecture` to swap the whole architecture by tag.
    pub parameter: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub point: usize,
    pub parameter: String,
    pub value: String,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub parameter: String,
    pub rows: Vec<SweepRow>,
}

/// Reads a sweep file and its base scenario.
pub fn parse_sweep(path: &Path) -> Result<(SweepSpec, Scenario)> {
    let raw = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    let spec: SweepSpec = toml::from_str(&raw).map_err(|e| {
        let message = e.message().trim().to_string();
        let key = ["base", "parameter", "values"].into_iter().find(|k| message.contains(k)).unwrap_or("sweep");
        SimError::Config(ConfigError { key: key.into(), line: find_key_line(&raw, key), message })
    })?;
    if spec.values.is_empty() {
        return Err(ConfigError { key: "values".into(), line: find_key_line(&raw, "values"), message: "needs at least one value".into() }.into());
    }
    let base_path = path.parent().unwrap_or(Path::new(".")).join(&spec.base);
    let base = parse_scenario(&base_path)?;
    Ok((spec, base))
}

fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Returns `base` with `parameter` set to `value`. The patched scenario is
/// re-validated, so unknown keys and out-of-range values are rejected.
pub fn apply_parameter(base: &Scenario, parameter: &str, value: &toml::Value) -> Result<Scenario> {
    let bad = |message: String| SimError::Config(ConfigError::new(parameter, message));
    if parameter == "architecture" {
        let tag = value.as_str().ok_or_else(|| bad("architecture values must be tags".into()))?;
        let architecture = ArchitectureConfig::from_tag(tag)
            .ok_or_else(|| bad(format!("unknown architecture `{tag}` (expected one of {})", ARCHITECTURE_TAGS.join(", "))))?;
        let s = Scenario { architecture, ..base.clone() };
        s.validate()?;
        return Ok(s);
    }
    let mut doc = toml::Value::try_from(base).expect("scenario converts to a TOML value");
    let mut node = &mut doc;
    let parts: Vec<&str> = parameter.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = node.as_table_mut().ok_or_else(|| bad(format!("`{part}` is not a table")))?;
        node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| bad("parent is not a table".into()))?
        .insert(parts[parts.len() - 1].to_string(), value.clone());
    let s: Scenario = doc.try_into().map_err(|e: toml::de::Error| bad(e.message().trim().to_string()))?;
    s.validate()?;
    Ok(s)
}

/// Runs every point with the base seed. Points run in parallel; rows come back
/// in value order.
pub fn run_sweep(spec: &SweepSpec, base: &Scenario) -> Result<(SweepResult, Vec<RunOutput>)> {
    let outputs: Vec<Result<RunOutput>> = spec
        .values
        .par_iter()
        .enumerate()
        .map(|(index, v)| {
            let wrap = |source: SimError| SimError::SweepPoint {
                index,
                parameter: spec.parameter.clone(),
                value: value_label(v),
                source: Box::new(source),
            };
            let s = apply_parameter(base, &spec.parameter, v).map_err(wrap)?;
            run_scenario(&s).map_err(wrap)
        })
        .collect();
    let mut rows = Vec::with_capacity(outputs.len());
    let mut runs = Vec::with_capacity(outputs.len());
    for (point, out) in outputs.into_iter().enumerate() {
        let out = out?;
        rows.push(SweepRow {
            point,
            parameter: spec.parameter.clone(),
            value: value_label(&spec.values[point]),
            report: out.report.clone(),
        });
        runs.push(out);
    }
    Ok((SweepResult { parameter: spec.parameter.clone(), rows }, runs))
}

/// Writes `sweep.json`, `sweep.csv` and a `point-NNN` directory per point.
pub fn write_sweep_artifacts(dir: &Path, result: &SweepResult, runs: &[RunOutput]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    let json_path = dir.join("sweep.json");
    let mut json = serde_json::to_string_pretty(result).expect("sweep serializes");
    json.push('\n');
    fs::write(&json_path, json).map_err(|e| SimError::io(&json_path, e))?;

    let csv_path = dir.join("sweep.csv");
    let csv_err = |e: csv::Error| SimError::io(&csv_path, e.into());
    let mut w = csv::Writer::from_writer(create(&csv_path)?);
    let mut header = vec!["point", "parameter", "value"];
    header.extend(&SUMMARY_COLUMNS[1..]);
    w.write_record(&header).map_err(csv_err)?;
    for row in &result.rows {
        let mut rec = vec![row.point.to_string(), row.parameter.clone(), row.value.clone()];
        rec.extend(group_fields(&row.report.overall));
        rec.push(row.report.architecture.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| SimError::io(&csv_path, e))?;

    for (i, run) in runs.iter().enumerate() {
        write_run_artifacts(&dir.join(format!("point-{i:03}")), run)?;
    }
    Ok(())
}

/// Comparison table with one line per sweep point.
pub fn sweep_table(result: &SweepResult) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<24} {:<20} {:>10} {:>10} {:>10} {:>8} {:>8}",
        result.parameter, "architecture", "mean_ms", "p50_ms", "p99_ms", "sem%", "exit%"
    );
    for row in &result.rows {
        let g = &row.report.overall;
        let l = g.latency_ms.as_ref();
        let _ = writeln!(
            s,
            "{:<24} {:<20} {:>10} {:>10} {:>10} {:>8.1} {:>8.1}",
            row.value,
            row.report.architecture,
            fmt_ms(l.map(|l| l.mean)),
            fmt_ms(l.map(|l| l.p50)),
            fmt_ms(l.map(|l| l.p99)),
            100.0 * g.semantic_hit_ratio,
            100.0 * g.early_exit_fraction,
        );
    }
    s
}
