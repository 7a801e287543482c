//! Row types of every emitted file, writers, and the schema validator.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use msopt_core::solver::{Phase, SolveTrace};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::Format;

/// `timing.csv`: one row per (S, method, trial).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingRow {
    #[serde(rename = "S")]
    pub s: usize,
    pub method: String,
    pub trial: usize,
    pub millis: f64,
    pub fine_iters: usize,
    pub total_cost_units: f64,
}

/// `percentiles.csv`: nearest-rank percentiles of `millis` per (S, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PercentileRow {
    #[serde(rename = "S")]
    pub s: usize,
    pub method: String,
    pub p5: f64,
    pub p50: f64,
    pub p95: f64,
}

/// `iterates_S<k>.csv`: snapshots of iterates; `node` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterateRow {
    pub scale: usize,
    pub iter: usize,
    pub node: usize,
    pub value: f64,
}

/// `loss_time.csv`: objective against elapsed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossTimeRow {
    pub method: String,
    pub t_nanos: u64,
    pub scale: usize,
    pub objective: f64,
    pub phase: String,
}

/// `cost_bounds.csv`: measured work next to the cost bound of its plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostBoundRow {
    #[serde(rename = "S")]
    pub s: usize,
    pub method: String,
    pub trial: usize,
    pub measured_units: f64,
    pub bound_units: f64,
}

/// `coarse_sweep.csv`: one row per fixed coarse iteration count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    #[serde(rename = "K_s")]
    pub k_s: usize,
    /// Milliseconds.
    pub median_time: f64,
    pub q1: f64,
    pub q3: f64,
    /// Median fine-scale iterations.
    pub fine_iters: usize,
}

/// `tucker_timing.csv`: wall-time summary per (dataset, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuckerTimingRow {
    pub dataset: String,
    pub method: String,
    pub trials: usize,
    pub min_ms: f64,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// Estimated peak bytes of the working buffers.
    pub peak_alloc_bytes: u64,
}

/// `tucker_trials.csv`: one row per factorization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuckerTrialRow {
    pub dataset: String,
    pub method: String,
    pub trial: usize,
    pub millis: f64,
    pub fine_iters: usize,
    pub stop: String,
    pub rel_error: f64,
    pub mean_rel_error: f64,
    pub mixing_error: f64,
    pub max_increase: f64,
    pub max_violation: f64,
}

/// One element of a JSON trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRow {
    pub scale: usize,
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub t_ns: u64,
    pub phase: String,
}

pub fn trace_rows(trace: &SolveTrace) -> Vec<TraceRow> {
    trace
        .records
        .iter()
        .map(|r| TraceRow {
            scale: r.scale,
            iter: r.iter,
            objective: r.objective,
            grad_norm: r.grad_norm,
            t_ns: r.t_ns,
            phase: r.phase.as_str().to_string(),
        })
        .collect()
}

pub fn loss_time_rows(method: &str, trace: &SolveTrace) -> Vec<LossTimeRow> {
    trace
        .records
        .iter()
        .map(|r| LossTimeRow {
            method: method.to_string(),
            t_nanos: r.t_ns,
            scale: r.scale,
            objective: r.objective,
            phase: r.phase.as_str().to_string(),
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Writes `rows` as CSV with a header, even when `rows` is empty.
pub fn write_csv<R: Serialize>(path: &Path, header: &[&str], rows: &[R]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r).with_context(|| format!("writing {}", path.display()))?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).with_context(|| format!("writing {}", path.display()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// The documented tables, keyed by file stem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    Timing,
    Percentiles,
    Iterates,
    LossTime,
    CostBounds,
    CoarseSweep,
    TuckerTiming,
    TuckerTrials,
    Trace,
    Audit,
}

impl Table {
    pub fn header(self) -> &'static [&'static str] {
        match self {
            Table::Timing => &["S", "method", "trial", "millis", "fine_iters", "total_cost_units"],
            Table::Percentiles => &["S", "method", "p5", "p50", "p95"],
            Table::Iterates => &["scale", "iter", "node", "value"],
            Table::LossTime => &["method", "t_nanos", "scale", "objective", "phase"],
            Table::CostBounds => &["S", "method", "trial", "measured_units", "bound_units"],
            Table::CoarseSweep => &["K_s", "median_time", "q1", "q3", "fine_iters"],
            Table::TuckerTiming => {
                &["dataset", "method", "trials", "min_ms", "median_ms", "mean_ms", "std_ms", "peak_alloc_bytes"]
            }
            Table::TuckerTrials => &[
                "dataset",
                "method",
                "trial",
                "millis",
                "fine_iters",
                "stop",
                "rel_error",
                "mean_rel_error",
                "mixing_error",
                "max_increase",
                "max_violation",
            ],
            Table::Trace => &["scale", "iter", "objective", "grad_norm", "t_ns", "phase"],
            Table::Audit => &[],
        }
    }

    /// Recognizes a file by its stem: `timing`, `iterates_S10`, `trace_single_S4`, ...
    pub fn from_path(path: &Path) -> Option<Self> {
        let stem = path.file_stem()?.to_str()?;
        Some(match stem {
            "timing" => Table::Timing,
            "percentiles" => Table::Percentiles,
            "loss_time" => Table::LossTime,
            "cost_bounds" => Table::CostBounds,
            "coarse_sweep" => Table::CoarseSweep,
            "tucker_timing" => Table::TuckerTiming,
            "tucker_trials" => Table::TuckerTrials,
            "audit" => Table::Audit,
            s if s.starts_with("iterates_") => Table::Iterates,
            s if s.starts_with("trace") => Table::Trace,
            _ => return None,
        })
    }
}

/// Writes a table as `<dir>/<stem>.csv` or `.json` and returns the path.
pub fn write_table<R: Serialize>(dir: &Path, stem: &str, table: Table, format: Format, rows: &[R]) -> Result<PathBuf> {
    let path = match format {
        Format::Csv => dir.join(format!("{stem}.csv")),
        Format::Json => dir.join(format!("{stem}.json")),
    };
    match format {
        Format::Csv => write_csv(&path, table.header(), rows)?,
        Format::Json => write_json(&path, rows)?,
    }
    Ok(path)
}

fn read_rows<R: DeserializeOwned>(path: &Path, table: Table) -> Result<Vec<R>> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "csv" => {
            let mut rd = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
            let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
            ensure!(
                header == table.header(),
                "{}: header {:?} does not match {:?}",
                path.display(),
                header,
                table.header()
            );
            let mut out = Vec::new();
            for (i, r) in rd.deserialize().enumerate() {
                out.push(r.with_context(|| format!("{}: row {}", path.display(), i + 1))?);
            }
            Ok(out)
        }
        "json" => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("{}: bad JSON rows", path.display()))
        }
        other => bail!("{}: unsupported extension {other:?}", path.display()),
    }
}

fn check_phase(p: &str) -> Result<()> {
    let known = [Phase::Step, Phase::Interpolate, Phase::Allocate].map(Phase::as_str);
    ensure!(known.contains(&p), "unknown phase {p:?}");
    Ok(())
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    ensure!(v.is_finite(), "{name} is not finite");
    Ok(())
}

/// Checks a figure-backing file against its schema and returns the row count.
pub fn validate_file(path: &Path) -> Result<usize> {
    let table =
        Table::from_path(path).with_context(|| format!("{}: not a recognized output file", path.display()))?;
    let ctx = || format!("{}", path.display());
    let n = match table {
        Table::Timing => {
            let rows: Vec<TimingRow> = read_rows(path, table)?;
            for r in &rows {
                ensure!(r.millis >= 0.0 && r.total_cost_units >= 0.0, "{}: negative time or cost", ctx());
            }
            rows.len()
        }
        Table::Percentiles => {
            let rows: Vec<PercentileRow> = read_rows(path, table)?;
            for r in &rows {
                ensure!(r.p5 <= r.p50 && r.p50 <= r.p95, "{}: percentiles out of order for S={}", ctx(), r.s);
            }
            rows.len()
        }
        Table::Iterates => {
            let rows: Vec<IterateRow> = read_rows(path, table)?;
            for r in &rows {
                ensure!(r.node >= 1 && r.scale >= 1, "{}: nodes and scales are 1-based", ctx());
                check_finite("value", r.value)?;
            }
            rows.len()
        }
        Table::LossTime => {
            let rows: Vec<LossTimeRow> = read_rows(path, table)?;
            for r in &rows {
                check_phase(&r.phase).with_context(ctx)?;
            }
            rows.len()
        }
        Table::CostBounds => read_rows::<CostBoundRow>(path, table)?.len(),
        Table::CoarseSweep => {
            let rows: Vec<SweepRow> = read_rows(path, table)?;
            for r in &rows {
                ensure!(r.q1 <= r.median_time && r.median_time <= r.q3, "{}: quartiles out of order", ctx());
            }
            rows.len()
        }
        Table::TuckerTiming => {
            let rows: Vec<TuckerTimingRow> = read_rows(path, table)?;
            for r in &rows {
                ensure!(r.min_ms <= r.median_ms, "{}: min above median", ctx());
            }
            rows.len()
        }
        Table::TuckerTrials => read_rows::<TuckerTrialRow>(path, table)?.len(),
        Table::Trace => {
            let rows: Vec<TraceRow> = read_rows(path, table)?;
            for w in rows.windows(2) {
                ensure!(w[0].t_ns <= w[1].t_ns, "{}: trace times decrease", ctx());
            }
            for r in &rows {
                check_phase(&r.phase).with_context(ctx)?;
            }
            rows.len()
        }
        Table::Audit => {
            let text = std::fs::read_to_string(path).with_context(ctx)?;
            let report: crate::audit::AuditReport =
                serde_json::from_str(&text).with_context(|| format!("{}: not an audit report", ctx()))?;
            report.checks.len()
        }
    };
    Ok(n)
}
