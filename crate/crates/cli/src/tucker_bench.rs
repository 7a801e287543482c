//! Tucker-1 benchmarks: single-grid against coarse-to-fine factorization on
//! the three-source synthetic tensor and the geoshape stand-in, plus the
//! sweep over fixed coarse iteration counts.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use msopt_core::grid::dyadic_exponent;
use msopt_core::stats::{mean, min, percentile, std_dev};
use msopt_core::tensor::DenseTensor;
use msopt_core::tucker::{
    align_columns, bcd_factorize, geoshape_synthetic, multiscale_factorize, synth_mixtures, CoreConstraint,
    FactorizeOptions, FactorizeReport, GeoshapeSpec, MixingConstraint, SynthSpec, TuckerStop,
};
use nalgebra::DMatrix;

use crate::config::{BenchConfig, TuckerSettings};
use crate::output::{write_json, write_table, SweepRow, Table, TuckerTimingRow, TuckerTrialRow};
use crate::pool::map_ordered;

pub const SINGLE: &str = "single";
pub const MULTISCALE: &str = "multiscale";
pub const SYNTHETIC: &str = "synthetic";
pub const GEOSHAPE: &str = "geoshape";

/// A data tensor with known mixing matrix and the modes treated as continuous.
pub struct Dataset {
    pub name: &'static str,
    pub y: DenseTensor,
    pub a_true: DMatrix<f64>,
    pub continuous: Vec<usize>,
}

pub fn synthetic_dataset() -> Result<Dataset> {
    let s = synth_mixtures(&SynthSpec::default())?;
    Ok(Dataset { name: SYNTHETIC, y: s.y, a_true: s.a_true, continuous: vec![1, 2, 3] })
}

pub fn geoshape_dataset(seed: u64) -> Result<Dataset> {
    let g = geoshape_synthetic(&GeoshapeSpec { seed, ..Default::default() })?;
    Ok(Dataset { name: GEOSHAPE, y: g.y, a_true: g.a_true, continuous: vec![2] })
}

/// Nonnegative core, row-simplex mixing, slice-wise core updates, stopping at
/// the mean relative error tolerance.
pub fn synthetic_options(t: &TuckerSettings, y: &DenseTensor, seed: u64) -> FactorizeOptions {
    FactorizeOptions {
        rank: 3,
        max_iterations: t.max_iterations,
        coarse_max_iterations: Some(t.coarse_cap),
        mean_rel_error_tol: Some(t.mean_rel_tol),
        mean_rel_floor: Some(t.rel_floor * y.max_value()),
        core: CoreConstraint::Nonnegative,
        mixing: MixingConstraint::RowSimplex,
        subblock_updates: true,
        seed,
        ..Default::default()
    }
}

/// Fibre sums of the core averaging to one, nonnegative mixing, stopping at a
/// relative error tolerance.
pub fn geoshape_options(t: &TuckerSettings, rank: usize, seed: u64) -> FactorizeOptions {
    FactorizeOptions {
        rank,
        max_iterations: t.geoshape_max_iterations,
        rel_error_tol: Some(t.geoshape_rel_tol),
        core: CoreConstraint::AverageFibre,
        mixing: MixingConstraint::Nonnegative,
        seed,
        ..Default::default()
    }
}

/// Fixed `k` iterations at every coarse scale; the finest scale stops on the
/// objective alone.
pub fn sweep_options(t: &TuckerSettings, y: &DenseTensor, k: usize, seed: u64) -> FactorizeOptions {
    FactorizeOptions {
        coarse_max_iterations: Some(k),
        coarse_fixed: true,
        mean_rel_error_tol: None,
        objective_tol: Some(t.sweep_objective_tol),
        ..synthetic_options(t, y, seed)
    }
}

fn stop_name(s: TuckerStop) -> &'static str {
    match s {
        TuckerStop::RelativeError => "relative_error",
        TuckerStop::MeanRelativeError => "mean_relative_error",
        TuckerStop::Objective => "objective",
        TuckerStop::MaxIterations => "max_iterations",
    }
}

/// One timed factorization and the report it produced.
pub struct TimedRun {
    pub nanos: u64,
    pub report: FactorizeReport,
}

pub fn timed(method: &str, data: &Dataset, opts: &FactorizeOptions) -> Result<TimedRun> {
    let start = Instant::now();
    let report = if method == SINGLE {
        bcd_factorize(&data.y, opts)?
    } else {
        multiscale_factorize(&data.y, &data.continuous, opts)?
    };
    Ok(TimedRun { nanos: start.elapsed().as_nanos() as u64, report })
}

pub fn trial_row(data: &Dataset, method: &str, trial: usize, run: &TimedRun) -> Result<TuckerTrialRow> {
    let rep = &run.report;
    let (_, mixing_error) = align_columns(&rep.factors.a_matrix(), &data.a_true)?;
    Ok(TuckerTrialRow {
        dataset: data.name.to_string(),
        method: method.to_string(),
        trial,
        millis: run.nanos as f64 / 1e6,
        fine_iters: rep.iterations,
        stop: stop_name(rep.stop).to_string(),
        rel_error: rep.rel_error,
        mean_rel_error: rep.mean_rel_error,
        mixing_error,
        max_increase: rep.max_increase(),
        max_violation: rep.max_violation,
    })
}

/// Runs both methods `trials` times, alternating them within each trial.
pub fn run_trials(
    data: &Dataset,
    trials: usize,
    seed: u64,
    jobs: usize,
    options: impl Fn(u64) -> FactorizeOptions + Sync,
) -> Result<Vec<TuckerTrialRow>> {
    let per_trial = map_ordered(jobs, (0..trials).collect(), |t| -> Result<Vec<TuckerTrialRow>> {
        let opts = options(seed.wrapping_add(t as u64));
        let mut rows = Vec::with_capacity(2);
        for method in [SINGLE, MULTISCALE] {
            let run = timed(method, data, &opts)?;
            let row = trial_row(data, method, t, &run)?;
            log::info!(
                "{} trial {t} {method}: {:.1} ms, {} fine iterations, stop {}, mixing error {:.3}",
                data.name,
                row.millis,
                row.fine_iters,
                row.stop,
                row.mixing_error
            );
            rows.push(row);
        }
        Ok(rows)
    });
    let mut out = Vec::with_capacity(2 * trials);
    for r in per_trial {
        out.extend(r?);
    }
    Ok(out)
}

/// Bytes of the working buffers one method holds at its peak: the residual,
/// the core and one core slice of scratch at the finest scale, plus the
/// coarsened copies of the data that the multiscale method keeps alive.
pub fn peak_alloc_estimate(data: &Dataset, rank: usize, method: &str) -> u64 {
    let dims = data.y.dims();
    let rows = dims[0];
    let n = data.y.slice_len();
    let working = rows * n + 2 * rank * n + rows * rank;
    let mut extra = 0usize;
    if method == MULTISCALE {
        let levels = data
            .continuous
            .iter()
            .filter_map(|&m| dyadic_exponent(dims[m]))
            .min()
            .unwrap_or(1);
        let mut d = dims.to_vec();
        for _ in 1..levels {
            for &m in &data.continuous {
                d[m] = d[m].div_ceil(2);
            }
            extra += d.iter().product::<usize>();
        }
        // The interpolated core is built next to the previous one.
        extra += rank * n;
    }
    8 * (working + extra) as u64
}

pub fn timing_rows(data: &Dataset, rank: usize, trials: &[TuckerTrialRow]) -> Vec<TuckerTimingRow> {
    [SINGLE, MULTISCALE]
        .iter()
        .filter_map(|&method| {
            let ms: Vec<f64> =
                trials.iter().filter(|r| r.method == method && r.dataset == data.name).map(|r| r.millis).collect();
            (!ms.is_empty()).then(|| TuckerTimingRow {
                dataset: data.name.to_string(),
                method: method.to_string(),
                trials: ms.len(),
                min_ms: min(&ms).unwrap(),
                median_ms: percentile(&ms, 50.0).unwrap(),
                mean_ms: mean(&ms).unwrap(),
                std_ms: std_dev(&ms).unwrap(),
                peak_alloc_bytes: peak_alloc_estimate(data, rank, method),
            })
        })
        .collect()
}

pub struct TuckerResults {
    pub trials: Vec<TuckerTrialRow>,
    pub timing: Vec<TuckerTimingRow>,
}

impl TuckerResults {
    pub fn median_ms(&self, method: &str) -> Option<f64> {
        self.timing.iter().find(|r| r.method == method).map(|r| r.median_ms)
    }
}

pub fn run_synthetic(cfg: &BenchConfig) -> Result<TuckerResults> {
    let data = synthetic_dataset()?;
    let trials = run_trials(&data, cfg.trials, cfg.seed, cfg.jobs, |s| synthetic_options(&cfg.tucker, &data.y, s))?;
    let timing = timing_rows(&data, 3, &trials);
    Ok(TuckerResults { trials, timing })
}

pub fn run_geoshape(cfg: &BenchConfig) -> Result<TuckerResults> {
    let data = geoshape_dataset(cfg.seed)?;
    let rank = data.a_true.ncols();
    let trials = run_trials(&data, cfg.trials, cfg.seed, cfg.jobs, |s| geoshape_options(&cfg.tucker, rank, s))?;
    let timing = timing_rows(&data, rank, &trials);
    Ok(TuckerResults { trials, timing })
}

pub fn write_tucker(cfg: &BenchConfig, res: &TuckerResults) -> Result<Vec<PathBuf>> {
    Ok(vec![
        write_table(&cfg.out, "tucker_timing", Table::TuckerTiming, cfg.format, &res.timing)?,
        write_table(&cfg.out, "tucker_trials", Table::TuckerTrials, cfg.format, &res.trials)?,
    ])
}

/// Median time and fine-scale iterations of the multiscale method for every
/// fixed coarse count `1..=sweep_max_k`.
pub fn run_sweep(cfg: &BenchConfig) -> Result<Vec<SweepRow>> {
    let data = synthetic_dataset()?;
    let mut rows = Vec::with_capacity(cfg.tucker.sweep_max_k);
    for k in 1..=cfg.tucker.sweep_max_k {
        let runs = map_ordered(cfg.jobs, (0..cfg.trials).collect(), |t| {
            let opts = sweep_options(&cfg.tucker, &data.y, k, cfg.seed.wrapping_add(t as u64));
            timed(MULTISCALE, &data, &opts)
        });
        let mut ms = Vec::with_capacity(cfg.trials);
        let mut iters = Vec::with_capacity(cfg.trials);
        for r in runs {
            let r = r?;
            ms.push(r.nanos as f64 / 1e6);
            iters.push(r.report.iterations as f64);
        }
        let row = SweepRow {
            k_s: k,
            median_time: percentile(&ms, 50.0).unwrap(),
            q1: percentile(&ms, 25.0).unwrap(),
            q3: percentile(&ms, 75.0).unwrap(),
            fine_iters: percentile(&iters, 50.0).unwrap() as usize,
        };
        log::info!("K_s = {k}: median {:.1} ms, fine iterations {}", row.median_time, row.fine_iters);
        rows.push(row);
    }
    if let Some(w) = rows.windows(2).position(|w| w[1].fine_iters > w[0].fine_iters) {
        log::info!("fine-scale iterations first rise between K_s = {} and {}", rows[w].k_s, rows[w + 1].k_s);
    }
    Ok(rows)
}

pub fn write_sweep(cfg: &BenchConfig, rows: &[SweepRow]) -> Result<Vec<PathBuf>> {
    let path = write_table(&cfg.out, "coarse_sweep", Table::CoarseSweep, cfg.format, rows)?;
    Ok(vec![path])
}

/// Writes a factorization's mixing matrix, core and trace for the `tensor`
/// subcommand.
pub fn write_factorization(dir: &std::path::Path, rep: &FactorizeReport) -> Result<Vec<PathBuf>> {
    let a_path = dir.join("mixing.csv");
    let a = &rep.factors.a_matrix();
    let rows: Vec<(usize, usize, f64)> =
        (0..a.nrows()).flat_map(|i| (0..a.ncols()).map(move |r| (i + 1, r + 1, a[(i, r)]))).collect();
    crate::output::write_csv(&a_path, &["row", "col", "value"], &rows)?;
    let b_path = dir.join("core.msot");
    crate::tensor_io::write_tensor(&b_path, &rep.factors.b)?;
    let t_path = dir.join("trace.json");
    write_json(&t_path, &crate::output::trace_rows(&rep.trace))?;
    Ok(vec![a_path, b_path, t_path])
}
