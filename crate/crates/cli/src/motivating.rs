//! The Legendre measurement example: single-scale descent against the
//! multiscale drivers under a common "within tolerance of optimal" rule.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Mutex;

use anyhow::{Context, Result};
use msopt_core::multiscale::{
    gaussian_init, greedy_cost_bound, lazy_cost_bound, measured_cost, solve, CostModel, IterationPlan,
    ProblemFamily, Variant,
};
use msopt_core::problems::{LegendreFamily, LegendreProblemSpec};
use msopt_core::solver::{
    reference_minimum, run_in_place, ProblemAtScale, ProjectedGradient, SolveTrace, StepInfo, StopReason,
    StoppingRule, UpdateRule,
};
use msopt_core::stats::percentile;

use crate::config::{BenchConfig, Format, MotivatingSettings, PlanSpec};
use crate::output::{
    loss_time_rows, trace_rows, write_json, write_table, CostBoundRow, IterateRow, LossTimeRow, PercentileRow,
    Table, TimingRow,
};
use crate::pool::map_ordered;

pub const SINGLE: &str = "single";

/// Separates the initialization stream from the measurement noise stream.
const INIT_STREAM: u64 = 0x1f2e_3d4c_5b6a_7988;

pub fn base_family(settings: &MotivatingSettings, scales: usize, seed: u64) -> Result<LegendreFamily> {
    let spec = LegendreProblemSpec::new(settings.m, scales, settings.lambda, settings.noise, seed);
    LegendreFamily::new(spec).with_context(|| format!("building the Legendre problem with S={scales}"))
}

/// One method's run on one trial.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: String,
    pub trace: SolveTrace,
    pub fine_iters: usize,
    /// Iterations per scale, finest first.
    pub counts: Vec<usize>,
    pub cost_units: f64,
    pub bound_units: f64,
    pub final_objective: f64,
    /// Whether the fine scale stopped on the tolerance rather than its cap.
    pub reached_tolerance: bool,
    pub snapshots: Vec<IterateRow>,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub scales: usize,
    pub trial: usize,
    pub seed: u64,
    pub reference: f64,
    pub runs: Vec<MethodRun>,
}

impl TrialOutcome {
    pub fn run(&self, method: &str) -> Option<&MethodRun> {
        self.runs.iter().find(|r| r.method == method)
    }
}

/// Records every `every`-th iterate handed to the wrapped rule, counting from
/// zero at each scale.
struct Snapshotting<'a> {
    inner: &'a dyn UpdateRule,
    every: usize,
    state: Mutex<(usize, usize, Vec<IterateRow>)>,
}

impl UpdateRule for Snapshotting<'_> {
    fn apply(
        &self,
        p: &ProblemAtScale,
        x: &[f64],
        free: Option<&[bool]>,
        next: &mut [f64],
        scratch: &mut Vec<f64>,
    ) -> msopt_core::Result<StepInfo> {
        {
            let mut st = self.state.lock().unwrap();
            if st.0 != p.scale {
                st.0 = p.scale;
                st.1 = 0;
            }
            let iter = st.1;
            if iter.is_multiple_of(self.every) {
                st.2.extend(x.iter().enumerate().map(|(i, &value)| IterateRow {
                    scale: p.scale,
                    iter,
                    node: i + 1,
                    value,
                }));
            }
            st.1 += 1;
        }
        self.inner.apply(p, x, free, next, scratch)
    }

    fn rate(&self, p: &ProblemAtScale) -> Option<f64> {
        self.inner.rate(p)
    }
}

fn snapshotter(inner: &dyn UpdateRule, every: usize) -> Snapshotting<'_> {
    Snapshotting { inner, every, state: Mutex::new((0, 0, Vec::new())) }
}

/// Coarse-scale rule of a greedy plan, or `None` for the lazy and
/// single-scale plans.
fn coarse_rule(plan: PlanSpec, settings: &MotivatingSettings) -> Option<StoppingRule> {
    match plan {
        PlanSpec::GreedyOnePerCoarse => Some(StoppingRule::iterations(1)),
        PlanSpec::GreedyUniform(k) => Some(StoppingRule::iterations(k)),
        PlanSpec::ProgressDriven => Some(
            StoppingRule::iterations(settings.coarse_cap).with_relative_gradient_below(settings.coarse_rel_gradient),
        ),
        PlanSpec::Lazy(_) | PlanSpec::Single => None,
    }
}

/// The per-scale rules a plan runs with on `scales` scales.
pub fn plan_rules(plan: PlanSpec, settings: &MotivatingSettings, scales: usize, fine: StoppingRule) -> Result<IterationPlan> {
    let mut rules = Vec::with_capacity(scales);
    rules.push(fine);
    let coarse = match plan {
        PlanSpec::Lazy(k) => {
            rules[0] = fine.with_max_iterations(k.min(fine.max_iterations.unwrap_or(k)));
            StoppingRule::iterations(k)
        }
        PlanSpec::Single => return Ok(IterationPlan::new(rules)?),
        other => coarse_rule(other, settings).expect("greedy plans have a coarse rule"),
    };
    rules.extend(std::iter::repeat_n(coarse, scales - 1));
    Ok(IterationPlan::new(rules)?)
}

/// Runs the single-scale baseline and, unless `plan` is `single`, the
/// multiscale plan on a fresh noise draw of `base`.
pub fn run_trial(
    base: &LegendreFamily,
    settings: &MotivatingSettings,
    plan: PlanSpec,
    trial: usize,
    seed: u64,
    snapshot_every: Option<usize>,
) -> Result<TrialOutcome> {
    let family = base.with_seed(seed)?;
    let h = family.hierarchy();
    let scales = h.coarsest_scale();
    let fine_points = h.fine_points();
    let fine = family.problem(1)?;
    let (_, reference) = reference_minimum(&fine, &family.quartic_init(1), 0.0, settings.reference_cap)?;
    let fine_rule = StoppingRule::iterations(settings.fine_cap).with_objective_within(settings.tolerance, reference);
    let pgd = ProjectedGradient::new(settings.step.step_size());
    let model = CostModel::default();
    let mut runs = Vec::with_capacity(2);

    {
        let snap = snapshot_every.map(|n| snapshotter(&pgd, n));
        let update: &dyn UpdateRule = match &snap {
            Some(s) => s,
            None => &pgd,
        };
        let mut x = gaussian_init(fine_points, seed ^ INIT_STREAM);
        fine.constraint.project_in_place(&mut x)?;
        let mut trace = SolveTrace::new();
        let summary = run_in_place(&fine, &mut x, &fine_rule, update, None, &mut trace)?;
        let cost = measured_cost(&trace, fine_points, family.cost_exponent());
        runs.push(MethodRun {
            method: SINGLE.to_string(),
            trace,
            fine_iters: summary.iterations,
            counts: vec![summary.iterations],
            cost_units: cost.units,
            bound_units: summary.iterations as f64,
            final_objective: summary.objective,
            reached_tolerance: summary.stop == StopReason::ObjectiveWithin,
            snapshots: snap.map(|s| s.state.into_inner().unwrap().2).unwrap_or_default(),
        });
    }

    if plan != PlanSpec::Single {
        let rules = plan_rules(plan, settings, scales, fine_rule)?;
        let variant = if matches!(plan, PlanSpec::Lazy(_)) { Variant::Lazy } else { Variant::Greedy };
        let snap = snapshot_every.map(|n| snapshotter(&pgd, n));
        let update: &dyn UpdateRule = match &snap {
            Some(s) => s,
            None => &pgd,
        };
        let init = gaussian_init(h.points(scales), seed ^ INIT_STREAM);
        let out = solve(variant, &family, &rules, &init, update)?;
        let counts: Vec<usize> = out.per_scale.iter().map(|r| r.iterations).collect();
        let used = IterationPlan::from_counts(&counts)?;
        let bound = match variant {
            Variant::Greedy => greedy_cost_bound(&used, &model)?,
            Variant::Lazy => lazy_cost_bound(&used, &model)?,
        };
        let cost = measured_cost(&out.trace, fine_points, family.cost_exponent());
        runs.push(MethodRun {
            method: plan.to_string(),
            fine_iters: out.fine_iterations(),
            counts,
            cost_units: cost.units,
            bound_units: bound,
            final_objective: out.per_scale[0].objective,
            reached_tolerance: out.per_scale[0].stop == StopReason::ObjectiveWithin,
            trace: out.trace,
            snapshots: snap.map(|s| s.state.into_inner().unwrap().2).unwrap_or_default(),
        });
    }
    Ok(TrialOutcome { scales, trial, seed, reference, runs })
}

/// Every trial of every scale count in the configuration.
pub fn run_all(cfg: &BenchConfig) -> Result<Vec<TrialOutcome>> {
    if cfg.jobs > 1 {
        log::warn!("running {} trials at a time; wall-clock comparisons are advisory", cfg.jobs);
    }
    let mut all = Vec::new();
    for s in cfg.scales.iter() {
        let base = base_family(&cfg.motivating, s, cfg.seed)?;
        let items: Vec<usize> = (0..cfg.trials).collect();
        let outcomes = map_ordered(cfg.jobs, items, |t| {
            let snap = if t == 0 { cfg.motivating.snapshot_every } else { None };
            run_trial(&base, &cfg.motivating, cfg.plan, t, cfg.seed.wrapping_add(t as u64), snap)
        });
        for o in outcomes {
            let o = o?;
            for r in &o.runs {
                if !r.reached_tolerance {
                    log::warn!(
                        "S={} trial {} {}: fine scale hit its cap before the tolerance",
                        o.scales,
                        o.trial,
                        r.method
                    );
                }
            }
            log::info!(
                "S={} trial {}: {}",
                o.scales,
                o.trial,
                o.runs.iter().map(|r| format!("{} fine {}", r.method, r.fine_iters)).collect::<Vec<_>>().join(", ")
            );
            all.push(o);
        }
    }
    Ok(all)
}

pub fn timing_rows(outcomes: &[TrialOutcome]) -> Vec<TimingRow> {
    outcomes
        .iter()
        .flat_map(|o| {
            o.runs.iter().map(move |r| TimingRow {
                s: o.scales,
                method: r.method.clone(),
                trial: o.trial,
                millis: r.trace.total_ns() as f64 / 1e6,
                fine_iters: r.fine_iters,
                total_cost_units: r.cost_units,
            })
        })
        .collect()
}

pub fn cost_bound_rows(outcomes: &[TrialOutcome]) -> Vec<CostBoundRow> {
    outcomes
        .iter()
        .flat_map(|o| {
            o.runs.iter().map(move |r| CostBoundRow {
                s: o.scales,
                method: r.method.clone(),
                trial: o.trial,
                measured_units: r.cost_units,
                bound_units: r.bound_units,
            })
        })
        .collect()
}

/// Groups `value(row)` by (S, method), keeping first-appearance method order.
fn grouped(rows: &[TimingRow], value: impl Fn(&TimingRow) -> f64) -> Vec<(usize, String, Vec<f64>)> {
    let mut order: Vec<(usize, String)> = Vec::new();
    let mut groups: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let key = (r.s, r.method.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(value(r));
    }
    order
        .into_iter()
        .map(|k| {
            let v = groups.remove(&k).unwrap();
            (k.0, k.1, v)
        })
        .collect()
}

pub fn percentile_rows(rows: &[TimingRow]) -> Vec<PercentileRow> {
    grouped(rows, |r| r.millis)
        .into_iter()
        .map(|(s, method, v)| PercentileRow {
            s,
            method,
            p5: percentile(&v, 5.0).unwrap(),
            p50: percentile(&v, 50.0).unwrap(),
            p95: percentile(&v, 95.0).unwrap(),
        })
        .collect()
}

/// Median of `value` per (S, method).
pub fn medians(rows: &[TimingRow], value: impl Fn(&TimingRow) -> f64) -> Vec<(usize, String, f64)> {
    grouped(rows, value).into_iter().map(|(s, m, v)| (s, m, percentile(&v, 50.0).unwrap())).collect()
}

/// Writes the timing, percentile, cost-bound, loss-time and (when requested)
/// iterate files. Returns the paths written.
pub fn write_outputs(cfg: &BenchConfig, outcomes: &[TrialOutcome]) -> Result<Vec<PathBuf>> {
    let dir = &cfg.out;
    let mut paths = Vec::new();
    let timing = timing_rows(outcomes);
    paths.push(write_table(dir, "timing", Table::Timing, cfg.format, &timing)?);
    paths.push(write_table(dir, "percentiles", Table::Percentiles, cfg.format, &percentile_rows(&timing))?);
    paths.push(write_table(dir, "cost_bounds", Table::CostBounds, cfg.format, &cost_bound_rows(outcomes))?);

    let largest = cfg.scales.hi;
    let loss: Vec<LossTimeRow> = outcomes
        .iter()
        .filter(|o| o.scales == largest && o.trial == 0)
        .flat_map(|o| o.runs.iter().flat_map(|r| loss_time_rows(&r.method, &r.trace)))
        .collect();
    paths.push(write_table(dir, "loss_time", Table::LossTime, cfg.format, &loss)?);

    for o in outcomes.iter().filter(|o| o.trial == 0) {
        if cfg.motivating.snapshot_every.is_some() {
            for r in &o.runs {
                let stem = if r.method == SINGLE {
                    format!("iterates_single_S{}", o.scales)
                } else {
                    format!("iterates_S{}", o.scales)
                };
                paths.push(write_table(dir, &stem, Table::Iterates, cfg.format, &r.snapshots)?);
            }
        }
        if cfg.format == Format::Json {
            for r in &o.runs {
                let label = if r.method == SINGLE { "single" } else { "multiscale" };
                let path = dir.join(format!("trace_{label}_S{}.json", o.scales));
                write_json(&path, &trace_rows(&r.trace))?;
                paths.push(path);
            }
        }
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> MotivatingSettings {
        MotivatingSettings { reference_cap: 3000, ..Default::default() }
    }

    #[test]
    fn plans_map_to_rules() {
        let s = settings();
        let fine = StoppingRule::iterations(10).with_objective_within(0.05, 1.0);
        let p = plan_rules(PlanSpec::GreedyOnePerCoarse, &s, 4, fine).unwrap();
        assert_eq!(p.scales(), 4);
        assert_eq!(*p.rule(1), fine);
        assert_eq!(p.rule(3).max_iterations, Some(1));
        let p = plan_rules(PlanSpec::Lazy(3), &s, 3, fine).unwrap();
        assert_eq!(p.rule(1).max_iterations, Some(3));
        assert_eq!(p.rule(2).max_iterations, Some(3));
        let p = plan_rules(PlanSpec::ProgressDriven, &s, 3, fine).unwrap();
        assert_eq!(p.rule(2).relative_gradient_below, Some(s.coarse_rel_gradient));
        assert_eq!(plan_rules(PlanSpec::Single, &s, 5, fine).unwrap().scales(), 1);
    }

    #[test]
    fn small_trial_reaches_the_tolerance_within_its_cost_bound() {
        let s = settings();
        let base = base_family(&s, 4, 1).unwrap();
        for plan in [PlanSpec::ProgressDriven, PlanSpec::GreedyUniform(3), PlanSpec::Lazy(4)] {
            let o = run_trial(&base, &s, plan, 0, 1, Some(5)).unwrap();
            assert_eq!(o.runs.len(), 2);
            for r in &o.runs {
                assert!(r.cost_units <= r.bound_units + 1e-9, "{plan}: {} > {}", r.cost_units, r.bound_units);
                assert!(!r.snapshots.is_empty());
            }
            let single = o.run(SINGLE).unwrap();
            assert!(single.reached_tolerance);
            assert!(single.final_objective - o.reference <= s.tolerance * o.reference.abs());
        }
    }

    #[test]
    fn trials_are_deterministic() {
        let s = settings();
        let base = base_family(&s, 4, 3).unwrap();
        let a = run_trial(&base, &s, PlanSpec::ProgressDriven, 0, 8, None).unwrap();
        let b = run_trial(&base, &s, PlanSpec::ProgressDriven, 0, 8, None).unwrap();
        for (x, y) in a.runs.iter().zip(&b.runs) {
            assert_eq!(x.counts, y.counts);
            assert_eq!(x.final_objective, y.final_objective);
        }
    }

    #[test]
    fn percentiles_are_nearest_rank_per_group() {
        let mk = |s, m: &str, t, millis| TimingRow {
            s,
            method: m.into(),
            trial: t,
            millis,
            fine_iters: 0,
            total_cost_units: 0.0,
        };
        let rows = vec![mk(3, "single", 0, 4.0), mk(3, "single", 1, 1.0), mk(3, "single", 2, 2.0), mk(3, "x", 0, 9.0)];
        let p = percentile_rows(&rows);
        assert_eq!(p.len(), 2);
        assert_eq!((p[0].p5, p[0].p50, p[0].p95), (1.0, 2.0, 4.0));
        assert_eq!((p[1].method.as_str(), p[1].p50), ("x", 9.0));
    }
}
