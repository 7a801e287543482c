//! Coarse-to-fine drivers (greedy and lazy), iteration plans and the cost
//! model that prices an iteration at scale `s` relative to the finest scale.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSet;
use crate::error::{ensure_len, Error, Result};
use crate::functions::LipschitzFn;
use crate::grid::{interpolate, ScaleHierarchy};
use crate::solver::{
    run_in_place, Phase, ProblemAtScale, QuadraticObjective, RunSummary, SolveTrace, StoppingRule,
    UpdateRule,
};

/// A continuous problem re-discretized on every grid of a hierarchy.
pub trait ProblemFamily: Send + Sync {
    fn hierarchy(&self) -> ScaleHierarchy;

    fn problem(&self, scale: usize) -> Result<ProblemAtScale>;

    /// Carries an iterate from scale `fine_scale + 1` to `fine_scale`.
    fn interpolate_iterate(&self, coarse: &[f64], _fine_scale: usize) -> Result<Vec<f64>> {
        interpolate(coarse)
    }

    /// Exponent `p` in the per-iteration cost model `C_s = C I_s^p`.
    fn cost_exponent(&self) -> f64 {
        1.0
    }
}

/// Stopping rules per scale; entry `s - 1` governs scale `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationPlan {
    pub per_scale: Vec<StoppingRule>,
}

impl IterationPlan {
    pub fn new(per_scale: Vec<StoppingRule>) -> Result<Self> {
        if per_scale.is_empty() {
            return Err(Error::invalid("a plan needs at least one scale"));
        }
        for r in &per_scale {
            r.validate()?;
        }
        Ok(Self { per_scale })
    }

    /// Fixed iteration counts, `counts[s - 1]` at scale `s`.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        Self::new(counts.iter().map(|&k| StoppingRule::iterations(k)).collect())
    }

    pub fn uniform(scales: usize, rule: StoppingRule) -> Result<Self> {
        Self::new(vec![rule; scales])
    }

    pub fn scales(&self) -> usize {
        self.per_scale.len()
    }

    pub fn rule(&self, scale: usize) -> &StoppingRule {
        &self.per_scale[scale - 1]
    }

    pub fn rule_mut(&mut self, scale: usize) -> &mut StoppingRule {
        &mut self.per_scale[scale - 1]
    }

    /// Iteration caps indexed by scale (`[K_1, ..., K_S]`).
    pub fn counts(&self) -> Result<Vec<usize>> {
        self.per_scale
            .iter()
            .map(|r| {
                r.max_iterations
                    .ok_or_else(|| Error::invalid("plan entry has no iteration cap"))
            })
            .collect()
    }

    /// Iteration caps listed from the coarsest scale down to the finest.
    pub fn counts_coarse_to_fine(&self) -> Result<Vec<usize>> {
        let mut c = self.counts()?;
        c.reverse();
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GreedyVariant {
    /// `ceil(2K/5) - 1` iterations at every scale.
    Uniform,
    /// One iteration at every coarse scale and `K - 2` at the finest.
    OnePerCoarse,
}

/// Greedy plan that costs less than `K` fine-scale iterations.
pub fn greedy_plan(k: usize, variant: GreedyVariant, scales: usize) -> Result<IterationPlan> {
    if k < 3 {
        return Err(Error::invalid(format!("greedy plans need K >= 3, got {k}")));
    }
    if scales == 0 {
        return Err(Error::invalid("a plan needs at least one scale"));
    }
    let counts: Vec<usize> = match variant {
        GreedyVariant::Uniform => vec![(2 * k).div_ceil(5) - 1; scales],
        GreedyVariant::OnePerCoarse => {
            let mut c = vec![1; scales];
            c[0] = k - 2;
            c
        }
    };
    IterationPlan::from_counts(&counts)
}

/// `ceil(4K/5) - 1`, the per-scale count of the lazy plan.
pub fn lazy_per_scale(k: usize) -> Result<usize> {
    if k < 2 {
        return Err(Error::invalid(format!("lazy plans need K >= 2, got {k}")));
    }
    Ok((4 * k).div_ceil(5) - 1)
}

pub fn lazy_plan(k: usize, scales: usize) -> Result<IterationPlan> {
    if scales == 0 {
        return Err(Error::invalid("a plan needs at least one scale"));
    }
    IterationPlan::from_counts(&vec![lazy_per_scale(k)?; scales])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub exponent: f64,
    pub fine_unit_cost: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { exponent: 1.0, fine_unit_cost: 1.0 }
    }
}

impl CostModel {
    pub fn new(exponent: f64, fine_unit_cost: f64) -> Result<Self> {
        if !(exponent >= 1.0) || !(fine_unit_cost > 0.0) {
            return Err(Error::invalid("cost model needs p >= 1 and A > 0"));
        }
        Ok(Self { exponent, fine_unit_cost })
    }
}

/// `A sum_s K_s (3/5)^(s-1)`.
pub fn greedy_cost_bound(plan: &IterationPlan, model: &CostModel) -> Result<f64> {
    let counts = plan.counts()?;
    Ok(model.fine_unit_cost
        * counts
            .iter()
            .enumerate()
            .map(|(i, &k)| k as f64 * 0.6f64.powi(i as i32))
            .sum::<f64>())
}

/// `A (sum_{s<S} 2^-s K_s + 2^-S 3 K_S)`. A single-scale lazy run is plain
/// descent on the fine grid and costs `A K_1`.
pub fn lazy_cost_bound(plan: &IterationPlan, model: &CostModel) -> Result<f64> {
    let counts = plan.counts()?;
    let s_max = counts.len();
    if s_max == 1 {
        return Ok(model.fine_unit_cost * counts[0] as f64);
    }
    let mut total = 0.0;
    for (i, &k) in counts.iter().enumerate() {
        let s = i + 1;
        let w = 0.5f64.powi(s as i32);
        total += if s < s_max { w * k as f64 } else { 3.0 * w * k as f64 };
    }
    Ok(model.fine_unit_cost * total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredCost {
    /// Work in units of one fine-scale iteration.
    pub units: f64,
    pub step_fraction: f64,
    pub interpolate_fraction: f64,
    pub allocate_fraction: f64,
}

/// Sum over applied updates of `(active / I_1)^p`, plus the share of wall time
/// spent in each phase.
pub fn measured_cost(trace: &SolveTrace, fine_points: usize, exponent: f64) -> MeasuredCost {
    let units = trace
        .records
        .iter()
        .filter(|r| r.phase == Phase::Step && r.iter > 0)
        .map(|r| (r.active as f64 / fine_points as f64).powf(exponent))
        .sum();
    let durations = trace.phase_durations();
    let total: u64 = durations.iter().map(|(_, d)| d).sum();
    let frac = |p: Phase| {
        if total == 0 {
            0.0
        } else {
            durations.iter().find(|(q, _)| *q == p).unwrap().1 as f64 / total as f64
        }
    };
    MeasuredCost {
        units,
        step_fraction: frac(Phase::Step),
        interpolate_fraction: frac(Phase::Interpolate),
        allocate_fraction: frac(Phase::Allocate),
    }
}

#[derive(Debug, Clone)]
pub struct MultiscaleOutcome {
    pub x: Vec<f64>,
    pub trace: SolveTrace,
    /// Run summaries indexed by scale (`per_scale[s - 1]`).
    pub per_scale: Vec<RunSummary>,
}

impl MultiscaleOutcome {
    pub fn fine_iterations(&self) -> usize {
        self.per_scale[0].iterations
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Greedy,
    Lazy,
}

/// Greedy driver: every coordinate is optimized at every scale.
pub fn greedy_solve(
    family: &dyn ProblemFamily,
    plan: &IterationPlan,
    init: &[f64],
    update: &dyn UpdateRule,
) -> Result<MultiscaleOutcome> {
    drive(family, plan, init, update, &|_, _| None)
}

/// Lazy driver: below the coarsest scale only the newly inserted midpoints
/// move; interpolated coarse values stay frozen.
pub fn lazy_solve(
    family: &dyn ProblemFamily,
    plan: &IterationPlan,
    init: &[f64],
    update: &dyn UpdateRule,
) -> Result<MultiscaleOutcome> {
    let coarsest = family.hierarchy().coarsest_scale();
    drive(family, plan, init, update, &|scale, n| {
        (scale < coarsest).then(|| (0..n).map(|i| i % 2 == 1).collect())
    })
}

pub fn solve(
    variant: Variant,
    family: &dyn ProblemFamily,
    plan: &IterationPlan,
    init: &[f64],
    update: &dyn UpdateRule,
) -> Result<MultiscaleOutcome> {
    match variant {
        Variant::Greedy => greedy_solve(family, plan, init, update),
        Variant::Lazy => lazy_solve(family, plan, init, update),
    }
}

type MaskFn<'a> = dyn Fn(usize, usize) -> Option<Vec<bool>> + 'a;

fn drive(
    family: &dyn ProblemFamily,
    plan: &IterationPlan,
    init: &[f64],
    update: &dyn UpdateRule,
    mask: &MaskFn<'_>,
) -> Result<MultiscaleOutcome> {
    let h = family.hierarchy();
    let coarsest = h.coarsest_scale();
    if plan.scales() != coarsest {
        return Err(Error::invalid(format!(
            "plan covers {} scales but the hierarchy has {coarsest}",
            plan.scales()
        )));
    }
    let mut trace = SolveTrace::new();
    let mut per_scale = vec![None; coarsest];

    let mut problem = family.problem(coarsest)?;
    let mut x = init.to_vec();
    ensure_len(x.len(), problem.dimension())?;
    problem.constraint.project_in_place(&mut x)?;
    let mut last_objective = problem.objective.value(&x);
    trace.push(coarsest, 0, last_objective, 0.0, Phase::Allocate, x.len());

    for scale in (1..=coarsest).rev() {
        let free = mask(scale, family.hierarchy().points(scale));
        if scale < coarsest {
            problem = family.problem(scale)?;
            trace.push(scale, 0, last_objective, 0.0, Phase::Allocate, x.len());
            x = family.interpolate_iterate(&x, scale)?;
            ensure_len(x.len(), problem.dimension())?;
            match &free {
                Some(m) => problem.constraint.project_conditional(&mut x, m)?,
                None => problem.constraint.project_in_place(&mut x)?,
            }
            trace.push(scale, 0, last_objective, 0.0, Phase::Interpolate, x.len());
        }
        let summary = run_in_place(&problem, &mut x, plan.rule(scale), update, free.as_deref(), &mut trace)?;
        last_objective = summary.objective;
        per_scale[scale - 1] = Some(summary);
    }
    Ok(MultiscaleOutcome {
        x,
        trace,
        per_scale: per_scale.into_iter().map(Option::unwrap).collect(),
    })
}

/// I.i.d. standard normal vector, the coarsest-scale initialization.
pub fn gaussian_init(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Strongly convex quadratic on every scale whose minimizer is the sampled
/// solution function. Curvature lies in `[mu, L]` at every scale, so
/// projected gradient descent has a certified rate.
#[derive(Debug, Clone)]
pub struct QuadraticFamily {
    hierarchy: ScaleHierarchy,
    objectives: Vec<Arc<QuadraticObjective>>,
    solutions: Vec<Vec<f64>>,
    smoothness: f64,
    strong_convexity: f64,
}

impl QuadraticFamily {
    /// `coupled = false` gives diagonal Hessians; otherwise each scale gets a
    /// random orthogonal eigenbasis. Eigenvalues include both `mu` and `L`.
    pub fn random(
        hierarchy: ScaleHierarchy,
        solution: &LipschitzFn,
        mu: f64,
        l: f64,
        coupled: bool,
        seed: u64,
    ) -> Result<Self> {
        if !(mu > 0.0) || !(l >= mu) {
            return Err(Error::invalid("need 0 < mu <= L"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut objectives = Vec::new();
        let mut solutions = Vec::new();
        for s in 1..=hierarchy.coarsest_scale() {
            let grid = hierarchy.grid(s);
            let n = grid.points();
            let mut eig: Vec<f64> = (0..n).map(|_| rng.random_range(mu..=l)).collect();
            eig[0] = mu;
            eig[n - 1] = l;
            let hess = if coupled {
                let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let q = g.qr().q();
                &q * DMatrix::from_diagonal(&DVector::from_vec(eig)) * q.transpose()
            } else {
                DMatrix::from_diagonal(&DVector::from_vec(eig))
            };
            let hess = (&hess + hess.transpose()) * 0.5;
            let xs = solution.sample_on(grid).values().to_vec();
            let lin = &hess * DVector::from_column_slice(&xs);
            objectives.push(Arc::new(QuadraticObjective::new(hess, lin)?));
            solutions.push(xs);
        }
        Ok(Self { hierarchy, objectives, solutions, smoothness: l, strong_convexity: mu })
    }

    /// Exact minimizer at `scale`.
    pub fn solution(&self, scale: usize) -> &[f64] {
        &self.solutions[scale - 1]
    }

    pub fn objective(&self, scale: usize) -> &QuadraticObjective {
        &self.objectives[scale - 1]
    }
}

impl ProblemFamily for QuadraticFamily {
    fn hierarchy(&self) -> ScaleHierarchy {
        self.hierarchy
    }

    fn problem(&self, scale: usize) -> Result<ProblemAtScale> {
        ProblemAtScale::new(
            scale,
            self.objectives[scale - 1].clone(),
            ConstraintSet::Unconstrained,
            self.smoothness,
            self.strong_convexity,
        )
    }
}
