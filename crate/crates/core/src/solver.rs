//! Single-scale iterative solving: objectives, projected gradient steps,
//! stepsize and rate selection, spectral constant estimation, stopping rules
//! and the traced inner loop.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSet;
use crate::error::{ensure_len, Error, Result};

/// A smooth objective on `R^n`.
pub trait Objective: Send + Sync {
    fn dimension(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);

    fn value_and_gradient(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.gradient(x, out);
        self.value(x)
    }
}

/// `0.5 x^T H x - c^T x + offset`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub offset: f64,
}

impl QuadraticObjective {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Result<Self> {
        if !hessian.is_square() {
            return Err(Error::invalid("Hessian must be square"));
        }
        ensure_len(linear.len(), hessian.nrows())?;
        Ok(Self { hessian, linear, offset: 0.0 })
    }

    /// `0.5 ||x - target||^2`.
    pub fn distance_to(target: &[f64]) -> Self {
        let n = target.len();
        let t = DVector::from_column_slice(target);
        Self {
            hessian: DMatrix::identity(n, n),
            offset: 0.5 * t.norm_squared(),
            linear: t,
        }
    }

    /// Unconstrained minimizer by a direct solve.
    pub fn minimizer(&self) -> Result<Vec<f64>> {
        let chol = self
            .hessian
            .clone()
            .cholesky()
            .ok_or_else(|| Error::invalid("Hessian is not positive definite"))?;
        Ok(chol.solve(&self.linear).as_slice().to_vec())
    }
}

impl Objective for QuadraticObjective {
    fn dimension(&self) -> usize {
        self.linear.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        0.5 * x.dot(&(&self.hessian * &x)) - self.linear.dot(&x) + self.offset
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let g = &self.hessian * DVector::from_column_slice(x) - &self.linear;
        out.copy_from_slice(g.as_slice());
    }
}

/// One scale's problem: objective, feasible set and curvature constants.
#[derive(Clone)]
pub struct ProblemAtScale {
    pub scale: usize,
    pub objective: Arc<dyn Objective>,
    pub constraint: ConstraintSet,
    pub smoothness: f64,
    pub strong_convexity: f64,
}

impl std::fmt::Debug for ProblemAtScale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemAtScale")
            .field("scale", &self.scale)
            .field("dimension", &self.dimension())
            .field("constraint", &self.constraint)
            .field("smoothness", &self.smoothness)
            .field("strong_convexity", &self.strong_convexity)
            .finish()
    }
}

impl ProblemAtScale {
    pub fn new(
        scale: usize,
        objective: Arc<dyn Objective>,
        constraint: ConstraintSet,
        smoothness: f64,
        strong_convexity: f64,
    ) -> Result<Self> {
        if !(smoothness > 0.0) || !smoothness.is_finite() {
            return Err(Error::invalid(format!("smoothness must be positive, got {smoothness}")));
        }
        if !(strong_convexity >= 0.0) || strong_convexity > smoothness * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "need 0 <= strong convexity <= smoothness, got {strong_convexity} and {smoothness}"
            )));
        }
        Ok(Self {
            scale,
            objective,
            constraint,
            smoothness,
            strong_convexity: strong_convexity.min(smoothness),
        })
    }

    pub fn dimension(&self) -> usize {
        self.objective.dimension()
    }

    /// Strong convexity with values below the numerical floor treated as zero.
    pub fn effective_strong_convexity(&self) -> Option<f64> {
        (self.strong_convexity >= MU_FLOOR * self.smoothness).then_some(self.strong_convexity)
    }
}

/// Strong convexity below this fraction of the smoothness counts as zero.
pub const MU_FLOOR: f64 = 1e-12;

/// `2 / (L + mu)`, or `1 / L` without usable strong convexity.
pub fn optimal_stepsize(l: f64, mu: f64) -> Result<f64> {
    check_constants(l, mu)?;
    if mu < MU_FLOOR * l {
        Ok(1.0 / l)
    } else {
        Ok(2.0 / (l + mu))
    }
}

/// `(c - 1) / (c + 1)` with `c = L / mu`; `None` without strong convexity.
pub fn convergence_rate(l: f64, mu: f64) -> Result<Option<f64>> {
    check_constants(l, mu)?;
    if mu < MU_FLOOR * l {
        return Ok(None);
    }
    let c = l / mu;
    Ok(Some(((c - 1.0) / (c + 1.0)).max(0.0)))
}

/// `sqrt(1 - 2 alpha L mu / (L + mu))`, the contraction factor of projected
/// gradient descent with stepsize `alpha <= 2 / (L + mu)`.
pub fn rate_at_stepsize(alpha: f64, l: f64, mu: f64) -> Result<Option<f64>> {
    check_constants(l, mu)?;
    if mu < MU_FLOOR * l || !(alpha > 0.0) || alpha > 2.0 / (l + mu) * (1.0 + 1e-15) {
        return Ok(None);
    }
    Ok(Some((1.0 - 2.0 * alpha * l * mu / (l + mu)).max(0.0).sqrt()))
}

fn check_constants(l: f64, mu: f64) -> Result<()> {
    if !(l > 0.0) || !(mu >= 0.0) || mu > l * (1.0 + 1e-12) {
        return Err(Error::invalid(format!("need L > 0 and 0 <= mu <= L, got L={l}, mu={mu}")));
    }
    Ok(())
}

/// Extreme eigenvalues of a symmetric PSD operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub smoothness: f64,
    pub strong_convexity: f64,
    pub converged: bool,
}

const POWER_TOL: f64 = 1e-8;
const POWER_CAP: usize = 10_000;

fn power_iteration(apply: &dyn Fn(&[f64], &mut [f64]), dim: usize, seed: u64) -> (f64, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() + 0.5).collect();
    let mut w = vec![0.0; dim];
    normalize(&mut v);
    let mut rho = 0.0;
    for _ in 0..POWER_CAP {
        apply(&v, &mut w);
        let next = dot(&v, &w);
        let norm = dot(&w, &w).sqrt();
        if norm == 0.0 {
            return (0.0, true);
        }
        v.iter_mut().zip(&w).for_each(|(a, b)| *a = b / norm);
        if (next - rho).abs() <= POWER_TOL * next.abs() {
            return (next, true);
        }
        rho = next;
    }
    (rho, false)
}

/// Largest eigenvalue by power iteration and smallest by power iteration on
/// `L I - H`. A smallest eigenvalue below the estimator's resolution is
/// reported as zero.
pub fn estimate_constants(apply: &dyn Fn(&[f64], &mut [f64]), dim: usize) -> SpectralEstimate {
    let (l, c1) = power_iteration(apply, dim, 0x5eed);
    if l <= 0.0 {
        return SpectralEstimate { smoothness: 0.0, strong_convexity: 0.0, converged: c1 };
    }
    let shifted = |x: &[f64], out: &mut [f64]| {
        apply(x, out);
        out.iter_mut().zip(x).for_each(|(o, xi)| *o = l * xi - *o);
    };
    let (top, c2) = power_iteration(&shifted, dim, 0x5eed + 1);
    let mut mu = (l - top).max(0.0);
    if mu < 10.0 * POWER_TOL * l {
        mu = 0.0;
    }
    SpectralEstimate { smoothness: l, strong_convexity: mu.min(l), converged: c1 && c2 }
}

/// Exact extreme eigenvalues of a dense symmetric matrix.
pub fn exact_constants(h: &DMatrix<f64>) -> SpectralEstimate {
    let eig = h.clone().symmetric_eigen();
    let l = eig.eigenvalues.max();
    let mu = eig.eigenvalues.min().max(0.0);
    SpectralEstimate { smoothness: l, strong_convexity: mu, converged: true }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `P(x - alpha grad f(x))`.
pub fn pgd_step(p: &ProblemAtScale, x: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("stepsize must be positive, got {alpha}")));
    }
    ensure_len(x.len(), p.dimension())?;
    let mut g = vec![0.0; x.len()];
    p.objective.gradient(x, &mut g);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure {
            scale: p.scale,
            iteration: 0,
            reason: "non-finite gradient".into(),
            snapshot: x.to_vec(),
        });
    }
    let y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - alpha * b).collect();
    p.constraint.project(&y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Objective at the iterate the step started from.
    pub objective: f64,
    /// Norm of the gradient mapping `(x - x') / alpha` over the updated coordinates.
    pub grad_norm: f64,
}

/// One iteration of a method with iterate convergence.
pub trait UpdateRule: Send + Sync {
    /// Computes the next iterate into `next` from `x`. Coordinates with
    /// `free[i] == false` must be copied unchanged.
    fn apply(
        &self,
        p: &ProblemAtScale,
        x: &[f64],
        free: Option<&[bool]>,
        next: &mut [f64],
        scratch: &mut Vec<f64>,
    ) -> Result<StepInfo>;

    /// Contraction factor of the iterates, when known.
    fn rate(&self, p: &ProblemAtScale) -> Option<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepSize {
    /// `2 / (L + mu)`, falling back to `1 / L` when `mu` is zero.
    Optimal,
    InverseSmoothness,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedGradient {
    pub step: StepSize,
}

impl Default for ProjectedGradient {
    fn default() -> Self {
        Self { step: StepSize::Optimal }
    }
}

impl ProjectedGradient {
    pub fn new(step: StepSize) -> Self {
        Self { step }
    }

    pub fn stepsize(&self, p: &ProblemAtScale) -> f64 {
        match self.step {
            StepSize::Optimal => {
                optimal_stepsize(p.smoothness, p.strong_convexity).unwrap_or(1.0 / p.smoothness)
            }
            StepSize::InverseSmoothness => 1.0 / p.smoothness,
            StepSize::Fixed(a) => a,
        }
    }
}

impl UpdateRule for ProjectedGradient {
    fn apply(
        &self,
        p: &ProblemAtScale,
        x: &[f64],
        free: Option<&[bool]>,
        next: &mut [f64],
        grad: &mut Vec<f64>,
    ) -> Result<StepInfo> {
        let alpha = self.stepsize(p);
        grad.resize(x.len(), 0.0);
        let objective = p.objective.value_and_gradient(x, grad);
        if !objective.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure {
                scale: p.scale,
                iteration: 0,
                reason: "non-finite objective or gradient".into(),
                snapshot: x.to_vec(),
            });
        }
        match free {
            None => {
                for ((n, xi), gi) in next.iter_mut().zip(x).zip(grad.iter()) {
                    *n = xi - alpha * gi;
                }
                p.constraint.project_in_place(next)?;
            }
            Some(mask) => {
                for (((n, xi), gi), &f) in next.iter_mut().zip(x).zip(grad.iter()).zip(mask) {
                    *n = if f { xi - alpha * gi } else { *xi };
                }
                p.constraint.project_conditional(next, mask)?;
            }
        }
        let grad_norm = distance(x, next) / alpha;
        Ok(StepInfo { objective, grad_norm })
    }

    fn rate(&self, p: &ProblemAtScale) -> Option<f64> {
        let (l, mu) = (p.smoothness, p.strong_convexity);
        match self.step {
            StepSize::Optimal => convergence_rate(l, mu).ok().flatten(),
            StepSize::InverseSmoothness => rate_at_stepsize(1.0 / l, l, mu).ok().flatten(),
            StepSize::Fixed(a) => rate_at_stepsize(a, l, mu).ok().flatten(),
        }
    }
}

/// When to stop iterating at one scale. Criteria combine with "or".
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StoppingRule {
    pub max_iterations: Option<usize>,
    pub objective_below: Option<f64>,
    pub gradient_norm_below: Option<f64>,
    /// `(tol, reference)`: stop once `f(x) - reference <= tol * |reference|`.
    pub objective_within_factor_of: Option<(f64, f64)>,
    /// Stop once the gradient mapping falls below this fraction of its value
    /// at the first iterate of the scale.
    pub relative_gradient_below: Option<f64>,
}

impl StoppingRule {
    pub fn iterations(k: usize) -> Self {
        Self { max_iterations: Some(k), ..Self::default() }
    }

    pub fn with_max_iterations(mut self, k: usize) -> Self {
        self.max_iterations = Some(k);
        self
    }

    pub fn with_objective_within(mut self, tol: f64, reference: f64) -> Self {
        self.objective_within_factor_of = Some((tol, reference));
        self
    }

    pub fn with_gradient_norm_below(mut self, tol: f64) -> Self {
        self.gradient_norm_below = Some(tol);
        self
    }

    pub fn with_relative_gradient_below(mut self, tol: f64) -> Self {
        self.relative_gradient_below = Some(tol);
        self
    }

    pub fn with_objective_below(mut self, v: f64) -> Self {
        self.objective_below = Some(v);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let any = self.max_iterations.is_some()
            || self.objective_below.is_some()
            || self.gradient_norm_below.is_some()
            || self.objective_within_factor_of.is_some()
            || self.relative_gradient_below.is_some();
        if !any {
            return Err(Error::invalid("stopping rule has no criterion set"));
        }
        if let Some((tol, _)) = self.objective_within_factor_of {
            if !(tol > 0.0) {
                return Err(Error::invalid("objective factor must be positive"));
            }
        }
        Ok(())
    }

    fn reason(&self, k: usize, objective: f64, grad_norm: f64, first_grad: f64) -> Option<StopReason> {
        if let Some((tol, reference)) = self.objective_within_factor_of {
            if objective - reference <= tol * reference.abs() {
                return Some(StopReason::ObjectiveWithin);
            }
        }
        if self.objective_below.is_some_and(|v| objective < v) {
            return Some(StopReason::ObjectiveBelow);
        }
        if self.gradient_norm_below.is_some_and(|v| grad_norm < v) {
            return Some(StopReason::GradientBelow);
        }
        if self
            .relative_gradient_below
            .is_some_and(|v| k > 0 && grad_norm <= v * first_grad)
        {
            return Some(StopReason::RelativeGradientBelow);
        }
        if self.max_iterations.is_some_and(|m| k >= m) {
            return Some(StopReason::MaxIterations);
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    ObjectiveBelow,
    GradientBelow,
    ObjectiveWithin,
    RelativeGradientBelow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Step,
    Interpolate,
    Allocate,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Step => "step",
            Phase::Interpolate => "interpolate",
            Phase::Allocate => "allocate",
        }
    }
}

/// One row of a trace. `t_ns` is measured from the start of the solve; the
/// time since the previous record is attributed to this record's phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub scale: usize,
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub t_ns: u64,
    pub phase: Phase,
    /// Number of coordinates the update touched (all of them for step
    /// records of a greedy solve).
    #[serde(skip)]
    pub active: usize,
}

#[derive(Debug, Clone)]
pub struct SolveTrace {
    origin: Instant,
    pub records: Vec<TraceRecord>,
}

impl Default for SolveTrace {
    fn default() -> Self {
        Self::new()
    }
}

impl SolveTrace {
    pub fn new() -> Self {
        Self { origin: Instant::now(), records: Vec::new() }
    }

    pub fn elapsed_ns(&self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }

    pub fn push(&mut self, scale: usize, iter: usize, objective: f64, grad_norm: f64, phase: Phase, active: usize) {
        let t_ns = self.elapsed_ns();
        self.records.push(TraceRecord { scale, iter, objective, grad_norm, t_ns, phase, active });
    }

    /// Step records at `scale` beyond the initial state, i.e. updates applied.
    pub fn steps_at(&self, scale: usize) -> usize {
        self.records
            .iter()
            .filter(|r| r.phase == Phase::Step && r.scale == scale && r.iter > 0)
            .count()
    }

    pub fn total_ns(&self) -> u64 {
        self.records.last().map_or(0, |r| r.t_ns)
    }

    /// Nanoseconds attributed to each phase.
    pub fn phase_durations(&self) -> [(Phase, u64); 3] {
        let mut out = [(Phase::Step, 0), (Phase::Interpolate, 0), (Phase::Allocate, 0)];
        let mut prev = 0;
        for r in &self.records {
            let d = r.t_ns.saturating_sub(prev);
            prev = r.t_ns;
            let slot = out.iter_mut().find(|(p, _)| *p == r.phase).unwrap();
            slot.1 += d;
        }
        out
    }

    pub fn last_objective(&self) -> Option<f64> {
        self.records.last().map(|r| r.objective)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub stop: StopReason,
}

/// Runs `update` from `x0` until `rule` fires.
pub fn run(
    p: &ProblemAtScale,
    x0: &[f64],
    rule: &StoppingRule,
    update: &dyn UpdateRule,
) -> Result<(Vec<f64>, SolveTrace)> {
    let mut x = x0.to_vec();
    p.constraint.project_in_place(&mut x)?;
    let mut trace = SolveTrace::new();
    run_in_place(p, &mut x, rule, update, None, &mut trace)?;
    Ok((x, trace))
}

/// The traced inner loop. Starts from `x` as given (callers project it) and
/// records `(k, f(x^k), gradient mapping)` for every visited iterate.
pub fn run_in_place(
    p: &ProblemAtScale,
    x: &mut Vec<f64>,
    rule: &StoppingRule,
    update: &dyn UpdateRule,
    free: Option<&[bool]>,
    trace: &mut SolveTrace,
) -> Result<RunSummary> {
    rule.validate()?;
    ensure_len(x.len(), p.dimension())?;
    if let Some(mask) = free {
        ensure_len(mask.len(), x.len())?;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial iterate is not finite"));
    }
    let active = free.map_or(x.len(), |m| m.iter().filter(|&&f| f).count());
    let mut next = vec![0.0; x.len()];
    let mut scratch = Vec::with_capacity(x.len());
    let mut first_grad = 0.0;
    let mut k = 0;
    loop {
        let info = update.apply(p, x, free, &mut next, &mut scratch).map_err(|e| match e {
            Error::NumericFailure { reason, snapshot, .. } => Error::NumericFailure {
                scale: p.scale,
                iteration: k,
                reason,
                snapshot,
            },
            other => other,
        })?;
        if k == 0 {
            first_grad = info.grad_norm;
        }
        trace.push(p.scale, k, info.objective, info.grad_norm, Phase::Step, active);
        if let Some(stop) = rule.reason(k, info.objective, info.grad_norm, first_grad) {
            return Ok(RunSummary { iterations: k, objective: info.objective, grad_norm: info.grad_norm, stop });
        }
        std::mem::swap(x, &mut next);
        k += 1;
    }
}

/// Accelerated projected gradient with adaptive restart, used only to compute
/// reference optima for stopping rules. Stops after `cap` iterations or once
/// the gradient mapping drops below `tol`.
pub fn reference_minimum(p: &ProblemAtScale, x0: &[f64], tol: f64, cap: usize) -> Result<(Vec<f64>, f64)> {
    let n = p.dimension();
    ensure_len(x0.len(), n)?;
    let alpha = 1.0 / p.smoothness;
    let mut x = p.constraint.project(x0)?;
    let mut y = x.clone();
    let mut g = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut t = 1.0f64;
    let mut best = (x.clone(), p.objective.value(&x));
    let mut last = best.1;
    for _ in 0..cap {
        p.objective.gradient(&y, &mut g);
        for i in 0..n {
            next[i] = y[i] - alpha * g[i];
        }
        p.constraint.project_in_place(&mut next)?;
        let gm = distance(&y, &next) / alpha;
        let f_next = p.objective.value(&next);
        if !f_next.is_finite() {
            return Err(Error::NumericFailure {
                scale: p.scale,
                iteration: 0,
                reason: "non-finite objective in reference solve".into(),
                snapshot: y.clone(),
            });
        }
        if f_next < best.1 {
            best = (next.clone(), f_next);
        }
        if gm < tol {
            break;
        }
        if f_next > last {
            // Restart momentum when the objective goes up.
            t = 1.0;
            y.copy_from_slice(&x);
            last = p.objective.value(&x);
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        for i in 0..n {
            y[i] = next[i] + beta * (next[i] - x[i]);
        }
        std::mem::swap(&mut x, &mut next);
        t = t_next;
        last = f_next;
    }
    Ok(best)
}

/// Largest relative discrepancy between the analytic gradient and central
/// differences at `x`, over all coordinates.
pub fn gradient_check(obj: &dyn Objective, x: &[f64], h: f64) -> f64 {
    let n = x.len();
    let mut g = vec![0.0; n];
    obj.gradient(x, &mut g);
    let mut xp = x.to_vec();
    let mut fd = vec![0.0; n];
    for i in 0..n {
        let orig = xp[i];
        let step = h * (1.0 + orig.abs());
        xp[i] = orig + step;
        let fp = obj.value(&xp);
        xp[i] = orig - step;
        let fm = obj.value(&xp);
        xp[i] = orig;
        fd[i] = (fp - fm) / (2.0 * step);
    }
    let scale = norm(&g).max(norm(&fd)).max(1e-300);
    distance(&g, &fd) / scale
}
