//! Tucker-1 factorization `Y ~ B x_1 A` with simplex-constrained factors, by
//! alternating projected gradient steps, on one grid or coarse-to-fine over
//! the continuous modes of `Y`.
//!
//! Tensors are row-major with the mixture index first, so the mode-1
//! unfolding of a tensor with dims `(I, K_1, ..., K_N)` is its value buffer
//! read as an `I x n` row-major matrix with `n = K_1 ... K_N`.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constraints::project_scaled_simplex_in_place;
use crate::error::{ensure_len, Error, Result};
use crate::grid::{coarsen_tensor, dyadic_exponent, interpolate_tensor};
use crate::parallel::{Execution, CHUNK};
use crate::solver::{Objective, Phase, SolveTrace};
use crate::tensor::DenseTensor;

/// Mixing matrix `A` (`I x R`, row-major) and core tensor `B` with dims `(R, K_1, ..., K_N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tucker1Factors {
    pub a: Vec<f64>,
    pub rows: usize,
    pub b: DenseTensor,
}

impl Tucker1Factors {
    pub fn new(a: Vec<f64>, rows: usize, b: DenseTensor) -> Result<Self> {
        if b.ndim() < 2 {
            return Err(Error::invalid("core tensor needs at least two modes"));
        }
        ensure_len(a.len(), rows * b.dims()[0])?;
        Ok(Self { a, rows, b })
    }

    pub fn rank(&self) -> usize {
        self.b.dims()[0]
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.rank(), &self.a)
    }

    pub fn model(&self) -> DenseTensor {
        mode1_product_raw(&self.b, &self.a, self.rows, Execution::default())
    }
}

/// `Y[i, k...] = sum_r A[i, r] B[r, k...]`.
pub fn mode1_product(b: &DenseTensor, a: &DMatrix<f64>) -> Result<DenseTensor> {
    if b.ndim() < 2 {
        return Err(Error::invalid("core tensor needs at least two modes"));
    }
    if a.ncols() != b.dims()[0] {
        return Err(Error::invalid(format!(
            "mixing matrix has {} columns but the core has {} slices",
            a.ncols(),
            b.dims()[0]
        )));
    }
    let rows = a.nrows();
    let flat: Vec<f64> = (0..rows).flat_map(|i| a.row(i).iter().copied().collect::<Vec<_>>()).collect();
    Ok(mode1_product_raw(b, &flat, rows, Execution::default()))
}

fn mode1_product_raw(b: &DenseTensor, a: &[f64], rows: usize, exec: Execution) -> DenseTensor {
    let rank = b.dims()[0];
    let n = b.slice_len();
    let bv = b.values();
    let mut out = vec![0.0; rows * n];
    for i in 0..rows {
        let row = &mut out[i * n..(i + 1) * n];
        exec.for_each_chunk_mut(row, CHUNK, |c, chunk| {
            let start = c * CHUNK;
            for (kk, v) in chunk.iter_mut().enumerate() {
                let k = start + kk;
                *v = (0..rank).map(|r| a[i * rank + r] * bv[r * n + k]).sum();
            }
        });
    }
    let mut dims = b.dims().to_vec();
    dims[0] = rows;
    DenseTensor::new(dims, out).expect("shape follows the inputs")
}

/// Feasible set for the core tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoreConstraint {
    /// Every slice `B[r, ...]` on the simplex with the scale's target mass.
    Slice,
    /// Every last-mode fibre `B[r, j, :]` on the simplex.
    Fibre,
    /// Nonnegative, then rescaled so last-mode fibre sums average to the target.
    /// The rescaling is not a Euclidean projection, so a core half-step can
    /// increase the objective.
    AverageFibre,
    Nonnegative,
}

/// Feasible set for the mixing matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixingConstraint {
    RowSimplex,
    Nonnegative,
}

fn fibre_len(b: &DenseTensor) -> usize {
    *b.dims().last().expect("at least two modes")
}

fn apply_core_constraint(b: &mut DenseTensor, c: CoreConstraint, target: f64, exec: Execution) -> Result<()> {
    match c {
        CoreConstraint::Slice => {
            let n = b.slice_len();
            let vals = b.values_mut();
            exec.for_each_chunk_mut(vals, n, |_, slice| {
                project_scaled_simplex_in_place(slice, target).expect("positive target");
            });
        }
        CoreConstraint::Fibre => {
            let k = fibre_len(b);
            exec.for_each_chunk_mut(b.values_mut(), k, |_, fibre| {
                project_scaled_simplex_in_place(fibre, target).expect("positive target");
            });
        }
        CoreConstraint::AverageFibre => {
            let k = fibre_len(b);
            let vals = b.values_mut();
            vals.iter_mut().for_each(|v| *v = v.max(0.0));
            let fibres = vals.len() / k;
            let mean = vals.iter().sum::<f64>() / fibres as f64;
            if mean > 0.0 {
                let s = target / mean;
                vals.iter_mut().for_each(|v| *v *= s);
            }
        }
        CoreConstraint::Nonnegative => b.values_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
    }
    Ok(())
}

/// Applies a separable core constraint to the single slice `B[r, ...]`.
fn apply_slice_constraint(slice: &mut [f64], c: CoreConstraint, target: f64, fibre: usize) {
    match c {
        CoreConstraint::Slice => project_scaled_simplex_in_place(slice, target).expect("positive target"),
        CoreConstraint::Fibre => {
            for f in slice.chunks_mut(fibre) {
                project_scaled_simplex_in_place(f, target).expect("positive target");
            }
        }
        CoreConstraint::Nonnegative => slice.iter_mut().for_each(|v| *v = v.max(0.0)),
        CoreConstraint::AverageFibre => unreachable!("average fibre constraint is not separable"),
    }
}

fn core_violation(b: &DenseTensor, c: CoreConstraint, target: f64) -> f64 {
    let neg = -b.min_value().min(0.0);
    let sums = |len: usize| -> Vec<f64> { b.values().chunks(len).map(|s| s.iter().sum()).collect() };
    let dev = match c {
        CoreConstraint::Slice => sums(b.slice_len()).iter().map(|s| (s - target).abs()).fold(0.0, f64::max),
        CoreConstraint::Fibre => sums(fibre_len(b)).iter().map(|s| (s - target).abs()).fold(0.0, f64::max),
        CoreConstraint::AverageFibre => {
            let s = sums(fibre_len(b));
            (s.iter().sum::<f64>() / s.len() as f64 - target).abs()
        }
        CoreConstraint::Nonnegative => 0.0,
    };
    neg.max(dev)
}

fn apply_mixing_constraint(a: &mut [f64], rank: usize, c: MixingConstraint) {
    match c {
        MixingConstraint::RowSimplex => {
            for row in a.chunks_mut(rank) {
                project_scaled_simplex_in_place(row, 1.0).expect("unit target");
            }
        }
        MixingConstraint::Nonnegative => a.iter_mut().for_each(|v| *v = v.max(0.0)),
    }
}

fn mixing_violation(a: &[f64], rank: usize, c: MixingConstraint) -> f64 {
    let neg = -a.iter().copied().fold(0.0, f64::min);
    match c {
        MixingConstraint::RowSimplex => a
            .chunks(rank)
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(neg, f64::max),
        MixingConstraint::Nonnegative => neg,
    }
}

/// Stopping rules and constraint choices for a factorization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizeOptions {
    pub rank: usize,
    pub max_iterations: usize,
    /// Iteration cap at the scales coarser than the finest in
    /// [`multiscale_factorize`]. Defaults to `max_iterations`.
    #[serde(default)]
    pub coarse_max_iterations: Option<usize>,
    /// Ignore the tolerances at coarse scales and always run
    /// `coarse_max_iterations` there.
    #[serde(default)]
    pub coarse_fixed: bool,
    /// Stop once `||model - Y||_F / ||Y||_F` is at most this.
    pub rel_error_tol: Option<f64>,
    /// Stop once the mean relative error is at most this.
    pub mean_rel_error_tol: Option<f64>,
    /// Stop once `1/2 ||model - Y||_F^2` is at most this.
    pub objective_tol: Option<f64>,
    /// Entries of `Y` at or below this are left out of the mean relative
    /// error. Defaults to `1e-8 max(Y)`.
    pub mean_rel_floor: Option<f64>,
    pub core: CoreConstraint,
    pub mixing: MixingConstraint,
    /// Target mass of the core constraint at the finest scale.
    pub core_target: f64,
    /// Update the core one slice `B[r, ...]` at a time, each with its own
    /// step `1 / (A^T A)[r, r]`. Ignored for `AverageFibre`, whose rescaling
    /// couples the slices.
    #[serde(default)]
    pub subblock_updates: bool,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for FactorizeOptions {
    fn default() -> Self {
        Self {
            rank: 1,
            max_iterations: 500,
            coarse_max_iterations: None,
            coarse_fixed: false,
            rel_error_tol: None,
            mean_rel_error_tol: None,
            objective_tol: None,
            mean_rel_floor: None,
            core: CoreConstraint::Slice,
            mixing: MixingConstraint::RowSimplex,
            core_target: 1.0,
            subblock_updates: false,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl FactorizeOptions {
    fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::invalid("rank must be at least 1"));
        }
        if !(self.core_target > 0.0) || !self.core_target.is_finite() {
            return Err(Error::invalid("core target must be positive"));
        }
        for (name, v) in [
            ("relative error tolerance", self.rel_error_tol),
            ("mean relative error tolerance", self.mean_rel_error_tol),
            ("objective tolerance", self.objective_tol),
            ("mean relative error floor", self.mean_rel_floor),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::invalid(format!("{name} must be nonnegative, got {v}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuckerStop {
    RelativeError,
    MeanRelativeError,
    Objective,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct FactorizeReport {
    pub factors: Tucker1Factors,
    pub trace: SolveTrace,
    /// `(scale, f)` after every half-step, starting from the initial point of
    /// each scale: `f(A^0, B^0), f(A^1, B^0), f(A^1, B^1), ...`.
    pub half_steps: Vec<(usize, f64)>,
    /// Largest constraint violation over every iterate visited.
    pub max_violation: f64,
    pub iterations: usize,
    pub stop: TuckerStop,
    pub rel_error: f64,
    pub mean_rel_error: f64,
}

impl FactorizeReport {
    /// Largest increase of the objective over a single half-step.
    pub fn max_increase(&self) -> f64 {
        self.half_steps
            .windows(2)
            .filter(|w| w[0].0 == w[1].0)
            .map(|w| w[1].1 - w[0].1)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Default floor for the mean relative error.
pub fn default_floor(y: &DenseTensor) -> f64 {
    1e-8 * y.max_value()
}

/// `||model - Y||_F / ||Y||_F`.
pub fn rel_error(y: &DenseTensor, factors: &Tucker1Factors) -> Result<f64> {
    let model = factors.model();
    ensure_len(model.len(), y.len())?;
    let ny = y.frobenius_norm();
    if ny == 0.0 {
        return Err(Error::UndefinedMetric("data tensor is zero".into()));
    }
    let diff: f64 = model.values().iter().zip(y.values()).map(|(m, v)| (m - v).powi(2)).sum();
    Ok(diff.sqrt() / ny)
}

/// Mean of `|model - Y| / Y` over entries with `Y > floor`.
pub fn mean_rel_error(y: &DenseTensor, factors: &Tucker1Factors, floor: f64) -> Result<f64> {
    let model = factors.model();
    ensure_len(model.len(), y.len())?;
    let (sum, count) = model
        .values()
        .iter()
        .zip(y.values())
        .filter(|(_, &v)| v > floor)
        .fold((0.0, 0usize), |(s, c), (m, v)| (s + (m - v).abs() / v, c + 1));
    if count == 0 {
        return Err(Error::UndefinedMetric(format!("no entries above the floor {floor}")));
    }
    Ok(sum / count as f64)
}

fn largest_eigenvalue(gram: DMatrix<f64>) -> f64 {
    gram.symmetric_eigen().eigenvalues.max().max(0.0)
}

/// Working state of one scale's solve.
struct Bcd<'a> {
    y: &'a [f64],
    rows: usize,
    rank: usize,
    n: usize,
    exec: Execution,
    /// Residual `model - Y`, stored `n x I` (entry `(k, i)` at `k * I + i`).
    res: Vec<f64>,
}

struct ResidualStats {
    objective: f64,
    rel_error: f64,
    mean_rel_error: f64,
}

impl<'a> Bcd<'a> {
    fn residual(&mut self, a: &[f64], b: &[f64]) {
        let (rows, rank, n, y) = (self.rows, self.rank, self.n, self.y);
        self.exec.for_each_chunk_mut(&mut self.res, CHUNK * rows, |c, chunk| {
            let start = c * CHUNK;
            for (kk, col) in chunk.chunks_mut(rows).enumerate() {
                let k = start + kk;
                for (i, out) in col.iter_mut().enumerate() {
                    let mut m = 0.0;
                    for r in 0..rank {
                        m += a[i * rank + r] * b[r * n + k];
                    }
                    *out = m - y[i * n + k];
                }
            }
        });
    }

    fn objective(&self) -> f64 {
        let res = &self.res;
        0.5 * self.exec.sum_range(res.len(), |j| res[j] * res[j])
    }

    fn stats(&self, y_norm: f64, floor: f64) -> ResidualStats {
        let (rows, n, y, res) = (self.rows, self.n, self.y, &self.res);
        let objective = self.objective();
        let rel_sum = self.exec.sum_range(n, |k| {
            (0..rows)
                .filter(|&i| y[i * n + k] > floor)
                .map(|i| res[k * rows + i].abs() / y[i * n + k])
                .sum()
        });
        let count = self.exec.sum_range(n, |k| (0..rows).filter(|&i| y[i * n + k] > floor).count() as f64);
        ResidualStats {
            objective,
            rel_error: (2.0 * objective).sqrt() / y_norm,
            mean_rel_error: if count > 0.0 { rel_sum / count } else { f64::NAN },
        }
    }

    /// `res * B^T`, the gradient with respect to `A`.
    fn grad_a(&self, b: &[f64]) -> Vec<f64> {
        let (rows, rank, n, res) = (self.rows, self.rank, self.n, &self.res);
        let chunks = n.div_ceil(CHUNK);
        let partial = self.exec.map_range(chunks, |c| {
            let mut g = vec![0.0; rows * rank];
            for k in c * CHUNK..((c + 1) * CHUNK).min(n) {
                for i in 0..rows {
                    let e = res[k * rows + i];
                    for r in 0..rank {
                        g[i * rank + r] += e * b[r * n + k];
                    }
                }
            }
            g
        });
        let mut g = vec![0.0; rows * rank];
        for p in partial {
            g.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        g
    }

    /// `B <- B - (A^T res) / L` in place.
    fn step_b(&self, a: &[f64], b: &mut [f64], l: f64) {
        let (rows, rank, n, res) = (self.rows, self.rank, self.n, &self.res);
        for r in 0..rank {
            self.exec.for_each_chunk_mut(&mut b[r * n..(r + 1) * n], CHUNK, |c, chunk| {
                let start = c * CHUNK;
                for (kk, v) in chunk.iter_mut().enumerate() {
                    let k = start + kk;
                    let g: f64 = (0..rows).map(|i| a[i * rank + r] * res[k * rows + i]).sum();
                    *v -= g / l;
                }
            });
        }
    }

    /// One projected step on slice `r` of the core with step `1 / L_r`,
    /// then the residual is updated for the change.
    fn step_slice(&mut self, a: &[f64], b: &mut [f64], r: usize, c: CoreConstraint, target: f64, fibre: usize) {
        let (rows, rank, n) = (self.rows, self.rank, self.n);
        let l: f64 = (0..rows).map(|i| a[i * rank + r].powi(2)).sum();
        if l == 0.0 {
            return;
        }
        let slice = &mut b[r * n..(r + 1) * n];
        let old = slice.to_vec();
        let res = &self.res;
        self.exec.for_each_chunk_mut(slice, CHUNK, |ch, chunk| {
            let start = ch * CHUNK;
            for (kk, v) in chunk.iter_mut().enumerate() {
                let k = start + kk;
                let g: f64 = (0..rows).map(|i| a[i * rank + r] * res[k * rows + i]).sum();
                *v -= g / l;
            }
        });
        apply_slice_constraint(slice, c, target, fibre);
        let slice = &b[r * n..(r + 1) * n];
        self.exec.for_each_chunk_mut(&mut self.res, CHUNK * rows, |ch, chunk| {
            let start = ch * CHUNK;
            for (kk, col) in chunk.chunks_mut(rows).enumerate() {
                let d = slice[start + kk] - old[start + kk];
                if d != 0.0 {
                    for (i, out) in col.iter_mut().enumerate() {
                        *out += a[i * rank + r] * d;
                    }
                }
            }
        });
    }

    fn gram_b(&self, b: &[f64]) -> DMatrix<f64> {
        let (rank, n) = (self.rank, self.n);
        DMatrix::from_fn(rank, rank, |p, q| self.exec.sum_range(n, |k| b[p * n + k] * b[q * n + k]))
    }
}

fn gram_a(a: &[f64], rows: usize, rank: usize) -> DMatrix<f64> {
    let m = DMatrix::from_row_slice(rows, rank, a);
    m.tr_mul(&m)
}

/// Uniform(0, 1) factors projected onto the constraint sets.
pub fn random_factors(
    y_dims: &[usize],
    opts: &FactorizeOptions,
    target: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Tucker1Factors> {
    let rows = y_dims[0];
    let mut a: Vec<f64> = (0..rows * opts.rank).map(|_| rng.random::<f64>()).collect();
    apply_mixing_constraint(&mut a, opts.rank, opts.mixing);
    let mut dims = y_dims.to_vec();
    dims[0] = opts.rank;
    let len: usize = dims.iter().product();
    let mut b = DenseTensor::new(dims, (0..len).map(|_| rng.random::<f64>()).collect())?;
    apply_core_constraint(&mut b, opts.core, target, opts.execution)?;
    Tucker1Factors::new(a, rows, b)
}

fn check_data(y: &DenseTensor) -> Result<()> {
    if y.ndim() < 2 {
        return Err(Error::invalid("data tensor needs at least two modes"));
    }
    if y.values().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("data tensor must be finite and nonnegative"));
    }
    if y.frobenius_norm() == 0.0 {
        return Err(Error::UndefinedMetric("data tensor is zero".into()));
    }
    Ok(())
}

/// `1/2 ||B x_1 A - Y||_F^2` as a function of the stacked vector
/// `[vec(A); vec(B)]`, for gradient audits.
#[derive(Debug, Clone)]
pub struct Tucker1Objective {
    y: DenseTensor,
    rank: usize,
    exec: Execution,
}

impl Tucker1Objective {
    pub fn new(y: DenseTensor, rank: usize) -> Result<Self> {
        check_data(&y)?;
        if rank == 0 {
            return Err(Error::invalid("rank must be at least 1"));
        }
        Ok(Self { y, rank, exec: Execution::Sequential })
    }

    /// Number of entries of `A` at the front of the stacked vector.
    pub fn mixing_len(&self) -> usize {
        self.y.dims()[0] * self.rank
    }

    fn state(&self, x: &[f64]) -> Bcd<'_> {
        let (a, b) = x.split_at(self.mixing_len());
        let rows = self.y.dims()[0];
        let n = self.y.slice_len();
        let mut st = Bcd { y: self.y.values(), rows, rank: self.rank, n, exec: self.exec, res: vec![0.0; rows * n] };
        st.residual(a, b);
        st
    }
}

impl Objective for Tucker1Objective {
    fn dimension(&self) -> usize {
        self.mixing_len() + self.rank * self.y.slice_len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.state(x).objective()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let st = self.state(x);
        let (a, b) = x.split_at(self.mixing_len());
        let (ga, gb) = out.split_at_mut(self.mixing_len());
        ga.copy_from_slice(&st.grad_a(b));
        let (rows, rank, n) = (st.rows, st.rank, st.n);
        for r in 0..rank {
            for k in 0..n {
                gb[r * n + k] = (0..rows).map(|i| a[i * rank + r] * st.res[k * rows + i]).sum();
            }
        }
    }
}

/// Alternating projected gradient on `1/2 ||B x_1 A - Y||_F^2` from random
/// feasible factors.
pub fn bcd_factorize(y: &DenseTensor, opts: &FactorizeOptions) -> Result<FactorizeReport> {
    opts.validate()?;
    check_data(y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let init = random_factors(y.dims(), opts, opts.core_target, &mut rng)?;
    let mut report = FactorizeReport {
        factors: init,
        trace: SolveTrace::new(),
        half_steps: Vec::new(),
        max_violation: 0.0,
        iterations: 0,
        stop: TuckerStop::MaxIterations,
        rel_error: f64::NAN,
        mean_rel_error: f64::NAN,
    };
    bcd_scale(y, opts, opts.core_target, 1, default_floor(y), &mut rng, &mut report)?;
    Ok(report)
}

/// Runs one scale from `report.factors`, appending to the report.
fn bcd_scale(
    y: &DenseTensor,
    opts: &FactorizeOptions,
    target: f64,
    scale: usize,
    floor: f64,
    rng: &mut ChaCha8Rng,
    report: &mut FactorizeReport,
) -> Result<()> {
    let rows = y.dims()[0];
    let rank = opts.rank;
    let n = y.slice_len();
    if report.factors.b.dims()[1..] != y.dims()[1..] || report.factors.rows != rows {
        return Err(Error::invalid("factors do not match the data tensor"));
    }
    let floor = opts.mean_rel_floor.unwrap_or(floor);
    let cap = if scale > 1 { opts.coarse_max_iterations.unwrap_or(opts.max_iterations) } else { opts.max_iterations };
    let y_norm = y.frobenius_norm();
    let mut st = Bcd { y: y.values(), rows, rank, n, exec: opts.execution, res: vec![0.0; rows * n] };
    let f = &mut report.factors;
    let mut k = 0;
    loop {
        st.residual(&f.a, f.b.values());
        let stats = st.stats(y_norm, floor);
        report.half_steps.push((scale, stats.objective));
        report.rel_error = stats.rel_error;
        report.mean_rel_error = stats.mean_rel_error;
        let tols = !(scale > 1 && opts.coarse_fixed);
        let stop = if tols && opts.objective_tol.is_some_and(|t| stats.objective <= t) {
            Some(TuckerStop::Objective)
        } else if tols && opts.rel_error_tol.is_some_and(|t| stats.rel_error <= t) {
            Some(TuckerStop::RelativeError)
        } else if tols && opts.mean_rel_error_tol.is_some_and(|t| stats.mean_rel_error <= t) {
            Some(TuckerStop::MeanRelativeError)
        } else if k >= cap {
            Some(TuckerStop::MaxIterations)
        } else {
            None
        };
        if !stats.objective.is_finite() {
            return Err(Error::NumericFailure {
                scale,
                iteration: k,
                reason: "non-finite objective".into(),
                snapshot: f.a.clone(),
            });
        }

        // Mixing block.
        let mut l_a = largest_eigenvalue(st.gram_b(f.b.values()));
        if l_a == 0.0 {
            log::warn!("core tensor vanished at scale {scale}, iteration {k}; reinitializing");
            let fresh = random_factors(y.dims(), opts, target, rng)?;
            f.b = fresh.b;
            st.residual(&f.a, f.b.values());
            l_a = largest_eigenvalue(st.gram_b(f.b.values()));
        }
        let g = st.grad_a(f.b.values());
        let mut a_next: Vec<f64> = f.a.iter().zip(&g).map(|(a, g)| a - g / l_a).collect();
        apply_mixing_constraint(&mut a_next, rank, opts.mixing);
        let moved = f.a.iter().zip(&a_next).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        report.trace.push(scale, k, stats.objective, l_a * moved, Phase::Step, rows * n);
        if let Some(stop) = stop {
            report.stop = stop;
            report.iterations = k;
            return Ok(());
        }
        f.a = a_next;

        // Core block.
        st.residual(&f.a, f.b.values());
        report.half_steps.push((scale, st.objective()));
        let mut l_b = largest_eigenvalue(gram_a(&f.a, rows, rank));
        if l_b == 0.0 {
            log::warn!("mixing matrix vanished at scale {scale}, iteration {k}; reinitializing");
            f.a = random_factors(y.dims(), opts, target, rng)?.a;
            st.residual(&f.a, f.b.values());
            l_b = largest_eigenvalue(gram_a(&f.a, rows, rank));
        }
        if opts.subblock_updates && opts.core != CoreConstraint::AverageFibre {
            let fibre = fibre_len(&f.b);
            for r in 0..rank {
                st.step_slice(&f.a, f.b.values_mut(), r, opts.core, target, fibre);
            }
        } else {
            st.step_b(&f.a, f.b.values_mut(), l_b);
            apply_core_constraint(&mut f.b, opts.core, target, opts.execution)?;
        }

        let viol = mixing_violation(&f.a, rank, opts.mixing).max(core_violation(&f.b, opts.core, target));
        report.max_violation = report.max_violation.max(viol);
        k += 1;
    }
}

/// Mean mass of the blocks of `Y` that the core constraint normalizes:
/// slices for `Slice` and `Nonnegative`, last-mode fibres otherwise.
fn mean_block_mass(y: &DenseTensor, c: CoreConstraint) -> f64 {
    let blocks = match c {
        CoreConstraint::Slice | CoreConstraint::Nonnegative => y.dims()[0],
        CoreConstraint::Fibre | CoreConstraint::AverageFibre => y.len() / fibre_len(y),
    };
    y.values().iter().sum::<f64>() / blocks as f64
}

/// Mass of the core constraint at a coarser grid: the finest target times
/// the ratio of the data's block masses, so exact factors of `Y` stay exact
/// on the subsampled data.
fn scale_target(fine: &DenseTensor, coarse: &DenseTensor, c: CoreConstraint, target: f64) -> f64 {
    let (mf, mc) = (mean_block_mass(fine, c), mean_block_mass(coarse, c));
    if mf > 0.0 && mc > 0.0 {
        target * mc / mf
    } else {
        target
    }
}

/// Coarse-to-fine factorization over the listed continuous modes of `Y`
/// (0-based; mode 0 indexes mixtures and cannot be continuous). The mixing
/// matrix is carried across scales unchanged and the core is interpolated
/// along the continuous modes, then rescaled to the next scale's mass.
pub fn multiscale_factorize(y: &DenseTensor, continuous: &[usize], opts: &FactorizeOptions) -> Result<FactorizeReport> {
    opts.validate()?;
    check_data(y)?;
    let mut modes = continuous.to_vec();
    modes.sort_unstable();
    modes.dedup();
    if modes.is_empty() {
        return bcd_factorize(y, opts);
    }
    let mut levels = usize::MAX;
    for &m in &modes {
        if m == 0 || m >= y.ndim() {
            return Err(Error::invalid(format!("mode {m} cannot be continuous")));
        }
        let e = dyadic_exponent(y.dims()[m]).filter(|&e| e >= 1).ok_or_else(|| {
            Error::invalid(format!("continuous mode {m} has length {}, not 2^k + 1", y.dims()[m]))
        })?;
        levels = levels.min(e);
    }
    let mut trace = SolveTrace::new();
    let mut data = vec![y.clone()];
    for s in 1..levels {
        let coarse = coarsen_tensor(&data[s - 1], &modes)?;
        data.push(coarse);
    }
    trace.push(levels, 0, 0.0, 0.0, Phase::Allocate, 0);
    let floor = default_floor(y);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let coarsest = &data[levels - 1];
    let target = scale_target(y, coarsest, opts.core, opts.core_target);
    let mut report = FactorizeReport {
        factors: random_factors(coarsest.dims(), opts, target, &mut rng)?,
        trace,
        half_steps: Vec::new(),
        max_violation: 0.0,
        iterations: 0,
        stop: TuckerStop::MaxIterations,
        rel_error: f64::NAN,
        mean_rel_error: f64::NAN,
    };
    for s in (1..=levels).rev() {
        let ys = &data[s - 1];
        let target = scale_target(y, ys, opts.core, opts.core_target);
        if s < levels {
            let mut b = interpolate_tensor(&report.factors.b, &modes)?;
            rescale_core(&mut b, opts.core, target);
            apply_core_constraint(&mut b, opts.core, target, opts.execution)?;
            report.factors.b = b;
            let last = report.half_steps.last().map_or(0.0, |h| h.1);
            report.trace.push(s, 0, last, 0.0, Phase::Interpolate, ys.len());
        }
        bcd_scale(ys, opts, target, s, floor, &mut rng, &mut report)?;
    }
    Ok(report)
}

/// Scales each constrained block of a nonnegative core to the target mass.
fn rescale_core(b: &mut DenseTensor, c: CoreConstraint, target: f64) {
    let len = match c {
        CoreConstraint::Slice => b.slice_len(),
        CoreConstraint::Fibre => fibre_len(b),
        CoreConstraint::AverageFibre | CoreConstraint::Nonnegative => return,
    };
    for block in b.values_mut().chunks_mut(len) {
        let s: f64 = block.iter().sum();
        if s > 0.0 {
            block.iter_mut().for_each(|v| *v *= target / s);
        }
    }
}

/// Mixing matrix of the synthetic three-source example, `5 x 3`.
pub const SYNTH_MIXING: [[f64; 3]; 5] = [
    [0.0, 0.4, 0.6],
    [0.3, 0.3, 0.4],
    [0.8, 0.2, 0.0],
    [0.2, 0.7, 0.1],
    [0.6, 0.1, 0.3],
];

/// One-dimensional source density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Density1D {
    Normal { mean: f64, sd: f64 },
    Uniform { lower: f64, upper: f64 },
    /// Exponential with the given scale (mean).
    Exponential { scale: f64 },
}

impl Density1D {
    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Density1D::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            }
            Density1D::Uniform { lower, upper } => {
                if (lower..=upper).contains(&x) {
                    1.0 / (upper - lower)
                } else {
                    0.0
                }
            }
            Density1D::Exponential { scale } => {
                if x >= 0.0 {
                    (-x / scale).exp() / scale
                } else {
                    0.0
                }
            }
        }
    }
}

/// The three product sources of the synthetic example.
pub fn synth_sources() -> [[Density1D; 3]; 3] {
    use Density1D::*;
    [
        [Normal { mean: 4.0, sd: 1.0 }, Uniform { lower: -7.0, upper: 2.0 }, Uniform { lower: -1.0, upper: 1.0 }],
        [Normal { mean: 0.0, sd: 3.0 }, Uniform { lower: -2.0, upper: 2.0 }, Exponential { scale: 2.0 }],
        [Exponential { scale: 1.0 }, Normal { mean: 0.0, sd: 1.0 }, Normal { mean: 0.0, sd: 3.0 }],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Points per axis; `2^k + 1` for multiscale use.
    pub points: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { points: 65, lower: -10.0, upper: 10.0 }
    }
}

#[derive(Debug, Clone)]
pub struct SynthMixtures {
    /// `5 x K x K x K`, each mixture slice summing to 1.
    pub y: DenseTensor,
    pub a_true: DMatrix<f64>,
    /// `3 x K x K x K`, each source slice summing to 1.
    pub sources: DenseTensor,
}

/// Five mixtures of three 3-D product densities sampled on a cube grid.
pub fn synth_mixtures(spec: &SynthSpec) -> Result<SynthMixtures> {
    if spec.points < 2 || !(spec.upper > spec.lower) {
        return Err(Error::invalid("need at least 2 points on a nonempty interval"));
    }
    let k = spec.points;
    let grid = crate::grid::Grid1D::new(spec.lower, spec.upper, k)?;
    let nodes = grid.nodes();
    let src = synth_sources();
    // Per-axis pdf tables: table[r][axis][k].
    let table: Vec<Vec<Vec<f64>>> =
        src.iter().map(|s| s.iter().map(|d| nodes.iter().map(|&x| d.pdf(x)).collect()).collect()).collect();
    let n = k * k * k;
    let mut raw = vec![0.0; 3 * n];
    for r in 0..3 {
        for i in 0..k {
            for j in 0..k {
                for l in 0..k {
                    raw[r * n + (i * k + j) * k + l] = table[r][0][i] * table[r][1][j] * table[r][2][l];
                }
            }
        }
    }
    let mut y = vec![0.0; 5 * n];
    for (m, mix) in SYNTH_MIXING.iter().enumerate() {
        for (r, &w) in mix.iter().enumerate() {
            if w != 0.0 {
                for q in 0..n {
                    y[m * n + q] += w * raw[r * n + q];
                }
            }
        }
        let total: f64 = y[m * n..(m + 1) * n].iter().sum();
        y[m * n..(m + 1) * n].iter_mut().for_each(|v| *v /= total);
    }
    for r in 0..3 {
        let total: f64 = raw[r * n..(r + 1) * n].iter().sum();
        raw[r * n..(r + 1) * n].iter_mut().for_each(|v| *v /= total);
    }
    let a_true = DMatrix::from_fn(5, 3, |i, r| SYNTH_MIXING[i][r]);
    Ok(SynthMixtures {
        y: DenseTensor::new(vec![5, k, k, k], y)?,
        a_true,
        sources: DenseTensor::new(vec![3, k, k, k], raw)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoshapeSpec {
    pub mixtures: usize,
    pub features: usize,
    pub points: usize,
    pub rank: usize,
    /// Relative multiplicative noise on each entry before renormalizing.
    pub noise: f64,
    pub seed: u64,
}

impl Default for GeoshapeSpec {
    fn default() -> Self {
        Self { mixtures: 20, features: 7, points: 1025, rank: 3, noise: 0.1, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Geoshape {
    /// `I x J x K`, each fibre `Y[i, j, :]` summing to 1.
    pub y: DenseTensor,
    pub a_true: DMatrix<f64>,
    pub b_true: DenseTensor,
}

/// Stand-in with the shape and constraint structure of the sediment data:
/// `R` sources, each a product of `J` one-dimensional two-bump densities on
/// `[0, 1]`, mixed with random simplex weights, perturbed by multiplicative
/// noise and fibre-normalized.
pub fn geoshape_synthetic(spec: &GeoshapeSpec) -> Result<Geoshape> {
    let GeoshapeSpec { mixtures, features, points, rank, noise, seed } = *spec;
    if mixtures == 0 || features == 0 || points < 2 || rank == 0 || !(noise >= 0.0) {
        return Err(Error::invalid("geoshape dimensions must be positive and noise nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = crate::grid::Grid1D::new(0.0, 1.0, points)?.nodes();
    let mut b = vec![0.0; rank * features * points];
    for fibre in b.chunks_mut(points) {
        let bumps: Vec<(f64, f64, f64)> = (0..2)
            .map(|_| (rng.random_range(0.1..0.9), rng.random_range(0.03..0.15), rng.random_range(0.3..1.0)))
            .collect();
        for (v, &t) in fibre.iter_mut().zip(&nodes) {
            *v = bumps.iter().map(|&(m, s, w)| w * (-0.5 * ((t - m) / s).powi(2)).exp()).sum();
        }
        let total: f64 = fibre.iter().sum();
        fibre.iter_mut().for_each(|v| *v /= total);
    }
    let b_true = DenseTensor::new(vec![rank, features, points], b)?;
    let a_true = DMatrix::from_fn(mixtures, rank, |_, _| -rng.random::<f64>().max(1e-300).ln());
    let a_true = DMatrix::from_fn(mixtures, rank, |i, r| a_true[(i, r)] / a_true.row(i).sum());
    let mut y = mode1_product(&b_true, &a_true)?;
    for fibre in y.values_mut().chunks_mut(points) {
        for v in fibre.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = (*v * (1.0 + noise * z)).max(0.0);
        }
        let total: f64 = fibre.iter().sum();
        if total > 0.0 {
            fibre.iter_mut().for_each(|v| *v /= total);
        }
    }
    Ok(Geoshape { y, a_true, b_true })
}

/// Column permutation of `recovered` closest to `truth` in total column-wise
/// L1 distance, found by enumerating all permutations. Returns the
/// permutation (`perm[c]` is the recovered column matched to true column `c`)
/// and the largest absolute entry error after alignment.
pub fn align_columns(recovered: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<(Vec<usize>, f64)> {
    if recovered.shape() != truth.shape() {
        return Err(Error::invalid("matrices must have the same shape"));
    }
    let r = truth.ncols();
    if r > 8 {
        return Err(Error::invalid("alignment enumerates permutations and supports at most 8 columns"));
    }
    let cost = |p: usize, t: usize| -> f64 {
        recovered.column(p).iter().zip(truth.column(t).iter()).map(|(a, b)| (a - b).abs()).sum()
    };
    let mut perm: Vec<usize> = (0..r).collect();
    let mut best = (f64::INFINITY, perm.clone());
    permute(&mut perm, 0, &mut |p| {
        let c: f64 = p.iter().enumerate().map(|(t, &q)| cost(q, t)).sum();
        if c < best.0 {
            best = (c, p.to_vec());
        }
    });
    let perm = best.1;
    let max_err = (0..r)
        .flat_map(|t| {
            let q = perm[t];
            recovered.column(q).iter().zip(truth.column(t).iter()).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);
    Ok((perm, max_err))
}

fn permute(p: &mut [usize], k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

const MAGIC: &[u8; 5] = b"MSOT1";

/// Writes `MSOT1`, `u32` mode count, `u32` dims, then little-endian `f64` values.
pub fn write_binary<W: Write>(t: &DenseTensor, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    let n = u32::try_from(t.ndim()).map_err(|_| Error::invalid("too many modes"))?;
    w.write_all(&n.to_le_bytes())?;
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| Error::invalid("dimension exceeds u32"))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in t.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<DenseTensor> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::invalid("not a tensor file: bad magic"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let n = u32::from_le_bytes(word) as usize;
    if n == 0 || n > 64 {
        return Err(Error::invalid(format!("implausible mode count {n}")));
    }
    let mut dims = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut word)?;
        dims.push(u32::from_le_bytes(word) as usize);
    }
    let len = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| Error::invalid("tensor too large"))?;
    let mut bytes = vec![0u8; len.checked_mul(8).ok_or_else(|| Error::invalid("tensor too large"))?];
    r.read_exact(&mut bytes)?;
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    DenseTensor::new(dims, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_tensor(dims: Vec<usize>, seed: u64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = dims.iter().product();
        DenseTensor::new(dims, (0..len).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn mode1_product_examples() {
        let b = random_tensor(vec![1, 3, 4], 1);
        let y = mode1_product(&b, &DMatrix::from_element(3, 1, 1.0)).unwrap();
        for i in 0..3 {
            assert_eq!(y.slice(i), b.slice(0));
        }
        let b = random_tensor(vec![3, 2, 2], 2);
        assert_eq!(mode1_product(&b, &DMatrix::identity(3, 3)).unwrap(), b);

        let b = random_tensor(vec![2, 4], 3);
        let a = DMatrix::from_fn(3, 2, |i, j| (i as f64 + 1.0) * 0.3 - j as f64 * 0.7);
        let y = mode1_product(&b, &a).unwrap();
        for i in 0..3 {
            for k in 0..4 {
                let mut s = 0.0;
                for r in 0..2 {
                    s += a[(i, r)] * b.get(&[r, k]);
                }
                assert!((y.get(&[i, k]) - s).abs() < 1e-12);
            }
        }
        assert!(mode1_product(&b, &DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn mode1_product_is_linear_in_a() {
        let b = random_tensor(vec![3, 5, 3], 4);
        let a1 = DMatrix::from_fn(4, 3, |i, j| ((i * 3 + j) as f64).sin());
        let a2 = DMatrix::from_fn(4, 3, |i, j| ((i + 2 * j) as f64).cos());
        let lhs = mode1_product(&b, &(&a1 * 2.0 + &a2 * -0.5)).unwrap();
        let y1 = mode1_product(&b, &a1).unwrap();
        let y2 = mode1_product(&b, &a2).unwrap();
        for ((l, p), q) in lhs.values().iter().zip(y1.values()).zip(y2.values()) {
            assert!((l - (2.0 * p - 0.5 * q)).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_examples() {
        let b = random_tensor(vec![2, 3, 3], 5);
        let a = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 1.0, 0.0]);
        let y = mode1_product(&b, &a).unwrap();
        let flat = vec![0.3, 0.7, 1.0, 0.0];
        let exact = Tucker1Factors::new(flat.clone(), 2, b.clone()).unwrap();
        assert!(rel_error(&y, &exact).unwrap() < 1e-15);
        assert!(mean_rel_error(&y, &exact, 0.0).unwrap() < 1e-15);

        let mut b2 = b.clone();
        b2.values_mut().iter_mut().for_each(|v| *v *= 1.1);
        let scaled = Tucker1Factors::new(flat, 2, b2).unwrap();
        assert!((rel_error(&y, &scaled).unwrap() - 0.1).abs() < 1e-12);
        assert!((mean_rel_error(&y, &scaled, 0.0).unwrap() - 0.1).abs() < 1e-12);

        let mut yz = y.clone();
        yz.values_mut()[0] = 0.0;
        assert!(mean_rel_error(&yz, &exact, 0.0).unwrap().is_finite());
        assert!(matches!(mean_rel_error(&y, &exact, 1e9), Err(Error::UndefinedMetric(_))));
    }

    fn planted(rows: usize, rank: usize, dims: &[usize], seed: u64) -> (DenseTensor, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bd = vec![rank];
        bd.extend_from_slice(dims);
        let mut b = random_tensor(bd, seed + 100);
        // Sparsify so the sources are well separated.
        b.values_mut().iter_mut().for_each(|v| *v = if *v < 0.6 { 0.0 } else { *v });
        apply_core_constraint(&mut b, CoreConstraint::Slice, 1.0, Execution::Sequential).unwrap();
        let mut a = DMatrix::from_fn(rows, rank, |_, _| rng.random::<f64>().powi(3));
        for r in 0..rank.min(rows) {
            a.row_mut(r).fill(0.0);
            a[(r, r)] = 1.0;
        }
        for i in 0..rows {
            let s = a.row(i).sum();
            a.row_mut(i).iter_mut().for_each(|v| *v /= s);
        }
        (mode1_product(&b, &a).unwrap(), a)
    }

    #[test]
    fn bcd_recovers_planted_factors() {
        let (y, _) = planted(6, 3, &[9, 9], 7);
        let opts = FactorizeOptions { rank: 3, max_iterations: 500, rel_error_tol: Some(1e-3), seed: 1, ..Default::default() };
        let rep = bcd_factorize(&y, &opts).unwrap();
        assert!(rep.rel_error <= 1e-3, "{}", rep.rel_error);
        assert!(rep.iterations <= 500);
        assert!(rep.max_violation <= 1e-10);
        assert!(rep.max_increase() <= 1e-12);
    }

    #[test]
    fn every_half_step_descends() {
        for seed in 0..5 {
            let y = random_tensor(vec![4, 5, 6], seed);
            let mut y = y;
            for i in 0..4 {
                let s: f64 = y.slice(i).iter().sum();
                y.slice_mut(i).iter_mut().for_each(|v| *v /= s);
            }
            for exec in [Execution::Sequential, Execution::Parallel] {
                let opts = FactorizeOptions { rank: 2, max_iterations: 60, seed, execution: exec, ..Default::default() };
                let rep = bcd_factorize(&y, &opts).unwrap();
                assert!(rep.max_increase() <= 1e-12);
                assert!(rep.max_violation <= 1e-10);
                assert_eq!(rep.half_steps.len(), 2 * 60 + 1);
            }
        }
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let (y, _) = planted(5, 3, &[33, 17], 3);
        let run = |exec| {
            let opts = FactorizeOptions { rank: 3, max_iterations: 20, seed: 9, execution: exec, ..Default::default() };
            bcd_factorize(&y, &opts).unwrap()
        };
        let (s, p) = (run(Execution::Sequential), run(Execution::Parallel));
        assert_eq!(s.factors, p.factors);
        assert_eq!(s.half_steps, p.half_steps);
    }

    #[test]
    fn exact_fit_with_identity_mixing() {
        // R = I and A = Id: the data itself is a feasible exact core.
        let mut y = random_tensor(vec![3, 4, 4], 11);
        for i in 0..3 {
            let s: f64 = y.slice(i).iter().sum();
            y.slice_mut(i).iter_mut().for_each(|v| *v /= s);
        }
        let opts = FactorizeOptions { rank: 3, ..Default::default() };
        let f = Tucker1Factors::new(DMatrix::<f64>::identity(3, 3).as_slice().to_vec(), 3, y.clone()).unwrap();
        assert!(rel_error(&y, &f).unwrap() == 0.0);
        let mut rep = FactorizeReport {
            factors: f,
            trace: SolveTrace::new(),
            half_steps: Vec::new(),
            max_violation: 0.0,
            iterations: 0,
            stop: TuckerStop::MaxIterations,
            rel_error: 0.0,
            mean_rel_error: 0.0,
        };
        let opts = FactorizeOptions { max_iterations: 5, ..opts };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        bcd_scale(&y, &opts, 1.0, 1, 0.0, &mut rng, &mut rep).unwrap();
        assert!(rep.half_steps.iter().all(|&(_, f)| f < 1e-28));
    }

    #[test]
    fn stacked_objective_gradient_matches_finite_differences() {
        let y = random_tensor(vec![3, 5, 3], 31);
        let obj = Tucker1Objective::new(y, 2).unwrap();
        let x: Vec<f64> = random_tensor(vec![obj.dimension()], 32).into_values();
        assert!(crate::solver::gradient_check(&obj, &x, 1e-6) < 1e-7);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let y = random_tensor(vec![3, 4, 2], 21);
        let fac = random_tensor(vec![2, 4, 2], 22);
        let a = vec![0.2, 0.8, 0.5, 0.5, 0.9, 0.1];
        let f = |a: &[f64], b: &[f64]| {
            let t = Tucker1Factors::new(a.to_vec(), 3, DenseTensor::new(vec![2, 4, 2], b.to_vec()).unwrap()).unwrap();
            let m = t.model();
            0.5 * m.values().iter().zip(y.values()).map(|(p, q)| (p - q).powi(2)).sum::<f64>()
        };
        let mut st = Bcd { y: y.values(), rows: 3, rank: 2, n: 8, exec: Execution::Sequential, res: vec![0.0; 24] };
        st.residual(&a, fac.values());
        let ga = st.grad_a(fac.values());
        let h = 1e-6;
        let mut fd = vec![0.0; 6];
        for j in 0..6 {
            let (mut p, mut m) = (a.clone(), a.clone());
            p[j] += h;
            m[j] -= h;
            fd[j] = (f(&p, fac.values()) - f(&m, fac.values())) / (2.0 * h);
        }
        let err = crate::solver::distance(&ga, &fd) / crate::solver::norm(&ga);
        assert!(err < 1e-5);

        let mut b = fac.values().to_vec();
        st.step_b(&a, &mut b, 1.0);
        let gb: Vec<f64> = fac.values().iter().zip(&b).map(|(p, q)| p - q).collect();
        let mut fd = vec![0.0; 16];
        for j in 0..16 {
            let (mut p, mut m) = (fac.values().to_vec(), fac.values().to_vec());
            p[j] += h;
            m[j] -= h;
            fd[j] = (f(&a, &p) - f(&a, &m)) / (2.0 * h);
        }
        assert!(crate::solver::distance(&gb, &fd) / crate::solver::norm(&gb) < 1e-5);
    }

    #[test]
    fn multiscale_without_continuous_modes_is_plain_bcd() {
        let (y, _) = planted(4, 2, &[5, 5], 5);
        let opts = FactorizeOptions { rank: 2, max_iterations: 30, seed: 3, ..Default::default() };
        let a = bcd_factorize(&y, &opts).unwrap();
        let b = multiscale_factorize(&y, &[], &opts).unwrap();
        assert_eq!(a.factors, b.factors);
        assert!(multiscale_factorize(&y, &[0], &opts).is_err());
        let (y6, _) = planted(4, 2, &[6, 5], 5);
        assert!(multiscale_factorize(&y6, &[1], &opts).is_err());
    }

    #[test]
    fn multiscale_runs_every_scale_and_stays_feasible() {
        let (y, _) = planted(5, 3, &[17, 9], 8);
        let opts = FactorizeOptions { rank: 3, max_iterations: 40, rel_error_tol: Some(1e-2), seed: 2, ..Default::default() };
        let rep = multiscale_factorize(&y, &[1, 2], &opts).unwrap();
        let scales: std::collections::BTreeSet<usize> = rep.half_steps.iter().map(|&(s, _)| s).collect();
        assert_eq!(scales.into_iter().collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(rep.max_violation <= 1e-10);
        assert!(rep.max_increase() <= 1e-12);
        assert_eq!(rep.factors.b.dims(), &[3, 17, 9]);
        let sums: Vec<f64> = rep.factors.b.values().chunks(17 * 9).map(|s| s.iter().sum()).collect();
        assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-10));
    }

    #[test]
    fn fibre_and_average_constraints() {
        let mut b = random_tensor(vec![2, 3, 5], 4);
        b.values_mut()[0] = -1.0;
        apply_core_constraint(&mut b, CoreConstraint::Fibre, 1.0, Execution::Sequential).unwrap();
        assert!(core_violation(&b, CoreConstraint::Fibre, 1.0) < 1e-12);
        let mut b = random_tensor(vec![2, 3, 5], 4);
        apply_core_constraint(&mut b, CoreConstraint::AverageFibre, 1.0, Execution::Sequential).unwrap();
        assert!(core_violation(&b, CoreConstraint::AverageFibre, 1.0) < 1e-12);
    }

    #[test]
    fn synthetic_mixtures_are_normalized() {
        let s = synth_mixtures(&SynthSpec { points: 17, ..Default::default() }).unwrap();
        for i in 0..5 {
            assert!((s.a_true.row(i).sum() - 1.0).abs() < 1e-15);
            assert!((s.y.slice(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(s.y.min_value() >= 0.0);
        assert_eq!(s.y.dims(), &[5, 17, 17, 17]);
    }

    #[test]
    fn geoshape_has_the_requested_structure() {
        let g = geoshape_synthetic(&GeoshapeSpec { points: 65, ..Default::default() }).unwrap();
        assert_eq!(g.y.dims(), &[20, 7, 65]);
        for f in g.y.values().chunks(65) {
            assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for i in 0..20 {
            assert!((g.a_true.row(i).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn alignment_undoes_a_permutation() {
        let truth = DMatrix::from_fn(5, 3, |i, r| SYNTH_MIXING[i][r]);
        let mut rec = truth.clone();
        rec.swap_columns(0, 2);
        rec[(1, 0)] += 0.05;
        let (perm, err) = align_columns(&rec, &truth).unwrap();
        assert_eq!(perm, vec![2, 1, 0]);
        assert!((err - 0.05).abs() < 1e-12);
    }

    #[test]
    fn binary_round_trip() {
        let t = random_tensor(vec![2, 3, 4], 6);
        let mut buf = Vec::new();
        write_binary(&t, &mut buf).unwrap();
        assert_eq!(&buf[..5], b"MSOT1");
        assert_eq!(buf.len(), 5 + 4 + 12 + 8 * 24);
        assert_eq!(read_binary(buf.as_slice()).unwrap(), t);
        buf[0] = b'X';
        assert!(read_binary(buf.as_slice()).is_err());
    }
}
