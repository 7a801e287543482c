//! Randomized audits of the closed-form bounds: each check draws instances,
//! measures the bounded quantity independently, and records the ratio.

use anyhow::Result;
use msopt_core::bounds::{
    connection_thresholds, exact_interp_bound, expected_pgd_bound, greedy_error_bound, inexact_interp_bound,
    lazy_error_bound_general, lazy_interp_bound, lipschitz_interp_bound, pgd_iterations_needed,
    piecewise_approx_bound, piecewise_distance_bound, tight_witness, BoundInputs,
};
use msopt_core::constraints::{
    l1_rescale_with_bound, linear_rescale_with_bound, product_lipschitz, subsample_columns, ConstraintSet,
};
use msopt_core::functions::LipschitzFn;
use msopt_core::grid::{coarsen, interpolate, Grid1D, ScaleHierarchy};
use msopt_core::multiscale::{
    gaussian_init, greedy_cost_bound, greedy_plan, greedy_solve, lazy_cost_bound, lazy_plan, lazy_solve,
    measured_cost, CostModel, GreedyVariant, IterationPlan, MultiscaleOutcome, ProblemFamily, QuadraticFamily,
};
use msopt_core::problems::{LegendreFamily, LegendreProblemSpec};
use msopt_core::solver::{
    distance, gradient_check, norm, run, Objective, ProblemAtScale, ProjectedGradient, QuadraticObjective,
    StoppingRule, UpdateRule,
};
use msopt_core::tensor::DenseTensor;
use msopt_core::tucker::Tucker1Objective;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Relative slack allowed before a measured value counts as a violation.
pub const RATIO_SLACK: f64 = 1e-12;

/// Tolerance of the analytic-versus-finite-difference gradient checks.
pub const GRADIENT_TOL: f64 = 1e-5;

/// Absolute allowance, relative to the magnitude of the summed data, for
/// bounds that are attained exactly.
pub const ROUNDING: f64 = 1e-13;

/// Dyadic coarse grid sizes `3, 5, 9, ..., 1025`.
pub const DYADIC_SIZES: [usize; 10] = [3, 5, 9, 17, 33, 65, 129, 257, 513, 1025];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub trial: usize,
    pub measured: f64,
    pub bound: f64,
    pub detail: String,
}

/// Tally of one bound over randomized instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    /// Largest measured/bound ratio; `f64::MAX` stands in for a positive
    /// measurement against a zero bound.
    pub max_ratio: f64,
    /// The instance attaining `max_ratio`.
    pub witness: Option<Witness>,
}

impl BoundCheck {
    pub fn new(name: &str) -> Self {
        Self { name: name.to_string(), trials: 0, violations: 0, max_ratio: 0.0, witness: None }
    }

    pub fn record(&mut self, measured: f64, bound: f64, detail: impl FnOnce() -> String) {
        let trial = self.trials;
        self.trials += 1;
        let ratio = if measured.is_nan() || bound.is_nan() {
            f64::MAX
        } else if bound > 0.0 {
            (measured / bound).min(f64::MAX)
        } else if measured <= 0.0 {
            0.0
        } else {
            f64::MAX
        };
        if !(measured <= bound * (1.0 + RATIO_SLACK)) {
            self.violations += 1;
        }
        if self.witness.is_none() || ratio > self.max_ratio {
            self.max_ratio = ratio;
            self.witness = Some(Witness { trial, measured, bound, detail: detail() });
        }
    }

    pub fn passed(&self) -> bool {
        self.trials > 0 && self.violations == 0
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} trials, {} violations, max ratio {:.6}",
            self.name, self.trials, self.violations, self.max_ratio
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub seed: u64,
    pub trials: usize,
    pub checks: Vec<BoundCheck>,
    pub violations: usize,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Random domain `[lower, lower + width]`.
fn random_domain(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let lower = rng.random_range(-1.0..1.0);
    (lower, lower + rng.random_range(0.5..3.0))
}

/// Alternates piecewise-linear functions and sinusoid sums.
fn random_function(rng: &mut ChaCha8Rng, lower: f64, upper: f64, trial: usize) -> LipschitzFn {
    if trial.is_multiple_of(2) {
        let pieces = rng.random_range(1..=8);
        let slope = rng.random_range(0.1..5.0);
        LipschitzFn::random_piecewise(rng, lower, upper, pieces, slope)
    } else {
        let terms = rng.random_range(1..=4);
        let l = rng.random_range(0.1..5.0);
        LipschitzFn::random_sinusoids(rng, terms, l, 12.0)
    }
}

fn samples(f: &LipschitzFn, lower: f64, upper: f64, points: usize) -> Result<Vec<f64>> {
    Ok(f.sample_on(Grid1D::new(lower, upper, points)?).values().to_vec())
}

/// Deviation of a Lipschitz function from its chord between two points.
pub fn chord_deviation(trials: usize, seed: u64) -> BoundCheck {
    let mut rng = rng_for(seed, 1);
    let mut check = BoundCheck::new("chord_deviation");
    for t in 0..trials {
        let (lo, hi) = random_domain(&mut rng);
        let f = random_function(&mut rng, lo, hi, t);
        let (mut a, mut b) = (rng.random_range(lo..hi), rng.random_range(lo..hi));
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        let l1 = rng.random_range(0.0..=1.0);
        let l2 = 1.0 - l1;
        let p = l1 * a + l2 * b;
        let measured = (f.eval(p) - l1 * f.eval(a) - l2 * f.eval(b)).abs();
        let bound = lipschitz_interp_bound(f.lipschitz(), l1, l2, b - a).expect("valid inputs");
        check.record(measured, bound, || format!("a={a}, b={b}, lambda1={l1}, f={f:?}"));
    }
    check
}

/// Relative gap between the tight witness's chord deviation and the bound;
/// the recorded bound is the required relative precision.
pub fn chord_witness(trials: usize, seed: u64, rel_tol: f64) -> BoundCheck {
    let mut rng = rng_for(seed, 2);
    let mut check = BoundCheck::new("chord_witness_equality");
    for _ in 0..trials {
        let (lo, hi) = random_domain(&mut rng);
        let l = rng.random_range(0.1..5.0);
        let l1 = rng.random_range(0.01..0.99);
        let l2 = 1.0 - l1;
        let w = tight_witness(l1, l2, lo, hi, l).expect("valid inputs");
        let p = l1 * lo + l2 * hi;
        let dev = (w.eval(p) - l1 * w.eval(lo) - l2 * w.eval(hi)).abs();
        let bound = lipschitz_interp_bound(l, l1, l2, hi - lo).expect("valid inputs");
        let rel = (dev - bound).abs() / bound;
        check.record(rel, rel_tol, || format!("lower={lo}, upper={hi}, L={l}, lambda1={l1}"));
    }
    check
}

/// Exact, inexact and midpoint-only interpolation error of coarse samples,
/// `trials` instances per coarse size.
pub fn interpolation(trials: usize, sizes: &[usize], seed: u64) -> Result<[BoundCheck; 3]> {
    let mut rng = rng_for(seed, 3);
    let mut exact = BoundCheck::new("exact_interpolation");
    let mut inexact = BoundCheck::new("inexact_interpolation");
    let mut midpoints = BoundCheck::new("midpoint_interpolation");
    for &points in sizes {
        let k = msopt_core::grid::dyadic_exponent(points);
        for t in 0..trials {
            let (lo, hi) = random_domain(&mut rng);
            let width = hi - lo;
            let f = random_function(&mut rng, lo, hi, t);
            let l = f.lipschitz();
            let coarse = samples(&f, lo, hi, points)?;
            let fine = samples(&f, lo, hi, 2 * points - 1)?;
            let measured = distance(&interpolate(&coarse)?, &fine);
            let bound = exact_interp_bound(l, points, width)?;
            exact.record(measured, bound, || format!("I={points}, width={width}, f={f:?}"));

            let scale = rng.random_range(0.0..2.0) * bound / (points as f64).sqrt();
            let delta: Vec<f64> = gaussian_init(points, rng.random()).iter().map(|v| v * scale).collect();
            let noisy: Vec<f64> = coarse.iter().zip(&delta).map(|(a, b)| a + b).collect();
            let up = interpolate(&noisy)?;
            let dn = norm(&delta);
            inexact.record(distance(&up, &fine), inexact_interp_bound(l, points, width, dn)?, || {
                format!("I={points}, width={width}, |delta|={dn}, f={f:?}")
            });

            if let Some(k) = k {
                // Refining scale 2 to scale 1 of a hierarchy with k + 1 scales.
                let mid: f64 =
                    up.iter().zip(&fine).skip(1).step_by(2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let bound = lazy_interp_bound(l, width, k + 1, 2, dn)?;
                midpoints.record(mid, bound, || format!("I={points}, width={width}, |delta|={dn}, f={f:?}"));
            }
        }
    }
    Ok([exact, inexact, midpoints])
}

/// L1 norm of a coarsened nonnegative sample vector against its rescaled
/// target, alternating even and odd lengths in `4..=257`.
pub fn l1_coarsening(trials: usize, seed: u64) -> Result<BoundCheck> {
    let mut rng = rng_for(seed, 4);
    let mut check = BoundCheck::new("l1_coarsening");
    for t in 0..trials {
        let mut points = rng.random_range(4..=257usize);
        if points % 2 != t % 2 {
            points = if points == 257 { 256 } else { points + 1 };
        }
        let (lo, hi) = random_domain(&mut rng);
        let f = random_function(&mut rng, lo, hi, t);
        let x: Vec<f64> = samples(&f, lo, hi, points)?.iter().map(|v| v.abs()).collect();
        let b: f64 = x.iter().sum();
        let r = l1_rescale_with_bound(b, points, f.lipschitz(), hi - lo)?;
        let got: f64 = coarsen(&x)?.iter().sum();
        // The bound is attained by linear functions; allow for rounding in
        // sums of magnitude `b`.
        check.record((got - r.target).abs(), r.slack + ROUNDING * b, || format!("I={points}, b={b}, f={f:?}"));
    }
    Ok(check)
}

/// `A x = b` with rows sampled from Lipschitz functions: deviation of the
/// column-subsampled system on the coarsened `x` from the rescaled targets.
/// `max_rows == 1` audits a single constraint.
pub fn linear_coarsening(trials: usize, max_rows: usize, seed: u64) -> Result<BoundCheck> {
    let mut rng = rng_for(seed, 5 + max_rows as u64);
    let name = if max_rows == 1 { "linear_coarsening" } else { "matrix_coarsening" };
    let mut check = BoundCheck::new(name);
    for t in 0..trials {
        let rows = if max_rows == 1 { 1 } else { rng.random_range(2..=max_rows) };
        let mut points = rng.random_range(4..=257usize);
        if points % 2 != t % 2 {
            points = if points == 257 { 256 } else { points + 1 };
        }
        let (lo, hi) = random_domain(&mut rng);
        let f = random_function(&mut rng, lo, hi, t);
        let x = samples(&f, lo, hi, points)?;
        let mut a = Vec::with_capacity(rows * points);
        let mut l_fg: f64 = 0.0;
        for r in 0..rows {
            let g = random_function(&mut rng, lo, hi, t + r + 1);
            a.extend(samples(&g, lo, hi, points)?);
            l_fg = l_fg.max(product_lipschitz(f.lipschitz(), g.lipschitz(), f.sup_bound(), g.sup_bound())?);
        }
        let b: Vec<f64> = a.chunks(points).map(|row| row.iter().zip(&x).map(|(p, q)| p * q).sum()).collect();
        let r = linear_rescale_with_bound(&b, points, l_fg, hi - lo)?;
        let (abar, cols) = subsample_columns(&a, rows, points)?;
        let xbar = coarsen(&x)?;
        let dev: f64 = abar
            .chunks(cols)
            .zip(&r.targets)
            .map(|(row, target)| (row.iter().zip(&xbar).map(|(p, q)| p * q).sum::<f64>() - target).powi(2))
            .sum::<f64>()
            .sqrt();
        check.record(dev, r.slack, || format!("rows={rows}, I={points}, L_fg={l_fg}"));
    }
    Ok(check)
}

/// Largest `| ||coarsen(z)||_1 - 1/2 |` over `samples` normalized positive
/// sample vectors, for `I = 2^k + 1`, `k = 3..=3 + doublings`.
pub fn l1_halving_envelope(samples_per_size: usize, doublings: usize, seed: u64) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::with_capacity(doublings + 1);
    for k in 3..=3 + doublings {
        let points = (1usize << k) + 1;
        let mut rng = rng_for(seed, 7);
        let mut worst: f64 = 0.0;
        for t in 0..samples_per_size {
            let f = random_function(&mut rng, 0.0, 1.0, t);
            let x: Vec<f64> = samples(&f, 0.0, 1.0, points)?.iter().map(|v| v.abs() + 0.1).collect();
            let total: f64 = x.iter().sum();
            let z: Vec<f64> = x.iter().map(|v| v / total).collect();
            let zbar: f64 = coarsen(&z)?.iter().sum();
            worst = worst.max((zbar - 0.5).abs());
        }
        out.push((points, worst));
    }
    Ok(out)
}

fn random_quadratic_family(rng: &mut ChaCha8Rng, scales: usize, coupled: bool) -> Result<(QuadraticFamily, LipschitzFn)> {
    let (lo, hi) = random_domain(rng);
    let h = ScaleHierarchy::new(lo, hi, scales)?;
    let kind = rng.random_range(0..2);
    let sol = random_function(rng, lo, hi, kind);
    let mu = rng.random_range(0.2..1.0);
    let l = mu * rng.random_range(1.0..6.0);
    Ok((QuadraticFamily::random(h, &sol, mu, l, coupled, rng.random())?, sol))
}

fn bound_inputs(fam: &QuadraticFamily, sol: &LipschitzFn, counts: &[usize], init: &[f64], q: f64) -> BoundInputs {
    let h = fam.hierarchy();
    BoundInputs {
        lipschitz: sol.lipschitz(),
        q,
        counts: counts.to_vec(),
        width: h.width(),
        initial_error: distance(init, fam.solution(h.coarsest_scale())),
    }
}

/// Final fine-scale error of the greedy and lazy drivers on random strongly
/// convex quadratic families against their worst-case bounds. Greedy runs
/// alternate coupled and diagonal Hessians; lazy runs use diagonal ones,
/// where updating only the midpoints still converges to the scale's solution.
pub fn multiscale_errors(families: usize, seed: u64) -> Result<[BoundCheck; 2]> {
    let mut rng = rng_for(seed, 8);
    let mut greedy = BoundCheck::new("greedy_final_error");
    let mut lazy = BoundCheck::new("lazy_final_error");
    let pgd = ProjectedGradient::default();
    for j in 0..families {
        let scales = 3 + j % 4;
        let counts: Vec<usize> = (0..scales).map(|_| rng.random_range(0..=6)).collect();
        let plan = IterationPlan::from_counts(&counts)?;

        let (fam, sol) = random_quadratic_family(&mut rng, scales, j % 2 == 0)?;
        let q = pgd.rate(&fam.problem(1)?).expect("strongly convex");
        let init = gaussian_init(fam.hierarchy().points(scales), rng.random());
        let out = greedy_solve(&fam, &plan, &init, &pgd)?;
        let bound = greedy_error_bound(&bound_inputs(&fam, &sol, &counts, &init, q))?;
        greedy.record(distance(&out.x, fam.solution(1)), bound, || format!("S={scales}, counts={counts:?}, q={q}"));

        let (fam, sol) = random_quadratic_family(&mut rng, scales, false)?;
        let q = pgd.rate(&fam.problem(1)?).expect("strongly convex");
        let init = gaussian_init(fam.hierarchy().points(scales), rng.random());
        let out = lazy_solve(&fam, &plan, &init, &pgd)?;
        let bound = lazy_error_bound_general(&bound_inputs(&fam, &sol, &counts, &init, q))?;
        lazy.record(distance(&out.x, fam.solution(1)), bound, || format!("S={scales}, counts={counts:?}, q={q}"));
    }
    Ok([greedy, lazy])
}

/// Piecewise-linear interpolant of `x` on `points` equispaced nodes.
fn secant(x: &[f64], lower: f64, dt: f64, t: f64) -> f64 {
    let n = x.len();
    let pos = ((t - lower) / dt).clamp(0.0, (n - 1) as f64);
    let j = (pos.floor() as usize).min(n - 2);
    let w = pos - j as f64;
    x[j] + w * (x[j + 1] - x[j])
}

/// Composite Simpson rule with `panels` (rounded up to even) subintervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Panel count near `target` that is an even multiple of `intervals`, so
/// Simpson integrates squared secant differences exactly.
fn aligned_panels(intervals: usize, target: usize) -> usize {
    let per = target.div_ceil(intervals).max(2);
    intervals * (per + per % 2)
}

/// L2 distance between the secant interpolants of two sample vectors whose
/// endpoints agree, compared for equality with the claimed closed form. The
/// recorded bound is the required relative precision.
pub fn secant_distance_equality(trials: usize, panels: usize, rel_tol: f64, seed: u64) -> Result<BoundCheck> {
    let mut rng = rng_for(seed, 9);
    let mut check = BoundCheck::new("secant_distance_equality");
    for _ in 0..trials {
        let points = rng.random_range(3..=65usize);
        let (lo, hi) = random_domain(&mut rng);
        let dt = (hi - lo) / (points - 1) as f64;
        let x = gaussian_init(points, rng.random());
        let mut y = gaussian_init(points, rng.random());
        y[0] = x[0];
        y[points - 1] = x[points - 1];
        let sq = simpson(|t| (secant(&x, lo, dt, t) - secant(&y, lo, dt, t)).powi(2), lo, hi, aligned_panels(points - 1, panels));
        let claimed = piecewise_distance_bound(dt, distance(&x, &y))?;
        let rel = (sq.sqrt() - claimed).abs() / claimed;
        check.record(rel, rel_tol, || format!("I={points}, dt={dt}, measured={}, claimed={claimed}", sq.sqrt()));
    }
    Ok(check)
}

/// The same distance for unconstrained endpoints against the claimed bound.
pub fn secant_distance(trials: usize, panels: usize, seed: u64) -> Result<BoundCheck> {
    let mut rng = rng_for(seed, 10);
    let mut check = BoundCheck::new("secant_distance");
    for t in 0..trials {
        let points = rng.random_range(3..=65usize);
        let (lo, hi) = random_domain(&mut rng);
        let dt = (hi - lo) / (points - 1) as f64;
        let x = gaussian_init(points, rng.random());
        let y: Vec<f64> = if t % 2 == 0 {
            gaussian_init(points, rng.random())
        } else {
            let c = rng.random_range(-1.0..1.0);
            x.iter().map(|v| v + c).collect()
        };
        let sq = simpson(|t| (secant(&x, lo, dt, t) - secant(&y, lo, dt, t)).powi(2), lo, hi, aligned_panels(points - 1, panels));
        let bound = piecewise_distance_bound(dt, distance(&x, &y))?;
        check.record(sq.sqrt(), bound, || format!("I={points}, dt={dt}, offset={}", t % 2 == 1));
    }
    Ok(check)
}

/// L2 distance between a Lipschitz function and its secant interpolant.
pub fn secant_approximation(trials: usize, panels: usize, seed: u64) -> Result<BoundCheck> {
    let mut rng = rng_for(seed, 11);
    let mut check = BoundCheck::new("secant_approximation");
    for t in 0..trials {
        let points = rng.random_range(3..=129usize);
        let (lo, hi) = random_domain(&mut rng);
        let f = random_function(&mut rng, lo, hi, t);
        let x = samples(&f, lo, hi, points)?;
        let dt = (hi - lo) / (points - 1) as f64;
        let sq = simpson(|s| (f.eval(s) - secant(&x, lo, dt, s)).powi(2), lo, hi, aligned_panels(points - 1, panels));
        let bound = piecewise_approx_bound(f.lipschitz(), hi - lo, dt)?;
        check.record(sq.max(0.0).sqrt(), bound, || format!("I={points}, f={f:?}"));
    }
    Ok(check)
}

/// End-to-end accuracy: a grid above the size threshold and a discrete
/// solution within the squared-error threshold give an interpolant within
/// `epsilon` of the function in L2.
pub fn continuous_accuracy(trials: usize, panels: usize, seed: u64) -> Result<BoundCheck> {
    let mut rng = rng_for(seed, 12);
    let mut check = BoundCheck::new("continuous_accuracy");
    for t in 0..trials {
        let (lo, hi) = random_domain(&mut rng);
        let f = random_function(&mut rng, lo, hi, t);
        let l = f.lipschitz();
        let c = connection_thresholds(l, hi - lo, 1.0)?.points_above - 1.0;
        // Keep the grid at most 2^14 + 1 points.
        let eps = rng.random_range((c / 16000.0).max(1e-3)..(c / 2.0).max(2e-3));
        let th = connection_thresholds(l, hi - lo, eps)?;
        let mut points = 3usize;
        while (points as f64) <= th.points_above {
            points = 2 * points - 1;
        }
        let xs = samples(&f, lo, hi, points)?;
        let dir = gaussian_init(points, rng.random());
        let scale = (rng.random_range(0.0..0.999) * th.max_squared_error).sqrt() / norm(&dir);
        let x: Vec<f64> = xs.iter().zip(&dir).map(|(a, d)| a + scale * d).collect();
        let dt = (hi - lo) / (points - 1) as f64;
        let sq = simpson(|s| (f.eval(s) - secant(&x, lo, dt, s)).powi(2), lo, hi, aligned_panels(points - 1, panels));
        check.record(sq.max(0.0).sqrt(), eps, || format!("I={points}, eps={eps}, f={f:?}"));
    }
    Ok(check)
}

/// `1/2 x^T diag(lambda) x` on `2^S + 1` points with eigenvalues spanning
/// `[mu, l]`; the minimizer is zero.
fn normalized_quadratic(scales: usize, mu: f64, l: f64, rng: &mut ChaCha8Rng) -> Result<ProblemAtScale> {
    let n = (1usize << scales) + 1;
    let mut eig: Vec<f64> = (0..n).map(|_| rng.random_range(mu..=l)).collect();
    eig[0] = mu;
    eig[n - 1] = l;
    let obj = QuadraticObjective::new(DMatrix::from_diagonal(&DVector::from_vec(eig)), DVector::zeros(n))?;
    Ok(ProblemAtScale::new(1, Arc::new(obj), ConstraintSet::Unconstrained, l, mu)?)
}

/// Mean error of `k` descent steps from standard normal starts against the
/// expected-error bound, and the predicted iteration counts against their
/// target accuracies. Returns `(expected_error, iterations_needed)`.
pub fn expected_descent(
    inits: usize,
    scales: &[usize],
    ks: &[usize],
    epsilons: &[f64],
    seed: u64,
) -> Result<[BoundCheck; 2]> {
    let mut rng = rng_for(seed, 13);
    let mut expected = BoundCheck::new("expected_descent_error");
    let mut needed = BoundCheck::new("descent_iterations_needed");
    let pgd = ProjectedGradient::default();
    for &s in scales {
        let p = normalized_quadratic(s, 1.0, 3.0, &mut rng)?;
        let q = pgd.rate(&p).expect("strongly convex");
        let mean_error = |k: usize, rng: &mut ChaCha8Rng| -> Result<f64> {
            let mut total = 0.0;
            for _ in 0..inits {
                let x0 = gaussian_init(p.dimension(), rng.random());
                let (x, _) = run(&p, &x0, &StoppingRule::iterations(k), &pgd)?;
                total += norm(&x);
            }
            Ok(total / inits as f64)
        };
        for &k in ks {
            let m = mean_error(k, &mut rng)?;
            expected.record(m, expected_pgd_bound(q, k, s)?, || format!("S={s}, K={k}, q={q}"));
        }
        for &eps in epsilons {
            let k = pgd_iterations_needed(eps, q, s)?;
            let m = mean_error(k, &mut rng)?;
            needed.record(m, eps, || format!("S={s}, eps={eps}, K={k}, q={q}"));
        }
    }
    Ok([expected, needed])
}

fn cost_of(out: &MultiscaleOutcome, fam: &dyn ProblemFamily) -> f64 {
    measured_cost(&out.trace, fam.hierarchy().fine_points(), fam.cost_exponent()).units
}

/// Measured work of greedy and lazy runs against the cost bounds of their
/// plans, and of the fixed-budget plans against the single-scale budget `K`.
pub fn plan_costs(trials: usize, seed: u64) -> Result<[BoundCheck; 3]> {
    let mut rng = rng_for(seed, 14);
    let mut greedy = BoundCheck::new("greedy_cost");
    let mut lazy = BoundCheck::new("lazy_cost");
    let mut below_k = BoundCheck::new("plan_cost_below_k");
    let pgd = ProjectedGradient::default();
    let model = CostModel::default();
    for t in 0..trials {
        let scales = rng.random_range(3..=8);
        let (fam, _) = random_quadratic_family(&mut rng, scales, false)?;
        let init = gaussian_init(fam.hierarchy().points(scales), rng.random());
        let counts: Vec<usize> = (0..scales).map(|_| rng.random_range(0..=6)).collect();
        let plan = IterationPlan::from_counts(&counts)?;
        let out = greedy_solve(&fam, &plan, &init, &pgd)?;
        greedy.record(cost_of(&out, &fam), greedy_cost_bound(&plan, &model)?, || format!("counts={counts:?}"));
        let out = lazy_solve(&fam, &plan, &init, &pgd)?;
        lazy.record(cost_of(&out, &fam), lazy_cost_bound(&plan, &model)?, || format!("counts={counts:?}"));

        let k = rng.random_range(3..=40);
        let (name, plan, lazy_run) = match t % 3 {
            0 => ("greedy-uniform", greedy_plan(k, GreedyVariant::Uniform, scales)?, false),
            1 => ("greedy-one-per-coarse", greedy_plan(k, GreedyVariant::OnePerCoarse, scales)?, false),
            _ => ("lazy", lazy_plan(k, scales)?, true),
        };
        let out = if lazy_run { lazy_solve(&fam, &plan, &init, &pgd)? } else { greedy_solve(&fam, &plan, &init, &pgd)? };
        below_k.record(cost_of(&out, &fam), k as f64, || format!("{name}, K={k}, S={scales}"));
    }
    Ok([greedy, lazy, below_k])
}

/// Analytic gradients against central differences at `points` random points
/// of every problem family: each scale of a Legendre problem, a random
/// quadratic, and the Tucker-1 objective.
pub fn gradient_audit(points: usize, seed: u64) -> Result<Vec<BoundCheck>> {
    let mut rng = rng_for(seed, 15);
    let mut out = Vec::new();

    let mut legendre = BoundCheck::new("gradient_legendre");
    let fam = LegendreFamily::new(LegendreProblemSpec::new(5, 5, 1e-4, 0.05, seed))?;
    for i in 0..points {
        let s = 1 + i % 5;
        let obj = fam.objective(s);
        let x: Vec<f64> = (0..obj.dimension()).map(|_| rng.random_range(0.0..1.0)).collect();
        legendre.record(gradient_check(obj.as_ref(), &x, 1e-6), GRADIENT_TOL, || format!("scale {s}"));
    }
    out.push(legendre);

    let mut quad = BoundCheck::new("gradient_quadratic");
    let (fam, _) = random_quadratic_family(&mut rng, 4, true)?;
    for i in 0..points {
        let s = 1 + i % 4;
        let obj = fam.objective(s);
        let x = gaussian_init(obj.dimension(), rng.random());
        quad.record(gradient_check(obj, &x, 1e-6), GRADIENT_TOL, || format!("scale {s}"));
    }
    out.push(quad);

    let mut tucker = BoundCheck::new("gradient_tucker");
    let y = DenseTensor::from_fn(vec![4, 5, 5], |_| rng.random_range(0.0..1.0))?;
    let obj = Tucker1Objective::new(y, 3)?;
    for _ in 0..points {
        let x: Vec<f64> = (0..obj.dimension()).map(|_| rng.random_range(0.0..1.0)).collect();
        tucker.record(gradient_check(&obj, &x, 1e-6), GRADIENT_TOL, || "4x5x5, rank 3".into());
    }
    out.push(tucker);
    Ok(out)
}

/// The default suite. Cheap checks run `trials` instances; checks that need
/// quadrature or full solves run proportionally fewer.
pub fn run_audit(trials: usize, seed: u64) -> Result<AuditReport> {
    let few = (trials / 100).max(10);
    let mut checks = vec![chord_deviation(trials, seed), chord_witness(trials, seed, 1e-12)];
    checks.extend(interpolation((trials / DYADIC_SIZES.len()).max(1), &DYADIC_SIZES, seed)?);
    checks.push(l1_coarsening(trials, seed)?);
    checks.push(linear_coarsening(trials, 1, seed)?);
    checks.push(linear_coarsening(trials, 5, seed)?);
    checks.extend(multiscale_errors(few, seed)?);
    checks.push(secant_distance_equality(few, 20_000, 1e-8, seed)?);
    checks.push(secant_distance(few, 20_000, seed)?);
    checks.push(secant_approximation(few, 20_000, seed)?);
    checks.push(continuous_accuracy(few, 20_000, seed)?);
    checks.extend(expected_descent(1000, &[3, 4, 5], &[0, 5, 10], &[1e-1, 1e-4], seed)?);
    checks.extend(plan_costs(few, seed)?);
    checks.extend(gradient_audit(100, seed)?);
    for c in &checks {
        if c.passed() {
            log::info!("{}", c.summary());
        } else {
            log::warn!("{}", c.summary());
        }
    }
    let violations = checks.iter().map(|c| c.violations).sum();
    Ok(AuditReport { seed, trials, checks, violations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_tracks_violations_and_witness() {
        let mut c = BoundCheck::new("x");
        c.record(0.5, 1.0, || "a".into());
        c.record(1.0, 1.0, || "b".into());
        assert!(c.passed());
        assert_eq!(c.witness.as_ref().unwrap().detail, "b");
        c.record(2.0, 1.0, || "c".into());
        c.record(1.0, 0.0, || "d".into());
        c.record(0.0, 0.0, || "e".into());
        assert_eq!((c.trials, c.violations), (5, 2));
        assert_eq!(c.max_ratio, f64::MAX);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<BoundCheck>(&json).unwrap(), c);
    }

    #[test]
    fn simpson_is_exact_on_cubics() {
        let v = simpson(|t| t * t * t - 2.0 * t + 1.0, -1.0, 2.0, 4);
        assert!((v - 3.75).abs() < 1e-12);
    }

    #[test]
    fn secant_reproduces_nodes_and_midpoints() {
        let x = [0.0, 2.0, 1.0];
        assert_eq!(secant(&x, 0.0, 0.5, 0.5), 2.0);
        assert_eq!(secant(&x, 0.0, 0.5, 0.75), 1.5);
        assert_eq!(secant(&x, 0.0, 0.5, 1.0), 1.0);
    }

    #[test]
    fn small_suite_is_deterministic() {
        let a = chord_deviation(200, 4);
        let b = chord_deviation(200, 4);
        assert_eq!(a, b);
        assert!(a.passed());
        let [e, i, m] = interpolation(20, &[3, 9, 65], 1).unwrap();
        assert!(e.passed() && i.passed() && m.passed(), "{e:?} {i:?} {m:?}");
    }

    #[test]
    fn halving_envelope_has_one_entry_per_size() {
        let env = l1_halving_envelope(20, 2, 0).unwrap();
        assert_eq!(env.iter().map(|e| e.0).collect::<Vec<_>>(), vec![9, 17, 33]);
    }
}
