//! Density recovery from Legendre moments: `min 1/2 ||A_s x - y||^2 +
//! 1/2 lambda x^T G_s x` over nonnegative `x` with a fixed total mass.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSet;
use crate::error::{ensure_len, Error, Result};
use crate::grid::{Grid1D, ScaleHierarchy};
use crate::multiscale::ProblemFamily;
use crate::solver::{estimate_constants, Objective, ProblemAtScale, SpectralEstimate};

/// Highest degree evaluated by the explicit binomial sum.
pub const BINOMIAL_MAX_DEGREE: usize = 9;

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0;
    for j in 0..k {
        c = c * (n - j) as f64 / (j + 1) as f64;
    }
    c.round()
}

/// `sqrt((2m+1)/2) sum_k C(m,k) C(m+k,k) ((t-1)/2)^k`.
pub fn legendre_binomial(m: usize, t: f64) -> f64 {
    let u = (t - 1.0) / 2.0;
    let mut sum = 0.0;
    let mut pow = 1.0;
    for k in 0..=m {
        sum += binomial(m, k) * binomial(m + k, k) * pow;
        pow *= u;
    }
    ((2 * m + 1) as f64 / 2.0).sqrt() * sum
}

/// Bonnet's recurrence, normalized to unit L2 norm on `[-1, 1]`.
pub fn legendre_recurrence(m: usize, t: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, t);
    if m == 0 {
        p1 = 1.0;
    }
    for n in 1..m {
        let p2 = ((2 * n + 1) as f64 * t * p1 - n as f64 * p0) / (n + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    ((2 * m + 1) as f64 / 2.0).sqrt() * p1
}

/// Normalized Legendre polynomial `a_m(t)`.
pub fn legendre_value(m: usize, t: f64) -> f64 {
    if m <= BINOMIAL_MAX_DEGREE {
        legendre_binomial(m, t)
    } else {
        legendre_recurrence(m, t)
    }
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 1..n {
                let p2 = ((2 * k + 1) as f64 * x * p1 - k as f64 * p0) / (k + 1) as f64;
                p0 = p1;
                p1 = p2;
            }
            let (p, pm1) = if n == 0 { (1.0, 0.0) } else if n == 1 { (x, 1.0) } else { (p1, p0) };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `-2.625 t^4 - 1.35 t^3 + 2.4 t^2 + 1.35 t + 0.225`, a density on `[-1, 1]`.
pub fn quartic(t: f64) -> f64 {
    (((-2.625 * t - 1.35) * t + 2.4) * t + 1.35) * t + 0.225
}

/// Density used to generate measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum GroundTruth {
    #[default]
    Quartic,
    /// Polynomial with coefficients in ascending degree.
    Polynomial(Vec<f64>),
}

impl GroundTruth {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            GroundTruth::Quartic => quartic(t),
            GroundTruth::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &a| acc * t + a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendreProblemSpec {
    /// Number of measurements.
    pub m: usize,
    /// Coarsest scale; the finest grid has `2^S + 1` points.
    pub scales: usize,
    pub lambda: f64,
    /// Noise standard deviation relative to the RMS of the clean measurements.
    pub noise_level: f64,
    pub seed: u64,
    /// Degree of the first measured polynomial.
    #[serde(default = "one")]
    pub first_degree: usize,
    #[serde(default)]
    pub truth: GroundTruth,
}

fn one() -> usize {
    1
}

impl LegendreProblemSpec {
    pub fn new(m: usize, scales: usize, lambda: f64, noise_level: f64, seed: u64) -> Self {
        Self { m, scales, lambda, noise_level, seed, first_degree: 1, truth: GroundTruth::Quartic }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::invalid("need at least one measurement"));
        }
        if self.scales == 0 || self.scales > ScaleHierarchy::MAX_SCALES {
            return Err(Error::invalid(format!("scale count {} out of range", self.scales)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if !(self.noise_level >= 0.0) || !self.noise_level.is_finite() {
            return Err(Error::invalid(format!("noise level must be nonnegative, got {}", self.noise_level)));
        }
        Ok(())
    }

    pub fn hierarchy(&self) -> ScaleHierarchy {
        ScaleHierarchy::new(-1.0, 1.0, self.scales).expect("validated scale count")
    }
}

/// Path-graph Laplacian `factor * tridiag(-1, 2, -1)` with unit corner
/// entries, stored by its size and prefactor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Laplacian {
    pub size: usize,
    pub factor: f64,
}

impl Laplacian {
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.size;
        if n == 1 {
            out[0] = 0.0;
            return;
        }
        out[0] = self.factor * (x[0] - x[1]);
        for i in 1..n - 1 {
            out[i] = self.factor * (2.0 * x[i] - x[i - 1] - x[i + 1]);
        }
        out[n - 1] = self.factor * (x[n - 1] - x[n - 2]);
    }

    /// `x^T G x = factor * sum (x[i+1] - x[i])^2`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.factor * x.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.size;
        DMatrix::from_fn(n, n, |i, j| {
            let v = if i == j {
                if n == 1 {
                    0.0
                } else if i == 0 || i == n - 1 {
                    1.0
                } else {
                    2.0
                }
            } else if i.abs_diff(j) == 1 {
                -1.0
            } else {
                0.0
            };
            self.factor * v
        })
    }
}

/// Measurement operator, regularizer and data on the finest grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementData {
    pub y: Vec<f64>,
    pub clean: Vec<f64>,
    /// Fine-grid samples `p(t_i) dt_1` of the ground truth, summing to 1.
    pub truth: Vec<f64>,
    pub operator_fine: DMatrix<f64>,
    pub laplacian_fine: Laplacian,
}

/// `A_1[m, i] = a_{first + m}(t_i)` and `G_1 = tridiag / dt_1^3`.
pub fn build_fine_operators(spec: &LegendreProblemSpec) -> Result<(DMatrix<f64>, Laplacian)> {
    spec.validate()?;
    let grid = spec.hierarchy().grid(1);
    let nodes = grid.nodes();
    let a = DMatrix::from_fn(spec.m, nodes.len(), |m, i| legendre_value(spec.first_degree + m, nodes[i]));
    let lap = Laplacian { size: nodes.len(), factor: grid.spacing().powi(-3) };
    Ok((a, lap))
}

/// Operators at scale `s`: `A_s = 2^(s-1) A_1[:, ::2^(s-1)]` and the path
/// Laplacian on the coarse points with prefactor `2^(1-s) / dt_1^3`.
pub fn scale_operators(a1: &DMatrix<f64>, g1: &Laplacian, s: usize) -> Result<(DMatrix<f64>, Laplacian)> {
    if s == 0 {
        return Err(Error::invalid("scales start at 1"));
    }
    let stride = 1usize << (s - 1);
    let cols = a1.ncols();
    if cols < 2 || !(cols - 1).is_multiple_of(stride) || (cols - 1) / stride < 2 && s > 1 {
        return Err(Error::invalid(format!("scale {s} is too coarse for {cols} fine points")));
    }
    ensure_len(g1.size, cols)?;
    let n = (cols - 1) / stride + 1;
    let factor = stride as f64;
    let a = DMatrix::from_fn(a1.nrows(), n, |m, j| factor * a1[(m, j * stride)]);
    Ok((a, Laplacian { size: n, factor: g1.factor / factor }))
}

/// Fine-grid samples of the clipped ground truth, normalized to unit sum.
pub fn truth_samples(truth: &GroundTruth, grid: Grid1D) -> Result<Vec<f64>> {
    let dt = grid.spacing();
    let mut x: Vec<f64> = grid.nodes().iter().map(|&t| truth.eval(t).max(0.0) * dt).collect();
    let total: f64 = x.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("ground truth has no positive mass on the grid"));
    }
    x.iter_mut().for_each(|v| *v /= total);
    Ok(x)
}

/// Clean moments of the ground truth plus Gaussian noise with standard
/// deviation `noise_level ||clean|| / sqrt(M)`.
pub fn generate_measurements(spec: &LegendreProblemSpec) -> Result<MeasurementData> {
    let (a, lap) = build_fine_operators(spec)?;
    let truth = truth_samples(&spec.truth, spec.hierarchy().grid(1))?;
    let clean: Vec<f64> = (&a * DVector::from_column_slice(&truth)).iter().copied().collect();
    let y = add_noise(&clean, spec.noise_level, spec.seed)?;
    Ok(MeasurementData { y, clean, truth, operator_fine: a, laplacian_fine: lap })
}

fn add_noise(clean: &[f64], level: f64, seed: u64) -> Result<Vec<f64>> {
    let sigma = level * crate::solver::norm(clean) / (clean.len() as f64).sqrt();
    let mut y = clean.to_vec();
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
        y.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    Ok(y)
}

/// `1/2 ||A x - y||^2 + 1/2 lambda x^T G x`.
#[derive(Debug, Clone)]
pub struct LegendreObjective {
    pub operator: DMatrix<f64>,
    pub laplacian: Laplacian,
    pub y: DVector<f64>,
    pub lambda: f64,
}

impl LegendreObjective {
    fn residual(&self, x: &[f64]) -> DVector<f64> {
        &self.operator * DVector::from_column_slice(x) - &self.y
    }

    /// Applies the Hessian `A^T A + lambda G`.
    pub fn hessian_apply(&self, x: &[f64], out: &mut [f64]) {
        let ax = &self.operator * DVector::from_column_slice(x);
        self.laplacian.apply(x, out);
        let at = self.operator.tr_mul(&ax);
        for (o, a) in out.iter_mut().zip(at.iter()) {
            *o = self.lambda * *o + a;
        }
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        self.operator.tr_mul(&self.operator) + self.laplacian.to_dense() * self.lambda
    }
}

impl Objective for LegendreObjective {
    fn dimension(&self) -> usize {
        self.operator.ncols()
    }

    fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.residual(x).norm_squared() + 0.5 * self.lambda * self.laplacian.quadratic_form(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.value_and_gradient(x, out);
    }

    fn value_and_gradient(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let r = self.residual(x);
        self.laplacian.apply(x, out);
        let at = self.operator.tr_mul(&r);
        for (o, a) in out.iter_mut().zip(at.iter()) {
            *o = self.lambda * *o + a;
        }
        0.5 * r.norm_squared() + 0.5 * self.lambda * self.laplacian.quadratic_form(x)
    }
}

/// Every scale of the density-recovery problem, with curvature constants
/// estimated once per scale.
#[derive(Debug, Clone)]
pub struct LegendreFamily {
    spec: LegendreProblemSpec,
    data: MeasurementData,
    objectives: Vec<Arc<LegendreObjective>>,
    constants: Vec<SpectralEstimate>,
}

impl LegendreFamily {
    pub fn new(spec: LegendreProblemSpec) -> Result<Self> {
        let data = generate_measurements(&spec)?;
        Self::with_data(spec, data)
    }

    pub fn with_data(spec: LegendreProblemSpec, data: MeasurementData) -> Result<Self> {
        spec.validate()?;
        ensure_len(data.y.len(), spec.m)?;
        let y = DVector::from_column_slice(&data.y);
        let mut objectives = Vec::with_capacity(spec.scales);
        let mut constants = Vec::with_capacity(spec.scales);
        for s in 1..=spec.scales {
            let (a, g) = scale_operators(&data.operator_fine, &data.laplacian_fine, s)?;
            let obj = LegendreObjective { operator: a, laplacian: g, y: y.clone(), lambda: spec.lambda };
            let est = estimate_constants(&|x, out| obj.hessian_apply(x, out), obj.dimension());
            if !est.converged {
                log::debug!("power iteration hit its cap at scale {s}");
            }
            if !(est.smoothness > 0.0) {
                return Err(Error::invalid(format!("objective at scale {s} has no curvature")));
            }
            objectives.push(Arc::new(obj));
            constants.push(est);
        }
        Ok(Self { spec, data, objectives, constants })
    }

    /// Same operators and constants with the measurement noise redrawn from
    /// `seed`. The Hessian does not depend on `y`, so nothing is re-estimated.
    pub fn with_seed(&self, seed: u64) -> Result<Self> {
        let spec = LegendreProblemSpec { seed, ..self.spec.clone() };
        let y = add_noise(&self.data.clean, spec.noise_level, seed)?;
        let yv = DVector::from_column_slice(&y);
        let objectives = self
            .objectives
            .iter()
            .map(|o| Arc::new(LegendreObjective { y: yv.clone(), ..(**o).clone() }))
            .collect();
        let data = MeasurementData { y, ..self.data.clone() };
        Ok(Self { spec, data, objectives, constants: self.constants.clone() })
    }

    pub fn spec(&self) -> &LegendreProblemSpec {
        &self.spec
    }

    pub fn data(&self) -> &MeasurementData {
        &self.data
    }

    pub fn objective(&self, scale: usize) -> &Arc<LegendreObjective> {
        &self.objectives[scale - 1]
    }

    pub fn constants(&self, scale: usize) -> SpectralEstimate {
        self.constants[scale - 1]
    }

    /// Mass `I_s / I_1` of a feasible iterate at scale `s`.
    pub fn mass(&self, scale: usize) -> f64 {
        let h = self.spec.hierarchy();
        h.points(scale) as f64 / h.fine_points() as f64
    }

    /// The quartic sampled at scale `s` as `p(t) dt_s`, before projection.
    pub fn quartic_init(&self, scale: usize) -> Vec<f64> {
        let grid = self.spec.hierarchy().grid(scale);
        grid.nodes().iter().map(|&t| quartic(t) * grid.spacing()).collect()
    }
}

impl ProblemFamily for LegendreFamily {
    fn hierarchy(&self) -> ScaleHierarchy {
        self.spec.hierarchy()
    }

    fn problem(&self, scale: usize) -> Result<ProblemAtScale> {
        if scale == 0 || scale > self.spec.scales {
            return Err(Error::invalid(format!("scale {scale} outside 1..={}", self.spec.scales)));
        }
        let c = self.constants[scale - 1];
        ProblemAtScale::new(
            scale,
            self.objectives[scale - 1].clone(),
            ConstraintSet::scaled_simplex(self.mass(scale))?,
            c.smoothness,
            c.strong_convexity,
        )
    }
}
