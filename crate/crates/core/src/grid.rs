//! Uniform 1-D grids, the dyadic scale hierarchy, and the operators that move
//! sampled functions between scales.
//!
//! Indices in this module are 0-based. Node `i` of a grid with `I` points sits
//! at `lower + (upper - lower) * i / (I - 1)`; with `I - 1` a power of two the
//! ratio is exact, so coarse nodes coincide bit-for-bit with the odd (1-based)
//! nodes of the next finer grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    lower: f64,
    upper: f64,
    points: usize,
}

impl Grid1D {
    pub fn new(lower: f64, upper: f64, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::invalid(format!("a grid needs at least 2 points, got {points}")));
        }
        if !(lower.is_finite() && upper.is_finite()) || upper <= lower {
            return Err(Error::invalid(format!("empty domain [{lower}, {upper}]")));
        }
        Ok(Self { lower, upper, points })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        self.width() / (self.points - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i < self.points);
        if i == self.points - 1 {
            return self.upper;
        }
        self.lower + self.width() * (i as f64 / (self.points - 1) as f64)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.node(i)).collect()
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lower && t <= self.upper
    }
}

/// Nested dyadic grids: scale 1 is finest with `2^S + 1` points, scale `S`
/// is coarsest with 3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleHierarchy {
    lower: f64,
    upper: f64,
    coarsest_scale: usize,
}

impl ScaleHierarchy {
    /// Largest supported coarsest scale; keeps `2^S + 1` comfortably in memory.
    pub const MAX_SCALES: usize = 30;

    pub fn new(lower: f64, upper: f64, coarsest_scale: usize) -> Result<Self> {
        if coarsest_scale == 0 || coarsest_scale > Self::MAX_SCALES {
            return Err(Error::invalid(format!(
                "coarsest scale must lie in 1..={}, got {coarsest_scale}",
                Self::MAX_SCALES
            )));
        }
        Grid1D::new(lower, upper, 3)?;
        Ok(Self { lower, upper, coarsest_scale })
    }

    /// Builds the hierarchy whose finest grid has `fine_points` points.
    /// Only `2^S + 1` sizes are accepted.
    pub fn from_fine_points(lower: f64, upper: f64, fine_points: usize) -> Result<Self> {
        match dyadic_exponent(fine_points) {
            Some(s) if s >= 1 => Self::new(lower, upper, s),
            _ => Err(Error::invalid(format!(
                "fine grid size must be 2^S + 1 with S >= 1, got {fine_points}"
            ))),
        }
    }

    pub fn coarsest_scale(&self) -> usize {
        self.coarsest_scale
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn points(&self, scale: usize) -> usize {
        assert!(
            (1..=self.coarsest_scale).contains(&scale),
            "scale {scale} outside 1..={}",
            self.coarsest_scale
        );
        (1usize << (self.coarsest_scale - scale + 1)) + 1
    }

    pub fn fine_points(&self) -> usize {
        self.points(1)
    }

    pub fn grid(&self, scale: usize) -> Grid1D {
        Grid1D {
            lower: self.lower,
            upper: self.upper,
            points: self.points(scale),
        }
    }

    /// Scales from coarsest to finest.
    pub fn coarse_to_fine(&self) -> impl Iterator<Item = usize> {
        (1..=self.coarsest_scale).rev()
    }
}

/// Returns `k` when `n == 2^k + 1`.
pub fn dyadic_exponent(n: usize) -> Option<usize> {
    if n < 2 {
        return None;
    }
    let m = n - 1;
    m.is_power_of_two().then(|| m.trailing_zeros() as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledFunction {
    grid: Grid1D,
    values: Vec<f64>,
    lipschitz: Option<f64>,
}

impl SampledFunction {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.points() {
            return Err(Error::DimensionMismatch {
                expected: grid.points(),
                actual: values.len(),
            });
        }
        Ok(Self { grid, values, lipschitz: None })
    }

    /// Attaches a Lipschitz constant after checking the samples respect it.
    pub fn with_lipschitz(mut self, lipschitz: f64) -> Result<Self> {
        if !(lipschitz >= 0.0) {
            return Err(Error::invalid("Lipschitz constant must be nonnegative"));
        }
        let allowed = lipschitz * self.grid.spacing();
        let observed = vector_lipschitz(&self.values)?;
        if observed > allowed * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::invalid(format!(
                "samples vary by {observed} between neighbours, more than L*dt = {allowed}"
            )));
        }
        self.lipschitz = Some(lipschitz);
        Ok(self)
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        piecewise_eval(self, t)
    }
}

fn require_len(x: &[f64], min: usize, what: &str) -> Result<()> {
    if x.len() < min {
        Err(Error::invalid(format!(
            "{what} needs a vector of length >= {min}, got {}",
            x.len()
        )))
    } else {
        Ok(())
    }
}

/// Keeps the odd (1-based) entries: `out[i] = x[2i]` with 0-based indexing.
pub fn coarsen(x: &[f64]) -> Result<Vec<f64>> {
    require_len(x, 2, "coarsen")?;
    Ok(x.iter().step_by(2).copied().collect())
}

/// Inserts the midpoint between every adjacent pair; length `2I - 1`.
pub fn interpolate(x: &[f64]) -> Result<Vec<f64>> {
    require_len(x, 2, "interpolate")?;
    let mut out = Vec::with_capacity(2 * x.len() - 1);
    out.push(x[0]);
    for w in x.windows(2) {
        out.push(0.5 * (w[0] + w[1]));
        out.push(w[1]);
    }
    Ok(out)
}

/// The midpoints a refinement adds, i.e. the even (1-based) entries of
/// [`interpolate`].
pub fn free_variables(x_coarse: &[f64]) -> Result<Vec<f64>> {
    require_len(x_coarse, 2, "free_variables")?;
    Ok(x_coarse.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect())
}

/// Evaluates the secant interpolant through the samples.
pub fn piecewise_eval(fs: &SampledFunction, t: f64) -> Result<f64> {
    let g = fs.grid();
    if !g.contains(t) {
        return Err(Error::OutOfDomain { t, lower: g.lower(), upper: g.upper() });
    }
    let n = g.points();
    let pos = (t - g.lower()) / g.spacing();
    let mut cell = (pos.floor() as usize).min(n - 2);
    // Guard against rounding putting `t` one cell off.
    if t < g.node(cell) && cell > 0 {
        cell -= 1;
    } else if t > g.node(cell + 1) && cell + 2 < n {
        cell += 1;
    }
    let (t0, t1) = (g.node(cell), g.node(cell + 1));
    let (x0, x1) = (fs.values()[cell], fs.values()[cell + 1]);
    if t == t0 {
        return Ok(x0);
    }
    if t == t1 {
        return Ok(x1);
    }
    Ok(x0 + (x1 - x0) / (t1 - t0) * (t - t0))
}

/// Smallest `L` with `|x[i] - x[j]| <= L |i - j|`, attained on neighbours.
pub fn vector_lipschitz(x: &[f64]) -> Result<f64> {
    require_len(x, 2, "vector_lipschitz")?;
    Ok(x.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max))
}

pub fn sample(f: impl Fn(f64) -> f64, grid: Grid1D, scale_factor: f64) -> SampledFunction {
    let values = grid.nodes().into_iter().map(|t| f(t) * scale_factor).collect();
    SampledFunction { grid, values, lipschitz: None }
}

/// Splits a row-major shape around `mode` into (outer, len, inner) extents.
fn mode_extents(dims: &[usize], mode: usize) -> (usize, usize, usize) {
    let outer = dims[..mode].iter().product();
    let inner = dims[mode + 1..].iter().product();
    (outer, dims[mode], inner)
}

fn check_modes(t: &DenseTensor, modes: &[usize]) -> Result<Vec<usize>> {
    let mut sorted = modes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&m) = sorted.iter().find(|&&m| m >= t.ndim()) {
        return Err(Error::invalid(format!(
            "mode {m} out of range for a {}-mode tensor",
            t.ndim()
        )));
    }
    Ok(sorted)
}

fn coarsen_mode(t: &DenseTensor, mode: usize) -> Result<DenseTensor> {
    let (outer, len, inner) = mode_extents(t.dims(), mode);
    if len < 3 || len % 2 == 0 {
        return Err(Error::invalid(format!(
            "mode {mode} has length {len}; coarsening needs an odd length >= 3"
        )));
    }
    let new_len = len.div_ceil(2);
    let src = t.values();
    let mut out = Vec::with_capacity(outer * new_len * inner);
    for o in 0..outer {
        for i in 0..new_len {
            let start = (o * len + 2 * i) * inner;
            out.extend_from_slice(&src[start..start + inner]);
        }
    }
    let mut dims = t.dims().to_vec();
    dims[mode] = new_len;
    DenseTensor::new(dims, out)
}

fn interpolate_mode(t: &DenseTensor, mode: usize) -> Result<DenseTensor> {
    let (outer, len, inner) = mode_extents(t.dims(), mode);
    if len < 2 {
        return Err(Error::invalid(format!(
            "mode {mode} has length {len}; interpolation needs >= 2"
        )));
    }
    let new_len = 2 * len - 1;
    let src = t.values();
    let mut out = Vec::with_capacity(outer * new_len * inner);
    for o in 0..outer {
        for i in 0..len {
            let a = &src[(o * len + i) * inner..(o * len + i + 1) * inner];
            out.extend_from_slice(a);
            if i + 1 < len {
                let b = &src[(o * len + i + 1) * inner..(o * len + i + 2) * inner];
                out.extend(a.iter().zip(b).map(|(p, q)| 0.5 * (p + q)));
            }
        }
    }
    let mut dims = t.dims().to_vec();
    dims[mode] = new_len;
    DenseTensor::new(dims, out)
}

/// Applies [`coarsen`] along each listed mode, in ascending mode order.
pub fn coarsen_tensor(t: &DenseTensor, modes: &[usize]) -> Result<DenseTensor> {
    let modes = check_modes(t, modes)?;
    let mut cur = t.clone();
    for m in modes {
        cur = coarsen_mode(&cur, m)?;
    }
    Ok(cur)
}

/// Applies [`interpolate`] along each listed mode, in ascending mode order.
pub fn interpolate_tensor(t: &DenseTensor, modes: &[usize]) -> Result<DenseTensor> {
    let modes = check_modes(t, modes)?;
    let mut cur = t.clone();
    for m in modes {
        cur = interpolate_mode(&cur, m)?;
    }
    Ok(cur)
}

/// Single-mode variants, exposed so callers can pick the order themselves.
pub fn coarsen_along(t: &DenseTensor, mode: usize) -> Result<DenseTensor> {
    check_modes(t, &[mode])?;
    coarsen_mode(t, mode)
}

pub fn interpolate_along(t: &DenseTensor, mode: usize) -> Result<DenseTensor> {
    check_modes(t, &[mode])?;
    interpolate_mode(t, mode)
}
