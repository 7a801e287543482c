//! Closed-form error, cost and threshold bounds for interpolation and the
//! multiscale drivers, as pure functions usable as test oracles.
//!
//! Scale-indexed iteration counts are passed finest first: `counts[s - 1]` is
//! `K_s`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be a nonnegative number, got {v}")))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

fn rate(q: f64) -> Result<()> {
    if (0.0..1.0).contains(&q) {
        Ok(())
    } else {
        Err(Error::invalid(format!("rate must lie in [0, 1), got {q}")))
    }
}

fn weights(l1: f64, l2: f64) -> Result<()> {
    nonneg("lambda1", l1)?;
    nonneg("lambda2", l2)?;
    if (l1 + l2 - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("weights must sum to 1, got {l1} + {l2}")));
    }
    Ok(())
}

/// `2 L lambda1 lambda2 dist`: how far a Lipschitz function can stray from the
/// chord at a convex combination of two points.
pub fn lipschitz_interp_bound(l: f64, lambda1: f64, lambda2: f64, dist: f64) -> Result<f64> {
    nonneg("Lipschitz constant", l)?;
    weights(lambda1, lambda2)?;
    nonneg("distance", dist)?;
    Ok(2.0 * l * lambda1 * lambda2 * dist)
}

/// The function `t -> L |t - (lambda1 lower + lambda2 upper)|`, which attains
/// [`lipschitz_interp_bound`] on `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TightWitness {
    pub center: f64,
    pub lipschitz: f64,
}

impl TightWitness {
    pub fn eval(&self, t: f64) -> f64 {
        self.lipschitz * (t - self.center).abs()
    }
}

pub fn tight_witness(lambda1: f64, lambda2: f64, lower: f64, upper: f64, l: f64) -> Result<TightWitness> {
    weights(lambda1, lambda2)?;
    nonneg("Lipschitz constant", l)?;
    if !(upper > lower) {
        return Err(Error::invalid("need lower < upper"));
    }
    Ok(TightWitness { center: lambda1 * lower + lambda2 * upper, lipschitz: l })
}

/// `L width / (2 sqrt(I - 1))` for interpolating exact samples on `I` coarse points.
pub fn exact_interp_bound(l: f64, coarse_points: usize, width: f64) -> Result<f64> {
    nonneg("Lipschitz constant", l)?;
    positive("width", width)?;
    if coarse_points < 2 {
        return Err(Error::invalid("need at least 2 coarse points"));
    }
    Ok(l * width / (2.0 * ((coarse_points - 1) as f64).sqrt()))
}

/// `sqrt(2) ||delta|| + L width / (2 sqrt(I - 1))` when the coarse samples carry error `delta`.
pub fn inexact_interp_bound(l: f64, coarse_points: usize, width: f64, delta_norm: f64) -> Result<f64> {
    nonneg("delta norm", delta_norm)?;
    Ok(SQRT2 * delta_norm + exact_interp_bound(l, coarse_points, width)?)
}

/// `L width / (2 sqrt(2^(S - s))) + e_s`: error on the midpoints added when
/// refining from scale `s` to `s - 1`, given error `e_s` at scale `s`.
pub fn lazy_interp_bound(l: f64, width: f64, coarsest: usize, scale: usize, e_s: f64) -> Result<f64> {
    nonneg("Lipschitz constant", l)?;
    positive("width", width)?;
    nonneg("coarse error", e_s)?;
    if scale == 0 || scale > coarsest {
        return Err(Error::invalid(format!("scale {scale} outside 1..={coarsest}")));
    }
    Ok(l * width / (2.0 * 2f64.powi((coarsest - scale) as i32).sqrt()) + e_s)
}

/// Inputs shared by the multiscale error bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Lipschitz constant of the solution function.
    pub lipschitz: f64,
    /// Iterate contraction factor of the update rule.
    pub q: f64,
    /// `counts[s - 1] = K_s`; the length is the coarsest scale `S`.
    pub counts: Vec<usize>,
    pub width: f64,
    /// `||x_S^0 - x_S^*||`.
    pub initial_error: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        nonneg("Lipschitz constant", self.lipschitz)?;
        rate(self.q)?;
        positive("width", self.width)?;
        nonneg("initial error", self.initial_error)?;
        if self.counts.is_empty() {
            return Err(Error::invalid("need at least one scale"));
        }
        Ok(())
    }

    pub fn scales(&self) -> usize {
        self.counts.len()
    }

    fn qpow(&self, k: usize) -> f64 {
        self.q.powi(k as i32)
    }
}

/// Final-error bound for the greedy driver:
/// `sqrt(2^(S-1)) q^(r_S) e_0 + L w / (2 sqrt(2^(S+1))) sum_{s<S} 2^s q^(r_s)`
/// with `r_s = K_1 + ... + K_s`.
pub fn greedy_error_bound(inp: &BoundInputs) -> Result<f64> {
    inp.validate()?;
    let s_max = inp.scales();
    let mut r = 0usize;
    let mut r_s = Vec::with_capacity(s_max);
    for &k in &inp.counts {
        r += k;
        r_s.push(r);
    }
    let head = 2f64.powi(s_max as i32 - 1).sqrt() * inp.qpow(r_s[s_max - 1]) * inp.initial_error;
    let c = inp.lipschitz * inp.width / (2.0 * 2f64.powi(s_max as i32 + 1).sqrt());
    let tail: f64 = (1..s_max).map(|s| 2f64.powi(s as i32) * inp.qpow(r_s[s - 1])).sum();
    Ok(head + c * tail)
}

/// Final-error bound for the lazy driver with arbitrary per-scale counts:
/// `e_0 q^(K_S) prod_{s<S} (1 + q^(K_s)) + (L w / 2) sum_{s<S} q^(K_s) prod_{j<s} (1 + q^(K_j)) / sqrt(2^(S-s))`.
pub fn lazy_error_bound_general(inp: &BoundInputs) -> Result<f64> {
    inp.validate()?;
    let s_max = inp.scales();
    let d = |s: usize| inp.qpow(inp.counts[s - 1]);
    let prod_all: f64 = (1..s_max).map(|s| 1.0 + d(s)).product();
    let head = inp.initial_error * d(s_max) * prod_all;
    let mut tail = 0.0;
    let mut prefix = 1.0;
    for s in 1..s_max {
        tail += d(s) * prefix / 2f64.powi((s_max - s) as i32).sqrt();
        prefix *= 1.0 + d(s);
    }
    Ok(head + 0.5 * inp.lipschitz * inp.width * tail)
}

/// `(d (sqrt(2^S) (d+1)^S - sqrt(2) (d+1))) / (sqrt(2^S) (d+1) (sqrt(2) d + sqrt(2) - 1))`,
/// the closed form of `sum_{s<S} d (1+d)^(s-1) / sqrt(2^(S-s))`.
fn lazy_geometric(d: f64, s_max: usize) -> f64 {
    let r = d + 1.0;
    let root = 2f64.powi(s_max as i32).sqrt();
    d * (root * r.powi(s_max as i32) - SQRT2 * r) / (root * r * (SQRT2 * d + SQRT2 - 1.0))
}

/// Lazy bound for a constant count `K` at every scale, in closed form with
/// `d = q^K`. Requires all entries of `counts` equal.
pub fn lazy_error_bound_const(inp: &BoundInputs) -> Result<f64> {
    inp.validate()?;
    let k = inp.counts[0];
    if inp.counts.iter().any(|&c| c != k) {
        return Err(Error::invalid("the closed form needs the same count at every scale"));
    }
    let s_max = inp.scales();
    let d = inp.qpow(k);
    Ok(inp.initial_error * d * (d + 1.0).powi(s_max as i32 - 1)
        + 0.5 * inp.lipschitz * inp.width * lazy_geometric(d, s_max))
}

/// `sqrt(2 dt / 3) ||x - y||`, the claimed bound on the L2 distance between
/// two secant interpolants on a common grid with spacing `dt`.
pub fn piecewise_distance_bound(dt: f64, diff_norm: f64) -> Result<f64> {
    positive("spacing", dt)?;
    nonneg("difference norm", diff_norm)?;
    Ok((2.0 * dt / 3.0).sqrt() * diff_norm)
}

/// `sqrt((2/15) width dt^2 L^2)`: L2 distance between a Lipschitz function
/// and its secant interpolant.
pub fn piecewise_approx_bound(l: f64, width: f64, dt: f64) -> Result<f64> {
    nonneg("Lipschitz constant", l)?;
    positive("width", width)?;
    positive("spacing", dt)?;
    Ok((2.0 / 15.0 * width * dt * dt * l * l).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectionThresholds {
    /// The grid needs strictly more than this many points.
    pub points_above: f64,
    /// `||x - x*||_2^2` must stay strictly below this.
    pub max_squared_error: f64,
}

/// Grid size and discrete accuracy that make the secant interpolant of a
/// discrete solution `epsilon`-close to the continuous one in L2:
/// `I > C / epsilon + 1` and `||x - x*||^2 < D epsilon` with
/// `C = sqrt(8/15) w^(3/2) L` and `D = sqrt(3/40) w^(1/2) L`.
pub fn connection_thresholds(l: f64, width: f64, epsilon: f64) -> Result<ConnectionThresholds> {
    positive("Lipschitz constant", l)?;
    positive("width", width)?;
    positive("epsilon", epsilon)?;
    let c = (8.0f64 / 15.0).sqrt() * width.powf(1.5) * l;
    let d = (3.0f64 / 40.0).sqrt() * width.sqrt() * l;
    Ok(ConnectionThresholds { points_above: c / epsilon + 1.0, max_squared_error: d * epsilon })
}

/// `q^K sqrt(2^S + 2)`: expected error of descent from a Gaussian start on the
/// `2^S + 1` point grid.
pub fn expected_pgd_bound(q: f64, k: usize, scales: usize) -> Result<f64> {
    rate(q)?;
    Ok(q.powi(k as i32) * (2f64.powi(scales as i32) + 2.0).sqrt())
}

/// Smallest `K` with `q^K sqrt(2^S + 2) <= epsilon`.
pub fn pgd_iterations_needed(epsilon: f64, q: f64, scales: usize) -> Result<usize> {
    positive("epsilon", epsilon)?;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("rate must lie in (0, 1), got {q}")));
    }
    let num = (1.0 / epsilon).ln() + 0.5 * (2f64.powi(scales as i32) + 2.0).ln();
    Ok((num / -q.ln()).ceil().max(0.0) as usize)
}

/// Expected greedy error from a Gaussian start:
/// `q^(K_1) sqrt(2^(S+1)) (q^(r_S) + L w / 2^(S+2) sum_{s<S} 2^s q^(r_s))`
/// with `r_s = K_2 + ... + K_s` and `r_1 = 0`.
pub fn expected_greedy_bound(q: f64, counts: &[usize], l: f64, width: f64) -> Result<f64> {
    let inp = BoundInputs { lipschitz: l, q, counts: counts.to_vec(), width, initial_error: 0.0 };
    inp.validate()?;
    let s_max = counts.len();
    let mut r_s = vec![0usize; s_max];
    for s in 2..=s_max {
        r_s[s - 1] = r_s[s - 2] + counts[s - 1];
    }
    let tail: f64 = (1..s_max).map(|s| 2f64.powi(s as i32) * inp.qpow(r_s[s - 1])).sum();
    Ok(inp.qpow(counts[0])
        * 2f64.powi(s_max as i32 + 1).sqrt()
        * (inp.qpow(r_s[s_max - 1]) + l * width / 2f64.powi(s_max as i32 + 2) * tail))
}

/// Expected lazy error from a Gaussian start with `K` iterations per scale.
pub fn expected_lazy_bound(q: f64, k: usize, scales: usize, l: f64, width: f64) -> Result<f64> {
    rate(q)?;
    nonneg("Lipschitz constant", l)?;
    positive("width", width)?;
    if scales == 0 {
        return Err(Error::invalid("need at least one scale"));
    }
    let d = q.powi(k as i32);
    let geo = if d == 0.0 { 0.0 } else { lazy_geometric(d, scales) / d };
    Ok(d * (2.0 * (d + 1.0).powi(scales as i32 - 1) + 0.5 * l * width * geo))
}

/// Scale count from which greedy descent with one iteration per coarse scale
/// is both cheaper and has a tighter expected bound than plain descent:
/// `max(4, ceil(log2(L w / (sqrt(2) q^2 (1 - 2q) (1 - sqrt(2) q)))))`.
pub fn greedy_better_min_scales(q: f64, l: f64, width: f64) -> Result<usize> {
    if !(q > 0.0 && q < 0.5) {
        return Err(Error::Inapplicable(format!("needs a rate in (0, 1/2), got {q}")));
    }
    nonneg("Lipschitz constant", l)?;
    positive("width", width)?;
    let denom = SQRT2 * q * q * (1.0 - 2.0 * q) * (1.0 - SQRT2 * q);
    let s = (l * width / denom).log2().ceil();
    if !s.is_finite() && s > 0.0 || s > 1e6 {
        return Err(Error::Inapplicable(format!("threshold diverges at q = {q}")));
    }
    Ok(if s.is_finite() { (s.max(4.0)) as usize } else { 4 })
}

/// Scale count from which the lazy driver with `ceil(4K/5) - 1` iterations per
/// scale is both cheaper and has a tighter expected bound than `K` iterations
/// of plain descent.
///
/// Besides the stated lower bound on `K`, the formula needs
/// `sqrt(2) > 1 + q^(K')`; inputs violating either are reported inapplicable.
pub fn lazy_better_min_scales(q: f64, k: usize, l: f64, width: f64) -> Result<usize> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Inapplicable(format!("needs a rate in (0, 1), got {q}")));
    }
    nonneg("Lipschitz constant", l)?;
    positive("width", width)?;
    let k_min = 5.0 * ((SQRT2 - 1.0).ln() / q.ln() - 1.0) / 4.0;
    if !(k as f64 > k_min) {
        return Err(Error::Inapplicable(format!("needs K > {k_min}, got {k}")));
    }
    let kp = crate::multiscale::lazy_per_scale(k).map_err(|e| Error::Inapplicable(e.to_string()))?;
    let h = 1.0 + q.powi(kp as i32);
    if SQRT2 / h <= 1.0 {
        return Err(Error::Inapplicable(format!(
            "sqrt(2) / (1 + q^K') = {} is not above 1",
            SQRT2 / h
        )));
    }
    let g = q.powf(-(k as f64) / 5.0 - 1.0);
    let c = 0.5 * l * width;
    let num = (g / h * (2.0 + c / (h * SQRT2 - 1.0))).ln();
    let s = (num / (SQRT2 / h).ln()).ceil();
    if !s.is_finite() || s > 1e6 {
        return Err(Error::Inapplicable("threshold diverges".into()));
    }
    Ok(s.max(2.0) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn lipschitz_interp_examples() {
        assert_eq!(lipschitz_interp_bound(3.0, 0.0, 1.0, 5.0).unwrap(), 0.0);
        assert_eq!(lipschitz_interp_bound(1.0, 0.5, 0.5, 2.0).unwrap(), 1.0);
        assert!(lipschitz_interp_bound(1.0, 0.5, 0.6, 2.0).is_err());
        let w = tight_witness(0.3, 0.7, -1.0, 2.0, 4.0).unwrap();
        let lhs = (w.eval(-0.3 + 0.7 * 2.0) - (0.3 * w.eval(-1.0) + 0.7 * w.eval(2.0))).abs();
        let rhs = lipschitz_interp_bound(4.0, 0.3, 0.7, 3.0).unwrap();
        assert!(rel(lhs, rhs) < 1e-12);
    }

    #[test]
    fn interp_bound_examples() {
        let l = 1.0 + 3.0 * std::f64::consts::PI;
        let b = exact_interp_bound(l, 5, 1.0).unwrap();
        assert!((b - l / 4.0).abs() < 1e-15);
        // Dense check on t - cos(3 pi t): interpolate 5 coarse samples to 9.
        let f = |t: f64| t - (3.0 * std::f64::consts::PI * t).cos();
        let coarse: Vec<f64> = (0..5).map(|i| f(i as f64 / 4.0)).collect();
        let fine: Vec<f64> = (0..9).map(|i| f(i as f64 / 8.0)).collect();
        let up = crate::grid::interpolate(&coarse).unwrap();
        let err = crate::solver::distance(&up, &fine);
        assert!(err <= b);
        assert_eq!(inexact_interp_bound(l, 5, 1.0, 0.0).unwrap(), b);
        assert!(exact_interp_bound(1.0, 1, 1.0).is_err());
    }

    #[test]
    fn greedy_single_scale_is_plain_contraction() {
        let inp = BoundInputs { lipschitz: 7.0, q: 0.6, counts: vec![5], width: 2.0, initial_error: 3.0 };
        assert!(rel(greedy_error_bound(&inp).unwrap(), 3.0 * 0.6f64.powi(5)) < 1e-15);
        assert!(rel(lazy_error_bound_general(&inp).unwrap(), 3.0 * 0.6f64.powi(5)) < 1e-15);
    }

    #[test]
    fn lazy_closed_form_matches_the_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let s = rng.random_range(1..14);
            let k = rng.random_range(0..20);
            let inp = BoundInputs {
                lipschitz: rng.random_range(0.0..50.0),
                q: rng.random_range(0.01..0.99),
                counts: vec![k; s],
                width: rng.random_range(0.1..5.0),
                initial_error: rng.random_range(0.0..10.0),
            };
            let a = lazy_error_bound_general(&inp).unwrap();
            let b = lazy_error_bound_const(&inp).unwrap();
            assert!(rel(a, b) < 1e-12 || (a - b).abs() < 1e-300, "{a} vs {b}");
        }
    }

    #[test]
    fn piecewise_examples() {
        assert!(rel(piecewise_distance_bound(0.75, 2.0).unwrap(), 2.0 * 0.5f64.sqrt()) < 1e-15);
        let b = piecewise_approx_bound(3.0, 2.0, 0.1).unwrap();
        assert!(rel(b * b, 2.0 / 15.0 * 2.0 * 0.01 * 9.0) < 1e-14);
    }

    #[test]
    fn connection_budget_splits_epsilon() {
        // With I at the threshold and squared error at the cap, the two parts of
        // the triangle inequality are each epsilon / 2.
        for (l, w, eps) in [(1.0, 1.0, 0.1), (5.0, 3.0, 0.01), (0.2, 10.0, 1.0)] {
            let t = connection_thresholds(l, w, eps).unwrap();
            let dt = w / (t.points_above - 1.0);
            let approx = piecewise_approx_bound(l, w, dt).unwrap();
            let dist = piecewise_distance_bound(dt, t.max_squared_error.sqrt()).unwrap();
            assert!(rel(approx, eps / 2.0) < 1e-12);
            assert!(rel(dist, eps / 2.0) < 1e-12);
        }
    }

    #[test]
    fn pgd_iterations_invert_the_bound() {
        assert_eq!(expected_pgd_bound(0.3, 0, 4).unwrap(), 18f64.sqrt());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let eps = 10f64.powf(rng.random_range(-8.0..0.0));
            let q = rng.random_range(0.05..0.995);
            let s = rng.random_range(1..20);
            let k = pgd_iterations_needed(eps, q, s).unwrap();
            assert!(expected_pgd_bound(q, k, s).unwrap() <= eps * (1.0 + 1e-12));
            if k > 0 {
                assert!(expected_pgd_bound(q, k - 1, s).unwrap() > eps);
            }
        }
    }

    #[test]
    fn expected_greedy_reduces_to_pgd_shape() {
        // One scale: q^K1 sqrt(4) (q^0 + 0) = 2 q^K1.
        assert!(rel(expected_greedy_bound(0.5, &[3], 1.0, 1.0).unwrap(), 0.25) < 1e-15);
        // Two scales, hand evaluation.
        let v = expected_greedy_bound(0.5, &[2, 1], 4.0, 1.0).unwrap();
        let hand = 0.25 * 8f64.sqrt() * (0.5 + 4.0 / 16.0 * 2.0);
        assert!(rel(v, hand) < 1e-15);
    }

    #[test]
    fn expected_lazy_matches_deterministic_form_with_error_two() {
        for (q, k, s, l, w) in [(0.5, 3, 4, 2.0, 1.0), (0.9, 10, 7, 30.0, 2.0), (0.1, 1, 2, 0.0, 1.0)] {
            let inp = BoundInputs { lipschitz: l, q, counts: vec![k; s], width: w, initial_error: 2.0 };
            let a = lazy_error_bound_const(&inp).unwrap();
            let b = expected_lazy_bound(q, k, s, l, w).unwrap();
            assert!(rel(a, b) < 1e-12);
        }
    }

    #[test]
    fn greedy_min_scales_examples() {
        assert!(greedy_better_min_scales(0.5, 1.0, 1.0).is_err());
        assert!(greedy_better_min_scales(0.0, 1.0, 1.0).is_err());
        let s = greedy_better_min_scales(0.25, 1.0, 1.0).unwrap();
        assert!(s >= 4);
        let q: f64 = 0.25;
        let raw = (1.0 / (SQRT2 * q * q * (1.0 - 2.0 * q) * (1.0 - SQRT2 * q))).log2().ceil();
        assert_eq!(s, raw.max(4.0) as usize);
        // The alternate spelling (1 - 2q)(q^2 - sqrt(2) q^3) is the same number.
        for q in [0.05, 0.2, 0.3, 0.45] {
            let a = q * q * (1.0 - 2.0 * q) * (1.0 - SQRT2 * q);
            let b = (1.0 - 2.0 * q) * (q * q - SQRT2 * q * q * q);
            assert!(rel(a, b) < 1e-14);
        }
        assert!(greedy_better_min_scales(0.499_999_999_999, 1e300, 1.0).is_err());
        assert_eq!(greedy_better_min_scales(0.2, 0.0, 1.0).unwrap(), 4);
    }

    #[test]
    fn greedy_min_scales_make_the_comparison_hold() {
        for q in [0.1, 0.2, 0.3, 0.4] {
            for lw in [0.5, 5.0, 50.0] {
                let s = greedy_better_min_scales(q, lw, 1.0).unwrap();
                for k in [5usize, 20, 60] {
                    let mut counts = vec![1; s];
                    counts[0] = k - 2;
                    let ms = expected_greedy_bound(q, &counts, lw, 1.0).unwrap();
                    let pgd = expected_pgd_bound(q, k, s).unwrap();
                    assert!(ms < pgd, "q={q} lw={lw} k={k}: {ms} >= {pgd}");
                }
            }
        }
    }

    #[test]
    fn lazy_min_scales_behaviour() {
        assert!(matches!(lazy_better_min_scales(0.9, 2, 1.0, 1.0), Err(Error::Inapplicable(_))));
        for q in [0.3, 0.6, 0.8] {
            for k in [20usize, 40] {
                let s = match lazy_better_min_scales(q, k, 5.0, 1.0) {
                    Ok(s) => s,
                    Err(_) => continue,
                };
                let kp = crate::multiscale::lazy_per_scale(k).unwrap();
                for extra in 0..3 {
                    let lazy = expected_lazy_bound(q, kp, s + extra, 5.0, 1.0).unwrap();
                    let pgd = expected_pgd_bound(q, k, s + extra).unwrap();
                    assert!(lazy < pgd, "q={q} k={k} s={s}");
                }
            }
        }
    }

    #[test]
    fn bounds_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let base = BoundInputs {
                lipschitz: rng.random_range(0.0..10.0),
                q: rng.random_range(0.0..0.99),
                counts: (0..rng.random_range(1..8)).map(|_| rng.random_range(0..10)).collect(),
                width: rng.random_range(0.1..4.0),
                initial_error: rng.random_range(0.0..5.0),
            };
            let g0 = greedy_error_bound(&base).unwrap();
            let l0 = lazy_error_bound_general(&base).unwrap();
            let mut up = base.clone();
            up.lipschitz *= 1.5;
            up.width *= 1.2;
            up.initial_error += 0.5;
            assert!(greedy_error_bound(&up).unwrap() >= g0);
            assert!(lazy_error_bound_general(&up).unwrap() >= l0);
            let mut more = base.clone();
            let i = rng.random_range(0..more.counts.len());
            more.counts[i] += 1;
            assert!(greedy_error_bound(&more).unwrap() <= g0 * (1.0 + 1e-12));
            assert!(lazy_error_bound_general(&more).unwrap() <= l0 * (1.0 + 1e-12));

            let (l, w, i) = (base.lipschitz, base.width, rng.random_range(2..100usize));
            let e = exact_interp_bound(l, i, w).unwrap();
            assert!(exact_interp_bound(l, i + 1, w).unwrap() <= e);
            assert!(exact_interp_bound(l * 2.0, i, w).unwrap() >= e);
            assert!(inexact_interp_bound(l, i, w, 1.0).unwrap() >= inexact_interp_bound(l, i, w, 0.5).unwrap());
        }
    }
}
