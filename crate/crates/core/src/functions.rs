//! Lipschitz test functions with known constants, for driving the bound
//! oracles on randomized instances.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{sample, Grid1D, SampledFunction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LipschitzFn {
    /// Continuous piecewise-linear function through `(knots[i], values[i])`,
    /// constant outside the knot range.
    PiecewiseLinear { knots: Vec<f64>, values: Vec<f64> },
    /// `offset + sum_k amp[k] sin(freq[k] t + phase[k])`.
    Sinusoids { offset: f64, amp: Vec<f64>, freq: Vec<f64>, phase: Vec<f64> },
}

impl LipschitzFn {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            LipschitzFn::PiecewiseLinear { knots, values } => {
                if t <= knots[0] {
                    return values[0];
                }
                let last = knots.len() - 1;
                if t >= knots[last] {
                    return values[last];
                }
                let j = knots.partition_point(|&k| k <= t) - 1;
                let w = (t - knots[j]) / (knots[j + 1] - knots[j]);
                values[j] + w * (values[j + 1] - values[j])
            }
            LipschitzFn::Sinusoids { offset, amp, freq, phase } => {
                offset
                    + amp
                        .iter()
                        .zip(freq)
                        .zip(phase)
                        .map(|((a, w), p)| a * (w * t + p).sin())
                        .sum::<f64>()
            }
        }
    }

    /// A valid (for piecewise-linear functions, the smallest) Lipschitz constant.
    pub fn lipschitz(&self) -> f64 {
        match self {
            LipschitzFn::PiecewiseLinear { knots, values } => knots
                .windows(2)
                .zip(values.windows(2))
                .map(|(k, v)| ((v[1] - v[0]) / (k[1] - k[0])).abs())
                .fold(0.0, f64::max),
            LipschitzFn::Sinusoids { amp, freq, .. } => {
                amp.iter().zip(freq).map(|(a, w)| (a * w).abs()).sum()
            }
        }
    }

    /// Upper bound on `sup |f|`.
    pub fn sup_bound(&self) -> f64 {
        match self {
            LipschitzFn::PiecewiseLinear { values, .. } => {
                values.iter().map(|v| v.abs()).fold(0.0, f64::max)
            }
            LipschitzFn::Sinusoids { offset, amp, .. } => {
                offset.abs() + amp.iter().map(|a| a.abs()).sum::<f64>()
            }
        }
    }

    /// Random piecewise-linear function on `[lower, upper]` with `pieces`
    /// linear pieces and slopes drawn uniformly from `[-max_slope, max_slope]`.
    pub fn random_piecewise<R: Rng>(rng: &mut R, lower: f64, upper: f64, pieces: usize, max_slope: f64) -> Self {
        let pieces = pieces.max(1);
        let mut inner: Vec<f64> = (0..pieces - 1).map(|_| rng.random_range(lower..upper)).collect();
        inner.sort_by(f64::total_cmp);
        let mut knots = Vec::with_capacity(pieces + 1);
        knots.push(lower);
        knots.extend(inner);
        knots.push(upper);
        knots.dedup();
        let mut values = vec![rng.random_range(-1.0..1.0)];
        for w in knots.windows(2) {
            let slope = rng.random_range(-max_slope..=max_slope);
            let prev = *values.last().unwrap();
            values.push(prev + slope * (w[1] - w[0]));
        }
        LipschitzFn::PiecewiseLinear { knots, values }
    }

    /// Random sum of `terms` sinusoids with total Lipschitz constant at most
    /// `lipschitz`.
    pub fn random_sinusoids<R: Rng>(rng: &mut R, terms: usize, lipschitz: f64, max_freq: f64) -> Self {
        let terms = terms.max(1);
        let freq: Vec<f64> = (0..terms).map(|_| rng.random_range(0.1..max_freq.max(0.2))).collect();
        let weights: Vec<f64> = (0..terms).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let amp = weights
            .iter()
            .zip(&freq)
            .map(|(w, f)| lipschitz * w / total / f)
            .collect();
        let phase = (0..terms).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        LipschitzFn::Sinusoids { offset: rng.random_range(-1.0..1.0), amp, freq, phase }
    }

    pub fn sample_on(&self, grid: Grid1D) -> SampledFunction {
        sample(|t| self.eval(t), grid, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn piecewise_constant_is_respected_on_dense_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let f = LipschitzFn::random_piecewise(&mut rng, -2.0, 3.0, 7, 4.0);
            assert!(f.lipschitz() <= 4.0 + 1e-12);
            let g = Grid1D::new(-2.0, 3.0, 2001).unwrap();
            let s = f.sample_on(g);
            let obs = crate::grid::vector_lipschitz(s.values()).unwrap() / g.spacing();
            assert!(obs <= f.lipschitz() * (1.0 + 1e-9));
            assert!(s.values().iter().all(|v| v.abs() <= f.sup_bound() + 1e-12));
        }
    }

    #[test]
    fn sinusoid_constant_is_an_upper_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let f = LipschitzFn::random_sinusoids(&mut rng, 4, 2.5, 20.0);
            assert!((f.lipschitz() - 2.5).abs() < 1e-12);
            let g = Grid1D::new(0.0, 1.0, 4001).unwrap();
            let s = f.sample_on(g);
            let obs = crate::grid::vector_lipschitz(s.values()).unwrap() / g.spacing();
            assert!(obs <= 2.5 * (1.0 + 1e-9));
        }
    }
}
