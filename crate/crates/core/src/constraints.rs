//! Euclidean projections onto the feasible sets used by the problem families,
//! and the rules that carry norm and linear constraints across scales.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

pub fn project_nonneg(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn project_nonneg_in_place(x: &mut [f64]) {
    for v in x {
        *v = v.max(0.0);
    }
}

/// Projects onto `{y >= 0, sum(y) = c}`.
pub fn project_scaled_simplex(x: &[f64], c: f64) -> Result<Vec<f64>> {
    let mut y = x.to_vec();
    project_scaled_simplex_in_place(&mut y, c)?;
    Ok(y)
}

/// In-place Euclidean projection onto the scaled simplex.
pub fn project_scaled_simplex_in_place(x: &mut [f64], c: f64) -> Result<()> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid(format!("simplex target must be positive, got {c}")));
    }
    if x.is_empty() {
        return Err(Error::invalid("cannot project an empty vector onto a simplex"));
    }
    let tau = simplex_threshold(x, c);
    for v in x.iter_mut() {
        *v = (*v - tau).max(0.0);
    }
    Ok(())
}

/// The `tau` with `sum(max(x - tau, 0)) = c`, by Michelot's active-set
/// iteration: drop entries at or below the current threshold and recompute it
/// from the survivors until nothing is dropped. Exact after finitely many passes.
fn simplex_threshold(x: &[f64], c: f64) -> f64 {
    let n = x.len() as f64;
    let mut tau = (x.iter().sum::<f64>() - c) / n;
    let mut active: Vec<f64> = x.iter().copied().filter(|&v| v > tau).collect();
    if active.len() == x.len() {
        return tau;
    }
    loop {
        tau = (active.iter().sum::<f64>() - c) / active.len() as f64;
        let before = active.len();
        active.retain(|&v| v > tau);
        if active.len() == before || active.is_empty() {
            return tau;
        }
    }
}

/// Projects every row of a row-major `rows x cols` matrix onto the unit simplex.
pub fn project_row_simplex(a: &mut [f64], rows: usize, cols: usize) -> Result<()> {
    if cols == 0 {
        return Err(Error::invalid("row simplex needs at least one column"));
    }
    ensure_len(a.len(), rows * cols)?;
    for row in a.chunks_mut(cols) {
        project_scaled_simplex_in_place(row, 1.0)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConstraintSet {
    Unconstrained,
    Nonneg,
    ScaledSimplex { target: f64 },
    /// Row-major matrix with each row on the unit simplex.
    RowSimplex { rows: usize, cols: usize },
    /// `{x : A x = b}` with `A` stored row-major as `k x n`.
    AffineLinear { k: usize, n: usize, a: Vec<f64>, b: Vec<f64> },
}

/// Relative singular-value cutoff for the affine projection's pseudo-inverse.
const PINV_CUTOFF: f64 = 1e-12;

impl ConstraintSet {
    pub fn scaled_simplex(target: f64) -> Result<Self> {
        if !(target > 0.0) || !target.is_finite() {
            return Err(Error::invalid(format!("simplex target must be positive, got {target}")));
        }
        Ok(ConstraintSet::ScaledSimplex { target })
    }

    pub fn affine(a: DMatrix<f64>, b: Vec<f64>) -> Result<Self> {
        ensure_len(b.len(), a.nrows())?;
        let (k, n) = a.shape();
        let mut flat = Vec::with_capacity(k * n);
        for r in 0..k {
            flat.extend(a.row(r).iter().copied());
        }
        Ok(ConstraintSet::AffineLinear { k, n, a: flat, b })
    }

    pub fn project_in_place(&self, x: &mut [f64]) -> Result<()> {
        match self {
            ConstraintSet::Unconstrained => Ok(()),
            ConstraintSet::Nonneg => {
                project_nonneg_in_place(x);
                Ok(())
            }
            ConstraintSet::ScaledSimplex { target } => project_scaled_simplex_in_place(x, *target),
            ConstraintSet::RowSimplex { rows, cols } => project_row_simplex(x, *rows, *cols),
            ConstraintSet::AffineLinear { k, n, a, b } => {
                ensure_len(x.len(), *n)?;
                let a = DMatrix::from_row_slice(*k, *n, a);
                project_affine(&a, b, x)
            }
        }
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = x.to_vec();
        self.project_in_place(&mut y)?;
        Ok(y)
    }

    /// Projects only the coordinates with `free[i] == true`, holding the rest
    /// fixed, onto the set of values that make the whole vector feasible.
    ///
    /// For a simplex the free part goes onto the simplex whose target is what
    /// the frozen part leaves over. If nothing is left over, the free part is
    /// set to zero, the closest point keeping the sign constraint.
    pub fn project_conditional(&self, x: &mut [f64], free: &[bool]) -> Result<()> {
        ensure_len(free.len(), x.len())?;
        match self {
            ConstraintSet::Unconstrained => Ok(()),
            ConstraintSet::Nonneg => {
                for (v, &f) in x.iter_mut().zip(free) {
                    if f {
                        *v = v.max(0.0);
                    }
                }
                Ok(())
            }
            ConstraintSet::ScaledSimplex { target } => {
                project_masked_simplex(x, free, *target);
                Ok(())
            }
            ConstraintSet::RowSimplex { rows, cols } => {
                ensure_len(x.len(), rows * cols)?;
                for (row, mask) in x.chunks_mut(*cols).zip(free.chunks(*cols)) {
                    project_masked_simplex(row, mask, 1.0);
                }
                Ok(())
            }
            ConstraintSet::AffineLinear { k, n, a, b } => {
                ensure_len(x.len(), *n)?;
                let free_idx: Vec<usize> = (0..*n).filter(|&i| free[i]).collect();
                if free_idx.is_empty() {
                    return Ok(());
                }
                let mut sub = DMatrix::zeros(*k, free_idx.len());
                let mut rhs = b.clone();
                for r in 0..*k {
                    let mut j = 0;
                    for i in 0..*n {
                        let aij = a[r * n + i];
                        if free[i] {
                            sub[(r, j)] = aij;
                            j += 1;
                        } else {
                            rhs[r] -= aij * x[i];
                        }
                    }
                }
                let mut xf: Vec<f64> = free_idx.iter().map(|&i| x[i]).collect();
                project_affine(&sub, &rhs, &mut xf)?;
                for (&i, v) in free_idx.iter().zip(xf) {
                    x[i] = v;
                }
                Ok(())
            }
        }
    }

    /// Largest violation of the constraint at `x`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let neg = |v: &[f64]| v.iter().map(|&t| (-t).max(0.0)).fold(0.0, f64::max);
        match self {
            ConstraintSet::Unconstrained => 0.0,
            ConstraintSet::Nonneg => neg(x),
            ConstraintSet::ScaledSimplex { target } => {
                neg(x).max((x.iter().sum::<f64>() - target).abs())
            }
            ConstraintSet::RowSimplex { cols, .. } => x
                .chunks(*cols)
                .map(|r| neg(r).max((r.iter().sum::<f64>() - 1.0).abs()))
                .fold(0.0, f64::max),
            ConstraintSet::AffineLinear { k, n, a, b } => (0..*k)
                .map(|r| {
                    let ax: f64 = (0..*n).map(|i| a[r * n + i] * x[i]).sum();
                    (ax - b[r]).abs()
                })
                .fold(0.0, f64::max),
        }
    }
}

fn project_masked_simplex(x: &mut [f64], free: &[bool], target: f64) {
    let frozen: f64 = x.iter().zip(free).filter(|(_, &f)| !f).map(|(v, _)| v).sum();
    let remaining = target - frozen;
    let mut sub: Vec<f64> = x.iter().zip(free).filter(|(_, &f)| f).map(|(&v, _)| v).collect();
    if sub.is_empty() {
        return;
    }
    if remaining > 0.0 {
        let tau = simplex_threshold(&sub, remaining);
        for v in &mut sub {
            *v = (*v - tau).max(0.0);
        }
    } else {
        sub.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut it = sub.into_iter();
    for (v, &f) in x.iter_mut().zip(free) {
        if f {
            *v = it.next().unwrap();
        }
    }
}

/// `x - A^T (A A^T)^+ (A x - b)`.
fn project_affine(a: &DMatrix<f64>, b: &[f64], x: &mut [f64]) -> Result<()> {
    let xv = DVector::from_column_slice(x);
    let residual = a * &xv - DVector::from_column_slice(b);
    let gram = a * a.transpose();
    let svd = gram.svd(true, true);
    let smax = svd.singular_values.max();
    let pinv = svd
        .pseudo_inverse(PINV_CUTOFF * smax.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let corrected = xv - a.transpose() * (pinv * residual);
    x.copy_from_slice(corrected.as_slice());
    Ok(())
}

/// `c * (I_s / I_1)^(1/p)`: the p-norm target carried to a coarser scale.
pub fn rescale_pnorm_target(c: f64, p: f64, points_s: usize, points_1: usize) -> Result<f64> {
    if !(c > 0.0) || !(p >= 1.0) {
        return Err(Error::invalid(format!("need c > 0 and p >= 1, got c={c}, p={p}")));
    }
    if points_s < 2 || points_s > points_1 {
        return Err(Error::invalid(format!(
            "coarse size {points_s} must lie in 2..={points_1}"
        )));
    }
    Ok(c * (points_s as f64 / points_1 as f64).powf(1.0 / p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaledTarget {
    pub target: f64,
    pub slack: f64,
}

/// Multiplier applied to a constraint value when a length-`I` vector is coarsened.
pub fn coarsening_factor(points: usize) -> f64 {
    if points.is_multiple_of(2) {
        0.5
    } else {
        0.5 * (points + 1) as f64 / points as f64
    }
}

/// Slack of the coarsened target for one constraint whose product function is
/// `lipschitz`-Lipschitz.
fn coarsening_slack(points: usize, lipschitz: f64, width: f64) -> f64 {
    let n = points as f64;
    if points.is_multiple_of(2) {
        0.25 * lipschitz * width * n / (n - 1.0)
    } else {
        0.5 * lipschitz * width
    }
}

fn check_rescale_inputs(points: usize, lipschitz: f64, width: f64) -> Result<()> {
    if points < 2 {
        return Err(Error::invalid(format!("need at least 2 points, got {points}")));
    }
    if !(lipschitz >= 0.0) || !(width > 0.0) {
        return Err(Error::invalid("need a nonnegative Lipschitz constant and positive width"));
    }
    Ok(())
}

/// Where `||coarsen(x)||_1` lands when `||x||_1 = b` and `x` samples an
/// `L_f`-Lipschitz function on a domain of the given width.
pub fn l1_rescale_with_bound(b: f64, points: usize, lipschitz: f64, width: f64) -> Result<RescaledTarget> {
    check_rescale_inputs(points, lipschitz, width)?;
    Ok(RescaledTarget {
        target: coarsening_factor(points) * b,
        slack: coarsening_slack(points, lipschitz, width),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRescaled {
    pub targets: Vec<f64>,
    /// Bound on the Euclidean norm of the deviation from `targets`.
    pub slack: f64,
}

/// Coarsened right-hand side for `A x = b` when `A` keeps its odd columns.
/// `max_product_lipschitz` is the largest Lipschitz constant over the
/// products `f g_k`.
pub fn linear_rescale_with_bound(
    b: &[f64],
    points: usize,
    max_product_lipschitz: f64,
    width: f64,
) -> Result<LinearRescaled> {
    check_rescale_inputs(points, max_product_lipschitz, width)?;
    let factor = coarsening_factor(points);
    Ok(LinearRescaled {
        targets: b.iter().map(|v| factor * v).collect(),
        slack: (b.len() as f64).sqrt() * coarsening_slack(points, max_product_lipschitz, width),
    })
}

/// Keeps the odd (1-based) columns of a row-major `rows x cols` matrix.
pub fn subsample_columns(a: &[f64], rows: usize, cols: usize) -> Result<(Vec<f64>, usize)> {
    ensure_len(a.len(), rows * cols)?;
    let new_cols = cols.div_ceil(2);
    let mut out = Vec::with_capacity(rows * new_cols);
    for row in a.chunks(cols) {
        out.extend(row.iter().step_by(2));
    }
    Ok((out, new_cols))
}

/// Lipschitz constant of `f g` from those of its factors and their sup-norms.
pub fn product_lipschitz(l_f: f64, l_g: f64, f_sup: f64, g_sup: f64) -> Result<f64> {
    if [l_f, l_g, f_sup, g_sup].iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::invalid("product Lipschitz inputs must be nonnegative"));
    }
    Ok(l_f * g_sup + l_g * f_sup)
}

/// Carries an L1 target through repeated coarsening, starting from a length
/// `fine_points` vector. Entry `j` describes the vector after `j` coarsenings;
/// its slack accumulates the per-step slack plus the scaled error inherited
/// from the previous target.
pub fn compose_l1_targets(
    b: f64,
    fine_points: usize,
    lipschitz: f64,
    width: f64,
    coarsenings: usize,
) -> Result<Vec<RescaledTarget>> {
    let mut out = vec![RescaledTarget { target: b, slack: 0.0 }];
    let mut points = fine_points;
    for _ in 0..coarsenings {
        let prev = *out.last().unwrap();
        let step = l1_rescale_with_bound(prev.target, points, lipschitz, width)?;
        out.push(RescaledTarget {
            target: step.target,
            slack: step.slack + coarsening_factor(points) * prev.slack,
        });
        points = points.div_ceil(2);
        if points < 2 {
            return Err(Error::invalid("too many coarsenings for the grid"));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn nonneg_examples() {
        assert_eq!(project_nonneg(&[-1.0, 2.0]), vec![0.0, 2.0]);
        assert_eq!(project_nonneg(&[3.0, 0.0]), vec![3.0, 0.0]);
        assert_eq!(project_nonneg(&[-3.0, -4.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn simplex_examples() {
        let x = [0.2, 0.3, 0.5];
        assert!(close(&project_scaled_simplex(&x, 1.0).unwrap(), &x, 1e-15));
        assert!(close(&project_scaled_simplex(&[2.0, 0.0], 1.0).unwrap(), &[1.0, 0.0], 1e-15));
        assert!(close(&project_scaled_simplex(&[0.5, 0.5], 2.0).unwrap(), &[1.0, 1.0], 1e-15));
        assert!(project_scaled_simplex(&[1.0], 0.0).is_err());
        assert!(project_scaled_simplex(&[1.0], -1.0).is_err());
    }

    #[test]
    fn simplex_examples_match_brute_force() {
        // Grid search over the segment {(y, c - y)}.
        for (x, c) in [([2.0, 0.0], 1.0), ([0.5, 0.5], 2.0), ([-0.3, 0.9], 1.5)] {
            let p = project_scaled_simplex(&x, c).unwrap();
            let d = |y: [f64; 2]| ((y[0] - x[0]).powi(2) + (y[1] - x[1]).powi(2)).sqrt();
            let best = (0..=100_000)
                .map(|i| c * i as f64 / 100_000.0)
                .map(|y| d([y, c - y]))
                .fold(f64::INFINITY, f64::min);
            assert!(d([p[0], p[1]]) <= best + 1e-9);
        }
    }

    #[test]
    fn simplex_ties_keep_all_equal_entries() {
        let p = project_scaled_simplex(&[1.0, 1.0, 1.0, -5.0], 1.5).unwrap();
        assert!(close(&p, &[0.5, 0.5, 0.5, 0.0], 1e-15));
    }

    #[test]
    fn row_simplex_projects_each_row() {
        let mut a = vec![2.0, 0.0, 0.2, 0.8, 0.5, 0.5];
        project_row_simplex(&mut a, 3, 2).unwrap();
        assert!(close(&a, &[1.0, 0.0, 0.2, 0.8, 0.5, 0.5], 1e-15));
    }

    #[test]
    fn affine_projection_lands_on_the_plane() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 1.0, -1.0, 0.0]);
        let set = ConstraintSet::affine(a, vec![1.0, 0.0]).unwrap();
        let p = set.project(&[3.0, -2.0, 0.5]).unwrap();
        assert!(set.violation(&p) < 1e-12);
        // Rank-deficient: the duplicated row must not break the pseudo-inverse.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let set = ConstraintSet::affine(a, vec![1.0, 2.0]).unwrap();
        let p = set.project(&[0.0, 0.0]).unwrap();
        assert!(close(&p, &[0.5, 0.5], 1e-12));
    }

    #[test]
    fn conditional_simplex_uses_the_leftover_mass() {
        let set = ConstraintSet::scaled_simplex(1.0).unwrap();
        let mut x = vec![0.25, 9.0, 0.25, -1.0, 0.25];
        let free = [false, true, false, true, false];
        set.project_conditional(&mut x, &free).unwrap();
        assert!(close(&x, &[0.25, 0.25, 0.25, 0.0, 0.25], 1e-15));
        assert!(set.violation(&x) < 1e-12);
    }

    #[test]
    fn conditional_with_everything_free_is_plain_projection() {
        let sets = [
            ConstraintSet::Nonneg,
            ConstraintSet::scaled_simplex(2.0).unwrap(),
            ConstraintSet::RowSimplex { rows: 2, cols: 2 },
        ];
        let x = [0.3, -0.7, 1.9, 0.4];
        for set in sets {
            let mut a = x.to_vec();
            set.project_conditional(&mut a, &[true; 4]).unwrap();
            assert_eq!(a, set.project(&x).unwrap());
        }
    }

    #[test]
    fn pnorm_rescale_examples() {
        assert_eq!(rescale_pnorm_target(1.0, 1.0, 1025, 1025).unwrap(), 1.0);
        assert!((rescale_pnorm_target(1.0, 1.0, 513, 1025).unwrap() - 513.0 / 1025.0).abs() < 1e-15);
        assert!((rescale_pnorm_target(2.0, 2.0, 3, 12).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn l1_rescale_examples() {
        let r = l1_rescale_with_bound(5.0, 5, 0.0, 1.0).unwrap();
        assert!((r.target - 3.0).abs() < 1e-15 && r.slack == 0.0);
        let coarse: f64 = crate::grid::coarsen(&[1.0; 5]).unwrap().iter().sum();
        assert_eq!(coarse, 3.0);

        let r = l1_rescale_with_bound(4.0, 4, 0.0, 1.0).unwrap();
        assert_eq!((r.target, r.slack), (2.0, 0.0));

        let x = [0.0, 0.25, 0.5, 0.75, 1.0];
        let r = l1_rescale_with_bound(2.5, 5, 1.0, 1.0).unwrap();
        assert!((r.target - 1.5).abs() < 1e-15);
        assert!((r.slack - 0.5).abs() < 1e-15);
        let coarse: f64 = crate::grid::coarsen(&x).unwrap().iter().sum();
        assert!((coarse - r.target).abs() <= r.slack);
    }

    #[test]
    fn linear_rescale_examples() {
        let r = linear_rescale_with_bound(&[2.5], 5, 1.0, 1.0).unwrap();
        assert!((r.targets[0] - 1.5).abs() < 1e-15);
        assert!((r.slack - 0.5).abs() < 1e-15);
        let (abar, cols) = subsample_columns(&[1.0; 5], 1, 5).unwrap();
        assert_eq!(cols, 3);
        let xbar = crate::grid::coarsen(&[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        let ip: f64 = abar.iter().zip(&xbar).map(|(a, x)| a * x).sum();
        assert!((ip - 1.5).abs() < 1e-15);

        let r = linear_rescale_with_bound(&[1.0, 2.0, 3.0, 4.0], 8, 1.0, 2.0).unwrap();
        assert!((r.slack - 2.0 * 0.25 * 2.0 * 8.0 / 7.0).abs() < 1e-14);
        assert_eq!(linear_rescale_with_bound(&[7.0], 6, 0.0, 1.0).unwrap().slack, 0.0);
    }

    #[test]
    fn product_lipschitz_examples() {
        assert_eq!(product_lipschitz(2.5, 0.0, 9.0, 1.0).unwrap(), 2.5);
        assert_eq!(product_lipschitz(0.0, 0.0, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(product_lipschitz(1.0, 2.0, 3.0, 4.0).unwrap(), 10.0);
        assert!(product_lipschitz(-1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn composed_targets_bound_repeated_coarsening() {
        let f = |t: f64| 1.0 + 0.5 * (3.0 * t).sin();
        let g = crate::grid::Grid1D::new(0.0, 2.0, 257).unwrap();
        let mut x = crate::grid::sample(f, g, 1.0).values().to_vec();
        let b: f64 = x.iter().sum();
        let chain = compose_l1_targets(b, 257, 1.5, 2.0, 6).unwrap();
        for t in &chain[1..] {
            x = crate::grid::coarsen(&x).unwrap();
            let norm: f64 = x.iter().map(|v| v.abs()).sum();
            assert!((norm - t.target).abs() <= t.slack, "{norm} vs {t:?}");
        }
    }

    proptest! {
        #[test]
        fn simplex_projection_is_feasible_idempotent_optimal(
            x in prop::collection::vec(-5f64..5.0, 1..60),
            c in 0.1f64..10.0,
            seeds in prop::collection::vec(prop::collection::vec(0f64..1.0, 60), 20),
        ) {
            let p = project_scaled_simplex(&x, c).unwrap();
            let set = ConstraintSet::ScaledSimplex { target: c };
            prop_assert!(set.violation(&p) < 1e-10);
            let pp = project_scaled_simplex(&p, c).unwrap();
            prop_assert!(close(&p, &pp, 1e-12));
            let dist = |y: &[f64]| y.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let dp = dist(&p);
            for w in seeds {
                let w = &w[..x.len()];
                let s: f64 = w.iter().sum::<f64>().max(1e-12);
                let y: Vec<f64> = w.iter().map(|v| v * c / s).collect();
                prop_assert!(dp <= dist(&y) + 1e-9);
            }
        }

        #[test]
        fn every_set_is_idempotent(x in prop::collection::vec(-3f64..3.0, 6)) {
            let a = DMatrix::from_row_slice(2, 6, &[1.0, 2.0, 0.0, -1.0, 0.5, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, -2.0]);
            let sets = [
                ConstraintSet::Unconstrained,
                ConstraintSet::Nonneg,
                ConstraintSet::ScaledSimplex { target: 1.7 },
                ConstraintSet::RowSimplex { rows: 2, cols: 3 },
                ConstraintSet::affine(a, vec![0.3, -1.0]).unwrap(),
            ];
            for set in sets {
                let p = set.project(&x).unwrap();
                prop_assert!(set.violation(&p) < 1e-10);
                prop_assert!(close(&set.project(&p).unwrap(), &p, 1e-12));
            }
        }
    }
}
