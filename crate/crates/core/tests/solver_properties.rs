use std::sync::Arc;

use msopt_core::constraints::{project_row_simplex, project_scaled_simplex, ConstraintSet};
use msopt_core::solver::{distance, pgd_step, ProblemAtScale, ProjectedGradient, QuadraticObjective};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

proptest! {
    #[test]
    fn simplex_projection_is_feasible_and_optimal(
        x in prop::collection::vec(-5f64..5.0, 1..60),
        c in 0.01f64..10.0,
        probe in prop::collection::vec(0f64..1.0, 60),
    ) {
        let p = project_scaled_simplex(&x, c).unwrap();
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - c).abs() <= 1e-10 * c.max(1.0));
        // Variational inequality <x - p, q - p> <= 0 for a feasible q.
        let w = &probe[..x.len()];
        let total: f64 = w.iter().sum::<f64>().max(1e-12);
        let q: Vec<f64> = w.iter().map(|v| c * v / total).collect();
        let ip: f64 = x.iter().zip(&p).zip(&q).map(|((xi, pi), qi)| (xi - pi) * (qi - pi)).sum();
        prop_assert!(ip <= 1e-9 * (1.0 + c));
        let again = project_scaled_simplex(&p, c).unwrap();
        prop_assert!(distance(&again, &p) <= 1e-12 * (1.0 + c));
    }

    #[test]
    fn row_simplex_projection_is_rowwise(
        rows in 1usize..6,
        cols in 1usize..6,
        seed in prop::collection::vec(-3f64..3.0, 36),
    ) {
        let mut a = seed[..rows * cols].to_vec();
        let orig = a.clone();
        project_row_simplex(&mut a, rows, cols).unwrap();
        for r in 0..rows {
            let expect = project_scaled_simplex(&orig[r * cols..(r + 1) * cols], 1.0).unwrap();
            prop_assert_eq!(&a[r * cols..(r + 1) * cols], &expect[..]);
        }
        let set = ConstraintSet::RowSimplex { rows, cols };
        prop_assert!(set.violation(&a) <= 1e-12);
    }

    #[test]
    fn pgd_contracts_at_the_predicted_rate(
        eig in prop::collection::vec(0.5f64..20.0, 2..30),
        x0 in prop::collection::vec(-10f64..10.0, 30),
        target in prop::collection::vec(-1f64..1.0, 30),
    ) {
        let n = eig.len();
        let (mu, l) = eig.iter().fold((f64::INFINITY, 0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        let h = DMatrix::from_diagonal(&DVector::from_column_slice(&eig));
        let star = &target[..n];
        let lin = &h * DVector::from_column_slice(star);
        let obj = QuadraticObjective::new(h, lin).unwrap();
        let p = ProblemAtScale::new(1, Arc::new(obj), ConstraintSet::Unconstrained, l, mu).unwrap();
        let pgd = ProjectedGradient::default();
        let q = msopt_core::solver::UpdateRule::rate(&pgd, &p).unwrap();
        let alpha = pgd.stepsize(&p);
        let mut x = x0[..n].to_vec();
        for _ in 0..20 {
            let next = pgd_step(&p, &x, alpha).unwrap();
            prop_assert!(distance(&next, star) <= q * distance(&x, star) + 1e-10);
            x = next;
        }
    }
}
