use msopt_core::grid::{coarsen, coarsen_tensor, free_variables, interpolate, interpolate_tensor, ScaleHierarchy};
use msopt_core::tensor::DenseTensor;
use proptest::prelude::*;

fn vector() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e6f64..1e6, 2..200)
}

proptest! {
    #[test]
    fn coarsen_undoes_interpolate(x in vector()) {
        prop_assert_eq!(coarsen(&interpolate(&x).unwrap()).unwrap(), x);
    }

    #[test]
    fn shape_laws(x in vector()) {
        let n = x.len();
        prop_assert_eq!(interpolate(&x).unwrap().len(), 2 * n - 1);
        prop_assert_eq!(coarsen(&x).unwrap().len(), n.div_ceil(2));
        prop_assert_eq!(free_variables(&x).unwrap().len(), n - 1);
    }

    #[test]
    fn interpolated_midpoints_are_free_variables(x in vector()) {
        let up = interpolate(&x).unwrap();
        let mids: Vec<f64> = up.iter().skip(1).step_by(2).copied().collect();
        prop_assert_eq!(mids, free_variables(&x).unwrap());
    }

    #[test]
    fn interpolation_is_linear(x in vector(), a in -10f64..10.0) {
        let scaled: Vec<f64> = x.iter().map(|v| a * v).collect();
        let lhs = interpolate(&scaled).unwrap();
        let rhs: Vec<f64> = interpolate(&x).unwrap().iter().map(|v| a * v).collect();
        for (l, r) in lhs.iter().zip(&rhs) {
            prop_assert!((l - r).abs() <= 1e-9 * (1.0 + r.abs()));
        }
    }

    #[test]
    fn hierarchy_grids_nest(lo in -10f64..10.0, width in 0.01f64..100.0, scales in 1usize..12) {
        let h = ScaleHierarchy::new(lo, lo + width, scales).unwrap();
        prop_assert_eq!(h.points(scales), 3);
        prop_assert_eq!(h.fine_points(), (1 << scales) + 1);
        for s in 1..scales {
            prop_assert_eq!(coarsen(&h.grid(s).nodes()).unwrap(), h.grid(s + 1).nodes());
        }
    }

    #[test]
    fn tensor_round_trip_along_any_modes(
        dims in prop::collection::vec(2usize..7, 2..4),
        seed in any::<u64>(),
        mask in 1u8..8,
    ) {
        let mut state = seed;
        let t = DenseTensor::from_fn(dims.clone(), |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        }).unwrap();
        let modes: Vec<usize> = (1..dims.len()).filter(|m| mask & (1 << (m - 1)) != 0).collect();
        prop_assume!(!modes.is_empty());
        let up = interpolate_tensor(&t, &modes).unwrap();
        for &m in &modes {
            prop_assert_eq!(up.dims()[m], 2 * dims[m] - 1);
        }
        prop_assert_eq!(coarsen_tensor(&up, &modes).unwrap(), t);
    }
}
