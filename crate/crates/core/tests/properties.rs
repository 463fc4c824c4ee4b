//! Randomized invariants of the core building blocks.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use romforge::diagnostics::{
    apg_online_table, apg_row_offset, eapg_offline_table, eapg_online_table, grom_offline_table,
    grom_online_table, FlopParams,
};
use romforge::galerkin::{kron2, kron3};
use romforge::grid::Grid;
use romforge::memory::{cholesky_params, cholesky_weight, check_spd, minimize_scalar, ScalarOptions};
use romforge::snapshot::{split_mean, SnapshotSet};
use romforge::synth::random_coarse_basis;

fn vector(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

proptest! {
    #[test]
    fn kronecker_entries_follow_index_order(a in vector(4)) {
        let a = DVector::from_vec(a);
        let aa = kron2(&a);
        let aaa = kron3(&a);
        for i in 0..4 {
            for k in 0..4 {
                prop_assert_eq!(aa[i * 4 + k], a[i] * a[k]);
                for j in 0..4 {
                    let want = a[i] * a[j] * a[k];
                    prop_assert!((aaa[(i * 4 + j) * 4 + k] - want).abs() <= 1e-12 * want.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn projectors_split_any_vector(seed in 0u64..1000, v in vector(2 * 36)) {
        let grid = Grid::new_2d(6, 6, 0.2, 0.2).unwrap();
        let cb = random_coarse_basis(&grid, 3, seed).unwrap();
        let vv = DVector::from_column_slice(&v);
        let scale = vv.norm().max(1.0);
        let c = cb.apply_coarse(&v).unwrap();
        let f = cb.apply_fine(&v).unwrap();
        prop_assert!((&c + &f - &vv).norm() <= 1e-12 * scale);
        prop_assert!(cb.project(f.as_slice()).unwrap().norm() <= 1e-12 * scale);
        let back = cb.lift(&cb.project(c.as_slice()).unwrap()).unwrap();
        prop_assert!((back - &c).norm() <= 1e-12 * scale);
    }

    #[test]
    fn split_mean_reassembles_inputs(seed in 0u64..1000) {
        let grid = Grid::new_2d(5, 4, 0.1, 0.1).unwrap();
        let mut g = romforge::synth::rng(seed);
        let data = DMatrix::from_fn(grid.n_dofs(), 5, |_, _| rand::RngExt::random_range(&mut g, -1.0..1.0));
        let set = SnapshotSet::new(grid, vec![0.0, 0.1, 0.2, 0.3, 0.4], data.clone()).unwrap();
        let f = split_mean(&set);
        let col_sum = f.fluctuations().column_sum();
        prop_assert!(col_sum.norm() <= 1e-10 * f.fluctuations().norm().max(1.0));
        for m in 0..5 {
            let u = f.reassemble(m);
            for (x, y) in u.values().iter().zip(data.column(m).iter()) {
                prop_assert!((x - y).abs() <= 1e-14 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn cholesky_parameters_round_trip(theta in vector(6)) {
        let theta: Vec<f64> = theta.iter().map(|t| t / 5.0).collect();
        let w = cholesky_weight(&theta, 3);
        prop_assert!(check_spd(&w).is_ok());
        let back = cholesky_weight(&cholesky_params(&w).unwrap(), 3);
        prop_assert!((back - &w).amax() <= 1e-10 * w.amax().max(1.0));
    }

    #[test]
    fn scalar_best_so_far_never_increases(c in 0.0f64..100.0, s in 0.1f64..5.0) {
        let rep = minimize_scalar(|w| s * (w - c).powi(2), &ScalarOptions::default()).unwrap();
        prop_assert!(rep.trace.windows(2).all(|p| p[1].best <= p[0].best));
        prop_assert!(rep.objective <= rep.initial_objective);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn flop_rows_add_up_to_totals(
        n in 1u64..5_000_000,
        r in 1u64..40,
        d in 2u64..4,
        w1 in 0u64..40,
        w2 in 0u64..40,
    ) {
        let p = FlopParams { n, r, d, omega1: w1, omega2: w2 };
        for t in [
            grom_offline_table(&p).unwrap(),
            eapg_offline_table(&p).unwrap(),
            grom_online_table(r).unwrap(),
            eapg_online_table(r).unwrap(),
        ] {
            prop_assert_eq!(t.row_sum(), t.total as i128, "{}", t.phase);
        }
        let apg = apg_online_table(&p).unwrap();
        prop_assert_eq!(apg.row_sum(), apg.total as i128 + apg_row_offset(&p));
    }
}
