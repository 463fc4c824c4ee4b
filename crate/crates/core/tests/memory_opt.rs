//! Memory-length tuning on references with a known optimum.

use nalgebra::{DMatrix, DVector};
use romforge::eapg::{build_eapg_offline, EapgOffline};
use romforge::memory::{
    optimize_matrix, optimize_scalar, projected_jacobian, spectral_radius, MatrixOptions, MemoryLength,
    MemoryProblem, MemoryWeight, ScalarOptions,
};
use romforge::online::{grom_rhs, integrate, IntegratorConfig, Scheme};
use romforge::pod::{compute_pod, project_reference, truncate, CoarseBasis};
use romforge::snapshot::split_mean;
use romforge::synth::{shedding_ensemble, SheddingRecipe};
use romforge::ModalSeries;

const NU: f64 = 0.01;

struct Setup {
    cb: CoarseBasis,
    offline: EapgOffline,
    reference: ModalSeries,
    rho: f64,
}

fn setup(r: usize) -> Setup {
    let recipe = SheddingRecipe {
        shape: vec![14, 10],
        snapshots: 48,
        periods: 3.0,
        ..Default::default()
    };
    let ens = shedding_ensemble(&recipe).unwrap();
    let fl = split_mean(&ens.snapshots);
    let cb = truncate(&compute_pod(&fl).unwrap(), r).unwrap();
    let reference = project_reference(&cb, &fl).unwrap();
    let offline = build_eapg_offline(&cb, NU).unwrap();
    let rho = spectral_radius(&projected_jacobian(&cb, NU, &reference.column(0)).unwrap()).unwrap();
    Setup { cb, offline, reference, rho }
}

/// Coefficients of the eAPG-ROM itself, so the objective vanishes at `mem`.
fn synthetic_reference(s: &Setup, mem: &MemoryLength) -> ModalSeries {
    let sys = s.offline.with_memory(mem).unwrap();
    let cfg = IntegratorConfig::new(Scheme::default(), s.reference.times().to_vec());
    integrate(&sys, &s.reference.column(0), &cfg).unwrap()
}

#[test]
fn scalar_optimum_is_recovered() {
    let s = setup(2);
    let target = 3.0;
    let reference = synthetic_reference(&s, &MemoryLength::scalar(target, s.rho).unwrap());
    let problem = MemoryProblem::new(&s.offline, s.rho, &reference, 1.0e9, None, Scheme::default()).unwrap();
    let rep = optimize_scalar(&problem, &ScalarOptions::default()).unwrap();
    let MemoryWeight::Scalar(w) = rep.weight else { panic!("scalar report expected") };
    assert!((w - target).abs() <= 1e-3, "recovered {w}");
    assert!(rep.objective <= rep.initial_objective);
}

#[test]
fn matrix_optimum_is_recovered() {
    let s = setup(2);
    let target = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.2]);
    let reference = synthetic_reference(&s, &MemoryLength::matrix(target.clone(), s.rho).unwrap());
    let problem = MemoryProblem::new(&s.offline, s.rho, &reference, 1.0e9, None, Scheme::default()).unwrap();
    let opts = MatrixOptions {
        warm_start: Some(1.5),
        ..Default::default()
    };
    let rep = optimize_matrix(&problem, &opts).unwrap();
    let MemoryWeight::Matrix(w) = &rep.weight else { panic!("matrix report expected") };
    let dist = (w - &target).norm();
    assert!(dist <= 1e-3, "recovered\n{w}\nFrobenius distance {dist:e}");
    assert!(rep.all_iterates_spd);
    assert!(rep.trace.windows(2).all(|p| p[1].best <= p[0].best));
}

#[test]
fn one_mode_scalar_and_matrix_objectives_agree() {
    let s = setup(1);
    let problem = MemoryProblem::new(&s.offline, s.rho, &s.reference, 2.0, None, Scheme::default()).unwrap();
    for w in [0.0, 0.5, 1.0, 4.0] {
        let a = problem.objective_scalar(w);
        let b = problem.objective_matrix(&DMatrix::from_element(1, 1, w));
        if w == 0.0 {
            assert!(b.is_infinite(), "a zero matrix weight is not positive definite");
        } else {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "w = {w}: {a} vs {b}");
        }
    }
}

#[test]
fn projected_jacobian_matches_finite_differences_of_the_grom() {
    let s = setup(3);
    let grom = &s.offline.grom;
    let a0 = s.reference.column(5);
    let jac = projected_jacobian(&s.cb, NU, &a0).unwrap();
    let h = 1e-6;
    for j in 0..3 {
        let mut e = DVector::zeros(3);
        e[j] = h;
        let fd = (grom_rhs(grom, &(&a0 + &e)).unwrap() - grom_rhs(grom, &(&a0 - &e)).unwrap()) / (2.0 * h);
        let col = jac.column(j).into_owned();
        assert!((&fd - &col).norm() <= 1e-6 * col.norm().max(1.0), "column {j}");
    }
}
