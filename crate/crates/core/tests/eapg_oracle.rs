//! Tensorized offline assembly against direct full-space evaluation.

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use romforge::apg::apg_rhs_fullspace;
use romforge::eapg::{
    assemble_eapg_spatial, assemble_fine_scale, assemble_memory_parts, build_eapg_offline, combine,
    project_eapg, project_memory_parts,
};
use romforge::galerkin::{assemble_grom_spatial, build_grom, project_grom};
use romforge::grid::Grid;
use romforge::memory::MemoryLength;
use romforge::online::{eapg_rhs, grom_rhs};
use romforge::pod::CoarseBasis;
use romforge::synth::{random_coarse_basis, random_spd, rng};

const NU: f64 = 0.05;

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// `-(u . grad) u + nu lap u`, straight from the grid operators.
fn residual(cb: &CoarseBasis, u: &[f64]) -> Vec<f64> {
    let g = cb.grid();
    let conv = g.jacobian_apply_vec(&g.gradient_vec(u).unwrap(), u).unwrap();
    let lap = g.laplacian_vec(u).unwrap();
    conv.iter().zip(&lap).map(|(c, l)| -c + NU * l).collect()
}

fn state(cb: &CoarseBasis, a: &DVector<f64>) -> Vec<f64> {
    let lifted = cb.lift(a).unwrap();
    lifted.iter().zip(cb.mean().values()).map(|(x, m)| x + m).collect()
}

/// `J(u)[v] = -(grad u) v - (u . grad) v + nu lap v`.
fn jacobian_action(cb: &CoarseBasis, u: &[f64], v: &[f64]) -> Vec<f64> {
    let g = cb.grid();
    let a = g.jacobian_apply_vec(&g.gradient_vec(u).unwrap(), v).unwrap();
    let b = g.jacobian_apply_vec(&g.gradient_vec(v).unwrap(), u).unwrap();
    let lap = g.laplacian_vec(v).unwrap();
    (0..v.len()).map(|p| -a[p] - b[p] + NU * lap[p]).collect()
}

fn random_a(r: usize, g: &mut impl rand::Rng) -> DVector<f64> {
    DVector::from_fn(r, |_, _| g.random_range(-1.0..1.0))
}

#[test]
fn grom_rhs_matches_projected_direct_residual() {
    let grid = Grid::new_2d(12, 10, 0.1, 0.12).unwrap();
    let cb = random_coarse_basis(&grid, 3, 11).unwrap();
    let c = build_grom(&cb, NU).unwrap();
    let mut g = rng(5);
    for _ in 0..20 {
        let a = random_a(3, &mut g);
        let direct = cb.project(&residual(&cb, &state(&cb, &a))).unwrap();
        let tensor = grom_rhs(&c, &a).unwrap();
        assert!(rel(&tensor, &direct) < 1e-10, "{}", rel(&tensor, &direct));
    }
}

#[test]
fn fine_scale_columns_are_orthogonal_to_the_basis() {
    let grid = Grid::new_2d(10, 9, 0.1, 0.1).unwrap();
    let cb = random_coarse_basis(&grid, 3, 2).unwrap();
    let sc = assemble_grom_spatial(&cb, NU).unwrap();
    let fsc = assemble_fine_scale(&sc, &cb).unwrap();
    let check = |m: &DMatrix<f64>, orig: &DMatrix<f64>| {
        let proj = cb.modes().tr_mul(m);
        for j in 0..m.ncols() {
            assert!(proj.column(j).norm() <= 1e-10 * orig.column(j).norm().max(1.0));
        }
        let back = m + cb.modes() * cb.modes().tr_mul(orig);
        assert!((back - orig).amax() <= 1e-11 * orig.amax());
    };
    check(&fsc.q, &sc.q);
    check(&fsc.l, &sc.l);

    // A basis vector itself is removed, an orthogonal vector is kept.
    let mut m = DMatrix::zeros(grid.n_dofs(), 1);
    m.set_column(0, &cb.modes().column(1));
    cb.apply_fine_columns(&mut m).unwrap();
    assert!(m.amax() < 1e-14);
}

#[test]
fn spatial_eapg_tensors_match_direct_jacobian_action() {
    let grid = Grid::new_2d(9, 8, 0.15, 0.1).unwrap();
    let cb = random_coarse_basis(&grid, 2, 3).unwrap();
    let sc = assemble_grom_spatial(&cb, NU).unwrap();
    let fsc = assemble_fine_scale(&sc, &cb).unwrap();
    let e = assemble_eapg_spatial(&fsc, &cb, NU).unwrap();
    let mut g = rng(9);
    for _ in 0..10 {
        let a = random_a(2, &mut g);
        let u = state(&cb, &a);
        let fine = cb.apply_fine(&residual(&cb, &u)).unwrap();
        let direct = DVector::from_vec(jacobian_action(&cb, &u, fine.as_slice()));
        let tensor = e.evaluate(&a).unwrap();
        assert!(rel(&tensor, &direct) < 1e-10, "{}", rel(&tensor, &direct));
    }
}

#[test]
fn zero_fine_scale_gives_zero_eapg_tensors() {
    let grid = Grid::new_2d(6, 6, 0.2, 0.2).unwrap();
    let cb = random_coarse_basis(&grid, 2, 4).unwrap();
    let sc = assemble_grom_spatial(&cb, NU).unwrap();
    let mut fsc = assemble_fine_scale(&sc, &cb).unwrap();
    fsc.q.fill(0.0);
    fsc.l.fill(0.0);
    fsc.c.fill(0.0);
    let e = assemble_eapg_spatial(&fsc, &cb, NU).unwrap();
    assert_eq!(e.k.amax(), 0.0);
    assert_eq!(e.q.amax(), 0.0);
    assert_eq!(e.l.amax(), 0.0);
    assert_eq!(e.c.amax(), 0.0);
}

#[test]
fn streamed_memory_parts_match_dense_projection() {
    let grid = Grid::new_3d(6, 5, 5, 0.2, 0.25, 0.25).unwrap();
    let cb = random_coarse_basis(&grid, 3, 8).unwrap();
    let sc = assemble_grom_spatial(&cb, NU).unwrap();
    let fsc = assemble_fine_scale(&sc, &cb).unwrap();
    let dense = project_memory_parts(&assemble_eapg_spatial(&fsc, &cb, NU).unwrap(), &cb).unwrap();
    let streamed = assemble_memory_parts(&fsc, &cb, NU).unwrap();
    let scale = dense.k.amax().max(dense.q.amax()).max(1.0);
    assert!((&dense.k - &streamed.k).amax() < 1e-12 * scale);
    assert!((&dense.q - &streamed.q).amax() < 1e-12 * scale);
    assert!((&dense.l - &streamed.l).amax() < 1e-12 * scale);
    assert!((&dense.c - &streamed.c).amax() < 1e-12 * scale);
}

#[test]
fn projected_eapg_matches_scaled_dense_projection() {
    let grid = Grid::new_2d(8, 7, 0.1, 0.1).unwrap();
    let cb = random_coarse_basis(&grid, 2, 21).unwrap();
    let sc = assemble_grom_spatial(&cb, NU).unwrap();
    let fsc = assemble_fine_scale(&sc, &cb).unwrap();
    let e = assemble_eapg_spatial(&fsc, &cb, NU).unwrap();
    let mem = MemoryLength::from_tau(0.3).unwrap();
    let c = project_eapg(&sc, &e, &cb, NU, &mem).unwrap();
    let phi = cb.modes();
    let k = phi.tr_mul(&e.k) * 0.3;
    let q = phi.tr_mul(&sc.q) + phi.tr_mul(&e.q) * 0.3;
    let l = phi.tr_mul(&sc.l) + phi.tr_mul(&e.l) * 0.3;
    assert!((&c.k - &k).amax() < 1e-12 * (1.0 + c.q.amax()));
    assert!((&c.q - &q).amax() < 1e-12 * (1.0 + c.q.amax()));
    assert!((&c.l - &l).amax() < 1e-12 * (1.0 + c.l.amax()));
    let grom = project_grom(&sc, &cb, NU).unwrap();
    assert_eq!(grom, build_grom(&cb, NU).unwrap());
}

#[test]
fn tensorized_eapg_matches_fullspace_apg() {
    let mut g = rng(77);
    for (grid, r, seed) in [
        (Grid::new_2d(16, 12, 0.1, 0.1).unwrap(), 2, 1),
        (Grid::new_2d(16, 12, 0.1, 0.1).unwrap(), 4, 2),
        (Grid::new_3d(10, 8, 6, 0.1, 0.12, 0.15).unwrap(), 3, 3),
    ] {
        let cb = random_coarse_basis(&grid, r, seed).unwrap();
        let off = build_eapg_offline(&cb, NU).unwrap();
        for _ in 0..10 {
            let a = random_a(r, &mut g);
            let tau = g.random_range(0.0..2.0);
            let mem = MemoryLength::scalar(tau, 1.7).unwrap();
            let c = off.with_memory(&mem).unwrap();
            let fast = eapg_rhs(&c, &a).unwrap();
            let slow = apg_rhs_fullspace(&cb, NU, &mem, &a).unwrap();
            assert!(rel(&fast, &slow) < 1e-9, "scalar {}", rel(&fast, &slow));

            let w = random_spd(r, 0.1, 2.0, &mut g);
            let mem = MemoryLength::matrix(w, 1.7).unwrap();
            let c = combine(&off.grom, &off.parts, &mem).unwrap();
            let fast = eapg_rhs(&c, &a).unwrap();
            let slow = apg_rhs_fullspace(&cb, NU, &mem, &a).unwrap();
            assert!(rel(&fast, &slow) < 1e-9, "matrix {}", rel(&fast, &slow));
        }
    }
}

#[test]
fn apg_closure_off_equals_grom() {
    let grid = Grid::new_2d(10, 10, 0.1, 0.1).unwrap();
    let cb = random_coarse_basis(&grid, 3, 6).unwrap();
    let grom = build_grom(&cb, NU).unwrap();
    let mem = MemoryLength::from_tau(0.0).unwrap();
    let mut g = rng(1);
    for _ in 0..5 {
        let a = random_a(3, &mut g);
        let apg = apg_rhs_fullspace(&cb, NU, &mem, &a).unwrap();
        let gr = grom_rhs(&grom, &a).unwrap();
        assert!(rel(&apg, &gr) < 1e-11);
    }
}
