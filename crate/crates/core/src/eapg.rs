//! Offline assembly of the efficient adjoint Petrov-Galerkin ROM.
//!
//! The fine-scale part of the Galerkin right-hand side is itself quadratic,
//! `Pi_bar R = Q^Pi (a (x) a) + L^Pi a + C^Pi`, and the exact Jacobian
//! `J(u~)[v] = -(grad u~) v - (u~ . grad) v + nu lap v` is affine in `a`.
//! Their composition is therefore a cubic polynomial in `a`:
//!
//! ```text
//! J(u~)[Pi_bar R(u~)] = K (a (x) a (x) a) + Q a (x) a + L a + C
//! ```
//!
//! Column `((i * r) + j) * r + k` of `K` pairs the Jacobian of mode `i` with
//! column `(j, k)` of `Q^Pi`. Projecting onto `Phi~` and weighting with the
//! memory length gives a time-invariant reduced system.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::galerkin::{
    assemble_grom_spatial_with, kron2, kron3, project_grom, BasisDerivatives,
    GromCoefficients, SpatialGromCoefficients,
};
use crate::grid::Grid;
use crate::memory::MemoryLength;
use crate::pod::CoarseBasis;

/// `Pi_bar` applied column-wise to the Galerkin spatial tensors.
#[derive(Debug, Clone)]
pub struct FineScaleCoefficients {
    pub q: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub c: DVector<f64>,
}

/// Spatial eAPG tensors `K^N` (`N x r^3`), `Q^N`, `L^N`, `C^N`.
#[derive(Debug, Clone)]
pub struct SpatialEapgCoefficients {
    pub k: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl SpatialEapgCoefficients {
    pub fn rank(&self) -> usize {
        self.l.ncols()
    }

    /// `K (a (x) a (x) a) + Q (a (x) a) + L a + C` in the full space.
    pub fn evaluate(&self, a: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("modal coefficients", self.rank(), a.len())?;
        Ok(&self.k * kron3(a) + &self.q * kron2(a) + &self.l * a + &self.c)
    }
}

/// Memory-free projections `Phi~^T K^N`, `Phi~^T Q^N`, `Phi~^T L^N`,
/// `Phi~^T C^N`. Weighting these by a memory length and adding the G-ROM
/// tensors gives the eAPG system, so a memory-length search only has to
/// assemble them once.
#[derive(Debug, Clone, PartialEq)]
pub struct EapgMemoryParts {
    pub k: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl EapgMemoryParts {
    pub fn rank(&self) -> usize {
        self.c.len()
    }
}

/// Projected cubic eAPG system with the memory length folded in.
#[derive(Debug, Clone, PartialEq)]
pub struct EapgCoefficients {
    pub k: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub c: DVector<f64>,
    pub memory: MemoryLength,
}

impl EapgCoefficients {
    pub fn new(
        k: DMatrix<f64>,
        q: DMatrix<f64>,
        l: DMatrix<f64>,
        c: DVector<f64>,
        memory: MemoryLength,
    ) -> Result<Self> {
        let r = c.len();
        check_len("K rows", r, k.nrows())?;
        check_len("K columns", r * r * r, k.ncols())?;
        check_len("Q rows", r, q.nrows())?;
        check_len("Q columns", r * r, q.ncols())?;
        check_len("L rows", r, l.nrows())?;
        check_len("L columns", r, l.ncols())?;
        if k.iter().chain(q.iter()).chain(l.iter()).chain(c.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("eAPG coefficients".into()));
        }
        Ok(EapgCoefficients { k, q, l, c, memory })
    }

    pub fn rank(&self) -> usize {
        self.c.len()
    }

    /// The G-ROM as an eAPG system with the closure switched off.
    pub fn from_grom(g: &GromCoefficients) -> Self {
        let r = g.rank();
        EapgCoefficients {
            k: DMatrix::zeros(r, r * r * r),
            q: g.q.clone(),
            l: g.l.clone(),
            c: g.c.clone(),
            memory: MemoryLength::from_tau(0.0).expect("zero memory length is valid"),
        }
    }
}

pub fn assemble_fine_scale(sc: &SpatialGromCoefficients, cb: &CoarseBasis) -> Result<FineScaleCoefficients> {
    let n = cb.grid().n_dofs();
    let r = cb.rank();
    check_len("Q^{G,N} rows", n, sc.q.nrows())?;
    check_len("Q^{G,N} columns", r * r, sc.q.ncols())?;
    check_len("L^{G,N} columns", r, sc.l.ncols())?;
    check_len("C^{G,N} length", n, sc.c.len())?;
    let mut q = sc.q.clone();
    let mut l = sc.l.clone();
    cb.apply_fine_columns(&mut q)?;
    cb.apply_fine_columns(&mut l)?;
    let c = cb.apply_fine(sc.c.as_slice())?;
    Ok(FineScaleCoefficients { q, l, c })
}

/// Per-grid scratch for one column of the linearized operator.
struct LinearizedTerms<'a> {
    grid: &'a Grid,
    modes: &'a DMatrix<f64>,
    mean: &'a [f64],
    deriv: &'a BasisDerivatives,
    nu: f64,
}

impl LinearizedTerms<'_> {
    /// `-(grad phi_i) v - (phi_i . grad) v`, accumulated into `out`.
    fn add_mode_part(&self, i: usize, v_grad: &[f64], v: &[f64], out: &mut [f64]) {
        let a = self
            .grid
            .jacobian_apply_vec(&self.deriv.mode_grads[i], v)
            .expect("basis-sized field");
        let b = self
            .grid
            .jacobian_apply_vec(v_grad, self.modes.column(i).as_slice())
            .expect("basis-sized field");
        for p in 0..out.len() {
            out[p] -= a[p] + b[p];
        }
    }

    /// `-(grad u') v - (u' . grad) v + nu lap v`, accumulated into `out`.
    fn add_mean_part(&self, v_grad: &[f64], v: &[f64], out: &mut [f64]) {
        let a = self
            .grid
            .jacobian_apply_vec(&self.deriv.mean_grad, v)
            .expect("basis-sized field");
        let b = self
            .grid
            .jacobian_apply_vec(v_grad, self.mean)
            .expect("basis-sized field");
        let lap = self.grid.laplacian_vec(v).expect("basis-sized field");
        for p in 0..out.len() {
            out[p] += -a[p] - b[p] + self.nu * lap[p];
        }
    }

    fn gradient(&self, v: &[f64]) -> Vec<f64> {
        self.grid.gradient_vec(v).expect("basis-sized field")
    }
}

/// Spatial eAPG tensors. Holds the full `N x r^3` tensor in memory; use
/// [`assemble_memory_parts`] when only the projection is needed.
pub fn assemble_eapg_spatial(
    fsc: &FineScaleCoefficients,
    cb: &CoarseBasis,
    nu: f64,
) -> Result<SpatialEapgCoefficients> {
    let deriv = BasisDerivatives::compute(cb);
    assemble_eapg_spatial_with(fsc, cb, &deriv, nu)
}

fn check_fine_shapes(fsc: &FineScaleCoefficients, cb: &CoarseBasis) -> Result<()> {
    let n = cb.grid().n_dofs();
    let r = cb.rank();
    check_len("Q^Pi rows", n, fsc.q.nrows())?;
    check_len("Q^Pi columns", r * r, fsc.q.ncols())?;
    check_len("L^Pi rows", n, fsc.l.nrows())?;
    check_len("L^Pi columns", r, fsc.l.ncols())?;
    check_len("C^Pi length", n, fsc.c.len())
}

fn assemble_eapg_spatial_with(
    fsc: &FineScaleCoefficients,
    cb: &CoarseBasis,
    deriv: &BasisDerivatives,
    nu: f64,
) -> Result<SpatialEapgCoefficients> {
    check_fine_shapes(fsc, cb)?;
    let n = cb.grid().n_dofs();
    let r = cb.rank();
    let terms = LinearizedTerms {
        grid: cb.grid(),
        modes: cb.modes(),
        mean: cb.mean().values(),
        deriv,
        nu,
    };
    let q_grads: Vec<Vec<f64>> = (0..r * r)
        .into_par_iter()
        .map(|col| terms.gradient(fsc.q.column(col).as_slice()))
        .collect();
    let l_grads: Vec<Vec<f64>> = (0..r)
        .into_par_iter()
        .map(|col| terms.gradient(fsc.l.column(col).as_slice()))
        .collect();
    let c_grad = terms.gradient(fsc.c.as_slice());

    let mut k = DMatrix::zeros(n, r * r * r);
    k.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(col, out)| {
            let (i, jk) = (col / (r * r), col % (r * r));
            terms.add_mode_part(i, &q_grads[jk], fsc.q.column(jk).as_slice(), out);
        });

    let mut q = DMatrix::zeros(n, r * r);
    q.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(col, out)| {
            let (i, j) = (col / r, col % r);
            terms.add_mode_part(i, &l_grads[j], fsc.l.column(j).as_slice(), out);
            terms.add_mean_part(&q_grads[col], fsc.q.column(col).as_slice(), out);
        });

    let mut l = DMatrix::zeros(n, r);
    l.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, out)| {
            terms.add_mode_part(i, &c_grad, fsc.c.as_slice(), out);
            terms.add_mean_part(&l_grads[i], fsc.l.column(i).as_slice(), out);
        });

    let mut c = DVector::zeros(n);
    terms.add_mean_part(&c_grad, fsc.c.as_slice(), c.as_mut_slice());

    Ok(SpatialEapgCoefficients { k, q, l, c })
}

pub fn project_memory_parts(e: &SpatialEapgCoefficients, cb: &CoarseBasis) -> Result<EapgMemoryParts> {
    let n = cb.grid().n_dofs();
    let r = cb.rank();
    check_len("K^N rows", n, e.k.nrows())?;
    check_len("K^N columns", r * r * r, e.k.ncols())?;
    check_len("Q^N columns", r * r, e.q.ncols())?;
    check_len("L^N columns", r, e.l.ncols())?;
    check_len("C^N length", n, e.c.len())?;
    let phi = cb.modes();
    Ok(EapgMemoryParts {
        k: phi.tr_mul(&e.k),
        q: phi.tr_mul(&e.q),
        l: phi.tr_mul(&e.l),
        c: phi.tr_mul(&e.c),
    })
}

/// Projected memory tensors without materializing `K^N`: each spatial
/// column is built, projected and dropped, so peak memory stays `O(N r^2)`
/// for the fine-scale gradients rather than `O(N r^3)`.
pub fn assemble_memory_parts(
    fsc: &FineScaleCoefficients,
    cb: &CoarseBasis,
    nu: f64,
) -> Result<EapgMemoryParts> {
    let deriv = BasisDerivatives::compute(cb);
    assemble_memory_parts_with(fsc, cb, &deriv, nu)
}

fn assemble_memory_parts_with(
    fsc: &FineScaleCoefficients,
    cb: &CoarseBasis,
    deriv: &BasisDerivatives,
    nu: f64,
) -> Result<EapgMemoryParts> {
    check_fine_shapes(fsc, cb)?;
    let n = cb.grid().n_dofs();
    let r = cb.rank();
    let phi = cb.modes();
    let terms = LinearizedTerms {
        grid: cb.grid(),
        modes: phi,
        mean: cb.mean().values(),
        deriv,
        nu,
    };
    let project = |v: &[f64]| -> Vec<f64> {
        (0..r).map(|m| phi.column(m).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    };

    let l_grads: Vec<Vec<f64>> = (0..r)
        .into_par_iter()
        .map(|col| terms.gradient(fsc.l.column(col).as_slice()))
        .collect();
    let c_grad = terms.gradient(fsc.c.as_slice());

    // One Q^Pi column gradient at a time: it feeds r columns of K and one of Q.
    let per_jk: Vec<(Vec<Vec<f64>>, Vec<f64>)> = (0..r * r)
        .into_par_iter()
        .map(|jk| {
            let v = fsc.q.column(jk);
            let grad = terms.gradient(v.as_slice());
            let k_cols = (0..r)
                .map(|i| {
                    let mut out = vec![0.0; n];
                    terms.add_mode_part(i, &grad, v.as_slice(), &mut out);
                    project(&out)
                })
                .collect();
            let (i, j) = (jk / r, jk % r);
            let mut out = vec![0.0; n];
            terms.add_mode_part(i, &l_grads[j], fsc.l.column(j).as_slice(), &mut out);
            terms.add_mean_part(&grad, v.as_slice(), &mut out);
            (k_cols, project(&out))
        })
        .collect();

    let mut k = DMatrix::zeros(r, r * r * r);
    let mut q = DMatrix::zeros(r, r * r);
    for (jk, (k_cols, q_col)) in per_jk.iter().enumerate() {
        for (i, col) in k_cols.iter().enumerate() {
            k.column_mut(i * r * r + jk).copy_from_slice(col);
        }
        q.column_mut(jk).copy_from_slice(q_col);
    }

    let l_cols: Vec<Vec<f64>> = (0..r)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; n];
            terms.add_mode_part(i, &c_grad, fsc.c.as_slice(), &mut out);
            terms.add_mean_part(&l_grads[i], fsc.l.column(i).as_slice(), &mut out);
            project(&out)
        })
        .collect();
    let mut l = DMatrix::zeros(r, r);
    for (i, col) in l_cols.iter().enumerate() {
        l.column_mut(i).copy_from_slice(col);
    }

    let mut c_full = vec![0.0; n];
    terms.add_mean_part(&c_grad, fsc.c.as_slice(), &mut c_full);
    let c = DVector::from_vec(project(&c_full));

    Ok(EapgMemoryParts { k, q, l, c })
}

/// `G + T * parts` (or `G + tau * parts`), with `K = T * parts.k`.
pub fn combine(g: &GromCoefficients, parts: &EapgMemoryParts, mem: &MemoryLength) -> Result<EapgCoefficients> {
    let r = g.rank();
    check_len("memory parts rank", r, parts.rank())?;
    mem.check_rank(r)?;
    let k = mem.apply(&parts.k);
    let q = &g.q + mem.apply(&parts.q);
    let l = &g.l + mem.apply(&parts.l);
    let c = &g.c + mem.apply_vec(&parts.c);
    EapgCoefficients::new(k, q, l, c, mem.clone())
}

/// Projects spatial G-ROM and eAPG tensors and folds in the memory length.
pub fn project_eapg(
    g: &SpatialGromCoefficients,
    e: &SpatialEapgCoefficients,
    cb: &CoarseBasis,
    nu: f64,
    mem: &MemoryLength,
) -> Result<EapgCoefficients> {
    let grom = project_grom(g, cb, nu)?;
    let parts = project_memory_parts(e, cb)?;
    combine(&grom, &parts, mem)
}

/// Everything the eAPG offline phase produces before a memory length is
/// chosen.
#[derive(Debug, Clone)]
pub struct EapgOffline {
    pub grom: GromCoefficients,
    pub parts: EapgMemoryParts,
}

impl EapgOffline {
    pub fn with_memory(&self, mem: &MemoryLength) -> Result<EapgCoefficients> {
        combine(&self.grom, &self.parts, mem)
    }
}

/// Offline phase of the eAPG-ROM up to (not including) the memory weighting.
pub fn build_eapg_offline(cb: &CoarseBasis, nu: f64) -> Result<EapgOffline> {
    if !(nu.is_finite() && nu > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "viscosity must be positive, got {nu}"
        )));
    }
    let deriv = BasisDerivatives::compute(cb);
    let sc = assemble_grom_spatial_with(cb, &deriv, nu);
    let grom = project_grom(&sc, cb, nu)?;
    let fsc = assemble_fine_scale(&sc, cb)?;
    drop(sc);
    let parts = assemble_memory_parts_with(&fsc, cb, &deriv, nu)?;
    Ok(EapgOffline { grom, parts })
}
