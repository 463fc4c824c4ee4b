//! Offline assembly of the Galerkin ROM: spatial coefficient tensors and
//! their projection onto the coarse basis.
//!
//! With `u~ = u' + Phi~ a` and the pressure neglected, the discrete
//! right-hand side `R(u~) = -(u~ . grad) u~ + nu lap u~` splits exactly into
//!
//! ```text
//! R(u' + Phi~ a) = Q^{G,N} (a (x) a) + L^{G,N} a + C^{G,N}
//! ```
//!
//! where column `(i, k)` of `Q^{G,N}` sits at index `i * r + k` (the
//! ordering of `a (x) a`).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::grid::Grid;
use crate::pod::CoarseBasis;

/// Gradients and Laplacians of the mean field and every coarse mode.
#[derive(Debug, Clone)]
pub struct BasisDerivatives {
    pub(crate) mean_grad: Vec<f64>,
    pub(crate) mean_lap: Vec<f64>,
    pub(crate) mode_grads: Vec<Vec<f64>>,
    pub(crate) mode_laps: Vec<Vec<f64>>,
}

impl BasisDerivatives {
    pub fn compute(cb: &CoarseBasis) -> Self {
        let grid = cb.grid();
        let mean = cb.mean().values();
        let (mode_grads, mode_laps) = (0..cb.rank())
            .into_par_iter()
            .map(|k| {
                let col = cb.modes().column(k);
                let v = col.as_slice();
                (
                    grid.gradient_vec(v).expect("mode length"),
                    grid.laplacian_vec(v).expect("mode length"),
                )
            })
            .unzip();
        BasisDerivatives {
            mean_grad: grid.gradient_vec(mean).expect("mean length"),
            mean_lap: grid.laplacian_vec(mean).expect("mean length"),
            mode_grads,
            mode_laps,
        }
    }
}

/// `Q^{G,N}` (`N x r^2`), `L^{G,N}` (`N x r`) and `C^{G,N}` (`N`).
#[derive(Debug, Clone)]
pub struct SpatialGromCoefficients {
    pub q: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl SpatialGromCoefficients {
    pub fn rank(&self) -> usize {
        self.l.ncols()
    }

    /// `Q (a (x) a) + L a + C`, evaluated in the full space.
    pub fn evaluate(&self, a: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("modal coefficients", self.rank(), a.len())?;
        Ok(&self.q * kron2(a) + &self.l * a + &self.c)
    }
}

/// Projected G-ROM tensors `Q^G` (`r x r^2`), `L^G` (`r x r`), `C^G` (`r`).
#[derive(Debug, Clone, PartialEq)]
pub struct GromCoefficients {
    pub q: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub c: DVector<f64>,
    pub viscosity: f64,
}

impl GromCoefficients {
    pub fn new(q: DMatrix<f64>, l: DMatrix<f64>, c: DVector<f64>, viscosity: f64) -> Result<Self> {
        let r = c.len();
        check_len("L rows", r, l.nrows())?;
        check_len("L columns", r, l.ncols())?;
        check_len("Q rows", r, q.nrows())?;
        check_len("Q columns", r * r, q.ncols())?;
        let out = GromCoefficients {
            q,
            l,
            c,
            viscosity,
        };
        if !out.is_finite() {
            return Err(Error::NonFinite("G-ROM coefficients".into()));
        }
        Ok(out)
    }

    pub fn zeros(r: usize) -> Self {
        GromCoefficients {
            q: DMatrix::zeros(r, r * r),
            l: DMatrix::zeros(r, r),
            c: DVector::zeros(r),
            viscosity: 0.0,
        }
    }

    pub fn rank(&self) -> usize {
        self.c.len()
    }

    fn is_finite(&self) -> bool {
        self.q.iter().chain(self.l.iter()).chain(self.c.iter()).all(|x| x.is_finite())
    }
}

/// `a (x) a`, with entry `i * r + k` equal to `a_i a_k`.
pub fn kron2(a: &DVector<f64>) -> DVector<f64> {
    let r = a.len();
    DVector::from_fn(r * r, |idx, _| a[idx / r] * a[idx % r])
}

/// `a (x) a (x) a`, with entry `(i * r + j) * r + k` equal to `a_i a_j a_k`.
pub fn kron3(a: &DVector<f64>) -> DVector<f64> {
    let r = a.len();
    DVector::from_fn(r * r * r, |idx, _| {
        a[idx / (r * r)] * a[(idx / r) % r] * a[idx % r]
    })
}

fn check_viscosity(nu: f64) -> Result<()> {
    if nu.is_finite() && nu > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "viscosity must be positive, got {nu}"
        )))
    }
}

pub fn assemble_grom_spatial(cb: &CoarseBasis, nu: f64) -> Result<SpatialGromCoefficients> {
    check_viscosity(nu)?;
    let deriv = BasisDerivatives::compute(cb);
    Ok(assemble_grom_spatial_with(cb, &deriv, nu))
}

pub(crate) fn assemble_grom_spatial_with(
    cb: &CoarseBasis,
    deriv: &BasisDerivatives,
    nu: f64,
) -> SpatialGromCoefficients {
    let grid: &Grid = cb.grid();
    let n = grid.n_dofs();
    let r = cb.rank();
    let modes = cb.modes();
    let mean = cb.mean().values();

    let mut q = DMatrix::zeros(n, r * r);
    q.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(col, out)| {
            let (i, k) = (col / r, col % r);
            grid.jacobian_apply_into(&deriv.mode_grads[k], modes.column(i).as_slice(), out)
                .expect("shapes fixed by basis");
            out.iter_mut().for_each(|x| *x = -*x);
        });

    let mut l = DMatrix::zeros(n, r);
    l.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, out)| {
            let phi = modes.column(i);
            let phi_dot_grad_mean = grid
                .jacobian_apply_vec(&deriv.mean_grad, phi.as_slice())
                .expect("shapes fixed by basis");
            let mean_dot_grad_phi = grid
                .jacobian_apply_vec(&deriv.mode_grads[i], mean)
                .expect("shapes fixed by basis");
            for p in 0..n {
                out[p] = -phi_dot_grad_mean[p] - mean_dot_grad_phi[p] + nu * deriv.mode_laps[i][p];
            }
        });

    let mean_dot_grad_mean = grid
        .jacobian_apply_vec(&deriv.mean_grad, mean)
        .expect("shapes fixed by basis");
    let c = DVector::from_fn(n, |p, _| -mean_dot_grad_mean[p] + nu * deriv.mean_lap[p]);

    SpatialGromCoefficients { q, l, c }
}

pub fn project_grom(sc: &SpatialGromCoefficients, cb: &CoarseBasis, nu: f64) -> Result<GromCoefficients> {
    let r = cb.rank();
    let n = cb.grid().n_dofs();
    check_len("Q^{G,N} rows", n, sc.q.nrows())?;
    check_len("Q^{G,N} columns", r * r, sc.q.ncols())?;
    check_len("L^{G,N} columns", r, sc.l.ncols())?;
    check_len("C^{G,N} length", n, sc.c.len())?;
    let phi = cb.modes();
    GromCoefficients::new(phi.tr_mul(&sc.q), phi.tr_mul(&sc.l), phi.tr_mul(&sc.c), nu)
}

/// Offline phase of the Galerkin ROM: derivatives, spatial tensors, projection.
pub fn build_grom(cb: &CoarseBasis, nu: f64) -> Result<GromCoefficients> {
    let sc = assemble_grom_spatial(cb, nu)?;
    project_grom(&sc, cb, nu)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronecker_ordering() {
        let a = DVector::from_vec(vec![2.0, 3.0, 5.0]);
        let k2 = kron2(&a);
        assert_eq!(k2.as_slice(), &[4.0, 6.0, 10.0, 6.0, 9.0, 15.0, 10.0, 15.0, 25.0]);
        let k3 = kron3(&a);
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    assert_eq!(k3[(i * 3 + j) * 3 + k], a[i] * a[j] * a[k]);
                }
            }
        }
    }

    #[test]
    fn coefficient_shapes_are_checked() {
        assert!(GromCoefficients::new(
            DMatrix::zeros(2, 3),
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
            1.0
        )
        .is_err());
        let mut c = DVector::zeros(2);
        c[0] = f64::NAN;
        assert!(matches!(
            GromCoefficients::new(DMatrix::zeros(2, 4), DMatrix::zeros(2, 2), c, 1.0),
            Err(Error::NonFinite(_))
        ));
    }
}
