//! Full-space adjoint Petrov-Galerkin right-hand side.
//!
//! Evaluates the closure directly on the grid at every call, at `O(r N)`
//! cost. It shares no tensor code with the offline assembly and so serves
//! as an independent check of the eAPG coefficients.

use nalgebra::DVector;

use crate::error::{check_len, Error, Result};
use crate::grid::Grid;
use crate::memory::MemoryLength;
use crate::pod::CoarseBasis;

pub const DEFAULT_GRID_CAP: usize = 200_000;

/// `-(u . grad) u + nu lap u` for a stacked field.
fn residual(grid: &Grid, u: &[f64], u_grad: &[f64], nu: f64) -> Result<Vec<f64>> {
    let conv = grid.jacobian_apply_vec(u_grad, u)?;
    let lap = grid.laplacian_vec(u)?;
    Ok(conv.iter().zip(&lap).map(|(c, l)| -c + nu * l).collect())
}

/// `da/dt = Phi~^T R(u~) + T Phi~^T J(u~)[Pi_bar R(u~)]` with
/// `u~ = u' + Phi~ a`, rejecting grids with more than `cap` points.
pub fn apg_rhs_fullspace_capped(
    cb: &CoarseBasis,
    nu: f64,
    mem: &MemoryLength,
    a: &DVector<f64>,
    cap: usize,
) -> Result<DVector<f64>> {
    let grid = cb.grid();
    if grid.n_points() > cap {
        return Err(Error::GridCapExceeded {
            n: grid.n_points(),
            cap,
        });
    }
    check_len("modal coefficients", cb.rank(), a.len())?;
    if !nu.is_finite() || nu < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "viscosity must be non-negative, got {nu}"
        )));
    }

    let lifted = cb.lift(a)?;
    let u: Vec<f64> = lifted
        .iter()
        .zip(cb.mean().values())
        .map(|(x, m)| x + m)
        .collect();
    let u_grad = grid.gradient_vec(&u)?;
    let r_full = residual(grid, &u, &u_grad, nu)?;
    let coarse = cb.project(&r_full)?;

    let fine = cb.apply_fine(&r_full)?;
    let fine = fine.as_slice();
    let fine_grad = grid.gradient_vec(fine)?;
    let a1 = grid.jacobian_apply_vec(&u_grad, fine)?;
    let a2 = grid.jacobian_apply_vec(&fine_grad, &u)?;
    let lap = grid.laplacian_vec(fine)?;
    let jac: Vec<f64> = (0..fine.len())
        .map(|p| -a1[p] - a2[p] + nu * lap[p])
        .collect();
    let memory = cb.project(&jac)?;

    mem.check_rank(cb.rank())?;
    Ok(coarse + mem.apply_vec(&memory))
}

pub fn apg_rhs_fullspace(cb: &CoarseBasis, nu: f64, mem: &MemoryLength, a: &DVector<f64>) -> Result<DVector<f64>> {
    apg_rhs_fullspace_capped(cb, nu, mem, a, DEFAULT_GRID_CAP)
}

/// The full-space system as a [`crate::online::ReducedSystem`], for
/// integration on small grids.
pub struct ApgSystem<'a> {
    pub basis: &'a CoarseBasis,
    pub viscosity: f64,
    pub memory: MemoryLength,
    pub cap: usize,
}

impl crate::online::ReducedSystem for ApgSystem<'_> {
    fn rank(&self) -> usize {
        self.basis.rank()
    }

    fn rhs(&self, a: &DVector<f64>) -> DVector<f64> {
        apg_rhs_fullspace_capped(self.basis, self.viscosity, &self.memory, a, self.cap)
            .unwrap_or_else(|_| DVector::from_element(a.len(), f64::NAN))
    }
}
