//! Uniform Cartesian grids, point-major vector fields and second-order
//! finite-difference operators.
//!
//! Grid points are numbered `p = ix + nx * (iy + ny * iz)`. A vector field
//! stores the `d` components of point `p` contiguously at `p * d .. p * d + d`,
//! so a field with `N_grid` points has `N = d * N_grid` values.
//!
//! Interior points use central differences; the outermost points use
//! second-order one-sided stencils (three points for the first derivative,
//! four for the second). There are no ghost cells and no periodic wrap.

use crate::error::{check_len, Error, Result};

/// Smallest number of points per axis the one-sided stencils can work with.
pub const MIN_POINTS_PER_AXIS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    shape: [usize; 3],
    spacing: [f64; 3],
}

impl Grid {
    /// Builds a grid from per-axis point counts and spacings. The number of
    /// axes (2 or 3) is the spatial dimension `d`.
    pub fn new(shape: &[usize], spacing: &[f64]) -> Result<Self> {
        let dim = shape.len();
        if !(dim == 2 || dim == 3) {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 2 or 3, got {dim}"
            )));
        }
        if spacing.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "{dim} axes but {} spacings",
                spacing.len()
            )));
        }
        let mut s = [1usize; 3];
        let mut h = [1.0f64; 3];
        for a in 0..dim {
            if shape[a] < MIN_POINTS_PER_AXIS {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} has {} points, need at least {MIN_POINTS_PER_AXIS}",
                    shape[a]
                )));
            }
            if !(spacing[a].is_finite() && spacing[a] > 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} spacing must be positive, got {}",
                    spacing[a]
                )));
            }
            s[a] = shape[a];
            h[a] = spacing[a];
        }
        Ok(Grid {
            dim,
            shape: s,
            spacing: h,
        })
    }

    pub fn new_2d(nx: usize, ny: usize, dx: f64, dy: f64) -> Result<Self> {
        Self::new(&[nx, ny], &[dx, dy])
    }

    pub fn new_3d(nx: usize, ny: usize, nz: usize, dx: f64, dy: f64, dz: f64) -> Result<Self> {
        Self::new(&[nx, ny, nz], &[dx, dy, dz])
    }

    /// Spatial dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    /// `N_grid`, the number of grid points.
    pub fn n_points(&self) -> usize {
        self.shape.iter().product()
    }

    /// `N = d * N_grid`, the length of a stacked vector field.
    pub fn n_dofs(&self) -> usize {
        self.dim * self.n_points()
    }

    fn strides(&self) -> [usize; 3] {
        [1, self.shape[0], self.shape[0] * self.shape[1]]
    }

    pub fn point_index(&self, idx: [usize; 3]) -> usize {
        idx[0] + self.shape[0] * (idx[1] + self.shape[1] * idx[2])
    }

    pub fn point_multi_index(&self, p: usize) -> [usize; 3] {
        let nx = self.shape[0];
        let ny = self.shape[1];
        [p % nx, (p / nx) % ny, p / (nx * ny)]
    }

    /// Physical coordinates of point `p`, with the first point at the origin.
    /// Unused axes report zero.
    pub fn coordinates(&self, p: usize) -> [f64; 3] {
        let idx = self.point_multi_index(p);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = idx[a] as f64 * self.spacing[a];
        }
        x
    }

    /// Stable 64-bit fingerprint of the grid geometry (FNV-1a over the
    /// dimension, point counts and spacing bit patterns).
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |word: u64| {
            for byte in word.to_le_bytes() {
                hash ^= u64::from(byte);
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        feed(self.dim as u64);
        for a in 0..self.dim {
            feed(self.shape[a] as u64);
            feed(self.spacing[a].to_bits());
        }
        hash
    }

    /// First derivative of component `c` along `axis` at point `p`.
    #[inline]
    fn d1(&self, v: &[f64], p: usize, c: usize, axis: usize, i: usize) -> f64 {
        let d = self.dim;
        let n = self.shape[axis];
        let s = self.strides()[axis];
        let h = self.spacing[axis];
        let f = |q: usize| v[q * d + c];
        if i == 0 {
            (-3.0 * f(p) + 4.0 * f(p + s) - f(p + 2 * s)) / (2.0 * h)
        } else if i == n - 1 {
            (3.0 * f(p) - 4.0 * f(p - s) + f(p - 2 * s)) / (2.0 * h)
        } else {
            (f(p + s) - f(p - s)) / (2.0 * h)
        }
    }

    /// Second derivative of component `c` along `axis` at point `p`.
    #[inline]
    fn d2(&self, v: &[f64], p: usize, c: usize, axis: usize, i: usize) -> f64 {
        let d = self.dim;
        let n = self.shape[axis];
        let s = self.strides()[axis];
        let h2 = self.spacing[axis] * self.spacing[axis];
        let f = |q: usize| v[q * d + c];
        if i == 0 {
            (2.0 * f(p) - 5.0 * f(p + s) + 4.0 * f(p + 2 * s) - f(p + 3 * s)) / h2
        } else if i == n - 1 {
            (2.0 * f(p) - 5.0 * f(p - s) + 4.0 * f(p - 2 * s) - f(p - 3 * s)) / h2
        } else {
            (f(p + s) - 2.0 * f(p) + f(p - s)) / h2
        }
    }

    /// Point Jacobians of a stacked field. `out` has `N_grid * d * d` entries;
    /// entry `p * d * d + i * d + j` holds `dv_i/dx_j` at point `p`.
    pub fn gradient_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("gradient input", self.n_dofs(), v.len())?;
        let d = self.dim;
        check_len("gradient output", self.n_points() * d * d, out.len())?;
        for p in 0..self.n_points() {
            let idx = self.point_multi_index(p);
            let block = &mut out[p * d * d..(p + 1) * d * d];
            for c in 0..d {
                for axis in 0..d {
                    block[c * d + axis] = self.d1(v, p, c, axis, idx[axis]);
                }
            }
        }
        Ok(())
    }

    /// Componentwise Laplacian of a stacked field.
    pub fn laplacian_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("laplacian input", self.n_dofs(), v.len())?;
        check_len("laplacian output", self.n_dofs(), out.len())?;
        let d = self.dim;
        for p in 0..self.n_points() {
            let idx = self.point_multi_index(p);
            for c in 0..d {
                let mut acc = 0.0;
                for axis in 0..d {
                    acc += self.d2(v, p, c, axis, idx[axis]);
                }
                out[p * d + c] = acc;
            }
        }
        Ok(())
    }

    /// Pointwise product of precomputed point Jacobians with a vector field:
    /// `out(x) = J(x) w(x)`.
    ///
    /// With `J = grad v` this is both `(w . grad) v` and `(grad v) w`; the
    /// two convective terms of the linearized operator differ only in which
    /// field supplies the Jacobian.
    pub fn jacobian_apply_into(&self, jac: &[f64], w: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim;
        check_len("point Jacobian field", self.n_points() * d * d, jac.len())?;
        check_len("contracted field", self.n_dofs(), w.len())?;
        check_len("contraction output", self.n_dofs(), out.len())?;
        for p in 0..self.n_points() {
            let block = &jac[p * d * d..(p + 1) * d * d];
            let wp = &w[p * d..(p + 1) * d];
            for i in 0..d {
                let row = &block[i * d..(i + 1) * d];
                out[p * d + i] = row.iter().zip(wp).map(|(g, x)| g * x).sum();
            }
        }
        Ok(())
    }

    pub fn gradient_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_points() * self.dim * self.dim];
        self.gradient_into(v, &mut out)?;
        Ok(out)
    }

    pub fn laplacian_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_dofs()];
        self.laplacian_into(v, &mut out)?;
        Ok(out)
    }

    pub fn jacobian_apply_vec(&self, jac: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_dofs()];
        self.jacobian_apply_into(jac, w, &mut out)?;
        Ok(out)
    }
}

/// A `d`-component vector field on a [`Grid`], stored point-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    grid: Grid,
    values: Vec<f64>,
}

impl VelocityField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        check_len("velocity field", grid.n_dofs(), values.len())?;
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("velocity field".into()));
        }
        Ok(VelocityField { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        VelocityField {
            grid,
            values: vec![0.0; grid.n_dofs()],
        }
    }

    /// Samples `f(x)` at every grid point; only the first `d` returned
    /// components are used.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let d = grid.dim();
        let mut values = Vec::with_capacity(grid.n_dofs());
        for p in 0..grid.n_points() {
            let u = f(grid.coordinates(p));
            values.extend_from_slice(&u[..d]);
        }
        VelocityField { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Components at point `p`.
    pub fn at(&self, p: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.values[p * d..(p + 1) * d]
    }

    pub fn dot(&self, other: &VelocityField) -> Result<f64> {
        same_grid(self, other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &VelocityField) -> Result<()> {
        same_grid(self, other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: f64) -> VelocityField {
        VelocityField {
            grid: self.grid,
            values: self.values.iter().map(|x| alpha * x).collect(),
        }
    }
}

/// Per-point `d x d` matrices of spatial derivatives `dv_i/dx_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointJacobianField {
    grid: Grid,
    values: Vec<f64>,
}

impl PointJacobianField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row-major `d x d` block at point `p`.
    pub fn at(&self, p: usize) -> &[f64] {
        let dd = self.grid.dim() * self.grid.dim();
        &self.values[p * dd..(p + 1) * dd]
    }
}

fn same_grid(a: &VelocityField, b: &VelocityField) -> Result<()> {
    if a.grid == b.grid {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

pub fn gradient(v: &VelocityField) -> PointJacobianField {
    let values = v
        .grid
        .gradient_vec(&v.values)
        .expect("field length matches its grid");
    PointJacobianField {
        grid: v.grid,
        values,
    }
}

pub fn laplacian(v: &VelocityField) -> VelocityField {
    let values = v
        .grid
        .laplacian_vec(&v.values)
        .expect("field length matches its grid");
    VelocityField {
        grid: v.grid,
        values,
    }
}

/// `(a . grad) v`
pub fn convect(a: &VelocityField, v: &VelocityField) -> Result<VelocityField> {
    same_grid(a, v)?;
    let jac = gradient(v);
    let values = a.grid.jacobian_apply_vec(&jac.values, &a.values)?;
    Ok(VelocityField {
        grid: a.grid,
        values,
    })
}

/// `(grad v) w`, the pointwise Jacobian of `v` applied to `w`.
pub fn grad_contract(v: &VelocityField, w: &VelocityField) -> Result<VelocityField> {
    same_grid(v, w)?;
    let jac = gradient(v);
    let values = v.grid.jacobian_apply_vec(&jac.values, &w.values)?;
    Ok(VelocityField {
        grid: v.grid,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid2() -> Grid {
        Grid::new_2d(7, 5, 0.3, 0.2).unwrap()
    }

    fn grid3() -> Grid {
        Grid::new_3d(5, 4, 6, 0.1, 0.25, 0.2).unwrap()
    }

    #[test]
    fn rejects_undersized_and_degenerate_grids() {
        assert!(Grid::new_2d(3, 8, 1.0, 1.0).is_err());
        assert!(Grid::new_2d(8, 8, 0.0, 1.0).is_err());
        assert!(Grid::new_2d(8, 8, 1.0, f64::NAN).is_err());
        assert!(Grid::new(&[8], &[1.0]).is_err());
        assert!(Grid::new(&[8, 8], &[1.0]).is_err());
        let g = Grid::new_3d(4, 5, 6, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(g.n_points(), 120);
        assert_eq!(g.n_dofs(), 360);
    }

    #[test]
    fn index_roundtrip() {
        let g = grid3();
        for p in 0..g.n_points() {
            assert_eq!(g.point_index(g.point_multi_index(p)), p);
        }
    }

    #[test]
    fn linear_field_has_exact_gradient() {
        for g in [grid2(), grid3()] {
            let v = VelocityField::from_fn(g, |x| [2.0 * x[0], 0.0, 0.0]);
            let jac = gradient(&v);
            let d = g.dim();
            for p in 0..g.n_points() {
                let b = jac.at(p);
                for i in 0..d {
                    for j in 0..d {
                        let want = if i == 0 && j == 0 { 2.0 } else { 0.0 };
                        assert!((b[i * d + j] - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn constant_field_has_zero_derivatives() {
        let g = grid3();
        let v = VelocityField::from_fn(g, |_| [1.5, -2.0, 0.25]);
        assert!(gradient(&v).values().iter().all(|x| x.abs() < 1e-12));
        assert!(laplacian(&v).values().iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn quadratics_are_exact_everywhere() {
        let g = grid3();
        let v = VelocityField::from_fn(g, |x| {
            [
                x[0] * x[0],
                x[0] * x[1] + 3.0 * x[2] * x[2],
                x[1] * x[1] - x[2],
            ]
        });
        let lap = laplacian(&v);
        let jac = gradient(&v);
        for p in 0..g.n_points() {
            let x = g.coordinates(p);
            let l = lap.at(p);
            assert!((l[0] - 2.0).abs() < 1e-9);
            assert!((l[1] - 6.0).abs() < 1e-9);
            assert!((l[2] - 2.0).abs() < 1e-9);
            let b = jac.at(p);
            assert!((b[0] - 2.0 * x[0]).abs() < 1e-12);
            assert!((b[3] - x[1]).abs() < 1e-12);
            assert!((b[4] - x[0]).abs() < 1e-12);
            assert!((b[5] - 6.0 * x[2]).abs() < 1e-12);
            assert!((b[7] - 2.0 * x[1]).abs() < 1e-12);
            assert!((b[8] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn convect_with_constant_advector() {
        let g = grid3();
        let a = VelocityField::from_fn(g, |_| [1.0, 0.0, 0.0]);
        let v = VelocityField::from_fn(g, |x| [3.0 * x[0], x[1], 0.0]);
        let out = convect(&a, &v).unwrap();
        for p in 0..g.n_points() {
            assert!((out.at(p)[0] - 3.0).abs() < 1e-12);
            assert!(out.at(p)[1].abs() < 1e-12);
        }
        let zero = VelocityField::zeros(g);
        assert!(convect(&zero, &v).unwrap().values().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn grad_contract_of_linear_field() {
        let g = grid2();
        let v = VelocityField::from_fn(g, |x| [x[0], 0.0, 0.0]);
        let w = VelocityField::from_fn(g, |_| [0.7, 0.0, 0.0]);
        let out = grad_contract(&v, &w).unwrap();
        for p in 0..g.n_points() {
            assert!((out.at(p)[0] - 0.7).abs() < 1e-12);
            assert!(out.at(p)[1].abs() < 1e-12);
        }
        let c = VelocityField::from_fn(g, |_| [4.0, 1.0, 0.0]);
        assert!(grad_contract(&c, &w)
            .unwrap()
            .values()
            .iter()
            .all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = VelocityField::zeros(grid2());
        let b = VelocityField::zeros(Grid::new_2d(5, 7, 0.3, 0.2).unwrap());
        assert!(matches!(convect(&a, &b), Err(Error::GridMismatch)));
        assert!(matches!(grad_contract(&a, &b), Err(Error::GridMismatch)));
        assert!(VelocityField::new(grid2(), vec![0.0; 3]).is_err());
        let mut bad = vec![0.0; grid2().n_dofs()];
        bad[4] = f64::INFINITY;
        assert!(matches!(
            VelocityField::new(grid2(), bad),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn sine_derivative_converges_at_second_order() {
        // v_1 = sin(2 pi x / L) on [0, L]; max-norm errors over three halvings.
        let length = 1.0;
        let mut errs = Vec::new();
        for level in 0..4 {
            let n = 16 * (1 << level) + 1;
            let h = length / (n - 1) as f64;
            let g = Grid::new_2d(n, 5, h, 0.1).unwrap();
            let k = 2.0 * PI / length;
            let v = VelocityField::from_fn(g, |x| [(k * x[0]).sin(), 0.0, 0.0]);
            let jac = gradient(&v);
            let err = (0..g.n_points())
                .map(|p| (jac.at(p)[0] - k * (k * g.coordinates(p)[0]).cos()).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((1.9..2.1).contains(&order), "order {order}");
        }
    }
}
