//! Proper orthogonal decomposition of the fluctuation matrix, truncation to
//! a coarse basis, and the coarse/fine projectors.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::grid::{Grid, VelocityField};
use crate::kv::{KeyValueFile, KeyValueWriter};
use crate::series::ModalSeries;
use crate::snapshot::{
    fmt_f64, grid_from_manifest, read_f64_file, write_f64_file, write_grid_entries,
    FluctuationSet,
};

/// Relative threshold below which a singular value is treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Thin SVD `U* = Phi diag(sigma) V^T` of the fluctuation matrix together
/// with the time mean.
#[derive(Debug, Clone)]
pub struct PodBasis {
    mean: VelocityField,
    modes: DMatrix<f64>,
    singular_values: DVector<f64>,
    right: DMatrix<f64>,
}

impl PodBasis {
    pub fn mean(&self) -> &VelocityField {
        &self.mean
    }

    pub fn grid(&self) -> &Grid {
        self.mean.grid()
    }

    /// `Phi`, `N x M` with orthonormal columns.
    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    /// Non-increasing singular values.
    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    /// `V`, `M x M`.
    pub fn right_vectors(&self) -> &DMatrix<f64> {
        &self.right
    }

    pub fn n_modes(&self) -> usize {
        self.singular_values.len()
    }

    pub fn total_energy(&self) -> f64 {
        self.singular_values.norm_squared()
    }
}

/// Thin SVD `A = U diag(sigma) V^T` of a tall matrix: Householder QR, then
/// one-sided Jacobi on the square factor. Jacobi stays accurate on
/// rank-deficient input, where the bidiagonal QR iteration in nalgebra can
/// return wrong singular values. Columns of `U` belonging to zero singular
/// values complete an orthonormal set. Output is unsorted.
fn thin_svd(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    const MAX_SWEEPS: usize = 80;
    let m = a.ncols();
    let qr = a.clone().qr();
    let q = qr.q();
    let mut w = qr.r();
    let mut v = DMatrix::<f64>::identity(m, m);
    // Columns at rounding level end up in the completed null space.
    let negligible = (f64::EPSILON * w.norm()).powi(2);
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..m {
            for k in p + 1..m {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(k).norm_squared();
                let gamma = w.column(p).dot(&w.column(k));
                if alpha.min(beta) <= negligible
                    || gamma == 0.0
                    || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut w, &mut v] {
                    for i in 0..mat.nrows() {
                        let (x, y) = (mat[(i, p)], mat[(i, k)]);
                        mat[(i, p)] = c * x - s * y;
                        mat[(i, k)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdFailure);
    }

    let sigma = DVector::from_fn(m, |k, _| w.column(k).norm());
    let cutoff = m as f64 * f64::EPSILON * sigma.max();
    let mut ur = DMatrix::zeros(m, m);
    let mut null = Vec::new();
    for k in 0..m {
        if sigma[k] > cutoff {
            ur.set_column(k, &(w.column(k) / sigma[k]));
        } else {
            null.push(k);
        }
    }
    let mut unit = 0;
    for k in null {
        loop {
            if unit == m {
                return Err(Error::SvdFailure);
            }
            let mut e = DVector::zeros(m);
            e[unit] = 1.0;
            unit += 1;
            for _pass in 0..2 {
                for j in (0..m).filter(|&j| j != k) {
                    let c = ur.column(j).dot(&e);
                    e.axpy(-c, &ur.column(j), 1.0);
                }
            }
            let norm = e.norm();
            if norm > 0.5 {
                ur.set_column(k, &(e / norm));
                break;
            }
        }
    }
    Ok((q * ur, sigma, v))
}

pub fn compute_pod(f: &FluctuationSet) -> Result<PodBasis> {
    let u = f.fluctuations();
    let (n, m) = u.shape();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 snapshots, got {m}"
        )));
    }
    if n < m {
        return Err(Error::InvalidArgument(format!(
            "more snapshots ({m}) than degrees of freedom ({n})"
        )));
    }
    let scale = u.amax();
    if scale == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let (u_mat, sigma, v) = thin_svd(u)?;

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));

    let mut modes = DMatrix::zeros(n, m);
    let mut right = DMatrix::zeros(m, m);
    let mut values = DVector::zeros(m);
    for (k, &src) in order.iter().enumerate() {
        let mut phi = u_mat.column(src).into_owned();
        let mut v = v.column(src).into_owned();
        let pivot = phi.iamax();
        if phi[pivot] < 0.0 {
            phi.neg_mut();
            v.neg_mut();
        }
        modes.set_column(k, &phi);
        right.set_column(k, &v);
        values[k] = sigma[src];
    }

    let cutoff = RANK_TOLERANCE * values[0];
    let deficient = values.iter().filter(|s| **s <= cutoff).count();
    if deficient > 0 {
        log::warn!(
            "fluctuation matrix has rank {} < M = {m}; zeroing {deficient} singular value(s)",
            m - deficient
        );
        for s in values.iter_mut() {
            if *s <= cutoff {
                *s = 0.0;
            }
        }
    }

    Ok(PodBasis {
        mean: f.mean().clone(),
        modes,
        singular_values: values,
        right,
    })
}

/// `1 - sum_{k<=r} sigma_k^2 / sum_k sigma_k^2`.
pub fn truncation_error_from_sigma(sigma: &[f64], r: usize) -> Result<f64> {
    let m = sigma.len();
    if r < 1 || r > m {
        return Err(Error::InvalidArgument(format!(
            "r = {r} outside 1..={m}"
        )));
    }
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    // Summing the discarded tail keeps small errors accurate.
    let tail: f64 = sigma[r..].iter().map(|s| s * s).sum();
    Ok((tail / total).clamp(0.0, 1.0))
}

pub fn truncation_error(pod: &PodBasis, r: usize) -> Result<f64> {
    truncation_error_from_sigma(pod.singular_values.as_slice(), r)
}

/// The first `r` POD modes (the resolved coarse scales) plus the data
/// needed to express errors against the full ensemble.
#[derive(Debug, Clone)]
pub struct CoarseBasis {
    mean: VelocityField,
    modes: DMatrix<f64>,
    singular_values: DVector<f64>,
}

impl CoarseBasis {
    /// Builds a coarse basis directly. `modes` must have orthonormal columns.
    pub fn from_parts(
        mean: VelocityField,
        modes: DMatrix<f64>,
        singular_values: DVector<f64>,
    ) -> Result<Self> {
        check_len("coarse basis rows", mean.grid().n_dofs(), modes.nrows())?;
        let r = modes.ncols();
        if r == 0 || r > singular_values.len() {
            return Err(Error::InvalidArgument(format!(
                "{r} modes but {} singular values",
                singular_values.len()
            )));
        }
        Ok(CoarseBasis {
            mean,
            modes,
            singular_values,
        })
    }

    pub fn rank(&self) -> usize {
        self.modes.ncols()
    }

    pub fn grid(&self) -> &Grid {
        self.mean.grid()
    }

    pub fn mean(&self) -> &VelocityField {
        &self.mean
    }

    /// `Phi~`, `N x r`.
    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn mode(&self, k: usize) -> VelocityField {
        VelocityField::new(*self.grid(), self.modes.column(k).iter().copied().collect())
            .expect("finite basis")
    }

    /// All `M` singular values of the ensemble.
    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    pub fn retained_singular_values(&self) -> &[f64] {
        &self.singular_values.as_slice()[..self.rank()]
    }

    pub fn total_energy(&self) -> f64 {
        self.singular_values.norm_squared()
    }

    pub fn truncation_error(&self) -> Result<f64> {
        truncation_error_from_sigma(self.singular_values.as_slice(), self.rank())
    }

    /// `Phi~^T v`
    pub fn project(&self, v: &[f64]) -> Result<DVector<f64>> {
        check_len("projected vector", self.modes.nrows(), v.len())?;
        Ok(self.modes.tr_mul(&DVector::from_column_slice(v)))
    }

    /// `Phi~ a`
    pub fn lift(&self, a: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("modal coefficients", self.rank(), a.len())?;
        Ok(&self.modes * a)
    }

    /// `Pi~ v = Phi~ (Phi~^T v)`; the `N x N` projector is never formed.
    pub fn apply_coarse(&self, v: &[f64]) -> Result<DVector<f64>> {
        let a = self.project(v)?;
        Ok(&self.modes * a)
    }

    /// `Pi_bar v = v - Phi~ (Phi~^T v)`.
    pub fn apply_fine(&self, v: &[f64]) -> Result<DVector<f64>> {
        let coarse = self.apply_coarse(v)?;
        Ok(DVector::from_column_slice(v) - coarse)
    }

    /// Applies `Pi_bar` to every column of `m` in place.
    pub fn apply_fine_columns(&self, m: &mut DMatrix<f64>) -> Result<()> {
        check_len("fine projection rows", self.modes.nrows(), m.nrows())?;
        let coeffs = self.modes.tr_mul(m);
        m.gemm(-1.0, &self.modes, &coeffs, 1.0);
        Ok(())
    }
}

pub fn truncate(pod: &PodBasis, r: usize) -> Result<CoarseBasis> {
    let m = pod.n_modes();
    if r < 1 || r > m {
        return Err(Error::InvalidArgument(format!("r = {r} outside 1..={m}")));
    }
    CoarseBasis::from_parts(
        pod.mean.clone(),
        pod.modes.columns(0, r).into_owned(),
        pod.singular_values.clone(),
    )
}

/// Reference coefficients `a^POD(t_m) = Phi~^T u*(t_m)`.
pub fn project_reference(cb: &CoarseBasis, f: &FluctuationSet) -> Result<ModalSeries> {
    if cb.grid() != f.grid() {
        return Err(Error::GridMismatch);
    }
    ModalSeries::new(f.times().to_vec(), cb.modes.tr_mul(f.fluctuations()))
}

pub fn projector_apply_coarse(cb: &CoarseBasis, v: &VelocityField) -> Result<VelocityField> {
    if v.grid() != cb.grid() {
        return Err(Error::GridMismatch);
    }
    VelocityField::new(*v.grid(), cb.apply_coarse(v.values())?.as_slice().to_vec())
}

pub fn projector_apply_fine(cb: &CoarseBasis, v: &VelocityField) -> Result<VelocityField> {
    if v.grid() != cb.grid() {
        return Err(Error::GridMismatch);
    }
    VelocityField::new(*v.grid(), cb.apply_fine(v.values())?.as_slice().to_vec())
}

const BASIS_MANIFEST: &str = "basis.txt";

/// Writes the mean, the retained modes and every singular value to `dir`.
pub fn save_basis(cb: &CoarseBasis, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut w = KeyValueWriter::new();
    w.comment("coarse POD basis");
    write_grid_entries(&mut w, cb.grid());
    w.entry("r", cb.rank());
    write_f64_file(dir.join("mean.bin"), cb.mean.values())?;
    w.entry("mean", "mean.bin");
    for k in 0..cb.rank() {
        let name = format!("mode_{:03}.bin", k + 1);
        write_f64_file(dir.join(&name), cb.modes.column(k).as_slice())?;
        w.entry("mode", name);
    }
    for s in cb.singular_values.iter() {
        w.entry("sigma", fmt_f64(*s));
    }
    let path = dir.join(BASIS_MANIFEST);
    w.write(&path)?;
    Ok(path)
}

/// Reads a basis written by [`save_basis`]; `path` may be the directory or
/// its manifest.
pub fn load_basis(path: impl AsRef<Path>) -> Result<CoarseBasis> {
    let path = path.as_ref();
    let manifest = if path.is_dir() {
        path.join(BASIS_MANIFEST)
    } else {
        path.to_path_buf()
    };
    let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let kv = KeyValueFile::read(&manifest)?;
    let grid = grid_from_manifest(&kv)?;
    let r: usize = kv.require("r")?;
    let mean_file: String = kv.require("mean")?;
    let mean = VelocityField::new(grid, read_f64_file(dir.join(mean_file))?)?;
    let mode_files: Vec<&str> = kv.get_all("mode").map(|(v, _)| v).collect();
    check_len("basis modes", r, mode_files.len())?;
    let mut modes = DMatrix::zeros(grid.n_dofs(), r);
    for (k, f) in mode_files.iter().enumerate() {
        let v = read_f64_file(dir.join(f))?;
        check_len("mode file length", grid.n_dofs(), v.len())?;
        modes.column_mut(k).copy_from_slice(&v);
    }
    let sigma: Vec<f64> = kv
        .get_all("sigma")
        .map(|(v, l)| {
            v.parse::<f64>()
                .map_err(|e| Error::parse(&manifest, l, e.to_string()))
        })
        .collect::<Result<_>>()?;
    CoarseBasis::from_parts(mean, modes, DVector::from_vec(sigma))
}
