//! Manufactured data: smooth analytic fields, mode/coefficient ensembles
//! with known ground truth, and a quadratic reduced system with a known
//! limit cycle.
//!
//! All randomness is drawn from a seeded ChaCha generator.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::galerkin::GromCoefficients;
use crate::grid::{Grid, VelocityField};
use crate::online::{integrate, IntegratorConfig, Scheme};
use crate::pod::CoarseBasis;
use crate::series::ModalSeries;
use crate::snapshot::SnapshotSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `v_c(x) = amplitude_c sin(k . x + phase)`.
pub fn trigonometric_field(grid: &Grid, wave: [f64; 3], amplitude: [f64; 3], phase: f64) -> VelocityField {
    VelocityField::from_fn(*grid, |x| {
        let s = (wave[0] * x[0] + wave[1] * x[1] + wave[2] * x[2] + phase).sin();
        [amplitude[0] * s, amplitude[1] * s, amplitude[2] * s]
    })
}

/// Exact point Jacobians of [`trigonometric_field`]: `A_i k_j cos(k . x + phase)`.
pub fn trigonometric_gradient(grid: &Grid, wave: [f64; 3], amplitude: [f64; 3], phase: f64) -> Vec<f64> {
    let d = grid.dim();
    let mut out = vec![0.0; grid.n_points() * d * d];
    for p in 0..grid.n_points() {
        let x = grid.coordinates(p);
        let c = (wave[0] * x[0] + wave[1] * x[1] + wave[2] * x[2] + phase).cos();
        for i in 0..d {
            for j in 0..d {
                out[p * d * d + i * d + j] = amplitude[i] * wave[j] * c;
            }
        }
    }
    out
}

/// Exact Laplacian of [`trigonometric_field`]: `-|k|^2 v`.
pub fn trigonometric_laplacian(grid: &Grid, wave: [f64; 3], amplitude: [f64; 3], phase: f64) -> VelocityField {
    let k2 = wave.iter().map(|k| k * k).sum::<f64>();
    trigonometric_field(grid, wave, amplitude, phase).scaled(-k2)
}

/// Divergence-free field from the stream function
/// `psi = sin(kx x + px) sin(ky y + py) cos(kz z)`:
/// `u = d psi/dy`, `v = -d psi/dx`, `w = 0`.
pub fn solenoidal_field(grid: &Grid, k: [f64; 3], phase: [f64; 2]) -> VelocityField {
    VelocityField::from_fn(*grid, |x| {
        let (sx, cx) = (k[0] * x[0] + phase[0]).sin_cos();
        let (sy, cy) = (k[1] * x[1] + phase[1]).sin_cos();
        let cz = (k[2] * x[2]).cos();
        [k[1] * sx * cy * cz, -k[0] * cx * sy * cz, 0.0]
    })
}

/// Sum of a few random low-wavenumber trigonometric terms, scaled to unit
/// RMS per component.
pub fn random_smooth_field<R: Rng + ?Sized>(grid: &Grid, terms: usize, rng: &mut R) -> VelocityField {
    let d = grid.dim();
    let lengths: Vec<f64> = (0..d)
        .map(|a| grid.spacing()[a] * (grid.shape()[a] - 1) as f64)
        .collect();
    let mut field = VelocityField::zeros(*grid);
    for _ in 0..terms.max(1) {
        let mut wave = [0.0; 3];
        for a in 0..d {
            wave[a] = 2.0 * PI * rng.random_range(0.25..1.5) / lengths[a];
        }
        let mut amp = [0.0; 3];
        for c in amp.iter_mut().take(d) {
            *c = rng.random_range(-1.0..1.0);
        }
        let phase = rng.random_range(0.0..2.0 * PI);
        let t = trigonometric_field(grid, wave, amp, phase);
        field.axpy(1.0, &t).expect("same grid");
    }
    let rms = field.norm() / (grid.n_dofs() as f64).sqrt();
    if rms > 0.0 {
        field.scaled(1.0 / rms)
    } else {
        field
    }
}

/// Modified Gram-Schmidt with a second orthogonalization pass. Fails when a
/// field is (numerically) in the span of the previous ones.
pub fn orthonormalize(fields: &[VelocityField]) -> Result<DMatrix<f64>> {
    let Some(first) = fields.first() else {
        return Err(Error::InvalidArgument("no mode fields given".into()));
    };
    let grid = *first.grid();
    let n = grid.n_dofs();
    let mut q = DMatrix::zeros(n, fields.len());
    for (k, f) in fields.iter().enumerate() {
        if *f.grid() != grid {
            return Err(Error::GridMismatch);
        }
        let mut v = DVector::from_column_slice(f.values());
        let original = v.norm();
        for _pass in 0..2 {
            for j in 0..k {
                let qj = q.column(j);
                let c = qj.dot(&v);
                v.axpy(-c, &qj, 1.0);
            }
        }
        let norm = v.norm();
        if !(original > 0.0) || norm <= 1e-10 * original {
            return Err(Error::InvalidArgument(format!(
                "mode field {k} is linearly dependent on the previous ones"
            )));
        }
        q.set_column(k, &(v / norm));
    }
    Ok(q)
}

/// A snapshot set together with the data it was built from.
#[derive(Debug, Clone)]
pub struct ManufacturedEnsemble {
    pub snapshots: SnapshotSet,
    pub mean: VelocityField,
    /// Orthonormal modes, `N x k`.
    pub modes: DMatrix<f64>,
    pub coefficients: ModalSeries,
}

/// `u(t_m) = u' + sum_i phi_i a_i(t_m)` with the mode fields orthonormalized
/// first.
pub fn manufactured_ensemble(
    mode_fields: &[VelocityField],
    coefficients: &ModalSeries,
    mean: &VelocityField,
) -> Result<ManufacturedEnsemble> {
    let modes = orthonormalize(mode_fields)?;
    if mean.grid() != mode_fields[0].grid() {
        return Err(Error::GridMismatch);
    }
    check_len("coefficient rows", modes.ncols(), coefficients.rank())?;
    let mut data = &modes * coefficients.coeffs();
    for mut col in data.column_iter_mut() {
        for (x, m) in col.iter_mut().zip(mean.values()) {
            *x += m;
        }
    }
    let snapshots = SnapshotSet::new(*mean.grid(), coefficients.times().to_vec(), data)?;
    Ok(ManufacturedEnsemble {
        snapshots,
        mean: mean.clone(),
        modes,
        coefficients: coefficients.clone(),
    })
}

/// Quadratic reduced system whose first three states follow the mean-field
/// model of a supercritical Hopf bifurcation,
///
/// ```text
/// a1' = s a1 - w a2 - a1 a3
/// a2' = w a1 + s a2 - a2 a3
/// a3' = -s3 a3 + a1^2 + a2^2
/// ```
///
/// with the stable limit cycle `a3 = s`, `a1^2 + a2^2 = s s3`. Further states
/// are damped and driven by seeded quadratic forcing from `(a1, a2)`, so they
/// never feed back into the cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySystem {
    pub coefficients: GromCoefficients,
    pub growth: f64,
    pub frequency: f64,
    pub damping: f64,
}

impl ToySystem {
    /// Radius of the limit cycle in the `(a1, a2)` plane.
    pub fn radius(&self) -> f64 {
        (self.growth * self.damping).sqrt()
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.frequency
    }

    /// A point on the limit cycle (slaved states included approximately via
    /// a transient run).
    pub fn state_on_cycle(&self) -> Result<DVector<f64>> {
        let r = self.coefficients.rank();
        let mut a = DVector::zeros(r);
        a[0] = self.radius();
        a[2] = self.growth;
        if r > 3 {
            let cfg = IntegratorConfig::new(
                Scheme::DormandPrince { rtol: 1e-10, atol: 1e-12 },
                vec![0.0, 20.0 * self.period()],
            );
            let s = integrate(&self.coefficients, &a, &cfg)?;
            a = s.column(1);
        }
        Ok(a)
    }
}

pub fn quadratic_toy_system(r: usize, seed: u64) -> Result<ToySystem> {
    if r < 3 {
        return Err(Error::InvalidArgument(format!(
            "the quadratic limit-cycle model needs r >= 3, got {r}"
        )));
    }
    let mut g = rng(seed);
    let s = g.random_range(0.05..0.2);
    let w = g.random_range(0.5..2.0);
    let s3 = g.random_range(0.5..2.0);
    let mut q = DMatrix::zeros(r, r * r);
    let mut l = DMatrix::zeros(r, r);
    let qi = |i: usize, k: usize| i * r + k;
    l[(0, 0)] = s;
    l[(0, 1)] = -w;
    l[(1, 0)] = w;
    l[(1, 1)] = s;
    l[(2, 2)] = -s3;
    q[(0, qi(0, 2))] = -1.0;
    q[(1, qi(1, 2))] = -1.0;
    q[(2, qi(0, 0))] = 1.0;
    q[(2, qi(1, 1))] = 1.0;
    for m in 3..r {
        l[(m, m)] = -g.random_range(0.5..2.0);
        q[(m, qi(0, 0))] = g.random_range(-0.5..0.5);
        q[(m, qi(0, 1))] = g.random_range(-0.5..0.5);
        q[(m, qi(1, 1))] = g.random_range(-0.5..0.5);
    }
    Ok(ToySystem {
        coefficients: GromCoefficients::new(q, l, DVector::zeros(r), 0.0)?,
        growth: s,
        frequency: w,
        damping: s3,
    })
}

/// Coarse basis of `r` orthonormalized random smooth fields around a random
/// smooth mean; singular values decay geometrically over `r + 2` entries.
pub fn random_coarse_basis(grid: &Grid, r: usize, seed: u64) -> Result<CoarseBasis> {
    let mut g = rng(seed);
    let mean = random_smooth_field(grid, 3, &mut g);
    let fields: Vec<VelocityField> = (0..r).map(|_| random_smooth_field(grid, 3, &mut g)).collect();
    let modes = orthonormalize(&fields)?;
    let sigma = DVector::from_fn(r + 2, |k, _| 0.5f64.powi(k as i32));
    CoarseBasis::from_parts(mean, modes, sigma)
}

/// Random symmetric positive definite matrix with eigenvalues in `[lo, hi]`.
pub fn random_spd<R: Rng + ?Sized>(r: usize, lo: f64, hi: f64, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0));
    let q = a.qr().q();
    let d = DVector::from_fn(r, |_, _| rng.random_range(lo..hi));
    let w = &q * DMatrix::from_diagonal(&d) * q.transpose();
    (&w + w.transpose()) * 0.5
}

/// Settings for the limit-cycle snapshot ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct SheddingRecipe {
    pub shape: Vec<usize>,
    pub lengths: Vec<f64>,
    pub modes: usize,
    pub snapshots: usize,
    pub periods: f64,
    pub amplitude: f64,
    pub viscosity: f64,
    pub seed: u64,
}

impl Default for SheddingRecipe {
    fn default() -> Self {
        SheddingRecipe {
            shape: vec![24, 16],
            lengths: vec![3.0, 2.0],
            modes: 6,
            snapshots: 64,
            periods: 4.0,
            amplitude: 0.2,
            viscosity: 0.01,
            seed: 7,
        }
    }
}

/// Solenoidal modes on a uniform background flow, driven by the toy limit
/// cycle; higher modes carry geometrically less energy.
pub fn shedding_ensemble(recipe: &SheddingRecipe) -> Result<ManufacturedEnsemble> {
    let d = recipe.shape.len();
    check_len("domain lengths", d, recipe.lengths.len())?;
    if recipe.modes < 3 || recipe.snapshots < 2 {
        return Err(Error::InvalidArgument(
            "need at least 3 modes and 2 snapshots".into(),
        ));
    }
    if !(recipe.periods > 0.0 && recipe.amplitude > 0.0 && recipe.viscosity > 0.0) {
        return Err(Error::InvalidArgument(
            "periods, amplitude and viscosity must be positive".into(),
        ));
    }
    let spacing: Vec<f64> = (0..d)
        .map(|a| recipe.lengths[a] / (recipe.shape[a] - 1).max(1) as f64)
        .collect();
    let grid = Grid::new(&recipe.shape, &spacing)?;
    let mut g = rng(recipe.seed);
    let (lx, ly) = (recipe.lengths[0], recipe.lengths[1]);
    let lz = if d == 3 { recipe.lengths[2] } else { 1.0 };

    let fields: Vec<VelocityField> = (0..recipe.modes)
        .map(|k| {
            let mx = (k / 2 + 1) as f64;
            let my = (k % 2 + 1) as f64;
            let kz = if d == 3 { PI * (k % 2) as f64 / lz } else { 0.0 };
            let phase = [g.random_range(0.0..PI), g.random_range(0.0..PI)];
            solenoidal_field(&grid, [PI * mx / lx, PI * my / ly, kz], phase)
        })
        .collect();
    let mean = VelocityField::from_fn(grid, |x| {
        let shear = 0.2 * (PI * x[1] / ly).cos();
        [1.0 + shear, 0.0, 0.0]
    });

    let toy = quadratic_toy_system(recipe.modes, recipe.seed ^ 0x5eed)?;
    let a0 = toy.state_on_cycle()?;
    let t_end = recipe.periods * toy.period();
    let m = recipe.snapshots;
    let cfg = IntegratorConfig::uniform(
        Scheme::DormandPrince { rtol: 1e-10, atol: 1e-12 },
        0.0,
        t_end,
        m - 1,
    );
    let traj = integrate(&toy.coefficients, &a0, &cfg)?;
    let mut coeffs = traj.coeffs().clone();
    let mean_a = coeffs.column_mean();
    for mut col in coeffs.column_iter_mut() {
        col -= &mean_a;
    }
    for (i, mut row) in coeffs.row_iter_mut().enumerate() {
        let rms = (row.norm_squared() / m as f64).sqrt();
        let target = recipe.amplitude * 0.6f64.powi(i as i32 / 2);
        if rms > 0.0 {
            row *= target / rms;
        }
    }
    let series = ModalSeries::new(traj.times().to_vec(), coeffs)?;
    let mut ens = manufactured_ensemble(&fields, &series, &mean)?;
    ens.snapshots = ens.snapshots.with_viscosity(recipe.viscosity).with_reference_velocity(1.0);
    Ok(ens)
}
