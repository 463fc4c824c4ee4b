//! Memory lengths and their optimization.
//!
//! A memory length is a weight normalized by the spectral radius `rho` of the
//! projected Jacobian at the initial state: `tau = w / rho` (scalar) or
//! `T = W / rho` (matrix, `W` symmetric positive definite). Weights are tuned
//! by integrating the eAPG-ROM over a few periods and comparing against the
//! projected reference coefficients.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use rayon::prelude::*;

use crate::eapg::EapgOffline;
use crate::error::{check_len, Error, Result};
use crate::online::{integrate_collect, IntegratorConfig, Scheme};
use crate::pod::CoarseBasis;
use crate::series::ModalSeries;

pub const DEFAULT_W_MAX: f64 = 100.0;
pub const DEFAULT_N_PERIODS: f64 = 2.0;
pub const DEFAULT_MAX_ITER: usize = 500;
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum MemoryWeight {
    Scalar(f64),
    Matrix(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryLength {
    weight: MemoryWeight,
    rho: f64,
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.is_finite() && rho > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "spectral radius must be positive, got {rho}"
        )))
    }
}

/// Rejects non-symmetric or non-positive-definite weights.
pub fn check_spd(w: &DMatrix<f64>) -> Result<()> {
    if !w.is_square() || w.nrows() == 0 {
        return Err(Error::NotPositiveDefinite(format!(
            "weight must be a non-empty square matrix, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("memory weight".into()));
    }
    let scale = w.amax().max(1.0);
    let asym = (w - w.transpose()).amax();
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::NotPositiveDefinite(format!(
            "weight is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let min_eig = SymmetricEigen::new(w.clone()).eigenvalues.min();
    if !(min_eig > 0.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "smallest eigenvalue {min_eig:e}"
        )));
    }
    Ok(())
}

impl MemoryLength {
    pub fn scalar(w: f64, rho: f64) -> Result<Self> {
        check_rho(rho)?;
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scalar weight must be non-negative, got {w}"
            )));
        }
        Ok(MemoryLength {
            weight: MemoryWeight::Scalar(w),
            rho,
        })
    }

    pub fn matrix(w: DMatrix<f64>, rho: f64) -> Result<Self> {
        check_rho(rho)?;
        check_spd(&w)?;
        Ok(MemoryLength {
            weight: MemoryWeight::Matrix(w),
            rho,
        })
    }

    /// A memory length given directly as `tau` (weight `tau`, `rho = 1`).
    pub fn from_tau(tau: f64) -> Result<Self> {
        MemoryLength::scalar(tau, 1.0)
    }

    pub fn weight(&self) -> &MemoryWeight {
        &self.weight
    }

    pub fn spectral_radius(&self) -> f64 {
        self.rho
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self.weight, MemoryWeight::Scalar(_))
    }

    /// `tau = w / rho` for a scalar memory length.
    pub fn tau(&self) -> Option<f64> {
        match &self.weight {
            MemoryWeight::Scalar(w) => Some(w / self.rho),
            MemoryWeight::Matrix(_) => None,
        }
    }

    /// `T = W / rho`, or `tau I` for a scalar memory length.
    pub fn t_matrix(&self, r: usize) -> DMatrix<f64> {
        match &self.weight {
            MemoryWeight::Scalar(w) => DMatrix::identity(r, r) * (w / self.rho),
            MemoryWeight::Matrix(w) => w / self.rho,
        }
    }

    pub(crate) fn check_rank(&self, r: usize) -> Result<()> {
        match &self.weight {
            MemoryWeight::Scalar(_) => Ok(()),
            MemoryWeight::Matrix(w) => check_len("memory weight size", r, w.nrows()),
        }
    }

    /// `tau M` or `T M`.
    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.weight {
            MemoryWeight::Scalar(w) => m * (w / self.rho),
            MemoryWeight::Matrix(w) => (w / self.rho) * m,
        }
    }

    pub fn apply_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.weight {
            MemoryWeight::Scalar(w) => v * (w / self.rho),
            MemoryWeight::Matrix(w) => (w / self.rho) * v,
        }
    }
}

pub fn memory_scalar(w: f64, rho: f64) -> Result<f64> {
    Ok(MemoryLength::scalar(w, rho)?.tau().expect("scalar"))
}

pub fn memory_matrix(w: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    let r = w.nrows();
    Ok(MemoryLength::matrix(w.clone(), rho)?.t_matrix(r))
}

/// `Phi~^T J(u~0)[Phi~]` with `u~0 = u' + Phi~ a0`; column `i` is
/// `Phi~^T (-(grad u~0) phi_i - (u~0 . grad) phi_i + nu lap phi_i)`.
pub fn projected_jacobian(cb: &CoarseBasis, nu: f64, a0: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_len("initial coefficients", cb.rank(), a0.len())?;
    if !nu.is_finite() || nu < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "viscosity must be non-negative, got {nu}"
        )));
    }
    let grid = cb.grid();
    let u0: Vec<f64> = cb
        .lift(a0)?
        .iter()
        .zip(cb.mean().values())
        .map(|(x, m)| x + m)
        .collect();
    let u0_grad = grid.gradient_vec(&u0)?;
    let r = cb.rank();
    let cols: Vec<Vec<f64>> = (0..r)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let phi = cb.modes().column(i);
            let phi = phi.as_slice();
            let a = grid.jacobian_apply_vec(&u0_grad, phi)?;
            let b = grid.jacobian_apply_vec(&grid.gradient_vec(phi)?, &u0)?;
            let lap = grid.laplacian_vec(phi)?;
            let col: Vec<f64> = (0..phi.len()).map(|p| -a[p] - b[p] + nu * lap[p]).collect();
            Ok(cb.project(&col)?.as_slice().to_vec())
        })
        .collect::<Result<_>>()?;
    let mut out = DMatrix::zeros(r, r);
    for (i, col) in cols.iter().enumerate() {
        out.column_mut(i).copy_from_slice(col);
    }
    Ok(out)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    if !a.is_square() || a.nrows() == 0 {
        return Err(Error::InvalidArgument(format!(
            "spectral radius needs a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix".into()));
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 10_000).ok_or(Error::EigenFailure)?;
    let eig = schur.complex_eigenvalues();
    Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// `sum_m |a_rom(t_m) - a_ref(t_m)|^2`; a shorter ROM series (a run that
/// stopped early) scores `+inf`.
pub fn objective(reference: &ModalSeries, rom: &ModalSeries) -> Result<f64> {
    check_len("series rank", reference.rank(), rom.rank())?;
    if rom.len() < reference.len() {
        return Ok(f64::INFINITY);
    }
    let mut sum = 0.0;
    for m in 0..reference.len() {
        let d = reference.coeffs().column(m) - rom.coeffs().column(m);
        sum += d.norm_squared();
    }
    Ok(if sum.is_finite() { sum } else { f64::INFINITY })
}

/// Dominant period of the first coefficient from the spacing of upward
/// mean crossings.
pub fn estimate_period(series: &ModalSeries) -> Option<f64> {
    if series.len() < 4 || series.rank() == 0 {
        return None;
    }
    let row = series.coeffs().row(0);
    let mean = row.mean();
    let t = series.times();
    let mut crossings = Vec::new();
    for m in 1..series.len() {
        let (a, b) = (row[m - 1] - mean, row[m] - mean);
        if a < 0.0 && b >= 0.0 {
            let frac = -a / (b - a);
            crossings.push(t[m - 1] + frac * (t[m] - t[m - 1]));
        }
    }
    if crossings.len() < 2 {
        return None;
    }
    let span = crossings.last()? - crossings.first()?;
    Some(span / (crossings.len() - 1) as f64)
}

/// Everything needed to score a candidate memory length.
#[derive(Debug, Clone)]
pub struct MemoryProblem<'a> {
    offline: &'a EapgOffline,
    rho: f64,
    reference: ModalSeries,
    scheme: Scheme,
    periods_used: f64,
}

impl<'a> MemoryProblem<'a> {
    /// `reference` is cut to the first `n_periods * period` time units (the
    /// period is estimated from the data when not given).
    pub fn new(
        offline: &'a EapgOffline,
        rho: f64,
        reference: &ModalSeries,
        n_periods: f64,
        period: Option<f64>,
        scheme: Scheme,
    ) -> Result<Self> {
        check_rho(rho)?;
        check_len("reference rank", offline.grom.rank(), reference.rank())?;
        if reference.len() < 2 {
            return Err(Error::InvalidArgument(
                "reference series needs at least two samples".into(),
            ));
        }
        if !(n_periods.is_finite() && n_periods > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "number of periods must be positive, got {n_periods}"
            )));
        }
        let t = reference.times();
        let (t0, t_last) = (t[0], t[t.len() - 1]);
        let (horizon, periods_used) = match period.or_else(|| estimate_period(reference)) {
            Some(p) if p > 0.0 => {
                let h = (n_periods * p).min(t_last - t0);
                (h, h / p)
            }
            _ => {
                log::warn!("no period available; optimizing over the whole reference series");
                (t_last - t0, f64::NAN)
            }
        };
        let count = t.iter().take_while(|&&tm| tm <= t0 + horizon * (1.0 + 1e-12)).count().max(2);
        Ok(MemoryProblem {
            offline,
            rho,
            reference: reference.head(count),
            scheme,
            periods_used,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn reference(&self) -> &ModalSeries {
        &self.reference
    }

    pub fn periods_used(&self) -> f64 {
        self.periods_used
    }

    pub fn rank(&self) -> usize {
        self.reference.rank()
    }

    /// Objective for a memory length; integration failures give `+inf`.
    pub fn objective(&self, mem: &MemoryLength) -> f64 {
        let Ok(sys) = self.offline.with_memory(mem) else {
            return f64::INFINITY;
        };
        let cfg = IntegratorConfig::new(self.scheme, self.reference.times().to_vec());
        let a0 = self.reference.column(0);
        match integrate_collect(&sys, &a0, &cfg) {
            Ok(traj) if !traj.report.blew_up() => {
                objective(&self.reference, &traj.series).unwrap_or(f64::INFINITY)
            }
            _ => f64::INFINITY,
        }
    }

    pub fn objective_scalar(&self, w: f64) -> f64 {
        match MemoryLength::scalar(w, self.rho) {
            Ok(mem) => self.objective(&mem),
            Err(_) => f64::INFINITY,
        }
    }

    pub fn objective_matrix(&self, w: &DMatrix<f64>) -> f64 {
        match MemoryLength::matrix(w.clone(), self.rho) {
            Ok(mem) => self.objective(&mem),
            Err(_) => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Objective of the point accepted in this iteration.
    pub evaluated: f64,
    /// Best objective seen so far.
    pub best: f64,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationReport {
    pub weight: MemoryWeight,
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// The optimum sits next to a blown-up candidate or at `w_max`.
    pub boundary_hit: bool,
    pub periods_used: f64,
    pub trace: Vec<TraceEntry>,
    /// Every accepted matrix iterate passed the SPD check.
    pub all_iterates_spd: bool,
}

impl OptimizationReport {
    pub fn memory_length(&self, rho: f64) -> Result<MemoryLength> {
        match &self.weight {
            MemoryWeight::Scalar(w) => MemoryLength::scalar(*w, rho),
            MemoryWeight::Matrix(w) => MemoryLength::matrix(w.clone(), rho),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match &self.weight {
            MemoryWeight::Scalar(w) => {
                let _ = writeln!(s, "kind = scalar");
                let _ = writeln!(s, "w = {w:?}");
            }
            MemoryWeight::Matrix(w) => {
                let _ = writeln!(s, "kind = matrix");
                for i in 0..w.nrows() {
                    let row: Vec<String> = w.row(i).iter().map(|x| format!("{x:?}")).collect();
                    let _ = writeln!(s, "W_row = {}", row.join(" "));
                }
            }
        }
        let _ = writeln!(s, "objective = {:?}", self.objective);
        let _ = writeln!(s, "initial_objective = {:?}", self.initial_objective);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "evaluations = {}", self.evaluations);
        let _ = writeln!(s, "converged = {}", self.converged);
        let _ = writeln!(s, "boundary_hit = {}", self.boundary_hit);
        let _ = writeln!(s, "periods_used = {:?}", self.periods_used);
        let _ = writeln!(s, "all_iterates_spd = {}", self.all_iterates_spd);
        s
    }

    pub fn trace_csv(&self) -> String {
        let n = self.trace.first().map_or(0, |e| e.params.len());
        let mut s = String::from("iteration,evaluated,best");
        for k in 0..n {
            let _ = write!(s, ",p{}", k + 1);
        }
        s.push('\n');
        for e in &self.trace {
            let _ = write!(s, "{},{:?},{:?}", e.iteration, e.evaluated, e.best);
            for p in &e.params {
                let _ = write!(s, ",{p:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let report = dir.join("optimization.txt");
        std::fs::write(&report, self.to_text()).map_err(|e| Error::io(&report, e))?;
        let trace = dir.join("trace.csv");
        std::fs::write(&trace, self.trace_csv()).map_err(|e| Error::io(&trace, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarOptions {
    pub w0: f64,
    pub w_max: f64,
    /// Number of equally spaced scan points on `[0, w_max]`.
    pub scan_points: usize,
    pub max_iter: usize,
    pub x_tol: f64,
}

impl Default for ScalarOptions {
    fn default() -> Self {
        ScalarOptions {
            w0: 1.0,
            w_max: DEFAULT_W_MAX,
            scan_points: 41,
            max_iter: DEFAULT_MAX_ITER,
            x_tol: 1e-8,
        }
    }
}

struct Tracker {
    best_x: Vec<f64>,
    best_f: f64,
    trace: Vec<TraceEntry>,
    evaluations: usize,
}

impl Tracker {
    fn new(x0: Vec<f64>, f0: f64) -> Self {
        let mut t = Tracker {
            best_x: x0.clone(),
            best_f: f0,
            trace: Vec::new(),
            evaluations: 1,
        };
        t.trace.push(TraceEntry {
            iteration: 0,
            evaluated: f0,
            best: f0,
            params: x0,
        });
        t
    }

    fn offer(&mut self, x: &[f64], f: f64) -> bool {
        if f < self.best_f {
            self.best_f = f;
            self.best_x = x.to_vec();
            true
        } else {
            false
        }
    }

    fn record(&mut self, iteration: usize, evaluated: f64, params: Vec<f64>) {
        self.trace.push(TraceEntry {
            iteration,
            evaluated,
            best: self.best_f,
            params,
        });
    }
}

fn improvement_tol(f: f64) -> f64 {
    1e-10 * (1.0 + f.abs())
}

/// Scan of `[0, w_max]` (plus `w0`) followed by golden-section search in the
/// bracket around the best scan point. Never returns a worse point than
/// `w0`; `+inf` values mark blown-up candidates.
pub fn minimize_scalar(f: impl Fn(f64) -> f64 + Sync, opts: &ScalarOptions) -> Result<OptimizationReport> {
    if !(opts.w_max.is_finite() && opts.w_max > 0.0) {
        return Err(Error::InvalidArgument(format!("w_max must be positive, got {}", opts.w_max)));
    }
    if !(opts.w0.is_finite() && opts.w0 >= 0.0) {
        return Err(Error::InvalidArgument(format!("w0 must be non-negative, got {}", opts.w0)));
    }
    let f0 = f(opts.w0);
    let mut tr = Tracker::new(vec![opts.w0], f0);

    let n = opts.scan_points.max(3);
    let mut xs: Vec<f64> = (0..n).map(|k| opts.w_max * k as f64 / (n - 1) as f64).collect();
    if !xs.contains(&opts.w0) {
        xs.push(opts.w0);
        xs.sort_by(f64::total_cmp);
    }
    let fs: Vec<f64> = xs
        .par_iter()
        .map(|&x| if x == opts.w0 { f0 } else { f(x) })
        .collect();
    tr.evaluations += xs.len() - 1;
    let mut iteration = 0;

    let finite: Vec<usize> = (0..xs.len()).filter(|&k| fs[k].is_finite()).collect();
    if finite.is_empty() {
        tr.record(1, f64::INFINITY, vec![opts.w0]);
        return Ok(OptimizationReport {
            weight: MemoryWeight::Scalar(opts.w0),
            objective: f0,
            initial_objective: f0,
            iterations: 1,
            evaluations: tr.evaluations,
            converged: false,
            boundary_hit: true,
            periods_used: f64::NAN,
            trace: tr.trace,
            all_iterates_spd: true,
        });
    }
    let kb = finite
        .iter()
        .copied()
        .min_by(|&a, &b| fs[a].total_cmp(&fs[b]).then(xs[a].total_cmp(&xs[b])))
        .expect("non-empty");
    iteration += 1;
    for k in 0..xs.len() {
        tr.offer(&[xs[k]], fs[k]);
    }
    tr.record(iteration, fs[kb], vec![xs[kb]]);
    let mut boundary_hit = (kb > 0 && !fs[kb - 1].is_finite())
        || (kb + 1 < xs.len() && !fs[kb + 1].is_finite())
        || kb + 1 == xs.len();

    // Golden-section on the bracket formed by the scan neighbours.
    let mut lo = xs[kb.saturating_sub(1)];
    let mut hi = xs[(kb + 1).min(xs.len() - 1)];
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    tr.evaluations += 2;
    let mut converged = false;
    while iteration < opts.max_iter {
        iteration += 1;
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
            tr.offer(&[x2], f2);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
            tr.offer(&[x1], f1);
        }
        tr.evaluations += 1;
        if !f1.is_finite() || !f2.is_finite() {
            boundary_hit = true;
        }
        let (xa, fa) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
        tr.offer(&[xa], fa);
        tr.record(iteration, fa, vec![xa]);
        if hi - lo < opts.x_tol * (1.0 + xa.abs()) {
            converged = true;
            break;
        }
    }

    // Keep w0 unless something is clearly better.
    let (w, fbest) = if tr.best_f < f0 - improvement_tol(f0) || !f0.is_finite() {
        (tr.best_x[0], tr.best_f)
    } else {
        (opts.w0, f0)
    };
    Ok(OptimizationReport {
        weight: MemoryWeight::Scalar(w),
        objective: fbest,
        initial_objective: f0,
        iterations: iteration,
        evaluations: tr.evaluations,
        converged: converged || fbest == f0,
        boundary_hit,
        periods_used: f64::NAN,
        trace: tr.trace,
        all_iterates_spd: true,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixOptions {
    /// Scalar optimum used as an alternative starting point `W = w I`.
    pub warm_start: Option<f64>,
    pub max_iter: usize,
    pub f_tol: f64,
    pub x_tol: f64,
    pub initial_step: f64,
}

impl Default for MatrixOptions {
    fn default() -> Self {
        MatrixOptions {
            warm_start: None,
            max_iter: DEFAULT_MAX_ITER,
            f_tol: 1e-10,
            x_tol: 1e-8,
            initial_step: 0.25,
        }
    }
}

/// Lower-triangular factor with `exp` on the diagonal; parameters are the
/// lower triangle in row-major order.
pub fn cholesky_weight(theta: &[f64], r: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(r, r);
    let mut idx = 0;
    for i in 0..r {
        for j in 0..=i {
            g[(i, j)] = if i == j { theta[idx].exp() } else { theta[idx] };
            idx += 1;
        }
    }
    let w = &g * g.transpose();
    (&w + w.transpose()) * 0.5
}

/// Inverse of [`cholesky_weight`] for an SPD matrix.
pub fn cholesky_params(w: &DMatrix<f64>) -> Result<Vec<f64>> {
    let r = w.nrows();
    let chol = nalgebra::Cholesky::new(w.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
    let l = chol.l();
    let mut theta = Vec::with_capacity(r * (r + 1) / 2);
    for i in 0..r {
        for j in 0..=i {
            theta.push(if i == j { l[(i, j)].ln() } else { l[(i, j)] });
        }
    }
    Ok(theta)
}

/// Nelder-Mead over the Cholesky parameters of `W`, started from the better
/// of `I` and the warm start. Candidates whose `W` fails the SPD check score
/// `+inf`.
pub fn minimize_matrix(
    f: impl Fn(&DMatrix<f64>) -> f64 + Sync,
    r: usize,
    opts: &MatrixOptions,
) -> Result<OptimizationReport> {
    if r == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    let dim = r * (r + 1) / 2;
    let spd_ok = std::sync::atomic::AtomicBool::new(true);
    let eval = |theta: &[f64]| -> f64 {
        let w = cholesky_weight(theta, r);
        if check_spd(&w).is_err() {
            return f64::INFINITY;
        }
        let v = f(&w);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let identity = vec![0.0; dim];
    let f_id = eval(&identity);
    let mut x0 = identity.clone();
    let mut fx0 = f_id;
    let mut evaluations = 1;
    if let Some(w) = opts.warm_start {
        let w = w.max(1e-12);
        let warm = cholesky_params(&(DMatrix::identity(r, r) * w))?;
        let fw = eval(&warm);
        evaluations += 1;
        if fw < fx0 {
            x0 = warm;
            fx0 = fw;
        }
    }
    let initial_objective = fx0;
    let mut tr = Tracker::new(x0.clone(), fx0);
    tr.evaluations = evaluations;

    let mut iteration = 0;
    let mut converged = false;
    let mut start = x0;
    let mut f_start = fx0;
    let mut step = opts.initial_step;
    // Restarts guard against the simplex collapsing away from a minimum.
    for _restart in 0..4 {
        let mut simplex: Vec<Vec<f64>> = vec![start.clone()];
        for k in 0..dim {
            let mut v = start.clone();
            v[k] += step;
            simplex.push(v);
        }
        let mut values: Vec<f64> = std::iter::once(f_start)
            .chain(simplex[1..].par_iter().map(|v| eval(v)).collect::<Vec<_>>())
            .collect();
        tr.evaluations += dim;
        let before = tr.best_f;
        let mut local_converged = false;
        while iteration < opts.max_iter {
            iteration += 1;
            let mut order: Vec<usize> = (0..=dim).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&k| simplex[k].clone()).collect();
            values = order.iter().map(|&k| values[k]).collect();
            let (fb, fw) = (values[0], values[dim]);
            let diameter = simplex[1..]
                .iter()
                .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if (fw.is_finite() && fw - fb < opts.f_tol * (1.0 + fb.abs())) || diameter < opts.x_tol {
                local_converged = true;
                tr.offer(&simplex[0], fb);
                tr.record(iteration, fb, simplex[0].clone());
                break;
            }
            let centroid: Vec<f64> = (0..dim)
                .map(|k| simplex[..dim].iter().map(|v| v[k]).sum::<f64>() / dim as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[dim])
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };
            let xr = along(1.0);
            let fr = eval(&xr);
            tr.evaluations += 1;
            let accepted;
            if fr < values[0] {
                let xe = along(2.0);
                let fe = eval(&xe);
                tr.evaluations += 1;
                if fe < fr {
                    simplex[dim] = xe;
                    values[dim] = fe;
                } else {
                    simplex[dim] = xr;
                    values[dim] = fr;
                }
                accepted = dim;
            } else if fr < values[dim - 1] {
                simplex[dim] = xr;
                values[dim] = fr;
                accepted = dim;
            } else {
                let (xc, fc) = if fr < values[dim] {
                    let xc = along(0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                } else {
                    let xc = along(-0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                };
                tr.evaluations += 1;
                if fc < values[dim].min(fr) {
                    simplex[dim] = xc;
                    values[dim] = fc;
                    accepted = dim;
                } else {
                    let best = simplex[0].clone();
                    let shrunk: Vec<Vec<f64>> = simplex[1..]
                        .iter()
                        .map(|v| v.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect())
                        .collect();
                    let fs: Vec<f64> = shrunk.par_iter().map(|v| eval(v)).collect();
                    tr.evaluations += dim;
                    for (k, (v, fv)) in shrunk.into_iter().zip(fs).enumerate() {
                        simplex[k + 1] = v;
                        values[k + 1] = fv;
                    }
                    accepted = (1..=dim).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
                }
            }
            let w_acc = cholesky_weight(&simplex[accepted], r);
            if values[accepted].is_finite() && check_spd(&w_acc).is_err() {
                spd_ok.store(false, std::sync::atomic::Ordering::Relaxed);
            }
            tr.offer(&simplex[accepted].clone(), values[accepted]);
            tr.record(iteration, values[accepted], simplex[accepted].clone());
        }
        if !local_converged {
            break;
        }
        let gained = before - tr.best_f;
        if tr.best_f.is_finite() && gained <= opts.f_tol * (1.0 + tr.best_f.abs()) {
            converged = true;
            break;
        }
        start = tr.best_x.clone();
        f_start = tr.best_f;
        step *= 0.5;
    }

    Ok(OptimizationReport {
        weight: MemoryWeight::Matrix(cholesky_weight(&tr.best_x, r)),
        objective: tr.best_f,
        initial_objective,
        iterations: iteration,
        evaluations: tr.evaluations,
        converged,
        boundary_hit: false,
        periods_used: f64::NAN,
        trace: tr.trace,
        all_iterates_spd: spd_ok.into_inner(),
    })
}

/// Tunes the scalar weight `w` starting from `w = 1`.
pub fn optimize_scalar(problem: &MemoryProblem<'_>, opts: &ScalarOptions) -> Result<OptimizationReport> {
    let mut rep = minimize_scalar(|w| problem.objective_scalar(w), opts)?;
    rep.periods_used = problem.periods_used();
    Ok(rep)
}

/// Tunes the matrix weight `W` starting from `W = I` (or the scalar warm start).
pub fn optimize_matrix(problem: &MemoryProblem<'_>, opts: &MatrixOptions) -> Result<OptimizationReport> {
    let mut rep = minimize_matrix(|w| problem.objective_matrix(w), problem.rank(), opts)?;
    rep.periods_used = problem.periods_used();
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_length_arithmetic() {
        assert_eq!(memory_scalar(1.0, 4.0).unwrap(), 0.25);
        let t = memory_matrix(&DMatrix::identity(3, 3), 2.0).unwrap();
        assert_eq!(t, DMatrix::identity(3, 3) * 0.5);
        assert!(memory_scalar(-1.0, 1.0).is_err());
        assert!(memory_scalar(1.0, 0.0).is_err());
        let nonsym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            MemoryLength::matrix(nonsym, 1.0),
            Err(Error::NotPositiveDefinite(_))
        ));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(MemoryLength::matrix(indefinite, 1.0).is_err());
    }

    #[test]
    fn spectral_radius_examples() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -3.0, 2.0]));
        assert!((spectral_radius(&d).unwrap() - 3.0).abs() < 1e-14);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((spectral_radius(&rot).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cholesky_round_trip() {
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let theta = cholesky_params(&w).unwrap();
        assert!((cholesky_weight(&theta, 2) - w).amax() < 1e-14);
    }

    #[test]
    fn objective_counts_truncated_runs_as_infinite() {
        let a = ModalSeries::new(vec![0.0, 1.0], DMatrix::zeros(2, 2)).unwrap();
        let b = a.head(1);
        assert_eq!(objective(&a, &b).unwrap(), f64::INFINITY);
        assert_eq!(objective(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn scalar_quadratic_minimum() {
        let rep = minimize_scalar(|w| (w - 0.7).powi(2) + 0.1, &ScalarOptions::default()).unwrap();
        let MemoryWeight::Scalar(w) = rep.weight else { panic!() };
        assert!((w - 0.7).abs() < 1e-3, "w = {w}");
        assert!(rep.converged);
        assert!(rep.objective <= rep.initial_objective);
    }

    #[test]
    fn scalar_flat_returns_w0() {
        let rep = minimize_scalar(|_| 3.0, &ScalarOptions::default()).unwrap();
        assert_eq!(rep.weight, MemoryWeight::Scalar(1.0));
        assert!(rep.converged);
    }

    #[test]
    fn scalar_blow_up_boundary() {
        let f = |w: f64| if w > 4.3 { f64::INFINITY } else { 10.0 - w };
        let rep = minimize_scalar(f, &ScalarOptions::default()).unwrap();
        let MemoryWeight::Scalar(w) = rep.weight else { panic!() };
        assert!(rep.boundary_hit);
        assert!(w <= 4.3 && w > 4.29, "w = {w}");
        assert!(rep.objective.is_finite());
    }

    #[test]
    fn scalar_all_blow_up_not_converged() {
        let rep = minimize_scalar(|_| f64::INFINITY, &ScalarOptions::default()).unwrap();
        assert!(!rep.converged);
    }
}
