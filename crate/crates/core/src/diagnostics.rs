//! Error measures and flop accounting.
//!
//! Flop counts are exact integer polynomials in `N`, `r`, `d` and the
//! per-point costs `omega1` (first derivatives) and `omega2` (second
//! derivatives). Each phase is available both as a closed-form total and as
//! per-step rows.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::galerkin::GromCoefficients;
use crate::eapg::EapgCoefficients;
use crate::online::reconstruct_state;
use crate::pod::{truncation_error_from_sigma, CoarseBasis};
use crate::series::ModalSeries;
use crate::snapshot::SnapshotSet;

pub const DEFAULT_OMEGA1: u64 = 12;
pub const DEFAULT_OMEGA2: u64 = 18;

/// `sum_m |a_pod(t_m) - a_rom(t_m)|^2 / sum_k sigma_k^2`.
pub fn e_rom(pod: &ModalSeries, rom: &ModalSeries, sigma: &[f64]) -> Result<f64> {
    check_len("series rank", pod.rank(), rom.rank())?;
    check_len("series length", pod.len(), rom.len())?;
    let energy: f64 = sigma.iter().map(|s| s * s).sum();
    if !(energy > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    let num: f64 = (pod.coeffs() - rom.coeffs()).norm_squared();
    Ok(num / energy)
}

pub fn e_total(e_tru: f64, e_rom: f64) -> f64 {
    e_tru + e_rom
}

/// `(1 / (d N_grid M)) sum_m |u(t_m) - u~(t_m)|_2 / u_ref` for `N x M`
/// snapshot matrices.
pub fn e_rec(reference: &DMatrix<f64>, approx: &DMatrix<f64>, dim: usize, u_ref: f64) -> Result<f64> {
    check_len("reconstruction rows", reference.nrows(), approx.nrows())?;
    check_len("reconstruction columns", reference.ncols(), approx.ncols())?;
    if !(u_ref.is_finite() && u_ref > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "reference velocity must be positive, got {u_ref}"
        )));
    }
    if dim == 0 || !reference.nrows().is_multiple_of(dim) || reference.ncols() == 0 {
        return Err(Error::InvalidArgument("inconsistent field dimensions".into()));
    }
    let n_grid = reference.nrows() / dim;
    let m = reference.ncols();
    let sum: f64 = (0..m)
        .map(|k| (reference.column(k) - approx.column(k)).norm())
        .sum();
    Ok(sum / (dim * n_grid * m) as f64 / u_ref)
}

/// `E_REC` of a ROM run against the snapshots, reconstructing one sample at
/// a time.
pub fn e_rec_rom(snapshots: &SnapshotSet, cb: &CoarseBasis, rom: &ModalSeries, u_ref: f64) -> Result<f64> {
    if snapshots.grid() != cb.grid() {
        return Err(Error::GridMismatch);
    }
    check_len("ROM samples", snapshots.len(), rom.len())?;
    if !(u_ref.is_finite() && u_ref > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "reference velocity must be positive, got {u_ref}"
        )));
    }
    let dim = cb.grid().dim();
    let n_grid = cb.grid().n_points();
    let m = snapshots.len();
    let mut sum = 0.0;
    for k in 0..m {
        let u = reconstruct_state(cb, &rom.column(k))?;
        let diff = snapshots.matrix().column(k) - DVector::from_column_slice(u.values());
        sum += diff.norm();
    }
    Ok(sum / (dim * n_grid * m) as f64 / u_ref)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub r: usize,
    pub m: usize,
    pub e_tru: f64,
    pub e_rom: f64,
    pub e_total: f64,
    pub e_rec: Option<f64>,
}

impl ErrorReport {
    pub fn new(sigma: &[f64], r: usize, pod: &ModalSeries, rom: &ModalSeries, e_rec: Option<f64>) -> Result<Self> {
        let e_tru = truncation_error_from_sigma(sigma, r)?;
        let e_rom = e_rom(pod, rom, sigma)?;
        Ok(ErrorReport {
            r,
            m: pod.len(),
            e_tru,
            e_rom,
            e_total: e_total(e_tru, e_rom),
            e_rec,
        })
    }

    pub const CSV_HEADER: &'static str = "label,r,M,E_TRU_percent,E_ROM_percent,E_Total_percent,E_REC_percent";

    /// One CSV row with the errors in percent.
    pub fn csv_row(&self, label: &str) -> String {
        let rec = self.e_rec.map_or(String::from("nan"), |v| format!("{:?}", 100.0 * v));
        format!(
            "{label},{},{},{:?},{:?},{:?},{rec}",
            self.r,
            self.m,
            100.0 * self.e_tru,
            100.0 * self.e_rom,
            100.0 * self.e_total
        )
    }
}

/// Problem size and stencil costs for the flop formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopParams {
    pub n: u64,
    pub r: u64,
    pub d: u64,
    pub omega1: u64,
    pub omega2: u64,
}

impl FlopParams {
    pub fn new(n: u64, r: u64, d: u64) -> Self {
        FlopParams {
            n,
            r,
            d,
            omega1: DEFAULT_OMEGA1,
            omega2: DEFAULT_OMEGA2,
        }
    }

    fn validate(&self) -> Result<(i128, i128, i128, i128, i128)> {
        if self.r == 0 {
            return Err(Error::InvalidArgument("flop counts need r >= 1".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("flop counts need N >= 1".into()));
        }
        if self.d == 0 {
            return Err(Error::InvalidArgument("flop counts need d >= 1".into()));
        }
        Ok((
            self.n as i128,
            self.r as i128,
            self.d as i128,
            self.omega1 as i128,
            self.omega2 as i128,
        ))
    }
}

fn non_negative(v: i128) -> Result<u128> {
    u128::try_from(v).map_err(|_| Error::InvalidArgument(format!("negative flop count {v}")))
}

/// Per-step flop counts of one phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopTable {
    pub phase: &'static str,
    pub rows: Vec<(String, i128)>,
    pub total: u128,
}

impl FlopTable {
    pub fn row_sum(&self) -> i128 {
        self.rows.iter().map(|(_, v)| v).sum()
    }
}

pub fn flops_grom_offline(p: &FlopParams) -> Result<u128> {
    let (n, r, d, w1, w2) = p.validate()?;
    non_negative(
        (2 * r.pow(3) + (2 * d + 2) * r * r + (5 * d + w1 + w2 + 4) * r + 3 * d + w1 + w2 + 1) * n
            - r.pow(3)
            - r * r
            - r,
    )
}

pub fn flops_eapg_offline(p: &FlopParams) -> Result<u128> {
    let (n, r, d, w1, w2) = p.validate()?;
    non_negative(
        (2 * r.pow(4)
            + (4 * d + 7) * r.pow(3)
            + (11 * d + w1 + w2 + 10) * r * r
            + (14 * d + 2 * w1 + 2 * w2 + 12) * r
            + 8 * d
            + 2 * w1
            + 2 * w2
            + 3)
            * n
            - r.pow(4)
            - 2 * r.pow(3)
            - 2 * r * r
            - 2 * r,
    )
}

pub fn flops_grom_online(r: u64) -> Result<u128> {
    if r == 0 {
        return Err(Error::InvalidArgument("flop counts need r >= 1".into()));
    }
    let r = r as u128;
    Ok(2 * r.pow(3) + 2 * r * r + 3 * r)
}

pub fn flops_eapg_online(r: u64) -> Result<u128> {
    if r == 0 {
        return Err(Error::InvalidArgument("flop counts need r >= 1".into()));
    }
    let r = r as u128;
    Ok(2 * r.pow(4) + 2 * r.pow(3) + 2 * r * r + 4 * r)
}

pub fn flops_apg_online(p: &FlopParams) -> Result<u128> {
    let (n, r, d, w1, w2) = p.validate()?;
    non_negative((6 * d + 10 * r + 2 * w1 + 2 * w2 + 2) * n + 2 * r * r - r)
}

fn rows(v: Vec<(&str, i128)>) -> Vec<(String, i128)> {
    v.into_iter().map(|(k, x)| (k.to_string(), x)).collect()
}

pub fn grom_offline_table(p: &FlopParams) -> Result<FlopTable> {
    let (n, r, d, w1, w2) = p.validate()?;
    Ok(FlopTable {
        phase: "G-ROM offline",
        rows: rows(vec![
            ("derivatives", r * w1 * n + w1 * n + r * w2 * n + w2 * n),
            ("spatial coefficients", 2 * r * r * d * n + 5 * r * d * n + 2 * r * n + 3 * d * n + n),
            ("projection", 2 * r.pow(3) * n + 2 * r * r * n + 2 * r * n - r.pow(3) - r * r - r),
        ]),
        total: flops_grom_offline(p)?,
    })
}

pub fn eapg_offline_table(p: &FlopParams) -> Result<FlopTable> {
    let (n, r, d, w1, w2) = p.validate()?;
    Ok(FlopTable {
        phase: "eAPG-ROM offline",
        rows: rows(vec![
            ("derivatives", r * w1 * n + w1 * n + r * w2 * n + w2 * n),
            ("spatial coefficients", 2 * r * r * d * n + 5 * r * d * n + 2 * r * n + 3 * d * n + n),
            (
                "fine-scale projection",
                4 * r.pow(3) * n + 4 * r * r * n + 4 * r * n - r.pow(3) - r * r - r,
            ),
            (
                "fine-scale derivatives",
                r * r * w1 * n + r * r * w2 * n + r * w1 * n + r * w2 * n + w1 * n + w2 * n,
            ),
            (
                "eAPG spatial coefficients",
                4 * r.pow(3) * d * n + r.pow(3) * n + 9 * r * r * d * n + 4 * r * r * n + 9 * r * d * n
                    + 4 * r * n
                    + 5 * d * n
                    + 2 * n,
            ),
            (
                "projection",
                2 * r.pow(4) * n + 2 * r.pow(3) * n + 2 * r * r * n + 2 * r * n - r.pow(4) - r.pow(3) - r * r - r,
            ),
        ]),
        total: flops_eapg_offline(p)?,
    })
}

pub fn grom_online_table(r: u64) -> Result<FlopTable> {
    let total = flops_grom_online(r)?;
    let r = r as i128;
    Ok(FlopTable {
        phase: "G-ROM online",
        rows: rows(vec![
            ("right-hand side", 2 * r.pow(3) + 2 * r * r + r),
            ("Euler update", 2 * r),
        ]),
        total,
    })
}

pub fn eapg_online_table(r: u64) -> Result<FlopTable> {
    let total = flops_eapg_online(r)?;
    let r = r as i128;
    Ok(FlopTable {
        phase: "eAPG-ROM online",
        rows: rows(vec![
            ("right-hand side", 2 * r.pow(4) + 2 * r.pow(3) + 2 * r * r + 2 * r),
            ("Euler update", 2 * r),
        ]),
        total,
    })
}

/// Per-step rows of the full-space APG step. These rows add up to
/// `total + N + r`; the closed-form total is kept unchanged.
pub fn apg_online_table(p: &FlopParams) -> Result<FlopTable> {
    let (n, r, d, w1, w2) = p.validate()?;
    Ok(FlopTable {
        phase: "APG-ROM online",
        rows: rows(vec![
            ("lift", 2 * r * n),
            ("derivatives of the state", (w1 + w2) * n),
            ("residual", 2 * d * n + n),
            ("fine-scale projection", 4 * r * n + n),
            ("derivatives of the fine-scale residual", (w1 + w2) * n),
            ("Jacobian action", 4 * d * n + n),
            ("projection and memory weighting", 4 * r * n - 2 * r + 2 * r * r),
            ("Euler update", 2 * r),
        ]),
        total: flops_apg_online(p)?,
    })
}

/// Difference between the APG row sum and its closed-form total.
pub fn apg_row_offset(p: &FlopParams) -> i128 {
    (p.n + p.r) as i128
}

/// Counts flops of dense kernels as they are executed: a matrix-vector
/// product `m x n` costs `m (2n - 1)`, a vector addition or scaling of
/// length `k` costs `k`, and each Kronecker lift costs `r`.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FlopCounter {
    pub flops: u128,
}

impl FlopCounter {
    fn matvec(&mut self, m: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
        self.flops += (m.nrows() * (2 * m.ncols() - 1)) as u128;
        m * x
    }

    fn add(&mut self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        self.flops += a.len() as u128;
        a + b
    }

    fn kron(&mut self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        self.flops += a.len() as u128;
        DVector::from_fn(b.len() * a.len(), |idx, _| b[idx / a.len()] * a[idx % a.len()])
    }

    /// `a + dt f` costs `2r`.
    fn axpy(&mut self, a: &DVector<f64>, dt: f64, f: &DVector<f64>) -> DVector<f64> {
        self.flops += 2 * a.len() as u128;
        a + f * dt
    }
}

pub fn counted_grom_rhs(c: &GromCoefficients, a: &DVector<f64>, k: &mut FlopCounter) -> DVector<f64> {
    let aa = k.kron(a, a);
    let q = k.matvec(&c.q, &aa);
    let l = k.matvec(&c.l, a);
    let s = k.add(&q, &l);
    k.add(&s, &c.c)
}

pub fn counted_eapg_rhs(c: &EapgCoefficients, a: &DVector<f64>, k: &mut FlopCounter) -> DVector<f64> {
    let aa = k.kron(a, a);
    let aaa = k.kron(a, &aa);
    let kk = k.matvec(&c.k, &aaa);
    let q = k.matvec(&c.q, &aa);
    let l = k.matvec(&c.l, a);
    let s = k.add(&kk, &q);
    let s = k.add(&s, &l);
    k.add(&s, &c.c)
}

pub fn counted_euler_step_grom(c: &GromCoefficients, a: &DVector<f64>, dt: f64, k: &mut FlopCounter) -> DVector<f64> {
    let f = counted_grom_rhs(c, a, k);
    k.axpy(a, dt, &f)
}

pub fn counted_euler_step_eapg(c: &EapgCoefficients, a: &DVector<f64>, dt: f64, k: &mut FlopCounter) -> DVector<f64> {
    let f = counted_eapg_rhs(c, a, k);
    k.axpy(a, dt, &f)
}

/// Reference time divided by each measured time.
pub fn speedup_report(reference: f64, measured: &[(String, f64)]) -> Result<Vec<(String, f64)>> {
    if !(reference.is_finite() && reference > 0.0) {
        return Err(Error::InvalidArgument(format!("reference time must be positive, got {reference}")));
    }
    measured
        .iter()
        .map(|(label, t)| {
            if t.is_finite() && *t > 0.0 {
                Ok((label.clone(), reference / t))
            } else {
                Err(Error::InvalidArgument(format!("time for {label} must be positive, got {t}")))
            }
        })
        .collect()
}

/// Groups digits in threes: `6402267496` becomes `6,402,267,496`.
pub fn group_digits(v: u128) -> String {
    let s = v.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (k, ch) in s.chars().enumerate() {
        if k > 0 && (s.len() - k).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// The five totals in one summary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopSummary {
    pub params: FlopParams,
    pub grom_offline: u128,
    pub eapg_offline: u128,
    pub grom_online: u128,
    pub eapg_online: u128,
    pub apg_online: u128,
}

impl FlopSummary {
    pub fn compute(p: &FlopParams) -> Result<Self> {
        Ok(FlopSummary {
            params: *p,
            grom_offline: flops_grom_offline(p)?,
            eapg_offline: flops_eapg_offline(p)?,
            grom_online: flops_grom_online(p.r)?,
            eapg_online: flops_eapg_online(p.r)?,
            apg_online: flops_apg_online(p)?,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = &self.params;
        let _ = writeln!(
            s,
            "N = {}, r = {}, d = {}, omega1 = {}, omega2 = {}",
            p.n, p.r, p.d, p.omega1, p.omega2
        );
        let _ = writeln!(s, "{:<10} {:>22} {:>22}", "", "offline", "online");
        let _ = writeln!(
            s,
            "{:<10} {:>22} {:>22}",
            "G-ROM",
            group_digits(self.grom_offline),
            group_digits(self.grom_online)
        );
        let _ = writeln!(
            s,
            "{:<10} {:>22} {:>22}",
            "eAPG-ROM",
            group_digits(self.eapg_offline),
            group_digits(self.eapg_online)
        );
        let _ = writeln!(s, "{:<10} {:>22} {:>22}", "APG-ROM", "-", group_digits(self.apg_online));
        s
    }

    pub fn to_csv(&self) -> String {
        format!(
            "model,offline,online\nG-ROM,{},{}\neAPG-ROM,{},{}\nAPG-ROM,,{}\n",
            self.grom_offline, self.grom_online, self.eapg_offline, self.eapg_online, self.apg_online
        )
    }
}
