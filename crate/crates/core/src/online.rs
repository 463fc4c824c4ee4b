//! Online phase: reduced right-hand sides and time integration.
//!
//! Two schemes are provided. Explicit Euler takes fixed steps and is what the
//! flop tables assume. Dormand-Prince 5(4) runs either adaptively (Hairer's
//! step-size control with FSAL) or with a fixed step for order checks; both
//! modes use the scheme's 4th-order dense output so samples land exactly on
//! the requested output times.

use nalgebra::{DMatrix, DVector};

use crate::eapg::EapgCoefficients;
use crate::error::{check_len, Error, Result};
use crate::galerkin::GromCoefficients;
use crate::grid::VelocityField;
use crate::pod::CoarseBasis;
use crate::series::ModalSeries;

pub const DEFAULT_RTOL: f64 = 1e-6;
pub const DEFAULT_ATOL: f64 = 1e-9;
pub const DEFAULT_BLOWUP_FACTOR: f64 = 1e6;
pub const DEFAULT_MAX_STEPS: usize = 50_000_000;

/// `Q (a (x) a) + L a + C` without forming the Kronecker vector.
fn quadratic_into(q: &DMatrix<f64>, l: &DMatrix<f64>, c: &DVector<f64>, a: &DVector<f64>, out: &mut DVector<f64>) {
    let r = a.len();
    out.copy_from(c);
    out.gemv(1.0, l, a, 1.0);
    for i in 0..r {
        for k in 0..r {
            let w = a[i] * a[k];
            out.axpy(w, &q.column(i * r + k), 1.0);
        }
    }
}

pub fn grom_rhs(c: &GromCoefficients, a: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("modal coefficients", c.rank(), a.len())?;
    let mut out = DVector::zeros(a.len());
    quadratic_into(&c.q, &c.l, &c.c, a, &mut out);
    Ok(out)
}

pub fn eapg_rhs(c: &EapgCoefficients, a: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("modal coefficients", c.rank(), a.len())?;
    let r = a.len();
    let mut out = DVector::zeros(r);
    quadratic_into(&c.q, &c.l, &c.c, a, &mut out);
    for i in 0..r {
        for j in 0..r {
            let aij = a[i] * a[j];
            for k in 0..r {
                out.axpy(aij * a[k], &c.k.column((i * r + j) * r + k), 1.0);
            }
        }
    }
    Ok(out)
}

/// A reduced system `da/dt = f(a)`.
pub trait ReducedSystem: Sync {
    fn rank(&self) -> usize;
    fn rhs(&self, a: &DVector<f64>) -> DVector<f64>;
}

impl ReducedSystem for GromCoefficients {
    fn rank(&self) -> usize {
        GromCoefficients::rank(self)
    }

    fn rhs(&self, a: &DVector<f64>) -> DVector<f64> {
        grom_rhs(self, a).expect("state length checked by the integrator")
    }
}

impl ReducedSystem for EapgCoefficients {
    fn rank(&self) -> usize {
        EapgCoefficients::rank(self)
    }

    fn rhs(&self, a: &DVector<f64>) -> DVector<f64> {
        eapg_rhs(self, a).expect("state length checked by the integrator")
    }
}

/// Wraps a closure as a [`ReducedSystem`].
pub struct FnSystem<F> {
    rank: usize,
    f: F,
}

impl<F: Fn(&DVector<f64>) -> DVector<f64> + Sync> FnSystem<F> {
    pub fn new(rank: usize, f: F) -> Self {
        FnSystem { rank, f }
    }
}

impl<F: Fn(&DVector<f64>) -> DVector<f64> + Sync> ReducedSystem for FnSystem<F> {
    fn rank(&self) -> usize {
        self.rank
    }

    fn rhs(&self, a: &DVector<f64>) -> DVector<f64> {
        (self.f)(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    ExplicitEuler { dt: f64 },
    DormandPrince { rtol: f64, atol: f64 },
    DormandPrinceFixed { h: f64 },
}

impl Default for Scheme {
    fn default() -> Self {
        Scheme::DormandPrince {
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    /// Strictly increasing; the first entry is the initial time.
    pub output_times: Vec<f64>,
    /// Abort once `|a| > blowup_factor * max(|a0|, 1)`.
    pub blowup_factor: f64,
    pub max_steps: usize,
}

impl IntegratorConfig {
    pub fn new(scheme: Scheme, output_times: Vec<f64>) -> Self {
        IntegratorConfig {
            scheme,
            output_times,
            blowup_factor: DEFAULT_BLOWUP_FACTOR,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    /// `n + 1` equally spaced output times on `[t0, t1]`.
    pub fn uniform(scheme: Scheme, t0: f64, t1: f64, n: usize) -> Self {
        let n = n.max(1);
        let times = (0..=n).map(|k| t0 + (t1 - t0) * k as f64 / n as f64).collect();
        IntegratorConfig::new(scheme, times)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match self.scheme {
            Scheme::ExplicitEuler { dt } if !(dt.is_finite() && dt > 0.0) => {
                return bad(format!("Euler time step must be positive, got {dt}"))
            }
            Scheme::DormandPrinceFixed { h } if !(h.is_finite() && h > 0.0) => {
                return bad(format!("fixed step must be positive, got {h}"))
            }
            Scheme::DormandPrince { rtol, atol }
                if !(rtol.is_finite() && rtol > 0.0 && atol.is_finite() && atol > 0.0) =>
            {
                return bad(format!("tolerances must be positive, got rtol={rtol} atol={atol}"))
            }
            _ => {}
        }
        if self.output_times.is_empty() {
            return bad("at least one output time is required".into());
        }
        for (m, w) in self.output_times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::NonMonotoneTime { index: m + 1 });
            }
        }
        if self.output_times.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("output times".into()));
        }
        if !(self.blowup_factor > 1.0) {
            return bad(format!("blow-up factor must exceed 1, got {}", self.blowup_factor));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntegrationStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evaluations: usize,
    pub outputs: usize,
    /// Time of the last accepted state.
    pub t_reached: f64,
    pub max_norm: f64,
}

/// Outcome of a run that may have stopped early on a numerical failure.
#[derive(Debug)]
pub struct IntegrationReport {
    pub stats: IntegrationStats,
    /// Blow-up, step underflow or step budget exhaustion.
    pub failure: Option<Error>,
}

impl IntegrationReport {
    pub fn blew_up(&self) -> bool {
        self.failure.is_some()
    }

    pub fn into_result(self) -> Result<IntegrationStats> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok(self.stats),
        }
    }

    pub fn to_text(&self) -> String {
        let s = &self.stats;
        let mut out = String::new();
        out.push_str(&format!("accepted_steps = {}\n", s.accepted_steps));
        out.push_str(&format!("rejected_steps = {}\n", s.rejected_steps));
        out.push_str(&format!("rhs_evaluations = {}\n", s.rhs_evaluations));
        out.push_str(&format!("outputs = {}\n", s.outputs));
        out.push_str(&format!("t_reached = {:?}\n", s.t_reached));
        out.push_str(&format!("max_norm = {:?}\n", s.max_norm));
        out.push_str(&format!("blow_up = {}\n", self.blew_up()));
        if let Some(e) = &self.failure {
            out.push_str(&format!("failure = {e}\n"));
        }
        out
    }
}

/// Collected series plus the run report; the series holds every output
/// reached before any failure.
#[derive(Debug)]
pub struct Trajectory {
    pub series: ModalSeries,
    pub report: IntegrationReport,
}

struct Guard {
    limit: f64,
    max_norm: f64,
}

impl Guard {
    fn check(&mut self, t: f64, y: &DVector<f64>) -> Result<()> {
        let norm = y.norm();
        if !norm.is_finite() || norm > self.limit {
            return Err(Error::BlowUp { t, norm });
        }
        self.max_norm = self.max_norm.max(norm);
        Ok(())
    }
}

/// Integrates and hands every output sample to `sink` as it is produced,
/// so long runs need no storage. Validation problems are returned as `Err`;
/// numerical failures end the run and are recorded in the report.
pub fn integrate_streaming(
    sys: &dyn ReducedSystem,
    a0: &DVector<f64>,
    cfg: &IntegratorConfig,
    sink: &mut dyn FnMut(f64, &DVector<f64>) -> Result<()>,
) -> Result<IntegrationReport> {
    cfg.validate()?;
    check_len("initial condition", sys.rank(), a0.len())?;
    if a0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("initial condition".into()));
    }
    let mut guard = Guard {
        limit: cfg.blowup_factor * a0.norm().max(1.0),
        max_norm: a0.norm(),
    };
    let mut stats = IntegrationStats {
        t_reached: cfg.output_times[0],
        ..Default::default()
    };
    sink(cfg.output_times[0], a0)?;
    stats.outputs = 1;
    let run = match cfg.scheme {
        Scheme::ExplicitEuler { dt } => euler(sys, a0, cfg, dt, &mut guard, &mut stats, sink),
        Scheme::DormandPrince { rtol, atol } => {
            dopri(sys, a0, cfg, StepControl::Adaptive { rtol, atol }, &mut guard, &mut stats, sink)
        }
        Scheme::DormandPrinceFixed { h } => {
            dopri(sys, a0, cfg, StepControl::Fixed(h), &mut guard, &mut stats, sink)
        }
    };
    stats.max_norm = guard.max_norm;
    match run {
        Ok(()) => Ok(IntegrationReport { stats, failure: None }),
        Err(e) if e.kind() == crate::error::ErrorKind::Numerical => {
            log::debug!("integration stopped: {e}");
            Ok(IntegrationReport {
                stats,
                failure: Some(e),
            })
        }
        Err(e) => Err(e),
    }
}

/// Integrates and collects the samples, keeping partial output on failure.
pub fn integrate_collect(sys: &dyn ReducedSystem, a0: &DVector<f64>, cfg: &IntegratorConfig) -> Result<Trajectory> {
    let r = a0.len();
    let mut times = Vec::with_capacity(cfg.output_times.len());
    let mut data = Vec::with_capacity(cfg.output_times.len() * r);
    let report = integrate_streaming(sys, a0, cfg, &mut |t, y| {
        times.push(t);
        data.extend_from_slice(y.as_slice());
        Ok(())
    })?;
    let coeffs = DMatrix::from_vec(r, times.len(), data);
    let series = ModalSeries::new(times, coeffs)?;
    Ok(Trajectory { series, report })
}

/// Integrates over all output times; any numerical failure is an error.
pub fn integrate(sys: &dyn ReducedSystem, a0: &DVector<f64>, cfg: &IntegratorConfig) -> Result<ModalSeries> {
    let traj = integrate_collect(sys, a0, cfg)?;
    traj.report.into_result()?;
    Ok(traj.series)
}

fn eval(sys: &dyn ReducedSystem, y: &DVector<f64>, stats: &mut IntegrationStats) -> DVector<f64> {
    stats.rhs_evaluations += 1;
    sys.rhs(y)
}

fn euler(
    sys: &dyn ReducedSystem,
    a0: &DVector<f64>,
    cfg: &IntegratorConfig,
    dt: f64,
    guard: &mut Guard,
    stats: &mut IntegrationStats,
    sink: &mut dyn FnMut(f64, &DVector<f64>) -> Result<()>,
) -> Result<()> {
    let t0 = cfg.output_times[0];
    let mut y = a0.clone();
    let mut prev = a0.clone();
    let mut n = 0usize;
    for &t_out in &cfg.output_times[1..] {
        // Step counts rather than accumulated times, so outputs on the step
        // lattice are hit exactly.
        let target = ((t_out - t0) / dt - 1e-9).ceil().max(0.0) as usize;
        while n < target {
            if stats.accepted_steps >= cfg.max_steps {
                return Err(Error::MaxSteps {
                    t: t0 + n as f64 * dt,
                    max_steps: cfg.max_steps,
                });
            }
            let f = eval(sys, &y, stats);
            prev.copy_from(&y);
            y.axpy(dt, &f, 1.0);
            n += 1;
            stats.accepted_steps += 1;
            let t = t0 + n as f64 * dt;
            guard.check(t, &y)?;
            stats.t_reached = t;
        }
        let t_n = t0 + n as f64 * dt;
        if ((t_n - t_out) / dt).abs() <= 1e-9 {
            sink(t_out, &y)?;
        } else {
            // Off-lattice output: linear interpolation within the last step.
            let theta = (t_out - (t_n - dt)) / dt;
            sink(t_out, &(&prev * (1.0 - theta) + &y * theta))?;
        }
        stats.outputs += 1;
    }
    Ok(())
}

enum StepControl {
    Adaptive { rtol: f64, atol: f64 },
    Fixed(f64),
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

struct Dense {
    c0: DVector<f64>,
    c1: DVector<f64>,
    c2: DVector<f64>,
    c3: DVector<f64>,
    c4: DVector<f64>,
    t: f64,
    h: f64,
}

impl Dense {
    fn at(&self, t: f64) -> DVector<f64> {
        let th = (t - self.t) / self.h;
        let th1 = 1.0 - th;
        &self.c0 + (&self.c1 + (&self.c2 + (&self.c3 + &self.c4 * th1) * th) * th1) * th
    }
}

struct StepResult {
    y_new: DVector<f64>,
    k7: DVector<f64>,
    err: DVector<f64>,
    k: [DVector<f64>; 6],
}

fn dopri_step(
    sys: &dyn ReducedSystem,
    y: &DVector<f64>,
    k1: &DVector<f64>,
    h: f64,
    stats: &mut IntegrationStats,
) -> StepResult {
    let k2 = eval(sys, &(y + k1 * (h * A21)), stats);
    let k3 = eval(sys, &(y + (k1 * A31 + &k2 * A32) * h), stats);
    let k4 = eval(sys, &(y + (k1 * A41 + &k2 * A42 + &k3 * A43) * h), stats);
    let k5 = eval(sys, &(y + (k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h), stats);
    let k6 = eval(
        sys,
        &(y + (k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h),
        stats,
    );
    let y_new = y + (k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
    let k7 = eval(sys, &y_new, stats);
    let err = (k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
    StepResult {
        y_new,
        k7,
        err,
        k: [k1.clone(), k2, k3, k4, k5, k6],
    }
}

fn dense_for(y: &DVector<f64>, s: &StepResult, t: f64, h: f64) -> Dense {
    let [k1, _k2, k3, k4, k5, k6] = &s.k;
    let ydiff = &s.y_new - y;
    let bspl = k1 * h - &ydiff;
    let c3 = &ydiff - &s.k7 * h - &bspl;
    let c4 = (k1 * D1 + k3 * D3 + k4 * D4 + k5 * D5 + k6 * D6 + &s.k7 * D7) * h;
    Dense {
        c0: y.clone(),
        c1: ydiff,
        c2: bspl,
        c3,
        c4,
        t,
        h,
    }
}

fn error_norm(err: &DVector<f64>, y: &DVector<f64>, y_new: &DVector<f64>, rtol: f64, atol: f64) -> f64 {
    let n = err.len().max(1) as f64;
    let sum: f64 = (0..err.len())
        .map(|i| {
            let sk = atol + rtol * y[i].abs().max(y_new[i].abs());
            (err[i] / sk).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

/// Hairer's starting step heuristic.
fn initial_step(
    sys: &dyn ReducedSystem,
    y: &DVector<f64>,
    f0: &DVector<f64>,
    rtol: f64,
    atol: f64,
    span: f64,
    stats: &mut IntegrationStats,
) -> f64 {
    let scale = |v: &DVector<f64>| -> f64 {
        let n = v.len().max(1) as f64;
        (v.iter()
            .zip(y.iter())
            .map(|(x, yi)| (x / (atol + rtol * yi.abs())).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
    };
    let d0 = scale(y);
    let d1 = scale(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span);
    let y1 = y + f0 * h0;
    let f1 = eval(sys, &y1, stats);
    let d2 = scale(&(&f1 - f0)) / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dmax).powf(1.0 / 5.0)
    };
    (100.0 * h0).min(h1).min(span)
}

fn dopri(
    sys: &dyn ReducedSystem,
    a0: &DVector<f64>,
    cfg: &IntegratorConfig,
    control: StepControl,
    guard: &mut Guard,
    stats: &mut IntegrationStats,
    sink: &mut dyn FnMut(f64, &DVector<f64>) -> Result<()>,
) -> Result<()> {
    let times = &cfg.output_times;
    let t_end = *times.last().expect("validated non-empty");
    let mut t = times[0];
    if t_end == t {
        return Ok(());
    }
    let mut y = a0.clone();
    let mut k1 = eval(sys, &y, stats);
    let span = t_end - t;
    let mut h = match control {
        StepControl::Adaptive { rtol, atol } => initial_step(sys, &y, &k1, rtol, atol, span, stats),
        StepControl::Fixed(h) => h,
    };
    let mut next_out = 1;
    let mut last_rejected = false;
    let mut n_fixed = 0usize;
    let t0 = t;
    while next_out < times.len() {
        if stats.accepted_steps + stats.rejected_steps >= cfg.max_steps {
            return Err(Error::MaxSteps {
                t,
                max_steps: cfg.max_steps,
            });
        }
        let h_step = match control {
            StepControl::Fixed(hf) => {
                let t_next = (t0 + (n_fixed + 1) as f64 * hf).min(t_end);
                if t_end - t_next < 1e-12 * hf {
                    t_end - t
                } else {
                    t_next - t
                }
            }
            StepControl::Adaptive { .. } => {
                if h < 1e-14 * t.abs().max(1.0) {
                    return Err(Error::StepSizeUnderflow { t });
                }
                if t + h >= t_end || t_end - (t + h) < 1e-12 * h {
                    t_end - t
                } else {
                    h
                }
            }
        };
        let step = dopri_step(sys, &y, &k1, h_step, stats);
        let accepted = match control {
            StepControl::Fixed(_) => true,
            StepControl::Adaptive { rtol, atol } => {
                let err = error_norm(&step.err, &y, &step.y_new, rtol, atol);
                let err_ok = err.is_finite() && err <= 1.0;
                let fac = if err.is_finite() && err > 0.0 {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 10.0)
                } else if err == 0.0 {
                    10.0
                } else {
                    0.2
                };
                if err_ok {
                    h = h_step * if last_rejected { fac.min(1.0) } else { fac };
                    last_rejected = false;
                    true
                } else {
                    if !step.y_new.iter().all(|x| x.is_finite()) {
                        guard.check(t + h_step, &step.y_new)?;
                    }
                    h = h_step * fac.min(1.0);
                    last_rejected = true;
                    stats.rejected_steps += 1;
                    false
                }
            }
        };
        if !accepted {
            continue;
        }
        let t_new = if t + h_step >= t_end || t_end - (t + h_step) < 1e-12 * h_step.abs() {
            t_end
        } else {
            t + h_step
        };
        guard.check(t_new, &step.y_new)?;
        stats.accepted_steps += 1;
        n_fixed += 1;
        let dense = dense_for(&y, &step, t, h_step);
        while next_out < times.len() && times[next_out] <= t_new {
            let t_out = times[next_out];
            let value = if t_out == t_new { step.y_new.clone() } else { dense.at(t_out) };
            sink(t_out, &value)?;
            stats.outputs += 1;
            next_out += 1;
        }
        t = t_new;
        stats.t_reached = t;
        y = step.y_new;
        k1 = step.k7;
    }
    Ok(())
}

/// `a0 = Phi~^T (u*_0 - u')` for a full snapshot `u*_0`.
pub fn initial_condition(cb: &CoarseBasis, u0: &VelocityField) -> Result<DVector<f64>> {
    if u0.grid() != cb.grid() {
        return Err(Error::GridMismatch);
    }
    let fluct: Vec<f64> = u0
        .values()
        .iter()
        .zip(cb.mean().values())
        .map(|(u, m)| u - m)
        .collect();
    cb.project(&fluct)
}

/// `u~(t) = u' + Phi~ a(t)` for one coefficient vector.
pub fn reconstruct_state(cb: &CoarseBasis, a: &DVector<f64>) -> Result<VelocityField> {
    let lifted = cb.lift(a)?;
    let values: Vec<f64> = lifted
        .iter()
        .zip(cb.mean().values())
        .map(|(x, m)| x + m)
        .collect();
    VelocityField::new(*cb.grid(), values)
}

/// Reconstructs every sample of a series.
pub fn reconstruct(cb: &CoarseBasis, series: &ModalSeries) -> Result<Vec<VelocityField>> {
    check_len("series rank", cb.rank(), series.rank())?;
    (0..series.len())
        .map(|m| reconstruct_state(cb, &series.column(m)))
        .collect()
}
