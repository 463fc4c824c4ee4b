//! Subcommand implementations. Each resolves its settings, does the work
//! through the library and writes its outputs plus the config echo.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;
use rand::RngExt;
use romforge::apg::apg_rhs_fullspace;
use romforge::diagnostics::{
    apg_online_table, e_rec_rom, eapg_offline_table, eapg_online_table, grom_offline_table, grom_online_table,
    group_digits, ErrorReport, FlopParams, FlopSummary, FlopTable, DEFAULT_OMEGA1, DEFAULT_OMEGA2,
};
use romforge::eapg::build_eapg_offline;
use romforge::galerkin;
use romforge::kv::{KeyValueFile, KeyValueWriter};
use romforge::memory::{
    optimize_matrix, optimize_scalar, projected_jacobian, spectral_radius, MatrixOptions, MemoryLength,
    MemoryProblem, MemoryWeight, ScalarOptions, DEFAULT_N_PERIODS, DEFAULT_W_MAX,
};
use romforge::online::{integrate_collect, IntegratorConfig, ReducedSystem, Scheme, DEFAULT_ATOL, DEFAULT_RTOL};
use romforge::pod::{compute_pod, load_basis, project_reference, save_basis, truncate, truncation_error, CoarseBasis};
use romforge::snapshot::{
    fmt_f64, load_coefficient_series, load_snapshots, save_coefficient_series, save_snapshots, split_mean,
    SnapshotSet,
};
use romforge::synth::{rng, shedding_ensemble, SheddingRecipe};
use romforge::tensor_io::{
    load_coefficients, save_eapg, save_grom, write_memory, CoefficientMeta, CoefficientSet,
};
use romforge::ModalSeries;

use crate::config::Settings;
use crate::{
    BuildEapgArgs, BuildGromArgs, CliError, ErrorsArgs, FlopsArgs, OptimizeArgs, PodArgs, SimulateArgs, SynthArgs,
};

/// Name of the memory file written by `optimize-memory`.
pub const MEMORY_FILE: &str = "memory.txt";

/// Largest relative difference tolerated between the stored coefficients and
/// the full-space closure.
const ORACLE_TOLERANCE: f64 = 1e-9;

type CliResult = Result<(), CliError>;

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Parses `1,2,3` (spaces are also accepted as separators).
pub fn parse_list<T: FromStr>(key: &str, text: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| CliError::validation(format!("bad entry `{s}` in `{key}`: {e}")))
        })
        .collect()
}

fn join_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Coefficients of every snapshot relative to the basis mean.
pub fn project_snapshots(cb: &CoarseBasis, set: &SnapshotSet) -> Result<ModalSeries, CliError> {
    if set.grid() != cb.grid() {
        return Err(romforge::Error::GridMismatch.into());
    }
    let mut fluct = set.matrix().clone();
    for mut col in fluct.column_iter_mut() {
        for (x, m) in col.iter_mut().zip(cb.mean().values()) {
            *x -= m;
        }
    }
    Ok(ModalSeries::new(set.times().to_vec(), cb.modes().tr_mul(&fluct))?)
}

fn viscosity(settings: &mut Settings, flag: Option<f64>, fallback: Option<f64>) -> Result<f64, CliError> {
    match settings.optional("nu", flag)? {
        Some(nu) => Ok(nu),
        None => match fallback {
            Some(nu) => {
                settings.note("nu", nu);
                Ok(nu)
            }
            None => Err(CliError::validation("missing setting `nu` (give --nu or set it in the config file)")),
        },
    }
}

pub fn pod(a: PodArgs, mut s: Settings) -> CliResult {
    let manifest: PathBuf = s.required("manifest", a.manifest)?;
    let r: usize = s.required("r", a.r)?;
    let out: PathBuf = s.required("out", a.out)?;
    let set = load_snapshots(&manifest)?;
    let fl = split_mean(&set);
    let pod = compute_pod(&fl)?;
    let cb = truncate(&pod, r)?;
    create_dir(&out)?;
    save_basis(&cb, out.join("basis"))?;

    let mut sigma = String::from("k,sigma\n");
    for (k, v) in pod.singular_values().iter().enumerate() {
        let _ = writeln!(sigma, "{},{}", k + 1, fmt_f64(*v));
    }
    write_text(&out.join("sigma.csv"), &sigma)?;

    let mut tru = String::from("r,E_TRU_percent\n");
    for k in 1..=pod.n_modes() {
        let _ = writeln!(tru, "{k},{:?}", 100.0 * truncation_error(&pod, k)?);
    }
    write_text(&out.join("truncation_errors.csv"), &tru)?;

    save_coefficient_series(&project_reference(&cb, &fl)?, out.join("reference.csv"))?;
    log::info!(
        "retained {r} of {} modes, truncation error {:.4}%",
        pod.n_modes(),
        100.0 * cb.truncation_error()?
    );
    s.write_echo("pod", &out)
}

pub fn build_grom(a: BuildGromArgs, mut s: Settings) -> CliResult {
    let basis: PathBuf = s.required("basis", a.basis)?;
    let nu: f64 = s.required("nu", a.nu)?;
    let out: PathBuf = s.required("out", a.out)?;
    let cb = load_basis(&basis)?;
    let g = galerkin::build_grom(&cb, nu)?;
    save_grom(&g, &CoefficientMeta::new(cb.grid(), nu), &out)?;
    s.write_echo("build-grom", &out)
}

/// State for the spectral radius: the projected first snapshot when given,
/// else the mean flow.
fn rho_state(cb: &CoarseBasis, snapshots: Option<&Path>) -> Result<DVector<f64>, CliError> {
    match snapshots {
        Some(path) => {
            let set = load_snapshots(path)?;
            Ok(project_snapshots(cb, &set)?.column(0))
        }
        None => Ok(DVector::zeros(cb.rank())),
    }
}

pub fn build_eapg(a: BuildEapgArgs, mut s: Settings) -> CliResult {
    let basis: PathBuf = s.required("basis", a.basis)?;
    let nu: f64 = s.required("nu", a.nu)?;
    let out: PathBuf = s.required("out", a.out)?;
    let memory_file: Option<PathBuf> = s.optional("memory", a.memory)?;
    let cb = load_basis(&basis)?;
    let mem = match memory_file {
        Some(path) => {
            let kv = KeyValueFile::read(&path)?;
            let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
            romforge::tensor_io::read_memory(&dir, &kv, cb.rank())?
        }
        None => {
            let w: f64 = s.value("w", a.w, 1.0)?;
            let rho = match s.optional("rho", a.rho)? {
                Some(rho) => rho,
                None => {
                    let snaps: Option<PathBuf> = s.optional("snapshots", a.snapshots)?;
                    let a0 = rho_state(&cb, snaps.as_deref())?;
                    let rho = spectral_radius(&projected_jacobian(&cb, nu, &a0)?)?;
                    s.note("rho", rho);
                    rho
                }
            };
            MemoryLength::scalar(w, rho)?
        }
    };
    let offline = build_eapg_offline(&cb, nu)?;
    let e = offline.with_memory(&mem)?;
    save_eapg(&e, &CoefficientMeta::new(cb.grid(), nu), &out)?;
    s.write_echo("build-eapg", &out)
}

pub fn optimize_memory(a: OptimizeArgs, mut s: Settings) -> CliResult {
    let basis: PathBuf = s.required("basis", a.basis)?;
    let snapshots: PathBuf = s.required("snapshots", a.snapshots)?;
    let kind: String = s.value("kind", a.kind, "scalar".to_string())?;
    let n_periods: f64 = s.value("n_periods", a.n_periods, DEFAULT_N_PERIODS)?;
    let period: Option<f64> = s.optional("period", a.period)?;
    let w_max: f64 = s.value("w_max", a.w_max, DEFAULT_W_MAX)?;
    let out: PathBuf = s.required("out", a.out)?;
    if kind != "scalar" && kind != "matrix" {
        return Err(CliError::validation(format!("kind must be `scalar` or `matrix`, got `{kind}`")));
    }

    let cb = load_basis(&basis)?;
    let set = load_snapshots(&snapshots)?;
    let nu = viscosity(&mut s, a.nu, set.viscosity())?;
    let reference = project_snapshots(&cb, &set)?;
    let offline = build_eapg_offline(&cb, nu)?;
    let rho = spectral_radius(&projected_jacobian(&cb, nu, &reference.column(0))?)?;
    s.note("rho", rho);
    let problem = MemoryProblem::new(&offline, rho, &reference, n_periods, period, Scheme::default())?;
    let scalar_opts = ScalarOptions {
        w_max,
        ..Default::default()
    };

    let report = if kind == "scalar" {
        optimize_scalar(&problem, &scalar_opts)?
    } else {
        let warm = match s.optional("warm_start", a.warm_start)? {
            Some(w) => w,
            None => {
                let rep = optimize_scalar(&problem, &scalar_opts)?;
                let MemoryWeight::Scalar(w) = rep.weight else {
                    unreachable!("scalar search returns a scalar weight")
                };
                s.note("warm_start", w);
                w
            }
        };
        let opts = MatrixOptions {
            warm_start: Some(warm),
            ..Default::default()
        };
        optimize_matrix(&problem, &opts)?
    };

    report.write(&out)?;
    let mut w = KeyValueWriter::new();
    w.comment("optimized memory length");
    if report.objective.is_finite() {
        write_memory(&out, &report.memory_length(rho)?, &mut w)?;
        w.write(out.join(MEMORY_FILE))?;
    }
    s.write_echo("optimize-memory", &out)?;
    if !report.objective.is_finite() {
        return Err(CliError::numerical("every candidate memory length blew up"));
    }
    if !report.converged {
        return Err(CliError::numerical(format!(
            "optimizer stopped before converging (objective {:e})",
            report.objective
        )));
    }
    Ok(())
}

fn parse_scheme(s: &mut Settings, a: &SimulateArgs) -> Result<Scheme, CliError> {
    let name: String = s.value("scheme", a.scheme.clone(), "dopri".to_string())?;
    Ok(match name.as_str() {
        "dopri" => Scheme::DormandPrince {
            rtol: s.value("rtol", a.rtol, DEFAULT_RTOL)?,
            atol: s.value("atol", a.atol, DEFAULT_ATOL)?,
        },
        "dopri-fixed" => Scheme::DormandPrinceFixed {
            h: s.required("dt", a.dt)?,
        },
        "euler" => Scheme::ExplicitEuler {
            dt: s.required("dt", a.dt)?,
        },
        other => {
            return Err(CliError::validation(format!(
                "scheme must be `dopri`, `dopri-fixed` or `euler`, got `{other}`"
            )))
        }
    })
}

/// Compares the stored right-hand side with the full-space closure on `k`
/// random trajectory states; returns the largest relative difference.
fn oracle_check(
    set: &CoefficientSet,
    meta: &CoefficientMeta,
    cb: &CoarseBasis,
    series: &ModalSeries,
    k: usize,
    seed: u64,
    out: &Path,
) -> Result<f64, CliError> {
    if cb.grid().fingerprint() != meta.grid_fingerprint {
        return Err(CliError::validation("basis grid does not match the coefficients"));
    }
    if cb.rank() != set.rank() {
        return Err(CliError::validation(format!(
            "basis has {} modes but the coefficients have rank {}",
            cb.rank(),
            set.rank()
        )));
    }
    let mem = match set {
        CoefficientSet::Grom(_) => MemoryLength::from_tau(0.0)?,
        CoefficientSet::Eapg(e) => e.memory.clone(),
    };
    let mut g = rng(seed);
    let mut csv = String::from("sample,t,relative_difference\n");
    let mut worst: f64 = 0.0;
    for _ in 0..k {
        let m = g.random_range(0..series.len());
        let state = series.column(m);
        let full = apg_rhs_fullspace(cb, meta.viscosity, &mem, &state)?;
        let rom = set.rhs(&state);
        let diff = (&rom - &full).norm() / full.norm().max(1e-300);
        worst = worst.max(diff);
        let _ = writeln!(csv, "{m},{:?},{diff:?}", series.times()[m]);
    }
    write_text(&out.join("oracle.csv"), &csv)?;
    Ok(worst)
}

pub fn simulate(a: SimulateArgs, mut s: Settings) -> CliResult {
    let coefficients: PathBuf = s.required("coefficients", a.coefficients.clone())?;
    let out: PathBuf = s.required("out", a.out.clone())?;
    let (set, meta) = load_coefficients(&coefficients)?;
    let r = set.rank();
    let scheme = parse_scheme(&mut s, &a)?;
    let reference: Option<PathBuf> = s.optional("reference", a.reference.clone())?;
    let reference = reference.map(load_coefficient_series).transpose()?;

    let times = match &reference {
        Some(series) => series.times().to_vec(),
        None => {
            let t0: f64 = s.value("t0", a.t0, 0.0)?;
            let t1: f64 = s.required("t1", a.t1)?;
            let samples: usize = s.value("samples", a.samples, 100)?;
            IntegratorConfig::uniform(scheme, t0, t1, samples).output_times
        }
    };
    let a0_text: Option<String> = s.optional("a0", a.a0.clone())?;
    let a0 = match (a0_text, &reference) {
        (Some(text), _) => DVector::from_vec(parse_list::<f64>("a0", &text)?),
        (None, Some(series)) if !series.is_empty() => series.column(0),
        _ => {
            log::warn!("no initial state given; starting from zero");
            DVector::zeros(r)
        }
    };
    if a0.len() != r {
        return Err(CliError::validation(format!("a0 has {} entries, the model has rank {r}", a0.len())));
    }

    let cfg = IntegratorConfig::new(scheme, times);
    let traj = integrate_collect(&set, &a0, &cfg)?;
    create_dir(&out)?;
    save_coefficient_series(&traj.series, out.join("trajectory.csv"))?;
    let mut info = format!("kind = {}\nr = {r}\n", set.kind());
    info.push_str(&traj.report.to_text());
    write_text(&out.join("integration.txt"), &info)?;

    let oracle: usize = s.value("oracle", a.oracle, 0)?;
    let mut oracle_failure = None;
    if oracle > 0 {
        let basis: PathBuf = s.required("basis", a.basis.clone())?;
        let seed: u64 = s.value("seed", a.seed, 0)?;
        let cb = load_basis(&basis)?;
        let worst = oracle_check(&set, &meta, &cb, &traj.series, oracle, seed, &out)?;
        println!("oracle: largest relative difference {worst:e}");
        if !(worst <= ORACLE_TOLERANCE) {
            oracle_failure = Some(worst);
        }
    }
    s.write_echo("simulate", &out)?;
    if let Some(e) = traj.report.failure {
        return Err(CliError::numerical(format!("integration failed: {e}")));
    }
    if let Some(worst) = oracle_failure {
        return Err(CliError::numerical(format!(
            "coefficients disagree with the full-space closure (relative difference {worst:e})"
        )));
    }
    Ok(())
}

pub fn errors(a: ErrorsArgs, mut s: Settings) -> CliResult {
    let snapshots: PathBuf = s.required("snapshots", a.snapshots)?;
    let basis: PathBuf = s.required("basis", a.basis)?;
    let rom_path: PathBuf = s.required("rom", a.rom)?;
    let label: String = s.value("label", a.label, "rom".to_string())?;
    let out: PathBuf = s.required("out", a.out)?;
    let set = load_snapshots(&snapshots)?;
    let cb = load_basis(&basis)?;
    let rom = load_coefficient_series(&rom_path)?;
    let u_ref = match s.optional("u_ref", a.u_ref)? {
        Some(u) => u,
        None => {
            let u = set.reference_velocity();
            s.note("u_ref", u);
            u
        }
    };
    let pod = project_snapshots(&cb, &set)?;
    let e_rec = e_rec_rom(&set, &cb, &rom, u_ref)?;
    let report = ErrorReport::new(cb.singular_values().as_slice(), cb.rank(), &pod, &rom, Some(e_rec))?;
    create_dir(&out)?;
    let csv = format!("{}\n{}\n", ErrorReport::CSV_HEADER, report.csv_row(&label));
    write_text(&out.join("errors.csv"), &csv)?;
    print!("{csv}");
    s.write_echo("errors", &out)
}

fn table_text(t: &FlopTable) -> String {
    let mut s = format!("{} (total {})\n", t.phase, group_digits(t.total));
    for (name, v) in &t.rows {
        let _ = writeln!(s, "  {name:<40} {v:>24}");
    }
    s
}

fn table_csv(tables: &[FlopTable]) -> String {
    let mut s = String::from("phase,term,flops\n");
    for t in tables {
        for (name, v) in &t.rows {
            let _ = writeln!(s, "{},\"{}\",{v}", t.phase, name.replace('"', "'"));
        }
    }
    s
}

pub fn flops(a: FlopsArgs, mut s: Settings) -> CliResult {
    let p = FlopParams {
        n: s.required("N", a.n)?,
        r: s.required("r", a.r)?,
        d: s.required("d", a.d)?,
        omega1: s.value("omega1", a.omega1, DEFAULT_OMEGA1)?,
        omega2: s.value("omega2", a.omega2, DEFAULT_OMEGA2)?,
    };
    let out: Option<PathBuf> = s.optional("out", a.out)?;
    let summary = FlopSummary::compute(&p)?;
    let tables = [
        grom_offline_table(&p)?,
        eapg_offline_table(&p)?,
        grom_online_table(p.r)?,
        eapg_online_table(p.r)?,
        apg_online_table(&p)?,
    ];
    print!("{}", summary.to_text());
    for t in &tables {
        println!();
        print!("{}", table_text(t));
    }
    if let Some(out) = out {
        create_dir(&out)?;
        write_text(&out.join("flops.csv"), &summary.to_csv())?;
        write_text(&out.join("flop_tables.csv"), &table_csv(&tables))?;
        s.write_echo("flops", &out)?;
    }
    Ok(())
}

pub fn synth(a: SynthArgs, mut s: Settings) -> CliResult {
    if let Some(recipe) = &a.recipe {
        s.push_front(recipe)?;
        s.note("recipe", recipe.clone());
    }
    let d = SheddingRecipe::default();
    let shape: String = s.value("shape", a.shape, join_list(&d.shape))?;
    let lengths: String = s.value("lengths", a.lengths, join_list(&d.lengths))?;
    let recipe = SheddingRecipe {
        shape: parse_list("shape", &shape)?,
        lengths: parse_list("lengths", &lengths)?,
        modes: s.value("modes", a.modes, d.modes)?,
        snapshots: s.value("snapshots", a.snapshots, d.snapshots)?,
        periods: s.value("periods", a.periods, d.periods)?,
        amplitude: s.value("amplitude", a.amplitude, d.amplitude)?,
        viscosity: s.value("viscosity", a.viscosity, d.viscosity)?,
        seed: s.value("seed", a.seed, d.seed)?,
    };
    let out: PathBuf = s.required("out", a.out)?;
    let ens = shedding_ensemble(&recipe)?;
    let set = ens.snapshots.clone().with_viscosity(recipe.viscosity);
    let manifest = save_snapshots(&set, &out)?;
    save_coefficient_series(&ens.coefficients, out.join("truth.csv"))?;
    println!("{}", manifest.display());
    s.write_echo("synth", &out)
}
