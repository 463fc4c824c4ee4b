//! `romforge`: batch driver for the reduced-order-model pipeline.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 I/O.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use romforge::ErrorKind;

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError {
            code: 4,
            message: format!("{}: {e}", path.display()),
        }
    }

    pub fn exit_code(&self) -> u8 {
        self.code
    }
}

impl From<romforge::Error> for CliError {
    fn from(e: romforge::Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Validation => 2,
            ErrorKind::Numerical => 3,
            ErrorKind::Io => 4,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "romforge", version, about = "Galerkin and eAPG reduced order models from velocity snapshots")]
struct Cli {
    /// Settings file with `key = value` lines; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker thread cap (falls back to ROMFORGE_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// POD of a snapshot set: basis, singular values, truncation errors.
    Pod(PodArgs),
    /// Projected G-ROM coefficients from a basis.
    BuildGrom(BuildGromArgs),
    /// Projected eAPG-ROM coefficients from a basis and a memory length.
    BuildEapg(BuildEapgArgs),
    /// Tunes a scalar or matrix memory length against snapshot data.
    OptimizeMemory(OptimizeArgs),
    /// Integrates stored coefficients.
    Simulate(SimulateArgs),
    /// ROM, total and reconstruction errors of a coefficient series.
    Errors(ErrorsArgs),
    /// Closed-form flop counts of the offline and online phases.
    Flops(FlopsArgs),
    /// Writes a manufactured limit-cycle snapshot set.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct PodArgs {
    /// Snapshot manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Number of retained modes.
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BuildGromArgs {
    /// Basis directory written by `pod`.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Kinematic viscosity.
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BuildEapgArgs {
    #[arg(long)]
    pub basis: Option<PathBuf>,
    #[arg(long)]
    pub nu: Option<f64>,
    /// Scalar weight `w` (memory length `w / rho`).
    #[arg(long, conflicts_with = "memory")]
    pub w: Option<f64>,
    /// Memory file written by `optimize-memory`.
    #[arg(long)]
    pub memory: Option<PathBuf>,
    /// Spectral radius; computed from the projected Jacobian when omitted.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Snapshot manifest whose first sample sets the state for `rho`
    /// (the mean flow is used otherwise).
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Snapshot manifest providing the reference coefficients.
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
    /// `scalar` or `matrix`.
    #[arg(long)]
    pub kind: Option<String>,
    /// Length of the fitting window in periods.
    #[arg(long)]
    pub n_periods: Option<f64>,
    /// Period of the reference; estimated from the data when omitted.
    #[arg(long)]
    pub period: Option<f64>,
    /// Viscosity; defaults to the value in the snapshot manifest.
    #[arg(long)]
    pub nu: Option<f64>,
    /// Upper end of the scalar scan.
    #[arg(long)]
    pub w_max: Option<f64>,
    /// Scalar weight used to warm-start the matrix search.
    #[arg(long)]
    pub warm_start: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Coefficient directory written by `build-grom` or `build-eapg`.
    #[arg(long)]
    pub coefficients: Option<PathBuf>,
    /// Initial coefficients as a comma-separated list.
    #[arg(long)]
    pub a0: Option<String>,
    /// Coefficient series CSV giving the output times and, unless `--a0`
    /// is set, the initial state.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// `dopri`, `dopri-fixed` or `euler`.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Step size of the fixed-step schemes.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub rtol: Option<f64>,
    #[arg(long)]
    pub atol: Option<f64>,
    #[arg(long)]
    pub t0: Option<f64>,
    /// End of the horizon; output times are uniform on `[t0, t1]`.
    #[arg(long)]
    pub t1: Option<f64>,
    /// Number of output intervals on `[t0, t1]`.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Cross-check this many trajectory states against the full-space
    /// closure (needs `--basis`).
    #[arg(long)]
    pub oracle: Option<usize>,
    #[arg(long)]
    pub basis: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ErrorsArgs {
    /// Reference snapshot manifest.
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// ROM coefficient series CSV sampled at the snapshot times.
    #[arg(long)]
    pub rom: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<String>,
    /// Reference velocity; defaults to the manifest value or the mean-flow
    /// RMS speed.
    #[arg(long)]
    pub u_ref: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FlopsArgs {
    /// Number of degrees of freedom.
    #[arg(long = "N", visible_alias = "n")]
    pub n: Option<u64>,
    #[arg(long)]
    pub r: Option<u64>,
    #[arg(long)]
    pub d: Option<u64>,
    /// Flops per point of the first-derivative stencil.
    #[arg(long)]
    pub omega1: Option<u64>,
    /// Flops per point of the second-derivative stencil.
    #[arg(long)]
    pub omega2: Option<u64>,
    /// Also write CSV tables here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Recipe file with `key = value` lines; flags take precedence.
    #[arg(long)]
    pub recipe: Option<PathBuf>,
    /// Grid points per axis, e.g. `24,16`.
    #[arg(long)]
    pub shape: Option<String>,
    /// Domain length per axis, e.g. `3,2`.
    #[arg(long)]
    pub lengths: Option<String>,
    #[arg(long)]
    pub modes: Option<usize>,
    #[arg(long)]
    pub snapshots: Option<usize>,
    #[arg(long)]
    pub periods: Option<f64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub viscosity: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn configure_threads(flag: Option<usize>) -> Result<(), CliError> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var("ROMFORGE_THREADS") {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|e| {
                CliError::validation(format!("ROMFORGE_THREADS must be a positive integer: {e}"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::validation("thread count must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::validation(format!("cannot configure threads: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads(cli.threads)?;
    let mut settings = config::Settings::new(cli.config.as_deref())?;
    settings.note("threads", rayon::current_num_threads());
    match cli.command {
        Command::Pod(a) => commands::pod(a, settings),
        Command::BuildGrom(a) => commands::build_grom(a, settings),
        Command::BuildEapg(a) => commands::build_eapg(a, settings),
        Command::OptimizeMemory(a) => commands::optimize_memory(a, settings),
        Command::Simulate(a) => commands::simulate(a, settings),
        Command::Errors(a) => commands::errors(a, settings),
        Command::Flops(a) => commands::flops(a, settings),
        Command::Synth(a) => commands::synth(a, settings),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit_code())
        }
    }
}
