use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("sample times must be strictly increasing (violated at index {index})")]
    NonMonotoneTime { index: usize },
    #[error("snapshot ensemble has zero fluctuation energy")]
    ZeroEnergy,
    #[error("singular value decomposition did not converge")]
    SvdFailure,
    #[error("eigenvalue computation did not converge")]
    EigenFailure,
    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("grid has {n} degrees of freedom, above the full-space cap of {cap}")]
    GridCapExceeded { n: usize, cap: usize },
    #[error("step size underflow at t = {t:e}")]
    StepSizeUnderflow { t: f64 },
    #[error("solution blew up at t = {t:e} (|a| = {norm:e})")]
    BlowUp { t: f64, norm: f64 },
    #[error("maximum number of steps ({max_steps}) reached at t = {t:e}")]
    MaxSteps { t: f64, max_steps: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::SvdFailure
            | Error::EigenFailure
            | Error::StepSizeUnderflow { .. }
            | Error::BlowUp { .. }
            | Error::MaxSteps { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
