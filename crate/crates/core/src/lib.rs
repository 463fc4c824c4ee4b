//! Galerkin and efficient adjoint Petrov-Galerkin reduced order models for
//! incompressible-flow velocity snapshots.
//!
//! The offline phase takes snapshots on a uniform Cartesian grid, extracts a
//! POD basis and assembles polynomial coefficient tensors. The online phase
//! integrates the resulting low-dimensional ODEs.

pub mod apg;
pub mod diagnostics;
pub mod eapg;
pub mod error;
pub mod galerkin;
pub mod grid;
pub mod kv;
pub mod memory;
pub mod online;
pub mod pod;
pub mod series;
pub mod snapshot;
pub mod synth;
pub mod tensor_io;

pub use error::{Error, ErrorKind, Result};
pub use grid::{Grid, VelocityField};
pub use series::ModalSeries;
