//! Binary persistence of projected coefficient tensors.
//!
//! Each tensor is one little-endian `f64` file in column-major order. A
//! `coefficients.txt` manifest records the kind, rank, viscosity, spatial
//! dimension, grid fingerprint and, for eAPG sets, the memory length.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::eapg::EapgCoefficients;
use crate::error::{check_len, Error, Result};
use crate::galerkin::GromCoefficients;
use crate::grid::Grid;
use crate::kv::{KeyValueFile, KeyValueWriter};
use crate::memory::{MemoryLength, MemoryWeight};
use crate::online::ReducedSystem;
use crate::snapshot::{fmt_f64, read_f64_file, write_f64_file};

pub const COEFFICIENT_MANIFEST: &str = "coefficients.txt";

/// Provenance stored next to the tensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientMeta {
    pub viscosity: f64,
    pub dim: usize,
    pub grid_fingerprint: u64,
}

impl CoefficientMeta {
    pub fn new(grid: &Grid, viscosity: f64) -> Self {
        CoefficientMeta {
            viscosity,
            dim: grid.dim(),
            grid_fingerprint: grid.fingerprint(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientSet {
    Grom(GromCoefficients),
    Eapg(EapgCoefficients),
}

impl CoefficientSet {
    pub fn kind(&self) -> &'static str {
        match self {
            CoefficientSet::Grom(_) => "grom",
            CoefficientSet::Eapg(_) => "eapg",
        }
    }
}

impl ReducedSystem for CoefficientSet {
    fn rank(&self) -> usize {
        match self {
            CoefficientSet::Grom(c) => c.rank(),
            CoefficientSet::Eapg(c) => c.rank(),
        }
    }

    fn rhs(&self, a: &DVector<f64>) -> DVector<f64> {
        match self {
            CoefficientSet::Grom(c) => c.rhs(a),
            CoefficientSet::Eapg(c) => c.rhs(a),
        }
    }
}

fn write_matrix(dir: &Path, name: &str, m: &DMatrix<f64>, w: &mut KeyValueWriter) -> Result<()> {
    let file = format!("{name}.bin");
    write_f64_file(dir.join(&file), m.as_slice())?;
    w.entry(name, file);
    Ok(())
}

fn read_matrix(dir: &Path, kv: &KeyValueFile, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let file: String = kv.require(name)?;
    let v = read_f64_file(dir.join(file))?;
    check_len("tensor file length", rows * cols, v.len())?;
    Ok(DMatrix::from_vec(rows, cols, v))
}

fn write_common(w: &mut KeyValueWriter, kind: &str, r: usize, meta: &CoefficientMeta) {
    w.entry("kind", kind);
    w.entry("r", r);
    w.entry("nu", fmt_f64(meta.viscosity));
    w.entry("d", meta.dim);
    w.entry("grid_fingerprint", format!("{:016x}", meta.grid_fingerprint));
}

fn finish(dir: &Path, w: &KeyValueWriter) -> Result<PathBuf> {
    let path = dir.join(COEFFICIENT_MANIFEST);
    w.write(&path)?;
    Ok(path)
}

fn create(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn save_grom(c: &GromCoefficients, meta: &CoefficientMeta, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    create(dir)?;
    let mut w = KeyValueWriter::new();
    w.comment("G-ROM coefficients");
    write_common(&mut w, "grom", c.rank(), meta);
    write_matrix(dir, "q", &c.q, &mut w)?;
    write_matrix(dir, "l", &c.l, &mut w)?;
    write_matrix(dir, "c", &DMatrix::from_column_slice(c.rank(), 1, c.c.as_slice()), &mut w)?;
    finish(dir, &w)
}

pub fn save_eapg(c: &EapgCoefficients, meta: &CoefficientMeta, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    create(dir)?;
    let mut w = KeyValueWriter::new();
    w.comment("eAPG coefficients");
    write_common(&mut w, "eapg", c.rank(), meta);
    write_matrix(dir, "k", &c.k, &mut w)?;
    write_matrix(dir, "q", &c.q, &mut w)?;
    write_matrix(dir, "l", &c.l, &mut w)?;
    write_matrix(dir, "c", &DMatrix::from_column_slice(c.rank(), 1, c.c.as_slice()), &mut w)?;
    write_memory(dir, &c.memory, &mut w)?;
    finish(dir, &w)
}

pub fn save_coefficients(set: &CoefficientSet, meta: &CoefficientMeta, dir: impl AsRef<Path>) -> Result<PathBuf> {
    match set {
        CoefficientSet::Grom(c) => save_grom(c, meta, dir),
        CoefficientSet::Eapg(c) => save_eapg(c, meta, dir),
    }
}

/// Writes `memory_kind`, `memory_rho` and either `memory_w` or a
/// `memory_w` matrix file.
pub fn write_memory(dir: &Path, mem: &MemoryLength, w: &mut KeyValueWriter) -> Result<()> {
    w.entry("memory_rho", fmt_f64(mem.spectral_radius()));
    match mem.weight() {
        MemoryWeight::Scalar(x) => {
            w.entry("memory_kind", "scalar");
            w.entry("memory_w", fmt_f64(*x));
        }
        MemoryWeight::Matrix(m) => {
            w.entry("memory_kind", "matrix");
            write_matrix(dir, "memory_w", m, w)?;
        }
    }
    Ok(())
}

pub fn read_memory(dir: &Path, kv: &KeyValueFile, r: usize) -> Result<MemoryLength> {
    let rho: f64 = kv.require("memory_rho")?;
    let kind: String = kv.require("memory_kind")?;
    match kind.as_str() {
        "scalar" => MemoryLength::scalar(kv.require("memory_w")?, rho),
        "matrix" => MemoryLength::matrix(read_matrix(dir, kv, "memory_w", r, r)?, rho),
        other => Err(Error::InvalidArgument(format!(
            "unknown memory kind `{other}`"
        ))),
    }
}

/// Reads a set written by [`save_grom`] or [`save_eapg`]; `path` may be the
/// directory or its manifest.
pub fn load_coefficients(path: impl AsRef<Path>) -> Result<(CoefficientSet, CoefficientMeta)> {
    let path = path.as_ref();
    let manifest = if path.is_dir() {
        path.join(COEFFICIENT_MANIFEST)
    } else {
        path.to_path_buf()
    };
    let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let kv = KeyValueFile::read(&manifest)?;
    let r: usize = kv.require("r")?;
    let fp: String = kv.require("grid_fingerprint")?;
    let meta = CoefficientMeta {
        viscosity: kv.require("nu")?,
        dim: kv.require("d")?,
        grid_fingerprint: u64::from_str_radix(&fp, 16)
            .map_err(|e| Error::InvalidArgument(format!("bad grid fingerprint `{fp}`: {e}")))?,
    };
    let q = read_matrix(&dir, &kv, "q", r, r * r)?;
    let l = read_matrix(&dir, &kv, "l", r, r)?;
    let c = DVector::from_column_slice(read_matrix(&dir, &kv, "c", r, 1)?.as_slice());
    let kind: String = kv.require("kind")?;
    let set = match kind.as_str() {
        "grom" => CoefficientSet::Grom(GromCoefficients::new(q, l, c, meta.viscosity)?),
        "eapg" => {
            let k = read_matrix(&dir, &kv, "k", r, r * r * r)?;
            let memory = read_memory(&dir, &kv, r)?;
            CoefficientSet::Eapg(EapgCoefficients::new(k, q, l, c, memory)?)
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown coefficient kind `{other}`"
            )))
        }
    };
    Ok((set, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{random_spd, rng};
    use rand::RngExt;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut g = rng(seed);
        DMatrix::from_fn(rows, cols, |_, _| g.random_range(-1.0..1.0))
    }

    fn meta() -> CoefficientMeta {
        CoefficientMeta::new(&Grid::new_2d(5, 4, 0.1, 0.2).unwrap(), 0.01)
    }

    #[test]
    fn grom_round_trip_is_exact() {
        let r = 3;
        let c = GromCoefficients::new(
            random(r, r * r, 1),
            random(r, r, 2),
            DVector::from_column_slice(random(r, 1, 3).as_slice()),
            0.01,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_grom(&c, &meta(), dir.path()).unwrap();
        let (back, m) = load_coefficients(dir.path()).unwrap();
        assert_eq!(back, CoefficientSet::Grom(c));
        assert_eq!(m, meta());
    }

    #[test]
    fn eapg_round_trip_keeps_memory_metadata() {
        let r = 2;
        for mem in [
            MemoryLength::scalar(0.37, 2.5).unwrap(),
            MemoryLength::matrix(random_spd(r, 0.2, 1.5, &mut rng(4)), 2.5).unwrap(),
        ] {
            let c = EapgCoefficients::new(
                random(r, r * r * r, 5),
                random(r, r * r, 6),
                random(r, r, 7),
                DVector::from_column_slice(random(r, 1, 8).as_slice()),
                mem,
            )
            .unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = save_eapg(&c, &meta(), dir.path()).unwrap();
            let (back, _) = load_coefficients(&path).unwrap();
            assert_eq!(back, CoefficientSet::Eapg(c));
        }
    }

    #[test]
    fn truncated_tensor_file_is_rejected() {
        let c = GromCoefficients::zeros(2);
        let dir = tempfile::tempdir().unwrap();
        save_grom(&c, &meta(), dir.path()).unwrap();
        write_f64_file(dir.path().join("q.bin"), &[0.0; 7]).unwrap();
        assert!(matches!(
            load_coefficients(dir.path()),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
