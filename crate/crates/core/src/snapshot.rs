//! Snapshot ensembles on disk and in memory.
//!
//! A snapshot manifest is a `key = value` file:
//!
//! ```text
//! d = 3
//! n_x = 4
//! n_y = 4
//! n_z = 4
//! dx = 0.01
//! dy = 0.01
//! dz = 0.01
//! nu = 1e-5          # kinematic viscosity, optional
//! u_ref = 0.27       # reference velocity, optional
//! snapshot = 0.0    u_0000.bin
//! snapshot = 0.001  u_0001.bin
//! ```
//!
//! Each snapshot file holds `N = d * N_grid` little-endian IEEE-754 doubles in
//! point-major order. Relative file names resolve against the manifest's
//! directory.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::grid::{Grid, VelocityField};
use crate::kv::{KeyValueFile, KeyValueWriter};
use crate::series::ModalSeries;

/// Sampled velocity snapshots `u(t_m)`, one column per sample time.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    grid: Grid,
    times: Vec<f64>,
    snapshots: DMatrix<f64>,
    viscosity: Option<f64>,
    u_ref: Option<f64>,
}

impl SnapshotSet {
    pub fn new(grid: Grid, times: Vec<f64>, snapshots: DMatrix<f64>) -> Result<Self> {
        check_len("snapshot rows", grid.n_dofs(), snapshots.nrows())?;
        check_len("snapshot count", times.len(), snapshots.ncols())?;
        if times.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 snapshots, got {}",
                times.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("snapshot times".into()));
        }
        if let Some(index) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::NonMonotoneTime { index: index + 1 });
        }
        if snapshots.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("snapshot data".into()));
        }
        Ok(SnapshotSet {
            grid,
            times,
            snapshots,
            viscosity: None,
            u_ref: None,
        })
    }

    pub fn with_viscosity(mut self, nu: f64) -> Self {
        self.viscosity = Some(nu);
        self
    }

    pub fn with_reference_velocity(mut self, u_ref: f64) -> Self {
        self.u_ref = Some(u_ref);
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.snapshots
    }

    pub fn snapshot(&self, m: usize) -> VelocityField {
        VelocityField::new(self.grid, self.snapshots.column(m).iter().copied().collect())
            .expect("validated on construction")
    }

    pub fn viscosity(&self) -> Option<f64> {
        self.viscosity
    }

    pub fn declared_reference_velocity(&self) -> Option<f64> {
        self.u_ref
    }

    /// The declared `u_ref`, or else the RMS point speed of the time mean.
    pub fn reference_velocity(&self) -> f64 {
        if let Some(u) = self.u_ref {
            return u;
        }
        let mean = self.snapshots.column_mean();
        (mean.norm_squared() / self.grid.n_points() as f64).sqrt()
    }
}

/// Time mean `u'` and fluctuations `U*` with `u(t_m) = u' + U*[:, m]`.
#[derive(Debug, Clone)]
pub struct FluctuationSet {
    grid: Grid,
    mean: VelocityField,
    fluctuations: DMatrix<f64>,
    times: Vec<f64>,
}

impl FluctuationSet {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mean(&self) -> &VelocityField {
        &self.mean
    }

    pub fn fluctuations(&self) -> &DMatrix<f64> {
        &self.fluctuations
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `u' + U*[:, m]`
    pub fn reassemble(&self, m: usize) -> VelocityField {
        let mut u = self.mean.clone();
        for (a, b) in u.values_mut().iter_mut().zip(self.fluctuations.column(m).iter()) {
            *a += b;
        }
        u
    }
}

pub fn split_mean(s: &SnapshotSet) -> FluctuationSet {
    let m = s.len();
    let n = s.grid.n_dofs();
    let mut mean = DVector::<f64>::zeros(n);
    for col in s.snapshots.column_iter() {
        mean += col;
    }
    mean /= m as f64;
    let mut fluct = s.snapshots.clone();
    for mut col in fluct.column_iter_mut() {
        col -= &mean;
    }
    FluctuationSet {
        grid: s.grid,
        mean: VelocityField::new(s.grid, mean.iter().copied().collect())
            .expect("mean of finite data"),
        fluctuations: fluct,
        times: s.times.clone(),
    }
}

/// Grid geometry from the `d`, `n_*`, `d*` manifest keys.
pub fn grid_from_manifest(kv: &KeyValueFile) -> Result<Grid> {
    let d: usize = kv.require("d")?;
    let axes = ["x", "y", "z"];
    if !(d == 2 || d == 3) {
        return Err(Error::InvalidGrid(format!("d must be 2 or 3, got {d}")));
    }
    let mut shape = Vec::with_capacity(d);
    let mut spacing = Vec::with_capacity(d);
    for a in &axes[..d] {
        shape.push(kv.require::<usize>(&format!("n_{a}"))?);
        spacing.push(kv.require::<f64>(&format!("d{a}"))?);
    }
    Grid::new(&shape, &spacing)
}

pub fn write_grid_entries(w: &mut KeyValueWriter, grid: &Grid) {
    let axes = ["x", "y", "z"];
    w.entry("d", grid.dim());
    for (a, n) in axes.iter().zip(grid.shape()) {
        w.entry(&format!("n_{a}"), n);
    }
    for (a, h) in axes.iter().zip(grid.spacing()) {
        w.entry(&format!("d{a}"), fmt_f64(*h));
    }
}

pub fn load_snapshots(manifest_path: impl AsRef<Path>) -> Result<SnapshotSet> {
    let manifest_path = manifest_path.as_ref();
    let kv = KeyValueFile::read(manifest_path)?;
    let grid = grid_from_manifest(&kv)?;
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut entries: Vec<(f64, PathBuf)> = Vec::new();
    for (value, line) in kv.get_all("snapshot") {
        let mut parts = value.split_whitespace();
        let (Some(t), Some(file), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(
                manifest_path,
                line,
                "expected `snapshot = <time> <file>`",
            ));
        };
        let t: f64 = t
            .parse()
            .map_err(|e| Error::parse(manifest_path, line, format!("bad time: {e}")))?;
        entries.push((t, base.join(file)));
    }
    let times: Vec<f64> = entries.iter().map(|(t, _)| *t).collect();
    if let Some(index) = times.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::NonMonotoneTime { index: index + 1 });
    }

    let n = grid.n_dofs();
    let columns: Vec<Vec<f64>> = entries
        .par_iter()
        .map(|(_, path)| {
            let v = read_f64_file(path)?;
            check_len("snapshot file length", n, v.len())?;
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let mut data = DMatrix::zeros(n, columns.len());
    for (m, col) in columns.iter().enumerate() {
        data.column_mut(m).copy_from_slice(col);
    }

    let mut set = SnapshotSet::new(grid, times, data)?;
    if let Some(nu) = kv.get::<f64>("nu")? {
        set = set.with_viscosity(nu);
    }
    if let Some(u) = kv.get::<f64>("u_ref")? {
        set = set.with_reference_velocity(u);
    }
    Ok(set)
}

/// Writes one binary per snapshot plus `manifest.txt` into `dir`; returns
/// the manifest path.
pub fn save_snapshots(set: &SnapshotSet, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut w = KeyValueWriter::new();
    write_grid_entries(&mut w, &set.grid);
    if let Some(nu) = set.viscosity {
        w.entry("nu", fmt_f64(nu));
    }
    if let Some(u) = set.u_ref {
        w.entry("u_ref", fmt_f64(u));
    }
    for (m, t) in set.times.iter().enumerate() {
        let name = format!("u_{m:05}.bin");
        write_f64_file(dir.join(&name), set.snapshots.column(m).as_slice())?;
        w.entry("snapshot", format!("{} {name}", fmt_f64(*t)));
    }
    let manifest = dir.join("manifest.txt");
    w.write(&manifest)?;
    Ok(manifest)
}

pub fn save_field(field: &VelocityField, path: impl AsRef<Path>) -> Result<()> {
    write_f64_file(path, field.values())
}

pub fn load_field(grid: Grid, path: impl AsRef<Path>) -> Result<VelocityField> {
    let v = read_f64_file(path)?;
    VelocityField::new(grid, v)
}

/// Text export with one row per grid point: coordinates then components.
pub fn write_field_csv(field: &VelocityField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let grid = field.grid();
    let d = grid.dim();
    let axes = ["x", "y", "z"];
    let comps = ["u", "v", "w"];
    let mut out = BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let header: Vec<&str> = axes[..d].iter().chain(&comps[..d]).copied().collect();
    let io = |e| Error::io(path, e);
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for p in 0..grid.n_points() {
        let x = grid.coordinates(p);
        let row: Vec<String> = x[..d]
            .iter()
            .chain(field.at(p))
            .map(|v| fmt_f64(*v))
            .collect();
        writeln!(out, "{}", row.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// CSV with a `t,a1,..,ar` header and one row per sample.
pub fn save_coefficient_series(series: &ModalSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let mut header = vec!["t".to_string()];
    header.extend((1..=series.rank()).map(|k| format!("a{k}")));
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for (m, t) in series.times().iter().enumerate() {
        let mut row = vec![fmt_f64(*t)];
        row.extend(series.coeffs().column(m).iter().map(|v| fmt_f64(*v)));
        writeln!(out, "{}", row.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn load_coefficient_series(path: impl AsRef<Path>) -> Result<ModalSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(path, 1, "missing header")),
    };
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.first() != Some(&"t") {
        return Err(Error::parse(path, 1, "header must start with `t`"));
    }
    let r = cols.len() - 1;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (no, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .trim()
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, no + 2, e.to_string()))?;
        if fields.len() != r + 1 {
            return Err(Error::parse(
                path,
                no + 2,
                format!("expected {} columns, got {}", r + 1, fields.len()),
            ));
        }
        times.push(fields[0]);
        values.extend_from_slice(&fields[1..]);
    }
    let m = times.len();
    ModalSeries::new(times, DMatrix::from_column_slice(r, m, &values))
}

pub fn write_f64_file(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f64_file(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::parse(
            path,
            0,
            format!("{} bytes is not a whole number of f64 values", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::new_3d(4, 4, 4, 0.1, 0.2, 0.3).unwrap()
    }

    fn field(seed: f64) -> Vec<f64> {
        (0..grid().n_dofs())
            .map(|i| ((i as f64 + 1.0) * seed).sin())
            .collect()
    }

    #[test]
    fn identical_snapshots_have_zero_fluctuation() {
        let g = grid();
        let f = field(0.3);
        let mut data = DMatrix::zeros(g.n_dofs(), 2);
        data.column_mut(0).copy_from_slice(&f);
        data.column_mut(1).copy_from_slice(&f);
        let s = SnapshotSet::new(g, vec![0.0, 1.0], data).unwrap();
        let fl = split_mean(&s);
        assert_eq!(fl.mean().values(), &f[..]);
        assert!(fl.fluctuations().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn symmetric_pair_has_zero_mean() {
        let g = grid();
        let f = field(0.7);
        let mut data = DMatrix::zeros(g.n_dofs(), 2);
        data.column_mut(0).copy_from_slice(&f);
        data.column_mut(1)
            .copy_from_slice(&f.iter().map(|x| -x).collect::<Vec<_>>());
        let fl = split_mean(&SnapshotSet::new(g, vec![0.0, 1.0], data).unwrap());
        assert!(fl.mean().values().iter().all(|x| *x == 0.0));
        assert_eq!(fl.fluctuations().column(0).as_slice(), &f[..]);
    }

    #[test]
    fn validation_errors() {
        let g = grid();
        let data = DMatrix::zeros(g.n_dofs(), 3);
        assert!(matches!(
            SnapshotSet::new(g, vec![0.0, 1e-4, 1e-4], data.clone()),
            Err(Error::NonMonotoneTime { index: 2 })
        ));
        assert!(SnapshotSet::new(g, vec![0.0], DMatrix::zeros(g.n_dofs(), 1)).is_err());
        let mut bad = data;
        bad[(5, 1)] = f64::NAN;
        assert!(matches!(
            SnapshotSet::new(g, vec![0.0, 1.0, 2.0], bad),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn fmt_roundtrips_exactly() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
