//! Time series of modal coefficients.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

/// Modal coefficients sampled at increasing times: column `m` of `coeffs`
/// holds the `r` coefficients at `times[m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalSeries {
    times: Vec<f64>,
    coeffs: DMatrix<f64>,
}

impl ModalSeries {
    pub fn new(times: Vec<f64>, coeffs: DMatrix<f64>) -> Result<Self> {
        check_len("series sample count", times.len(), coeffs.ncols())?;
        if let Some(index) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::NonMonotoneTime { index: index + 1 });
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("series times".into()));
        }
        Ok(ModalSeries { times, coeffs })
    }

    pub fn empty(r: usize) -> Self {
        ModalSeries {
            times: Vec::new(),
            coeffs: DMatrix::zeros(r, 0),
        }
    }

    pub fn from_columns(times: Vec<f64>, columns: &[DVector<f64>], r: usize) -> Result<Self> {
        let mut coeffs = DMatrix::zeros(r, columns.len());
        for (m, c) in columns.iter().enumerate() {
            check_len("series column", r, c.len())?;
            coeffs.set_column(m, c);
        }
        Self::new(times, coeffs)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn rank(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, m: usize) -> DVector<f64> {
        self.coeffs.column(m).into_owned()
    }

    /// The first `count` samples.
    pub fn head(&self, count: usize) -> ModalSeries {
        let count = count.min(self.len());
        ModalSeries {
            times: self.times[..count].to_vec(),
            coeffs: self.coeffs.columns(0, count).into_owned(),
        }
    }
}
