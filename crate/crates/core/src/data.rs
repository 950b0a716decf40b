//! The p × T observation panel shared by every test in the crate.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// A p × T panel of observations; column `t` holds the vector `x_t`.
///
/// Whether the data are real or complex is a property of the whole panel.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeSeriesMatrix {
    Real(DMatrix<f64>),
    Complex(DMatrix<Complex64>),
}

impl TimeSeriesMatrix {
    /// Wraps a real panel after checking shape and finiteness.
    pub fn real(data: DMatrix<f64>) -> Result<Self> {
        check_shape(data.nrows(), data.ncols())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(non_finite(i, data.nrows()));
        }
        Ok(TimeSeriesMatrix::Real(data))
    }

    /// Wraps a complex panel after checking shape and finiteness.
    pub fn complex(data: DMatrix<Complex64>) -> Result<Self> {
        check_shape(data.nrows(), data.ncols())?;
        if let Some(i) = data.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(non_finite(i, data.nrows()));
        }
        Ok(TimeSeriesMatrix::Complex(data))
    }

    /// Builds a real panel from rows-are-time records (`records[t][i]`).
    pub fn from_time_rows(records: &[Vec<f64>]) -> Result<Self> {
        let t = records.len();
        let p = records.first().map_or(0, |r| r.len());
        if records.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidInput("ragged rows".into()));
        }
        Self::real(DMatrix::from_fn(p, t, |i, j| records[j][i]))
    }

    pub fn p(&self) -> usize {
        match self {
            TimeSeriesMatrix::Real(m) => m.nrows(),
            TimeSeriesMatrix::Complex(m) => m.nrows(),
        }
    }

    pub fn t(&self) -> usize {
        match self {
            TimeSeriesMatrix::Real(m) => m.ncols(),
            TimeSeriesMatrix::Complex(m) => m.ncols(),
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, TimeSeriesMatrix::Complex(_))
    }

    /// Dimension-to-sample ratio `c_p = p / T`.
    pub fn c_p(&self) -> f64 {
        self.p() as f64 / self.t() as f64
    }

    pub fn as_real(&self) -> Option<&DMatrix<f64>> {
        match self {
            TimeSeriesMatrix::Real(m) => Some(m),
            TimeSeriesMatrix::Complex(_) => None,
        }
    }

    pub(crate) fn require_real(&self, what: &'static str) -> Result<&DMatrix<f64>> {
        self.as_real().ok_or(Error::RealOnly(what))
    }

    /// Subtracts each row's time average.
    ///
    /// Off by default everywhere. The tests assume mean-zero data, and
    /// demeaning introduces a rank deficiency that shifts the null
    /// distribution of `G_q` by terms of order `1/T`.
    pub fn demeaned(&self) -> Self {
        match self {
            TimeSeriesMatrix::Real(m) => {
                let mut out = m.clone();
                for mut row in out.row_iter_mut() {
                    let mean = row.mean();
                    row.add_scalar_mut(-mean);
                }
                TimeSeriesMatrix::Real(out)
            }
            TimeSeriesMatrix::Complex(m) => {
                let mut out = m.clone();
                let t = m.ncols() as f64;
                for mut row in out.row_iter_mut() {
                    let mean = row.sum() / t;
                    row.iter_mut().for_each(|v| *v -= mean);
                }
                TimeSeriesMatrix::Complex(out)
            }
        }
    }

    /// Multiplies every observation by a real scalar.
    pub fn scaled(&self, s: f64) -> Self {
        match self {
            TimeSeriesMatrix::Real(m) => TimeSeriesMatrix::Real(m * s),
            TimeSeriesMatrix::Complex(m) => {
                TimeSeriesMatrix::Complex(m.map(|v| v * s))
            }
        }
    }
}

fn check_shape(p: usize, t: usize) -> Result<()> {
    if p < 1 || t < 2 {
        return Err(Error::InvalidInput(format!(
            "need p >= 1 and T >= 2, got p = {p}, T = {t}"
        )));
    }
    Ok(())
}

fn non_finite(flat: usize, p: usize) -> Error {
    Error::InvalidInput(format!(
        "non-finite entry at component {}, time {}",
        flat % p,
        flat / p
    ))
}
