//! Hosking and Li-McLeod multivariate portmanteau tests.
//!
//! Both use the truncated autocovariance `Ĉ_τ = T⁻¹ Σ_{t=τ+1..T} a_t a'_{t-τ}`
//! rather than the circular one, and a χ² reference law with
//! `p²(q - u - v)` degrees of freedom.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesMatrix;
use crate::distributions::chi2_upper_quantile;
use crate::error::{Error, Result};
use crate::linalg::inv_sqrt_checked;
use crate::stats::{estimate_s1_s2, ReportParams, TestKind, TestReport};

/// `Ĉ₀` counts as singular once its smallest eigenvalue drops below this
/// fraction of the largest.
pub const SINGULAR_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct PortmanteauInput<'a> {
    pub residuals: &'a TimeSeriesMatrix,
    pub q: usize,
    /// Fitted order `u + v` of a VARMA model whose residuals are tested.
    pub dof_adjust: usize,
}

impl<'a> PortmanteauInput<'a> {
    pub fn new(residuals: &'a TimeSeriesMatrix, q: usize) -> Self {
        PortmanteauInput { residuals, q, dof_adjust: 0 }
    }

    fn dof(&self) -> Result<f64> {
        let p = self.residuals.p() as f64;
        if self.q <= self.dof_adjust {
            return Err(Error::InvalidInput(format!(
                "q = {} must exceed the fitted order {}",
                self.q, self.dof_adjust
            )));
        }
        Ok(p * p * (self.q - self.dof_adjust) as f64)
    }
}

/// Truncated lag-τ autocovariance.
pub fn autocov_truncated(x: &DMatrix<f64>, tau: usize) -> Result<DMatrix<f64>> {
    let n = x.ncols();
    if tau >= n {
        return Err(Error::InvalidLag { lag: tau, t: n });
    }
    let m = n - tau;
    Ok(x.columns(tau, m) * x.columns(0, m).transpose() / n as f64)
}

/// `Tr(Ĉ_τ' Ĉ₀⁻¹ Ĉ_τ Ĉ₀⁻¹)` for τ = 1..=q_max.
///
/// With `W = Ĉ₀^{-1/2}` each trace is `‖W Ĉ_τ W‖²_F`.
pub fn portmanteau_traces(x: &DMatrix<f64>, q_max: usize) -> Result<Vec<f64>> {
    let (p, n) = x.shape();
    if p > n {
        return Err(Error::InfeasibleDimension { p, t: n, reason: "portmanteau tests need p <= T".into() });
    }
    let c0 = autocov_truncated(x, 0)?;
    let w = inv_sqrt_checked(&c0, SINGULAR_REL_TOL).ok_or_else(|| {
        Error::SingularCovariance(format!("C_0 is numerically singular (p = {p}, T = {n})"))
    })?;
    (1..=q_max)
        .map(|tau| {
            let c = autocov_truncated(x, tau)?;
            Ok((&w * c * &w).norm_squared())
        })
        .collect()
}

/// `Q̃_q = T² Σ_τ (T-τ)⁻¹ tr_τ`.
pub fn hosking_statistic(traces: &[f64], t: usize) -> f64 {
    let n = t as f64;
    traces.iter().enumerate().map(|(i, tr)| n * n / (n - (i + 1) as f64) * tr).sum()
}

/// `Q*_q = T Σ_τ tr_τ + p²q(q+1)/(2T)`.
pub fn li_mcleod_statistic(traces: &[f64], p: usize, t: usize) -> f64 {
    let (n, q, pf) = (t as f64, traces.len() as f64, p as f64);
    n * traces.iter().sum::<f64>() + pf * pf * q * (q + 1.0) / (2.0 * n)
}

fn params(x: &TimeSeriesMatrix) -> ReportParams {
    let est = estimate_s1_s2(x);
    ReportParams {
        p: x.p(),
        t: x.t(),
        c_p: x.c_p(),
        s1_hat: est.s1_hat,
        s2_tilde: est.s2_tilde,
        s_d2_tilde: est.s_d2_tilde,
        nu4: None,
        known: None,
    }
}

fn run(input: &PortmanteauInput, alpha: f64, kind: TestKind) -> Result<TestReport> {
    let x = input.residuals.require_real("portmanteau tests")?;
    if input.q == 0 {
        return Err(Error::InvalidInput("q must be at least 1".into()));
    }
    let dof = input.dof()?;
    let traces = portmanteau_traces(x, input.q)?;
    let stat = match kind {
        TestKind::Hosking => hosking_statistic(&traces, x.ncols()),
        _ => li_mcleod_statistic(&traces, x.nrows(), x.ncols()),
    };
    TestReport::chi2(kind, stat, dof, alpha, input.q, params(input.residuals))
}

pub fn hosking(input: &PortmanteauInput, alpha: f64) -> Result<TestReport> {
    run(input, alpha, TestKind::Hosking)
}

pub fn li_mcleod(input: &PortmanteauInput, alpha: f64) -> Result<TestReport> {
    run(input, alpha, TestKind::LiMcLeod)
}

/// Relative errors `(theory - empirical) / empirical` of the first moments
/// and the 95th percentile of a sample against its χ² reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentDiagnostics {
    pub mean_rel_err: f64,
    pub var_rel_err: f64,
    pub q95_rel_err: f64,
}

pub fn diagnostics_moments(statistics: &[f64], dof: f64) -> Result<MomentDiagnostics> {
    let n = statistics.len();
    if n < 100 {
        return Err(Error::InvalidInput(format!("need at least 100 samples, got {n}")));
    }
    let nf = n as f64;
    let mean = statistics.iter().sum::<f64>() / nf;
    let var = statistics.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let mut sorted = statistics.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = 0.95 * (nf - 1.0);
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let q95 = sorted[lo] + frac * (sorted[(lo + 1).min(n - 1)] - sorted[lo]);
    let theo_q95 = chi2_upper_quantile(0.05, dof)?;
    Ok(MomentDiagnostics {
        mean_rel_err: (dof - mean) / mean,
        var_rel_err: (2.0 * dof - var) / var,
        q95_rel_err: (theo_q95 - q95) / q95,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn truncated_small_example() {
        let x = DMatrix::from_column_slice(2, 3, &[1., 0., 0., 1., 1., 1.]);
        // (x2 x1' + x3 x2') / 3
        let c1 = autocov_truncated(&x, 1).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0., 1., 1., 1.]) / 3.0;
        assert!((c1 - expect).norm() < 1e-15);
        let c0 = autocov_truncated(&x, 0).unwrap();
        assert!((c0 - &x * x.transpose() / 3.0).norm() < 1e-15);
        assert_eq!(autocov_truncated(&DMatrix::zeros(2, 5), 2).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn statistic_weights() {
        let tr = [0.5, 0.25, 0.125];
        let h = hosking_statistic(&tr, 10);
        assert_relative_eq!(h, 100.0 * (0.5 / 9.0 + 0.25 / 8.0 + 0.125 / 7.0), epsilon = 1e-12);
        let l = li_mcleod_statistic(&tr, 2, 10);
        assert_relative_eq!(l, 10.0 * 0.875 + 4.0 * 12.0 / 20.0, epsilon = 1e-12);
        assert!(l - 4.0 * 12.0 / 20.0 <= h);
    }

    #[test]
    fn singular_and_infeasible() {
        let rank_one = DMatrix::from_fn(3, 10, |_, j| j as f64);
        let x = TimeSeriesMatrix::real(rank_one).unwrap();
        assert!(matches!(hosking(&PortmanteauInput::new(&x, 1), 0.05), Err(Error::SingularCovariance(_))));
        let wide = TimeSeriesMatrix::real(DMatrix::from_fn(5, 4, |i, j| (i + j * j) as f64)).unwrap();
        assert!(matches!(li_mcleod(&PortmanteauInput::new(&wide, 1), 0.05), Err(Error::InfeasibleDimension { .. })));
    }

    #[test]
    fn dof_adjust() {
        let x = TimeSeriesMatrix::real(DMatrix::from_fn(2, 30, |i, j| ((i * 11 + j * 7) % 13) as f64 - 6.0))
            .unwrap();
        let r = hosking(&PortmanteauInput { residuals: &x, q: 3, dof_adjust: 1 }, 0.05).unwrap();
        assert_eq!(r.scale, 8.0);
        assert!(hosking(&PortmanteauInput { residuals: &x, q: 1, dof_adjust: 1 }, 0.05).is_err());
    }

    #[test]
    fn diagnostics_on_exact_quantiles() {
        // Deterministic sample: χ² quantiles at evenly spaced probabilities.
        let dof = 4.0;
        let n = 20_000;
        let sample: Vec<f64> = (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) / n as f64;
                chi2_upper_quantile(1.0 - u, dof).unwrap()
            })
            .collect();
        let d = diagnostics_moments(&sample, dof).unwrap();
        assert!(d.mean_rel_err.abs() < 1e-3);
        assert!(d.var_rel_err.abs() < 2e-2);
        assert!(d.q95_rel_err.abs() < 1e-3);
        assert!(diagnostics_moments(&sample[..50], dof).is_err());
    }
}
