//! Circular sample autocovariances, the `G_q` family and its null tests.
//!
//! With `x_t = x_{T+t}` for `t <= 0`, the lag-τ autocovariance is
//! `Σ̂_τ = T⁻¹ Σ_t x_t x*_{t-τ}` and `G_q = Σ_{τ=1..q} ‖Σ̂_τ‖²_F`. Three tests
//! are built on it:
//!
//! * [`test_gq_known_sigma`], when the spectral constants of `Σ₀` are known;
//! * [`test_gq1`], which centres with `ŝ₁²` and scales with `s̃₂`;
//! * [`test_gq1_star`], which also removes the `O(1/T)` bias using `ν̂₄`.
//!
//! Everywhere the limiting ratio `c` enters a variance, the finite-sample
//! `c_p = p/T` is substituted.

use nalgebra::{ComplexField, DMatrix};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesMatrix;
use crate::distributions::{chi2_sf, chi2_upper_quantile, normal_sf, normal_upper_quantile};
use crate::error::{Error, Result};

/// Limiting spectral constants of `Σ₀` together with `ν₄` and `c_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralConstants {
    /// `lim p⁻¹ Tr Σ₀`
    pub s1: f64,
    /// `lim p⁻¹ Tr Σ₀²`
    pub s2: f64,
    /// `lim p⁻¹ Tr D²(Σ₀)`
    pub s_d2: f64,
    pub nu4: f64,
    pub c_p: f64,
}

impl SpectralConstants {
    /// `Σ₀ = I_p`: every normalized trace equals one.
    pub fn identity(c_p: f64, nu4: f64) -> Self {
        SpectralConstants { s1: 1.0, s2: 1.0, s_d2: 1.0, nu4, c_p }
    }

    /// Exact finite-p constants of a given covariance matrix.
    pub fn from_covariance(sigma: &DMatrix<f64>, c_p: f64, nu4: f64) -> Self {
        let p = sigma.nrows() as f64;
        SpectralConstants {
            s1: sigma.trace() / p,
            s2: sigma.norm_squared() / p,
            s_d2: sigma.diagonal().norm_squared() / p,
            nu4,
            c_p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.s1) && ok(self.s2) && ok(self.s_d2) && ok(self.c_p)) {
            return Err(Error::InvalidInput(format!(
                "spectral constants must be positive and finite: {self:?}"
            )));
        }
        if !(self.nu4.is_finite() && self.nu4 >= 1.0) {
            return Err(Error::InvalidInput(format!("nu4 = {} must be >= 1", self.nu4)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Gq,
    Gq1,
    Gq1Star,
    Hosking,
    LiMcLeod,
}

impl TestKind {
    pub const ALL: [TestKind; 5] =
        [TestKind::Gq, TestKind::Gq1, TestKind::Gq1Star, TestKind::Hosking, TestKind::LiMcLeod];

    pub fn name(&self) -> &'static str {
        match self {
            TestKind::Gq => "gq",
            TestKind::Gq1 => "gq1",
            TestKind::Gq1Star => "gq1star",
            TestKind::Hosking => "hosking",
            TestKind::LiMcLeod => "limcleod",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        TestKind::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s.trim()))
    }
}

impl std::fmt::Display for TestKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameter snapshot attached to every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportParams {
    pub p: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub c_p: f64,
    pub s1_hat: f64,
    pub s2_tilde: f64,
    pub s_d2_tilde: f64,
    pub nu4: Option<f64>,
    /// Constants supplied by the caller on the known-Σ₀ path.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub known: Option<SpectralConstants>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: TestKind,
    pub statistic: f64,
    pub centering: f64,
    /// Standard deviation for the normal-reference tests, degrees of
    /// freedom for the chi-square ones.
    pub scale: f64,
    pub z_or_chi2: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub q: usize,
    pub params: ReportParams,
}

impl TestReport {
    pub(crate) fn normal(
        test: TestKind,
        statistic: f64,
        centering: f64,
        scale: f64,
        alpha: f64,
        q: usize,
        params: ReportParams,
    ) -> Result<Self> {
        let z = (statistic - centering) / scale;
        let crit = normal_upper_quantile(alpha)?;
        Ok(TestReport {
            test,
            statistic,
            centering,
            scale,
            z_or_chi2: z,
            p_value: normal_sf(z).clamp(0.0, 1.0),
            reject: z > crit,
            alpha,
            q,
            params,
        })
    }

    pub(crate) fn chi2(
        test: TestKind,
        statistic: f64,
        dof: f64,
        alpha: f64,
        q: usize,
        params: ReportParams,
    ) -> Result<Self> {
        let crit = chi2_upper_quantile(alpha, dof)?;
        Ok(TestReport {
            test,
            statistic,
            centering: dof,
            scale: dof,
            z_or_chi2: statistic,
            p_value: chi2_sf(statistic, dof)?.clamp(0.0, 1.0),
            reject: statistic > crit,
            alpha,
            q,
            params,
        })
    }
}

fn check_lag(tau: usize, t: usize) -> Result<()> {
    if tau >= t {
        return Err(Error::InvalidLag { lag: tau, t });
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} outside (0, 1)")));
    }
    Ok(())
}

/// Columns rotated so that column `t` holds `x_{t-τ}` (indices mod T).
fn circular_lag<T: ComplexField>(x: &DMatrix<T>, tau: usize) -> DMatrix<T> {
    let (p, n) = x.shape();
    let mut y = DMatrix::zeros(p, n);
    y.columns_mut(tau, n - tau).copy_from(&x.columns(0, n - tau));
    if tau > 0 {
        y.columns_mut(0, tau).copy_from(&x.columns(n - tau, tau));
    }
    y
}

/// Circular lag-τ sample autocovariance `Σ̂_τ = T⁻¹ Σ_t x_t x*_{t-τ}`.
pub fn autocov_circular<T: ComplexField<RealField = f64>>(
    x: &DMatrix<T>,
    tau: usize,
) -> Result<DMatrix<T>> {
    let n = x.ncols();
    check_lag(tau, n)?;
    let y = circular_lag(x, tau);
    let mut s = x * y.adjoint();
    s.unscale_mut(n as f64);
    Ok(s)
}

/// `‖Σ̂_τ‖²_F` for τ = 1..=q_max.
fn lag_norms<T: ComplexField<RealField = f64>>(x: &DMatrix<T>, q_max: usize) -> Result<Vec<f64>> {
    (1..=q_max).map(|tau| autocov_circular(x, tau).map(|s| s.norm_squared())).collect()
}

fn lag_norms_any(x: &TimeSeriesMatrix, q_max: usize) -> Result<Vec<f64>> {
    check_lag(q_max, x.t())?;
    if q_max == 0 {
        return Err(Error::InvalidInput("q must be at least 1".into()));
    }
    match x {
        TimeSeriesMatrix::Real(m) => lag_norms(m, q_max),
        TimeSeriesMatrix::Complex(m) => lag_norms(m, q_max),
    }
}

/// `G_q = Σ_{τ=1..q} Tr(Σ̂_τ* Σ̂_τ)`, computed as squared Frobenius norms.
pub fn g_q(x: &TimeSeriesMatrix, q: usize) -> Result<f64> {
    Ok(lag_norms_any(x, q)?.iter().sum())
}

/// `G_q` through the singular values of each `Σ̂_τ`. Slower; kept as a
/// cross-check of [`g_q`].
pub fn g_q_svd(x: &TimeSeriesMatrix, q: usize) -> Result<f64> {
    check_lag(q, x.t())?;
    let mut total = 0.0;
    for tau in 1..=q {
        total += match x {
            TimeSeriesMatrix::Real(m) => {
                autocov_circular(m, tau)?.singular_values().iter().map(|s| s * s).sum::<f64>()
            }
            TimeSeriesMatrix::Complex(m) => {
                autocov_circular(m, tau)?.singular_values().iter().map(|s| s * s).sum::<f64>()
            }
        };
    }
    Ok(total)
}

/// Plug-in estimates of the spectral constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    /// `p⁻¹ Tr Σ̂₀`
    pub s1_hat: f64,
    /// `p⁻¹ Tr Σ̂₀²`
    pub s2_hat: f64,
    /// `ŝ₂ - c_p ŝ₁²`
    pub s2_tilde: f64,
    /// `p⁻¹ Σ_i (T⁻¹ Σ_t |x_it|²)²`
    pub s_d2_tilde: f64,
}

fn estimates_generic<T: ComplexField<RealField = f64>>(x: &DMatrix<T>) -> Estimates {
    let (p, n) = x.shape();
    let (pf, nf) = (p as f64, n as f64);
    let s1_hat = x.norm_squared() / (pf * nf);
    // ‖XX*‖_F = ‖X*X‖_F; multiply along the short side.
    let gram = if p <= n { x * x.adjoint() } else { x.adjoint() * x };
    let s2_hat = gram.norm_squared() / (nf * nf * pf);
    let s_d2_tilde = x
        .row_iter()
        .map(|r| {
            let d = r.norm_squared() / nf;
            d * d
        })
        .sum::<f64>()
        / pf;
    Estimates { s1_hat, s2_hat, s2_tilde: s2_hat - pf / nf * s1_hat * s1_hat, s_d2_tilde }
}

/// `ŝ₁`, `ŝ₂`, `s̃₂` and `s̃_{d,2}` from the data.
pub fn estimate_s1_s2(x: &TimeSeriesMatrix) -> Estimates {
    match x {
        TimeSeriesMatrix::Real(m) => estimates_generic(m),
        TimeSeriesMatrix::Complex(m) => estimates_generic(m),
    }
}

/// Everything the three `G` tests need from one panel, computed once for
/// all lags up to `q_max`. The Monte Carlo harness reuses it across `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct GSummary {
    pub p: usize,
    pub t: usize,
    pub complex: bool,
    /// `‖Σ̂_τ‖²_F` for τ = 1..=q_max.
    pub lag_norms: Vec<f64>,
    pub est: Estimates,
}

impl GSummary {
    pub fn compute(x: &TimeSeriesMatrix, q_max: usize) -> Result<Self> {
        Ok(GSummary {
            p: x.p(),
            t: x.t(),
            complex: x.is_complex(),
            lag_norms: lag_norms_any(x, q_max)?,
            est: estimate_s1_s2(x),
        })
    }

    pub fn c_p(&self) -> f64 {
        self.p as f64 / self.t as f64
    }

    pub fn g_q(&self, q: usize) -> Result<f64> {
        if q == 0 || q > self.lag_norms.len() {
            return Err(Error::InvalidInput(format!(
                "q = {q} outside the computed range 1..={}",
                self.lag_norms.len()
            )));
        }
        Ok(self.lag_norms[..q].iter().sum())
    }

    fn params(&self, nu4: Option<f64>, known: Option<SpectralConstants>) -> ReportParams {
        ReportParams {
            p: self.p,
            t: self.t,
            c_p: self.c_p(),
            s1_hat: self.est.s1_hat,
            s2_tilde: self.est.s2_tilde,
            s_d2_tilde: self.est.s_d2_tilde,
            nu4,
            known,
        }
    }

    pub fn test_known(&self, q: usize, alpha: f64, constants: &SpectralConstants) -> Result<TestReport> {
        check_alpha(alpha)?;
        let mut k = *constants;
        k.c_p = self.c_p();
        k.validate()?;
        let var = if self.complex { sigma2_complex(&k, q) } else { sigma2_real(&k, q) };
        if !(var > 0.0) {
            return Err(Error::DegenerateVariance(format!("sigma^2(c) = {var}")));
        }
        let centering = q as f64 * self.t as f64 * k.c_p * k.c_p * k.s1 * k.s1;
        TestReport::normal(
            TestKind::Gq,
            self.g_q(q)?,
            centering,
            var.sqrt(),
            alpha,
            q,
            self.params(Some(k.nu4), Some(k)),
        )
    }

    pub fn test_gq1(&self, q: usize, alpha: f64) -> Result<TestReport> {
        check_alpha(alpha)?;
        if self.complex {
            return Err(Error::RealOnly("G_{q,1}"));
        }
        let c = self.c_p();
        let s2t = self.est.s2_tilde;
        if !(s2t > 0.0) {
            return Err(Error::DegenerateVariance(format!("s2_tilde = {s2t}")));
        }
        let centering = q as f64 * self.t as f64 * c * c * self.est.s1_hat.powi(2);
        let xi = (2.0 * q as f64).sqrt() * c * s2t;
        TestReport::normal(TestKind::Gq1, self.g_q(q)?, centering, xi, alpha, q, self.params(None, None))
    }

    pub fn test_gq1_star(&self, q: usize, alpha: f64, nu4_hat: f64) -> Result<TestReport> {
        check_alpha(alpha)?;
        if self.complex {
            return Err(Error::RealOnly("G*_{q,1}"));
        }
        if !nu4_hat.is_finite() {
            return Err(Error::Domain(format!("nu4_hat = {nu4_hat} is not finite")));
        }
        let (c, qf, tf) = (self.c_p(), q as f64, self.t as f64);
        let Estimates { s1_hat, s2_tilde, s_d2_tilde, .. } = self.est;
        let bias = 2.0 * s2_tilde + (nu4_hat - 3.0) * s_d2_tilde;
        let xi2 = 2.0 * qf * c * c * s2_tilde * s2_tilde + qf * c * c * bias * bias / tf;
        if !(xi2 > 0.0) || !(s2_tilde > 0.0) {
            return Err(Error::DegenerateVariance(format!("xi_hat^2 = {xi2}, s2_tilde = {s2_tilde}")));
        }
        // G* = G_q - qTc²ŝ₁² + T⁻¹qc·bias, so the correction moves into the centering.
        let centering = qf * tf * c * c * s1_hat * s1_hat - qf * c * bias / tf;
        TestReport::normal(
            TestKind::Gq1Star,
            self.g_q(q)?,
            centering,
            xi2.sqrt(),
            alpha,
            q,
            self.params(Some(nu4_hat), None),
        )
    }
}

/// Real-data asymptotic variance
/// `σ²(c) = 2qc²s₂² + 4q²c³(ν₄-3)s₁²s_{d,2} + 8q²c³s₁²s₂`.
pub fn sigma2_real(k: &SpectralConstants, q: usize) -> f64 {
    let (q, c) = (q as f64, k.c_p);
    2.0 * q * c * c * k.s2 * k.s2
        + 4.0 * q * q * c.powi(3) * (k.nu4 - 3.0) * k.s1 * k.s1 * k.s_d2
        + 8.0 * q * q * c.powi(3) * k.s1 * k.s1 * k.s2
}

/// Proper complex data: `σ²(c) = qc²s₂² + 4q²c³s₁²[(ν₄-2)s_{d,2} + s₂]`.
pub fn sigma2_complex(k: &SpectralConstants, q: usize) -> f64 {
    let (q, c) = (q as f64, k.c_p);
    q * c * c * k.s2 * k.s2 + 4.0 * q * q * c.powi(3) * k.s1 * k.s1 * ((k.nu4 - 2.0) * k.s_d2 + k.s2)
}

/// `G_q` test with known spectral constants. Complex input switches to
/// [`sigma2_complex`]. The ratio in `constants.c_p` is replaced by the data's `p/T`.
pub fn test_gq_known_sigma(
    x: &TimeSeriesMatrix,
    q: usize,
    alpha: f64,
    constants: &SpectralConstants,
) -> Result<TestReport> {
    GSummary::compute(x, q)?.test_known(q, alpha, constants)
}

/// Feasible test: reject when `G_q - qTc_p²ŝ₁² > Z_α √(2q) c_p s̃₂`.
pub fn test_gq1(x: &TimeSeriesMatrix, q: usize, alpha: f64) -> Result<TestReport> {
    GSummary::compute(x, q)?.test_gq1(q, alpha)
}

/// Bias-corrected feasible test using an estimate of `ν₄`.
pub fn test_gq1_star(x: &TimeSeriesMatrix, q: usize, alpha: f64, nu4_hat: f64) -> Result<TestReport> {
    GSummary::compute(x, q)?.test_gq1_star(q, alpha, nu4_hat)
}
