//! Asymptotic power of the `G_{1,1}` test under a VMA(1) alternative
//! `x_t = A₀z_t + A₁z_{t-1}`.
//!
//! Everything is a polynomial in traces of `Σ̃₀ = A₀'A₀`, `Σ̃₁ = A₁'A₁` and
//! `Σ̃₀₁ = A₀'A₁`. Remainder terms of smaller order are dropped and the
//! limits are evaluated at the supplied finite `(p, T)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::distributions::{normal_sf, normal_upper_quantile};
use crate::error::{Error, Result};
use crate::linalg::{tr_dd, tr_prod, trace};

#[derive(Debug, Clone, PartialEq)]
pub struct VmaSpec {
    pub a0: DMatrix<f64>,
    pub a1: DMatrix<f64>,
}

impl VmaSpec {
    pub fn new(a0: DMatrix<f64>, a1: DMatrix<f64>) -> Result<Self> {
        if !a0.is_square() || a0.shape() != a1.shape() {
            return Err(Error::InvalidInput("A0 and A1 must be square and the same size".into()));
        }
        if a0.iter().chain(a1.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite VMA coefficient".into()));
        }
        Ok(VmaSpec { a0, a1 })
    }

    /// Model (V): `A₀ = I`, `A₁ = aI`.
    pub fn scaled_identity(p: usize, a: f64) -> Self {
        VmaSpec { a0: DMatrix::identity(p, p), a1: DMatrix::identity(p, p) * a }
    }

    pub fn p(&self) -> usize {
        self.a0.nrows()
    }

    /// `(Σ̃₀, Σ̃₁, Σ̃₀₁)`.
    pub fn derived(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        (self.a0.transpose() * &self.a0, self.a1.transpose() * &self.a1, self.a0.transpose() * &self.a1)
    }
}

/// Every trace that appears in the VMA(1) moment formulas.
///
/// Naming: `s0`, `s1`, `s01` are `Σ̃₀`, `Σ̃₁`, `Σ̃₀₁`; `s01t` is the transpose;
/// `s` is `Σ̃₀ + Σ̃₁`; `d_` marks a diagonal part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePolynomials {
    pub tr_s: f64,
    pub tr_s_sq: f64,
    pub tr_d_s_sq: f64,
    pub tr_s0s1: f64,
    pub tr_d_s0_d_s1: f64,
    pub tr_s01: f64,
    pub tr_s01_s01t: f64,
    pub tr_s0sq_plus_s1sq: f64,
    pub tr_s0s1_sq: f64,
    pub tr_d_s0s1_sq: f64,
    pub tr_s0s1_s: f64,
    pub tr_d_s0s1_d_s: f64,
    pub tr_s01_s1: f64,
    pub tr_s01_s0: f64,
    pub tr_s01t_s01_s0: f64,
    pub tr_s01_s01t_s1: f64,
    pub tr_s0sq_s01t: f64,
    pub tr_s1sq_s01: f64,
    pub tr_s1_s01_s0: f64,
    /// `Tr(Σ̃₀₁'Σ̃₀₁Σ̃₀² + Σ̃₀₁Σ̃₀₁'Σ̃₁² + 2Σ̃₀₁'Σ̃₁Σ̃₀₁Σ̃₀)`
    pub tr_mixed4: f64,
    pub tr_s01_s: f64,
    pub tr_s01_s01t_s01t_s01: f64,
    pub tr_s01_s01t_s01t: f64,
    pub tr_s01_sq: f64,
    pub tr_d_s01_sq: f64,
    pub tr_d_s01_d_s: f64,
    pub tr_s0s1_s01: f64,
    pub tr_d_s0s1_d_s01: f64,
}

pub fn trace_polynomials(spec: &VmaSpec) -> TracePolynomials {
    let (s0, s1, s01) = spec.derived();
    let s01t = s01.transpose();
    let s = &s0 + &s1;
    let s0s1 = &s0 * &s1;
    let s0sq = &s0 * &s0;
    let s1sq = &s1 * &s1;
    let s01_s01t = &s01 * &s01t;
    let s01t_s01 = &s01t * &s01;
    let tr = |m: DMatrix<f64>| trace(&m);
    TracePolynomials {
        tr_s: trace(&s),
        tr_s_sq: tr_prod(&s, &s),
        tr_d_s_sq: tr_dd(&s, &s),
        tr_s0s1: trace(&s0s1),
        tr_d_s0_d_s1: tr_dd(&s0, &s1),
        tr_s01: trace(&s01),
        tr_s01_s01t: trace(&s01_s01t),
        tr_s0sq_plus_s1sq: trace(&s0sq) + trace(&s1sq),
        tr_s0s1_sq: tr_prod(&s0s1, &s0s1),
        tr_d_s0s1_sq: tr_dd(&s0s1, &s0s1),
        tr_s0s1_s: tr_prod(&s0s1, &s),
        tr_d_s0s1_d_s: tr_dd(&s0s1, &s),
        tr_s01_s1: tr_prod(&s01, &s1),
        tr_s01_s0: tr_prod(&s01, &s0),
        tr_s01t_s01_s0: tr_prod(&s01t_s01, &s0),
        tr_s01_s01t_s1: tr_prod(&s01_s01t, &s1),
        tr_s0sq_s01t: tr_prod(&s0sq, &s01t),
        tr_s1sq_s01: tr_prod(&s1sq, &s01),
        tr_s1_s01_s0: tr(&s1 * &s01 * &s0),
        tr_mixed4: tr(&s01t_s01 * &s0sq + &s01_s01t * &s1sq + (&s01t * &s1 * &s01 * &s0) * 2.0),
        tr_s01_s: tr_prod(&s01, &s),
        tr_s01_s01t_s01t_s01: tr(&s01_s01t * &s01t * &s01),
        tr_s01_s01t_s01t: tr(&s01_s01t * &s01t),
        tr_s01_sq: tr_prod(&s01, &s01),
        tr_d_s01_sq: tr_dd(&s01, &s01),
        tr_d_s01_d_s: tr_dd(&s01, &s),
        tr_s0s1_s01: tr_prod(&s0s1, &s01),
        tr_d_s0s1_d_s01: tr_dd(&s0s1, &s01),
    }
}

/// Joint moments of `G₁` and `Tc_p²ŝ₁²` under the VMA(1) alternative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointMoments {
    pub mu_g: f64,
    pub mu_s: f64,
    pub sigma_g2: f64,
    pub sigma_s2: f64,
    pub sigma_gs: f64,
}

pub fn theorem23_moments(spec: &VmaSpec, t: usize, nu4: f64) -> JointMoments {
    let tp = trace_polynomials(spec);
    let t = t as f64;
    let (t2, t3) = (t * t, t * t * t);
    let k = nu4 - 3.0;
    let tr_s = tp.tr_s;
    let kappa = 2.0 * tp.tr_s_sq + k * tp.tr_d_s_sq;
    let mixed = 2.0 * tp.tr_s0s1_s + k * tp.tr_d_s0s1_d_s;
    let lead1 = tp.tr_s0s1 + k * tp.tr_d_s0_d_s1;
    let tr01 = tp.tr_s01;
    let cross = tp.tr_s01t_s01_s0 + tp.tr_s01_s01t_s1;
    let s01_s_bracket = 2.0 * tp.tr_s01_s + k * tp.tr_d_s01_d_s;

    let mu_g = tr_s * tr_s / t + tp.tr_s0s1 + 2.0 / t * tr01 * tr01 + lead1 / t;
    let mu_s = tr_s * tr_s / t + 4.0 / t2 * tp.tr_s01_s01t + kappa / t2;

    let sigma_s2 = 4.0 / t3 * tr_s * tr_s * kappa + 16.0 / t3 * tr_s * tr_s * tp.tr_s01_s01t;

    let sigma_g2 = 4.0 / t3 * tr_s * tr_s * kappa
        + 8.0 / t2 * tr_s * mixed
        + 2.0 / t2 * tp.tr_s0sq_plus_s1sq.powi(2)
        + 6.0 / t2 * tp.tr_s0s1.powi(2)
        + 4.0 / t * (2.0 * tp.tr_s0s1_sq + k * tp.tr_d_s0s1_sq)
        + 8.0 / t2 * tp.tr_s01_s01t * tp.tr_s0sq_plus_s1sq
        + 16.0 / t2 * tp.tr_s01_s1 * tp.tr_s01_s0
        + 16.0 / t2 * tr_s * cross
        + 16.0 / t2 * tr01 * (tp.tr_s0sq_s01t + tp.tr_s1sq_s01 + 2.0 * tp.tr_s1_s01_s0)
        + 4.0 / t * tp.tr_mixed4
        + 16.0 / t3 * tr_s * tr_s * tp.tr_s01_s01t
        + 16.0 / t3 * tr01 * tr01 * tp.tr_s_sq
        + 32.0 / t3 * tr_s * tr01 * tp.tr_s01_s
        + 4.0 / t * tp.tr_s01_s01t_s01t_s01
        + 12.0 / t2 * tp.tr_s01_s01t.powi(2)
        + 16.0 / t2 * tr01 * tp.tr_s01_s01t_s01t
        + 16.0 / t3 * tr01 * tr01 * (tp.tr_s01_sq + 2.0 * tp.tr_s01_s01t + k * tp.tr_d_s01_sq)
        + 8.0 / t2 * tp.tr_s01_s1.powi(2)
        + 16.0 / t3 * tr01 * tr_s * s01_s_bracket
        + 8.0 / t2 * tp.tr_s01_s0.powi(2)
        + 16.0 / t2 * tr01 * (2.0 * tp.tr_s0s1_s01 + k * tp.tr_d_s0s1_d_s01);

    let sigma_gs = 4.0 / t3 * tr_s * tr_s * kappa
        + 4.0 / t2 * tr_s * mixed
        + 8.0 / t2 * tr_s * cross
        + 16.0 / t3 * tr_s * tr_s * tp.tr_s01_s01t
        + 8.0 / t3 * tr01 * tr_s * s01_s_bracket
        + 16.0 / t3 * tr_s * tr01 * tp.tr_s01_s;

    JointMoments { mu_g, mu_s, sigma_g2, sigma_s2, sigma_gs }
}

/// Mean and standard deviation of `G₁ - Tc_p²ŝ₁²` under the alternative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G11Law {
    pub mu: f64,
    pub sigma: f64,
}

fn g11_parts(tp: &TracePolynomials, t: f64, nu4: f64) -> (f64, f64, f64) {
    let k = nu4 - 3.0;
    let (t2, t3) = (t * t, t * t * t);
    let tr01 = tp.tr_s01;
    let mu_leading = tp.tr_s0s1 + 2.0 / t * tr01 * tr01 + (tp.tr_s0s1 + k * tp.tr_d_s0_d_s1) / t;
    let mu_small = -4.0 / t2 * tp.tr_s01_s01t - (2.0 * tp.tr_s_sq + k * tp.tr_d_s_sq) / t2;
    let var = 2.0 / t2 * tp.tr_s0sq_plus_s1sq.powi(2)
        + 4.0 / t * (2.0 * tp.tr_s0s1_sq + k * tp.tr_d_s0s1_sq)
        + 6.0 / t2 * tp.tr_s0s1.powi(2)
        + 8.0 / t2 * tp.tr_s01_s01t * tp.tr_s0sq_plus_s1sq
        + 16.0 / t2 * tp.tr_s01_s1 * tp.tr_s01_s0
        + 16.0 / t2 * tr01 * (tp.tr_s0sq_s01t + tp.tr_s1sq_s01 + 2.0 * tp.tr_s1_s01_s0)
        + 4.0 / t * tp.tr_mixed4
        + 16.0 / t3 * tr01 * tr01 * tp.tr_s_sq
        + 4.0 / t * tp.tr_s01_s01t_s01t_s01
        + 12.0 / t2 * tp.tr_s01_s01t.powi(2)
        + 16.0 / t2 * tr01 * tp.tr_s01_s01t_s01t
        + 16.0 / t3 * tr01 * tr01 * (tp.tr_s01_sq + 2.0 * tp.tr_s01_s01t + k * tp.tr_d_s01_sq)
        + 8.0 / t2 * tp.tr_s01_s1.powi(2)
        + 8.0 / t2 * tp.tr_s01_s0.powi(2)
        + 16.0 / t2 * tr01 * (2.0 * tp.tr_s0s1_s01 + k * tp.tr_d_s0s1_d_s01);
    (mu_leading, mu_small, var)
}

/// `μ_{G_{1,1}}` and `σ_{G_{1,1}}` with every displayed term kept.
pub fn prop24_g11_law(spec: &VmaSpec, t: usize, nu4: f64) -> G11Law {
    let (lead, small, var) = g11_parts(&trace_polynomials(spec), t as f64, nu4);
    G11Law { mu: lead + small, sigma: var.max(0.0).sqrt() }
}

/// `ξ₀ = √2 [T⁻¹Tr(Σ̃₀² + Σ̃₁²) + 2T⁻¹Tr(Σ̃₀₁Σ̃₀₁') + 2T⁻²Tr²(Σ̃₀₁)]`.
pub fn xi0(spec: &VmaSpec, t: usize) -> f64 {
    xi0_from(&trace_polynomials(spec), t as f64)
}

fn xi0_from(tp: &TracePolynomials, t: f64) -> f64 {
    std::f64::consts::SQRT_2
        * (tp.tr_s0sq_plus_s1sq / t + 2.0 / t * tp.tr_s01_s01t + 2.0 / (t * t) * tp.tr_s01 * tp.tr_s01)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPrediction {
    /// Limiting mean `μ̃_{G_{1,1}}` used for the power.
    pub mu_g11: f64,
    pub sigma_g11: f64,
    pub xi0: f64,
    pub beta: f64,
    pub alpha: f64,
}

impl PowerPrediction {
    /// Power when `ξ₀` and `σ` are both inflated by `√q`, as happens to the
    /// critical value of the `q`-lag test while the mean shift stays put.
    /// A heuristic for comparing lag choices, not an exact theory for q > 1.
    pub fn beta_for_lags(&self, q: usize) -> f64 {
        let r = (q as f64).sqrt();
        let z = normal_upper_quantile(self.alpha).unwrap_or(f64::NAN);
        normal_sf(z * self.xi0 / self.sigma_g11 - self.mu_g11 / (r * self.sigma_g11))
    }
}

/// Limiting power `β = P(Z > Z_α ξ₀/σ̃ - μ̃/σ̃)`.
///
/// `μ̃` keeps the terms of `μ_{G_{1,1}}` that survive as `T → ∞` with
/// `p/T` fixed and drops the two `T⁻²`-weighted traces, which vanish in
/// the limit. With `A₁ = 0` this makes `μ̃ = 0` and `σ̃ = ξ₀`, so the
/// predicted power is exactly the level.
pub fn power_beta(spec: &VmaSpec, t: usize, nu4: f64, alpha: f64) -> Result<PowerPrediction> {
    let z = normal_upper_quantile(alpha)?;
    let tp = trace_polynomials(spec);
    let tf = t as f64;
    let (mu, _, var) = g11_parts(&tp, tf, nu4);
    if !(var > 0.0) {
        return Err(Error::DegenerateVariance(format!("sigma_G11^2 = {var}")));
    }
    let sigma = var.sqrt();
    let xi = xi0_from(&tp, tf);
    let beta = normal_sf(z * xi / sigma - mu / sigma).clamp(0.0, 1.0);
    Ok(PowerPrediction { mu_g11: mu, sigma_g11: sigma, xi0: xi, beta, alpha })
}
