//! Exact finite-sample null moments of `G_q` and `p ŝ₁²`.
//!
//! The `V` constants are moments of quadratic forms `z'Σ₀z` in the
//! innovations; the exact mean and variance of `G_q` and of `p ŝ₁²`, and
//! their covariance, are polynomials in them. [`prop42_leading`] gives the
//! leading-order expansions of the same quantities. The code is written
//! for transparency, with naive loops for Hadamard and `ι'…ι` contractions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{diag_part, tr_dd, trace};

mod cumulant;

/// Moments of the standardized innovation law.
///
/// `nu3`, `nu5` and `nu8` are signed central moments `E z^k`; `nu4` and
/// `nu6` are even so sign does not matter. `b = |E z²|²` is 1 for real data
/// and 0 for proper complex data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnovationMoments {
    pub nu3: Option<f64>,
    pub nu4: f64,
    pub nu5: Option<f64>,
    pub nu6: Option<f64>,
    pub nu8: Option<f64>,
    pub b: f64,
    /// `E(z̄⁴) E²(z²)`; defaults to `nu4` for real data and 0 when `b = 0`.
    pub conj4: Option<f64>,
}

impl InnovationMoments {
    pub fn gaussian() -> Self {
        InnovationMoments {
            nu3: Some(0.0),
            nu4: 3.0,
            nu5: Some(0.0),
            nu6: Some(15.0),
            nu8: Some(105.0),
            b: 1.0,
            conj4: None,
        }
    }

    /// Gamma(4, 0.5) - 2, which has mean 0 and variance 1.
    pub fn gamma_ii() -> Self {
        InnovationMoments {
            nu3: Some(1.0),
            nu4: 4.5,
            nu5: Some(13.0),
            nu6: Some(55.0),
            nu8: Some(1235.5),
            b: 1.0,
            conj4: None,
        }
    }

    /// Only `ν₄` known; enough for `V₁`–`V₄'`.
    pub fn fourth_only(nu4: f64) -> Self {
        InnovationMoments { nu3: None, nu4, nu5: None, nu6: None, nu8: None, b: 1.0, conj4: None }
    }

    /// Proper complex Gaussian: `E|z|⁴ = 2`, `E z² = 0`.
    pub fn complex_gaussian() -> Self {
        InnovationMoments { nu3: None, nu4: 2.0, nu5: None, nu6: None, nu8: None, b: 0.0, conj4: Some(0.0) }
    }

    fn conj4(&self) -> f64 {
        self.conj4.unwrap_or(if self.b == 0.0 { 0.0 } else { self.nu4 })
    }

    fn need(v: Option<f64>, name: &'static str) -> Result<f64> {
        v.ok_or(Error::InsufficientMoments(name))
    }
}

/// `V₁` through `V₄'` (lag terms) plus the higher `V₅`–`V₇`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VMoments {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v3p: f64,
    pub v4: f64,
    pub v4p: f64,
    pub v5: f64,
    pub v6: f64,
    pub v7: f64,
}

/// The four moments that drive the law of `G_q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VLow {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v3p: f64,
    pub v4: f64,
    pub v4p: f64,
}

fn tr_diag_sq(m: &DMatrix<f64>) -> f64 {
    tr_dd(m, m)
}

/// `V₁ … V₄'` for a real symmetric `Σ₀`.
pub fn moments_v_low(sigma0: &DMatrix<f64>, m: &InnovationMoments) -> VLow {
    let s = sigma0;
    let b = m.b;
    let s2 = s * s;
    let tr_s = trace(s);
    let tr_s2 = trace(&s2);
    // For real symmetric Σ₀: Re²(Σ₀) = Σ₀Σ₀ᵀ = Σ₀².
    let v2 = tr_s * tr_s + (m.nu4 - b - 2.0) * tr_diag_sq(s) + 2.0 * tr_s2 + (b - 1.0) * tr_s2;
    let s4 = &s2 * &s2;
    let tr_s4 = trace(&s4);
    let v4 = b * b * tr_s2 * tr_s2 + (m.conj4() - 3.0 * b * b) * tr_diag_sq(&s2) + 2.0 * b * b * tr_s4;
    let v4p = tr_s2 * tr_s2 + (m.nu4 - b - 2.0) * tr_diag_sq(&s2) + 2.0 * tr_s4 + (b - 1.0) * tr_s4;
    VLow { v1: tr_s, v2, v3: b * tr_s2, v3p: tr_s2, v4, v4p }
}

/// `ι' M ι`, the sum of all entries.
fn ones_form(m: &DMatrix<f64>) -> f64 {
    m.sum()
}

/// All nine `V` constants. Needs `ν₃, ν₅, ν₆, ν₈` and real data.
pub fn moments_v(sigma0: &DMatrix<f64>, m: &InnovationMoments) -> Result<VMoments> {
    if m.b != 1.0 {
        return Err(Error::RealOnly("V5-V7"));
    }
    let nu3 = InnovationMoments::need(m.nu3, "nu3")?;
    let nu5 = InnovationMoments::need(m.nu5, "nu5")?;
    let nu6 = InnovationMoments::need(m.nu6, "nu6")?;
    let nu8 = InnovationMoments::need(m.nu8, "nu8")?;
    let low = moments_v_low(sigma0, m);
    let s = sigma0;
    let p = s.nrows();
    let k = m.nu4 - 3.0;
    let s2 = s * s;
    let s3 = &s2 * s;
    let d = diag_part(s);
    let (t1, t2, t3, t4) = (trace(s), trace(&s2), trace(&s3), trace(&(&s2 * &s2)));

    // Hadamard powers by explicit loops.
    let had = |a: &DMatrix<f64>, b: &DMatrix<f64>| DMatrix::from_fn(p, p, |i, j| a[(i, j)] * b[(i, j)]);
    let ss = had(s, s);
    let sss = had(&ss, s);
    let ssss = had(&ss, &ss);

    let tr_s_ss = trace(&(s * &ss));
    let v5 = t1.powi(3)
        + 6.0 * t1 * t2
        + 8.0 * t3
        + k * (3.0 * tr_diag_sq(s) * t1
            + 4.0 * trace(&(diag_part(&s2) * s))
            + 8.0 * trace(&(&d * &s2)))
        + nu3 * nu3
            * (4.0 * tr_s_ss + 2.0 * ones_form(&(&d * s * &d)) + 4.0 * ones_form(&(&d * &d * s)))
        + (nu6 - 10.0 * nu3 * nu3 - 15.0 * k - 15.0) * tr_s_ss;

    let v6 = t1.powi(4)
        + 12.0 * t2 * t1 * t1
        + 12.0 * t2 * t2
        + 32.0 * t1 * t3
        + 48.0 * t4
        + k * (6.0 * t1 * t1 * trace(&ss)
            + 12.0 * t2 * trace(&ss)
            + 48.0 * t1 * trace(&had(s, &s2))
            + 48.0 * tr_diag_sq(&s2)
            + 96.0 * trace(&(&d * &s3)))
        + k * k
            * (3.0 * trace(&ss).powi(2)
                + 24.0 * ones_form(&(&d * &ss * &d))
                + 8.0 * ones_form(&ssss))
        + (nu6 - 15.0 * k - 10.0 * nu3 * nu3 - 15.0) * (4.0 * t1 * trace(&sss) + 24.0 * trace(&had(&ss, &s2)))
        + 2.0 * nu3 * nu3
            * (12.0 * ones_form(&(&d * s * &d)) * t1
                + 24.0 * ones_form(&(&d * &s2 * &d))
                + 8.0 * ones_form(&sss) * t1
                + 48.0 * ones_form(&(&ss * s * &d))
                + 48.0 * trace(&(&s2 * &ss)))
        + 2.0 * nu3 * (nu5 - 10.0 * nu3)
            * (12.0 * ones_form(&(&d * s * &d * &d)) + 16.0 * ones_form(&(&sss * &d)))
        + (nu8 - 28.0 * nu6 + 210.0 * k - 35.0 * k * k - 56.0 * nu3 * (nu5 - 10.0 * nu3) + 315.0)
            * trace(&ssss);

    let v7 = nu3 * nu3 * ones_form(&(&d * &s2 * &d));

    Ok(VMoments {
        v1: low.v1,
        v2: low.v2,
        v3: low.v3,
        v3p: low.v3p,
        v4: low.v4,
        v4p: low.v4p,
        v5,
        v6,
        v7,
    })
}

/// Exact null `E(G_q)` and `Var(G_q)`.
///
/// Every coincidence pattern among the time indices of two lagged
/// autocovariance terms is counted, including patterns that tie different
/// lags together (for instance `κ = 2τ`) and those that need `ν₃`. Real
/// data must supply `nu3`; complex data must be proper (`b = 0`).
pub fn exact_gq_moments(sigma0: &DMatrix<f64>, m: &InnovationMoments, q: usize, t: usize) -> Result<(f64, f64)> {
    if q == 0 || q >= t {
        return Err(Error::InvalidLag { lag: q, t });
    }
    let law = cumulant::Law::from_moments(m)?;
    Ok(cumulant::gq_moments(sigma0, law, q, t))
}

/// Exact null moments of `p ŝ₁²` and its covariance with `G_q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct S1sqMoments {
    pub mean: f64,
    pub var: f64,
    pub cov_gq: f64,
}

pub fn exact_s1sq_moments(sigma0: &DMatrix<f64>, m: &InnovationMoments, q: usize, t: usize) -> Result<S1sqMoments> {
    let v = moments_v(sigma0, m)?;
    let p = sigma0.nrows() as f64;
    let (q, t) = (q as f64, t as f64);
    if p == 0.0 {
        return Err(Error::InvalidInput("empty covariance".into()));
    }
    let (v1, v2) = (v.v1, v.v2);
    let pp = p * p;
    let mean = v1 * v1 / p - (v1 * v1 - v2) / (p * t);
    let var = v.v6 / (pp * t.powi(3))
        + (4.0 / (pp * t * t) - 4.0 / (pp * t.powi(3))) * v1 * v.v5
        + (2.0 / (pp * t * t) - 3.0 / (pp * t.powi(3))) * v2 * v2
        + (4.0 / (pp * t) - 16.0 / (pp * t * t) + 12.0 / (pp * t.powi(3))) * v1 * v1 * v2
        + (-4.0 / (pp * t) + 10.0 / (pp * t * t) - 6.0 / (pp * t.powi(3))) * v1.powi(4);
    let cov_gq = (4.0 * q / (p * t * t) - 10.0 * q / (p * t.powi(3))) * v1 * v1 * (v2 - v1 * v1)
        - 4.0 * q / (p * t.powi(3)) * v1.powi(4)
        + 2.0 * q / (p * t.powi(3)) * v1 * v.v5
        + 2.0 * q / (p * t.powi(3)) * v2 * v2
        + 4.0 * q / (p * t.powi(3)) * v.v7;
    Ok(S1sqMoments { mean, var, cov_gq })
}

/// Leading-order null moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadingMoments {
    pub e_ps1sq: f64,
    pub var_ps1sq: f64,
    pub e_s2_hat: f64,
    pub e_gq: f64,
    pub var_gq: f64,
    pub cov_gq_ps1sq: f64,
    pub e_gq1: f64,
    pub var_gq1: f64,
}

/// Leading-order expansions of the null moments.
///
/// The variance of `p ŝ₁²` uses `Tr D²(Σ₀)` in its `ν₄` term; the exact
/// formula confirms that the square belongs there.
pub fn prop42_leading(sigma0: &DMatrix<f64>, nu4: f64, q: usize, t: usize) -> LeadingMoments {
    let p = sigma0.nrows() as f64;
    let (q, t) = (q as f64, t as f64);
    let tr1 = trace(sigma0);
    let tr2 = trace(&(sigma0 * sigma0));
    let trd2 = tr_diag_sq(sigma0);
    let kappa = 2.0 * tr2 + (nu4 - 3.0) * trd2;
    LeadingMoments {
        e_ps1sq: tr1 * tr1 / p + kappa / (p * t),
        var_ps1sq: 8.0 / (p * p * t) * tr2 * tr1 * tr1 + 4.0 / (p * p * t) * (nu4 - 3.0) * tr1 * tr1 * trd2,
        e_s2_hat: tr2 / p + tr1 * tr1 / (p * t) + (tr2 + (nu4 - 3.0) * trd2) / (p * t),
        e_gq: q / t * tr1 * tr1,
        var_gq: 4.0 * q * q / t.powi(3) * tr1 * tr1 * kappa
            + 2.0 * q / (t * t) * tr2 * tr2
            + q / t.powi(3) * kappa * kappa,
        cov_gq_ps1sq: 4.0 * q / (p * t * t) * tr1 * tr1 * kappa,
        e_gq1: -q / (t * t) * kappa,
        var_gq1: 2.0 * q / (t * t) * tr2 * tr2 + q / t.powi(3) * kappa * kappa,
    }
}
