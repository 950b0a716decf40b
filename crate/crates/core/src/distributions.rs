//! Normal and chi-square distribution functions.
//!
//! The chi-square routines have to stay accurate for degrees of freedom in
//! the millions (p = 900 and q = 3 already gives 2.43e6), so the incomplete
//! gamma prefactor is evaluated in a form that avoids subtracting two huge
//! log-gamma values.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const MAX_ITER: usize = 10_000_000;

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail `1 - Φ(z)`, accurate far into the tail.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

/// Upper-α quantile `Z_α` of the standard normal law.
pub fn normal_upper_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} outside (0, 1)")));
    }
    let mut z = std::f64::consts::SQRT_2 * erfc_inv(2.0 * alpha);
    // Newton polish on the tail that is small in magnitude.
    for _ in 0..2 {
        let d = normal_pdf(z);
        if d <= 0.0 {
            break;
        }
        let err = if alpha < 0.5 { normal_sf(z) - alpha } else { (1.0 - alpha) - normal_cdf(z) };
        let step = if alpha < 0.5 { err / d } else { -err / d };
        z += step;
    }
    Ok(z)
}

/// `lnΓ(a) - [(a - ½)ln a - a + ln√(2π)]`, the Stirling remainder.
fn stirlerr(a: f64) -> f64 {
    if a < 15.0 {
        ln_gamma(a) - ((a - 0.5) * a.ln() - a + LN_SQRT_2PI)
    } else {
        let a2 = a * a;
        (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * a2)) / a2) / a2) / a
    }
}

/// `ln(x^a e^{-x} / Γ(a))` without cancellation for large `a`.
fn ln_gamma_prefactor(a: f64, x: f64) -> f64 {
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    let u = (x - a) / a;
    let lead = if u.abs() < 0.5 {
        a * (u.ln_1p() - u)
    } else {
        a * (x / a).ln() - (x - a)
    };
    lead + 0.5 * a.ln() - LN_SQRT_2PI - stirlerr(a)
}

/// Regularized incomplete gamma pair `(P(a, x), Q(a, x))`.
pub fn gamma_pq(a: f64, x: f64) -> Result<(f64, f64)> {
    if !(a > 0.0) || !(x >= 0.0) {
        return Err(Error::Domain(format!("incomplete gamma needs a > 0, x >= 0 (a = {a}, x = {x})")));
    }
    if x == 0.0 {
        return Ok((0.0, 1.0));
    }
    if x.is_infinite() {
        return Ok((1.0, 0.0));
    }
    let lf = ln_gamma_prefactor(a, x);
    if x < a + 1.0 {
        // Series: P = x^a e^-x / Γ(a+1) * Σ x^n / ((a+1)...(a+n)).
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut n = 0;
        while n < MAX_ITER {
            n += 1;
            term *= x / (a + n as f64);
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
        }
        let p = (lf + sum.ln() - a.ln()).exp().min(1.0);
        Ok((p, 1.0 - p))
    } else {
        // Modified Lentz evaluation of the continued fraction for Q.
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        let mut i = 1;
        while i < MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
            i += 1;
        }
        let q = (lf + h.ln()).exp().min(1.0);
        Ok((1.0 - q, q))
    }
}

fn check_dof(dof: f64) -> Result<()> {
    if !(dof >= 1.0) || !dof.is_finite() {
        return Err(Error::Domain(format!("chi-square dof = {dof} must be >= 1")));
    }
    Ok(())
}

/// Chi-square CDF with `dof` degrees of freedom.
pub fn chi2_cdf(x: f64, dof: f64) -> Result<f64> {
    check_dof(dof)?;
    if x.is_nan() {
        return Err(Error::Domain("chi-square argument is NaN".into()));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    Ok(gamma_pq(0.5 * dof, 0.5 * x)?.0)
}

/// Chi-square upper tail `P(χ² > x)`.
pub fn chi2_sf(x: f64, dof: f64) -> Result<f64> {
    check_dof(dof)?;
    if x.is_nan() {
        return Err(Error::Domain("chi-square argument is NaN".into()));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    Ok(gamma_pq(0.5 * dof, 0.5 * x)?.1)
}

fn chi2_pdf(x: f64, dof: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    (ln_gamma_prefactor(0.5 * dof, 0.5 * x) - x.ln()).exp()
}

/// Wilson–Hilferty approximation to the upper-α chi-square quantile.
pub fn wilson_hilferty(alpha: f64, dof: f64) -> Result<f64> {
    let z = normal_upper_quantile(alpha)?;
    let h = 2.0 / (9.0 * dof);
    Ok(dof * (1.0 - h + z * h.sqrt()).powi(3).max(0.0))
}

/// Upper-α quantile `χ²_{α,dof}`: the point with upper tail probability α.
///
/// Safeguarded Newton iteration on whichever tail is smaller, started from
/// Wilson–Hilferty and kept inside a shrinking bracket.
pub fn chi2_upper_quantile(alpha: f64, dof: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} outside (0, 1)")));
    }
    check_dof(dof)?;
    let use_upper = alpha < 0.5;
    // g(x) increases in x in both branches.
    let g = |x: f64| -> Result<f64> {
        Ok(if use_upper { alpha - chi2_sf(x, dof)? } else { chi2_cdf(x, dof)? - (1.0 - alpha) })
    };
    let mut lo = 0.0;
    let mut hi = dof.max(1.0);
    while g(hi)? < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = wilson_hilferty(alpha, dof)?;
    if !(x > lo && x < hi) {
        x = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let gx = g(x)?;
        if gx.abs() < 1e-15 {
            break;
        }
        if gx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = chi2_pdf(x, dof);
        let mut next = if d > 0.0 { x - gx / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.max(1.0) || hi - lo <= 1e-15 * hi {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn normal_basics() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!(normal_upper_quantile(0.5).unwrap().abs() < 1e-15);
        assert_relative_eq!(normal_upper_quantile(0.05).unwrap(), 1.6448536269514722, epsilon = 1e-12);
        assert!(normal_upper_quantile(0.0).is_err());
        assert!(normal_upper_quantile(1.0).is_err());
    }

    #[test]
    fn normal_round_trip() {
        for &a in &[1e-10, 1e-4, 0.01, 0.05, 0.3, 0.5, 0.7, 0.95, 0.999] {
            let z = normal_upper_quantile(a).unwrap();
            assert!((normal_cdf(z) - (1.0 - a)).abs() < 1e-12, "alpha {a}");
        }
    }

    #[test]
    fn incomplete_gamma_closed_forms() {
        // P(1, x) = 1 - e^-x
        for &x in &[0.1, 1.0, 3.0, 20.0] {
            let (p, q) = gamma_pq(1.0, x).unwrap();
            assert_relative_eq!(p, 1.0 - (-x as f64).exp(), epsilon = 1e-14);
            assert_relative_eq!(q, (-x as f64).exp(), max_relative = 1e-12);
        }
    }

    #[test]
    fn chi2_known_quantiles() {
        assert_relative_eq!(chi2_upper_quantile(0.05, 1.0).unwrap(), 3.841458820694124, epsilon = 1e-9);
        assert_relative_eq!(chi2_upper_quantile(0.05, 10.0).unwrap(), 18.307038053275146, epsilon = 1e-9);
        assert_relative_eq!(chi2_upper_quantile(0.05, 2500.0).unwrap(), 2617.4, epsilon = 0.1);
    }

    #[test]
    fn chi2_huge_dof_matches_wilson_hilferty() {
        let m = 1e6;
        let q = chi2_upper_quantile(0.05, m).unwrap();
        let wh = wilson_hilferty(0.05, m).unwrap();
        assert!(((q - wh) / wh).abs() < 1e-3);
        let m = 2.43e6;
        let q = chi2_upper_quantile(0.05, m).unwrap();
        assert!((chi2_cdf(q, m).unwrap() - 0.95).abs() < 1e-9);
    }

    #[test]
    fn chi2_median_region() {
        for &m in &[1.0, 7.0, 100.0, 1e4, 1e7] {
            let c = chi2_cdf(m, m).unwrap();
            assert!(c > 0.4 && c < 0.7, "dof {m}: {c}");
        }
    }

    #[test]
    fn chi2_domain_errors() {
        assert!(chi2_cdf(1.0, 0.5).is_err());
        assert!(chi2_upper_quantile(1.5, 3.0).is_err());
        assert_eq!(chi2_cdf(-1.0, 3.0).unwrap(), 0.0);
    }
}
