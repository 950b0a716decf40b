//! Split-sample estimation of the innovation fourth moment `ν₄`.
//!
//! Split the time indices into two groups of sizes `T₁`, `T₂` and form the
//! Fisher matrix `F = S₁⁻¹S₂` from the two sample covariances. Its spectrum
//! does not depend on `Σ₀`, but linear spectral statistics
//! `S_k = Σ_j log(a_k + b_k λ_j)` shift linearly in `ν₄`:
//! `E S_k ≈ u'_k + v_k ν₄`. The constants are calibrated by simulation under
//! Gaussian (`ν₄ = 3`) and Rademacher (`ν₄ = 1`) innovations, and `ν₄` is
//! then recovered from the K statistics by generalized least squares,
//! averaged over B random splits.
//!
//! The per-statistic signal `v_k` is small next to the sampling noise of
//! `S_k`, and the K statistics are strongly correlated. Ordinary least
//! squares therefore gives a very noisy estimate. Weighting by the inverse
//! of the pooled calibration covariance cuts the spread several-fold.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesMatrix;
use crate::error::{Error, Result};
use crate::simulation::{monte_carlo, Innovation};

pub const DEFAULT_TEST_FUNCTIONS: [(f64, f64); 5] = [(1.0, 1.0), (2.0, 1.0), (1.0, 2.0), (3.0, 1.0), (1.0, 3.0)];

/// Above this value the estimate is returned with a warning attached.
pub const NU4_WARN_ABOVE: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Number of random splits averaged.
    pub b: usize,
    /// First-group size; `⌊T/2⌋` when `None`.
    pub t1: Option<usize>,
    pub test_functions: Vec<(f64, f64)>,
    /// Replicates per calibration law.
    pub calibration_reps: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            b: 20,
            t1: None,
            test_functions: DEFAULT_TEST_FUNCTIONS.to_vec(),
            calibration_reps: 20_000,
            seed: 0x6e75_3400,
        }
    }
}

impl SplitConfig {
    fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(Error::InvalidInput("B must be positive".into()));
        }
        if self.test_functions.is_empty() {
            return Err(Error::InvalidInput("at least one test function is required".into()));
        }
        if self.test_functions.iter().any(|&(a, b)| !(a > 0.0 && b > 0.0)) {
            return Err(Error::InvalidInput("test functions need a_k, b_k > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nu4Diagnostics {
    /// Weighted residual norm of the regression for each split.
    pub residual_norms: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nu4Estimate {
    /// Split average, clamped at 1.
    pub nu4_hat: f64,
    /// Split average before clamping.
    pub nu4_raw: f64,
    pub per_split: Vec<f64>,
    pub diagnostics: Nu4Diagnostics,
}

fn sample_cov(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let sub = x.select_columns(cols);
    &sub * sub.transpose() / cols.len() as f64
}

fn generalized_eigs(s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> Result<Vec<f64>> {
    let p = s1.nrows();
    let chol = Cholesky::new(s1.clone()).ok_or_else(|| Error::SingularCovariance("S_1 is not positive definite".into()))?;
    let l = chol.l();
    let diag = l.diagonal();
    let (lo, hi) = (diag.min(), diag.max());
    if !(lo > 0.0) || (lo / hi).powi(2) < 1e-12 {
        return Err(Error::SingularCovariance(format!("S_1 is numerically singular (p = {p})")));
    }
    // C = L⁻¹ S₂ L⁻ᵀ is symmetric and shares the spectrum of S₁⁻¹S₂.
    let m = l.solve_lower_triangular(s2).expect("nonsingular triangle");
    let c = l.solve_lower_triangular(&m.transpose()).expect("nonsingular triangle");
    let sym = (&c + c.transpose()) * 0.5;
    let mut eig: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Eigenvalues of `S₁⁻¹S₂`, where `S₁` uses the columns `split[..t1]` and
/// `S₂` the rest.
pub fn fisher_eigenvalues(x: &DMatrix<f64>, split: &[usize], t1: usize) -> Result<Vec<f64>> {
    let (p, n) = x.shape();
    if split.len() != n || split.iter().any(|&i| i >= n) {
        return Err(Error::InvalidInput("split must be a permutation of the time indices".into()));
    }
    if t1 == 0 || t1 >= n || p >= t1 || p >= n - t1 {
        return Err(Error::InfeasibleDimension { p, t: n, reason: format!("Fisher matrix needs p < min(T1, T2), T1 = {t1}") });
    }
    generalized_eigs(&sample_cov(x, &split[..t1]), &sample_cov(x, &split[t1..]))
}

/// Uncentered linear spectral statistic `Σ_j log(a + b λ_j)`.
pub fn lss_statistic(eigenvalues: &[f64], a: f64, b: f64) -> Result<f64> {
    eigenvalues
        .iter()
        .map(|&l| {
            let arg = a + b * l;
            if arg > 0.0 {
                Ok(arg.ln())
            } else {
                Err(Error::Domain(format!("log argument {arg} <= 0")))
            }
        })
        .sum()
}

fn statistics(eigs: &[f64], tf: &[(f64, f64)]) -> Result<Vec<f64>> {
    tf.iter().map(|&(a, b)| lss_statistic(eigs, a, b)).collect()
}

/// Simulated regression constants for one `(p, T₁, T₂, test functions)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub p: usize,
    pub t1: usize,
    pub t2: usize,
    pub test_functions: Vec<(f64, f64)>,
    pub reps: usize,
    pub seed: u64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub mean_gaussian: Vec<f64>,
    pub mean_rademacher: Vec<f64>,
    /// Standard errors of the two sets of means.
    pub se_gaussian: Vec<f64>,
    pub se_rademacher: Vec<f64>,
    /// Inverse pooled covariance of the statistics, row-major K × K.
    pub weights: Vec<f64>,
}

/// Draws `reps` panels of i.i.d. innovations and returns the statistics.
pub fn simulate_statistics(
    innovation: Innovation,
    p: usize,
    t1: usize,
    t2: usize,
    tf: &[(f64, f64)],
    reps: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<Vec<f64>>> {
    let n = t1 + t2;
    let idx: Vec<usize> = (0..n).collect();
    monte_carlo(seed, stream, reps, None, |_, rng| {
        let z = innovation.sample_real(p, n, rng);
        fisher_eigenvalues(&z, &idx, t1).and_then(|e| statistics(&e, tf))
    })?
    .into_iter()
    .collect()
}

fn mean_cov(rows: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let k = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; k];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x / n;
        }
    }
    let mut cov = DMatrix::zeros(k, k);
    for r in rows {
        let d = DVector::from_iterator(k, r.iter().zip(&mean).map(|(x, m)| x - m));
        cov += &d * d.transpose();
    }
    (mean, cov / (n - 1.0))
}

/// Calibrates `u'_k`, `v_k` from Gaussian and Rademacher simulations:
/// `v = (Ē_G - Ē_R)/2`, `u' = Ē_R - v`.
pub fn calibrate_uv(p: usize, t1: usize, t2: usize, tf: &[(f64, f64)], reps: usize, seed: u64) -> Result<Calibration> {
    if reps < 50 {
        return Err(Error::InvalidInput(format!("calibration needs at least 50 replicates, got {reps}")));
    }
    if p >= t1.min(t2) {
        return Err(Error::InfeasibleDimension { p, t: t1 + t2, reason: "calibration needs p < min(T1, T2)".into() });
    }
    let g = simulate_statistics(Innovation::Gaussian, p, t1, t2, tf, reps, seed, 1)?;
    let r = simulate_statistics(Innovation::Rademacher, p, t1, t2, tf, reps, seed, 2)?;
    let (mg, cg) = mean_cov(&g);
    let (mr, cr) = mean_cov(&r);
    let k = tf.len();
    let v: Vec<f64> = mg.iter().zip(&mr).map(|(a, b)| (a - b) / 2.0).collect();
    let u: Vec<f64> = mr.iter().zip(&v).map(|(a, b)| a - b).collect();
    let se = |c: &DMatrix<f64>| (0..k).map(|i| (c[(i, i)] / reps as f64).sqrt()).collect::<Vec<_>>();
    let pooled = (&cg + &cr) * 0.5;
    let weights = invert_spd(&pooled);
    Ok(Calibration {
        p,
        t1,
        t2,
        test_functions: tf.to_vec(),
        reps,
        seed,
        u,
        v,
        se_gaussian: se(&cg),
        se_rademacher: se(&cr),
        mean_gaussian: mg,
        mean_rademacher: mr,
        weights: weights.transpose().as_slice().to_vec(),
    })
}

/// Inverse of a covariance matrix, with a small ridge if it is not
/// numerically positive definite (e.g. duplicated test functions).
fn invert_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let k = m.nrows();
    let scale = m.trace() / k as f64;
    let mut ridge = 0.0;
    for _ in 0..8 {
        let reg = m + DMatrix::identity(k, k) * ridge;
        if let Some(ch) = Cholesky::new(reg) {
            let inv = ch.inverse();
            if inv.iter().all(|v| v.is_finite()) {
                return inv;
            }
        }
        ridge = if ridge == 0.0 { 1e-10 * scale.max(1e-300) } else { ridge * 100.0 };
    }
    DMatrix::identity(k, k)
}

impl Calibration {
    fn weight_matrix(&self) -> DMatrix<f64> {
        let k = self.u.len();
        DMatrix::from_row_slice(k, k, &self.weights)
    }

    /// GLS solution of `S ≈ u' + v ν` and its weighted residual norm.
    pub fn solve(&self, s: &[f64]) -> (f64, f64) {
        let k = self.u.len();
        let w = self.weight_matrix();
        let v = DVector::from_column_slice(&self.v);
        let y = DVector::from_iterator(k, s.iter().zip(&self.u).map(|(a, b)| a - b));
        let wv = &w * &v;
        let nu = wv.dot(&y) / wv.dot(&v);
        let resid = &y - &v * nu;
        (nu, (resid.dot(&(&w * &resid))).max(0.0).sqrt())
    }

    /// Predicted mean of the statistics for a given `ν₄`.
    pub fn predicted_mean(&self, nu4: f64) -> Vec<f64> {
        self.u.iter().zip(&self.v).map(|(u, v)| u + v * nu4).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    p: usize,
    t1: usize,
    t2: usize,
    tf: Vec<(u64, u64)>,
    reps: usize,
    seed: u64,
}

fn cache() -> &'static Mutex<HashMap<CacheKey, Arc<Calibration>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<Calibration>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// [`calibrate_uv`] memoized on `(p, T₁, T₂, test functions, reps, seed)`.
pub fn calibration_cached(p: usize, t1: usize, t2: usize, cfg: &SplitConfig) -> Result<Arc<Calibration>> {
    cfg.validate()?;
    let key = CacheKey {
        p,
        t1,
        t2,
        tf: cfg.test_functions.iter().map(|&(a, b)| (a.to_bits(), b.to_bits())).collect(),
        reps: cfg.calibration_reps,
        seed: cfg.seed,
    };
    if let Some(c) = cache().lock().expect("cache lock").get(&key) {
        return Ok(c.clone());
    }
    let cal = Arc::new(calibrate_uv(p, t1, t2, &cfg.test_functions, cfg.calibration_reps, cfg.seed)?);
    cache().lock().expect("cache lock").insert(key, cal.clone());
    Ok(cal)
}

/// Estimates `ν₄` with a calibration computed (or fetched) for the data's shape.
pub fn estimate_nu4(x: &TimeSeriesMatrix, cfg: &SplitConfig) -> Result<Nu4Estimate> {
    let m = x.require_real("nu4 estimation")?;
    let (p, n) = m.shape();
    check_feasible(p, n)?;
    let t1 = cfg.t1.unwrap_or(n / 2);
    let cal = calibration_cached(p, t1, n - t1, cfg)?;
    estimate_nu4_with(x, cfg, &cal)
}

fn check_feasible(p: usize, n: usize) -> Result<()> {
    if 2 * p >= n {
        return Err(Error::InfeasibleDimension { p, t: n, reason: "nu4 estimation needs p < T/2".into() });
    }
    Ok(())
}

/// Estimates `ν₄` against a given calibration.
pub fn estimate_nu4_with(x: &TimeSeriesMatrix, cfg: &SplitConfig, cal: &Calibration) -> Result<Nu4Estimate> {
    cfg.validate()?;
    let m = x.require_real("nu4 estimation")?;
    let (p, n) = m.shape();
    check_feasible(p, n)?;
    let t1 = cfg.t1.unwrap_or(n / 2);
    if cal.p != p || cal.t1 != t1 || cal.t2 != n - t1 || cal.test_functions != cfg.test_functions {
        return Err(Error::InvalidInput("calibration does not match the data shape or test functions".into()));
    }
    let mut per_split = Vec::with_capacity(cfg.b);
    let mut residual_norms = Vec::with_capacity(cfg.b);
    let mut idx: Vec<usize> = (0..n).collect();
    for b in 0..cfg.b {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(b as u64);
        idx.sort_unstable();
        idx.shuffle(&mut rng);
        let eigs = fisher_eigenvalues(m, &idx, t1)?;
        let s = statistics(&eigs, &cfg.test_functions)?;
        let (nu, res) = cal.solve(&s);
        per_split.push(nu);
        residual_norms.push(res);
    }
    let raw = per_split.iter().sum::<f64>() / cfg.b as f64;
    let mut warnings = Vec::new();
    if raw > NU4_WARN_ABOVE {
        warnings.push(format!("nu4 estimate {raw:.3} exceeds {NU4_WARN_ABOVE}"));
    }
    if raw < 1.0 {
        warnings.push(format!("nu4 estimate {raw:.3} clamped to 1"));
    }
    Ok(Nu4Estimate { nu4_hat: raw.max(1.0), nu4_raw: raw, per_split, diagnostics: Nu4Diagnostics { residual_norms, warnings } })
}

/// Limiting spectral law of `S₁⁻¹S₂` with `c₁ = p/T₂`, `c₂ = p/T₁`.
///
/// `c₂` belongs to the inverted matrix and must be below 1. When `c₁ > 1`
/// the law also has an atom of mass `1 - 1/c₁` at zero, which the density
/// below does not include.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WachterLaw {
    pub c1: f64,
    pub c2: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn validate_wachter(c1: f64, c2: f64) -> Result<WachterLaw> {
    if !(c1 > 0.0) || !(c2 > 0.0 && c2 < 1.0) {
        return Err(Error::Domain(format!("Wachter law needs c1 > 0 and 0 < c2 < 1 (c1 = {c1}, c2 = {c2})")));
    }
    let h = (c1 + c2 - c1 * c2).sqrt();
    let d = (1.0 - c2).powi(2);
    Ok(WachterLaw { c1, c2, lower: (1.0 - h).powi(2) / d, upper: (1.0 + h).powi(2) / d })
}

impl WachterLaw {
    pub fn density(&self, x: f64) -> f64 {
        if x <= self.lower || x >= self.upper {
            return 0.0;
        }
        let (a, b) = (self.lower, self.upper);
        (1.0 - self.c2) * ((b - x) * (x - a)).sqrt() / (2.0 * std::f64::consts::PI * x * (self.c1 + self.c2 * x))
    }

    /// Mass of the continuous part on `[lower, x]`.
    ///
    /// The substitution `x = m - r cos θ` removes both square-root endpoints.
    /// When `h` is close to 1 the lower edge nears the pole at 0, so the
    /// panels are refined adaptively.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lower {
            return 0.0;
        }
        let x = x.min(self.upper);
        let (m, r) = (0.5 * (self.lower + self.upper), 0.5 * (self.upper - self.lower));
        let theta_hi = ((m - x) / r).clamp(-1.0, 1.0).acos();
        let f = |th: f64| {
            let xx = m - r * th.cos();
            // (b-x)(x-a) = r² sin²θ, dx = r sin θ dθ
            (1.0 - self.c2) * r * r * th.sin().powi(2)
                / (2.0 * std::f64::consts::PI * xx * (self.c1 + self.c2 * xx))
        };
        adaptive_gauss_legendre(&f, 0.0, theta_hi, 1e-14, 30)
    }

    /// Total continuous mass: 1 when `c₁ ≤ 1`, `1/c₁` otherwise.
    pub fn total_mass(&self) -> f64 {
        self.cdf(self.upper)
    }
}

const GL_NODES: [(f64, f64); 8] = [
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
];

fn gauss_legendre<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    GL_NODES.iter().map(|&(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

fn adaptive_gauss_legendre<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let whole = gauss_legendre(f, a, b);
    let m = 0.5 * (a + b);
    let (left, right) = (gauss_legendre(f, a, m), gauss_legendre(f, m, b));
    if depth == 0 || (left + right - whole).abs() <= tol {
        left + right
    } else {
        adaptive_gauss_legendre(f, a, m, tol, depth - 1) + adaptive_gauss_legendre(f, m, b, tol, depth - 1)
    }
}

/// Kolmogorov–Smirnov distance between eigenvalues and the Wachter law.
pub fn wachter_ks(eigenvalues: &[f64], law: &WachterLaw) -> f64 {
    let mut e = eigenvalues.to_vec();
    e.sort_by(f64::total_cmp);
    let n = e.len() as f64;
    e.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = law.cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn duplicate_halves_give_unit_eigenvalues() {
        let half = DMatrix::from_fn(3, 8, |i, j| ((i * 5 + j * 3) % 7) as f64 - 3.0);
        let x = DMatrix::from_fn(3, 16, |i, j| half[(i, j % 8)]);
        let split: Vec<usize> = (0..16).collect();
        for l in fisher_eigenvalues(&x, &split, 8).unwrap() {
            assert_relative_eq!(l, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn scalar_case_is_variance_ratio() {
        let x = DMatrix::from_row_slice(1, 6, &[1., -2., 3., 0.5, 0.5, -1.]);
        let split = [0, 1, 2, 3, 4, 5];
        let e = fisher_eigenvalues(&x, &split, 3).unwrap();
        let v1 = (1. + 4. + 9.) / 3.0;
        let v2 = (0.25 + 0.25 + 1.0) / 3.0;
        assert_relative_eq!(e[0], v2 / v1, epsilon = 1e-14);
    }

    #[test]
    fn lss_examples() {
        assert_relative_eq!(lss_statistic(&[1.0; 4], 1.0, 1.0).unwrap(), 4.0 * 2f64.ln());
        let a = 0.5;
        assert_relative_eq!(lss_statistic(&[std::f64::consts::E - a], a, 1.0).unwrap(), 1.0, epsilon = 1e-15);
        assert!(lss_statistic(&[-2.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn infeasible_dimensions() {
        let x = TimeSeriesMatrix::real(DMatrix::from_fn(10, 20, |i, j| (i * j) as f64)).unwrap();
        assert!(matches!(estimate_nu4(&x, &SplitConfig::default()), Err(Error::InfeasibleDimension { .. })));
    }

    #[test]
    fn wachter_support_and_mass() {
        let law = validate_wachter(0.2, 0.2).unwrap();
        assert_relative_eq!(law.lower, 0.25, epsilon = 1e-14);
        assert_relative_eq!(law.upper, 4.0, epsilon = 1e-14);
        for (c1, c2) in [(0.2, 0.2), (0.1, 0.4), (0.4, 0.1), (0.9, 0.5), (0.9, 0.9), (0.05, 0.5)] {
            let law = validate_wachter(c1, c2).unwrap();
            assert!((law.total_mass() - 1.0).abs() < 1e-6, "{c1} {c2}: {}", law.total_mass());
        }
        let law = validate_wachter(2.0, 0.3).unwrap();
        assert!((law.total_mass() - 0.5).abs() < 1e-6);
        assert!(validate_wachter(0.2, 1.0).is_err());
    }

    #[test]
    fn gls_recovers_exact_linear_data() {
        let cal = Calibration {
            p: 1,
            t1: 2,
            t2: 2,
            test_functions: vec![(1.0, 1.0), (2.0, 1.0)],
            reps: 50,
            seed: 0,
            u: vec![1.0, 2.0],
            v: vec![0.5, -0.25],
            mean_gaussian: vec![],
            mean_rademacher: vec![],
            se_gaussian: vec![],
            se_rademacher: vec![],
            weights: vec![2.0, 0.3, 0.3, 1.0],
        };
        let (nu, res) = cal.solve(&cal.predicted_mean(4.2));
        assert_relative_eq!(nu, 4.2, epsilon = 1e-12);
        assert!(res < 1e-12);
    }
}
