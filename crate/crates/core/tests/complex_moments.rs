//! Monte Carlo check of the exact `G_q` moments for proper complex data.

use hdwn::moments::{exact_gq_moments, InnovationMoments};
use hdwn::simulation::monte_carlo;
use hdwn::stats::g_q;
use hdwn::TimeSeriesMatrix;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn complex_gq_moments_match_simulation() {
    let (p, t, q, reps) = (3usize, 16usize, 2usize, 200_000usize);
    let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.0, 0.8, -0.4, 0.2, 0.0, 1.1]);
    let sigma = &a * a.transpose();
    let (mean, var) = exact_gq_moments(&sigma, &InnovationMoments::complex_gaussian(), q, t).unwrap();

    let draws = monte_carlo(31, 0, reps, None, |_, rng| {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let z = DMatrix::from_fn(p, t, |_, _| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re * s, im * s)
        });
        let x = a.map(|v| Complex64::new(v, 0.0)) * z;
        g_q(&TimeSeriesMatrix::complex(x).unwrap(), q).unwrap()
    })
    .unwrap();
    let n = reps as f64;
    let m1 = draws.iter().sum::<f64>() / n;
    let c2: Vec<f64> = draws.iter().map(|g| (g - m1).powi(2)).collect();
    let v_hat = c2.iter().sum::<f64>() / (n - 1.0);
    let se_mean = (v_hat / n).sqrt();
    let se_var = (c2.iter().map(|d| (d - v_hat).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let (z_mean, z_var) = ((m1 - mean) / se_mean, (v_hat - var) / se_var);
    assert!(z_mean.abs() < 3.5, "mean {m1} vs {mean} (z = {z_mean})");
    assert!(z_var.abs() < 3.5, "variance {v_hat} vs {var} (z = {z_var})");
}
