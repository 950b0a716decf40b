//! End-to-end reproduction checks. Each test prints one PASS/FAIL line and
//! then asserts. The line goes straight to stderr, past the harness's output
//! capture, so it shows up in a plain `cargo test` run as well.

use std::fmt::Write as _;
use std::io::Write as _;

use hdwn::classical::{diagnostics_moments, hosking_statistic, portmanteau_traces};
use hdwn::distributions::{chi2_cdf, chi2_upper_quantile, normal_cdf, normal_upper_quantile};
use hdwn::moments::{exact_gq_moments, exact_s1sq_moments, moments_v, InnovationMoments};
use hdwn::nu4::{self, fisher_eigenvalues, validate_wachter, wachter_ks, SplitConfig};
use hdwn::power::{power_beta, VmaSpec};
use hdwn::simulation::{
    monte_carlo, run, Alternative, Cell, Innovation, ModelSpec, PreparedModel, SimulationPlan,
    SimulationTable,
};
use hdwn::stats::{g_q, g_q_svd};
use hdwn::{TestKind, TimeSeriesMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Collects sub-checks and reports them as one line.
struct Scorecard {
    name: &'static str,
    failures: Vec<String>,
    notes: String,
}

impl Scorecard {
    fn new(name: &'static str) -> Self {
        Scorecard { name, failures: Vec::new(), notes: String::new() }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if !self.notes.is_empty() {
            self.notes.push_str("; ");
        }
        self.notes.push_str(&what);
        if !ok {
            self.failures.push(what);
        }
    }

    fn finish(self) {
        let verdict = if self.failures.is_empty() { "PASS" } else { "FAIL" };
        let line = format!("{verdict} {}: {}\n", self.name, self.notes);
        let _ = std::io::stderr().lock().write_all(line.as_bytes());
        assert!(self.failures.is_empty(), "{} failed: {:?}", self.name, self.failures);
    }
}

fn null_cell(p: usize, t: usize, qs: &[usize]) -> Cell {
    Cell { p, t, qs: qs.to_vec(), model: ModelSpec::null(Innovation::Gaussian) }
}

fn plan(cells: Vec<Cell>, tests: &[TestKind], seed: u64) -> SimulationPlan {
    SimulationPlan { cells, replicates: 2000, alpha: 0.05, tests: tests.to_vec(), seed, threads: None, nu4: None }
}

fn rate(table: &SimulationTable, cell: usize, q: usize, test: TestKind) -> f64 {
    let row = table.find(cell, q, test).expect("row present");
    assert!(row.skipped.is_none(), "row skipped: {:?}", row.skipped);
    row.rate
}

#[test]
fn criterion_1_size_reproduction() {
    let mut card = Scorecard::new("criterion 1 (null sizes)");
    // (p, T, [G_q q=1, q=3], [G_{q,1} q=1, q=3])
    let reference = [
        (10, 100, [0.0570, 0.0555], [0.0555, 0.0570]),
        (50, 100, [0.0520, 0.0465], [0.0480, 0.0520]),
        (90, 100, [0.0555, 0.0580], [0.0460, 0.0455]),
        (200, 400, [0.0400, 0.0415], [0.0505, 0.0545]),
    ];
    let cells = reference.iter().map(|&(p, t, _, _)| null_cell(p, t, &[1, 3])).collect();
    let table = run(&plan(cells, &[TestKind::Gq, TestKind::Gq1], 101)).unwrap();
    for (ci, &(p, t, gq, gq1)) in reference.iter().enumerate() {
        for (qi, q) in [1usize, 3].into_iter().enumerate() {
            for (kind, want) in [(TestKind::Gq, gq[qi]), (TestKind::Gq1, gq1[qi])] {
                let got = rate(&table, ci, q, kind);
                card.check((got - want).abs() <= 0.015, format!("{kind}({p},{t},q={q}) {got:.4} vs {want:.4}"));
            }
        }
    }
    let classical = run(&plan(vec![null_cell(50, 100, &[1, 3])], &[TestKind::Hosking, TestKind::LiMcLeod], 102)).unwrap();
    for q in [1, 3] {
        for kind in [TestKind::Hosking, TestKind::LiMcLeod] {
            let got = rate(&classical, 0, q, kind);
            card.check(got <= 0.005, format!("{kind}(50,100,q={q}) {got:.4} <= 0.005"));
        }
    }
    card.finish();
}

fn var1_cell(p: usize, t: usize, a: f64, qs: &[usize]) -> Cell {
    Cell { p, t, qs: qs.to_vec(), model: ModelSpec::with_alternative(Innovation::Gaussian, Alternative::Var1 { a }) }
}

#[test]
fn criterion_2_var1_power() {
    let mut card = Scorecard::new("criterion 2 (VAR(1) power)");
    let cells = vec![var1_cell(100, 100, 0.1, &[1]), var1_cell(200, 100, 0.1, &[3])];
    let table = run(&plan(cells, &[TestKind::Gq, TestKind::Gq1], 201)).unwrap();
    let gq = rate(&table, 0, 1, TestKind::Gq);
    let gq1 = rate(&table, 0, 1, TestKind::Gq1);
    let wide = rate(&table, 1, 3, TestKind::Gq1);
    card.check((gq - 0.2615).abs() <= 0.03, format!("G_q(100,100) {gq:.4} vs 0.2615"));
    card.check((gq1 - 0.6170).abs() <= 0.03, format!("G_q1(100,100) {gq1:.4} vs 0.6170"));
    card.check(wide >= 0.99, format!("G_q1(200,100,q=3) {wide:.4} >= 0.99"));
    card.finish();
}

#[test]
fn criterion_3_vma1_power_and_theory() {
    let mut card = Scorecard::new("criterion 3 (VMA(1) power)");
    let cell = Cell {
        p: 100,
        t: 100,
        qs: vec![1],
        model: ModelSpec::with_alternative(Innovation::Gaussian, Alternative::Vma1V { a: 0.07 }),
    };
    let table = run(&plan(vec![cell], &[TestKind::Gq1], 301)).unwrap();
    let emp = rate(&table, 0, 1, TestKind::Gq1);
    card.check((emp - 0.2670).abs() <= 0.04, format!("empirical G_11 {emp:.4} vs 0.2670"));
    for (p, t, want) in [(100usize, 100usize, 0.2754), (400, 200, 0.9500)] {
        let beta = power_beta(&VmaSpec::scaled_identity(p, 0.07), t, 3.0, 0.05).unwrap().beta;
        card.check((beta - want).abs() <= 0.002, format!("beta({p},{t}) {beta:.4} vs {want:.4}"));
    }
    card.finish();
}

#[test]
fn criterion_4_nu4_estimator() {
    let mut card = Scorecard::new("criterion 4 (nu4 estimator)");
    let (p, t, reps) = (20usize, 200usize, 2000usize);
    let cfg = SplitConfig::default();
    let cal = nu4::calibration_cached(p, t / 2, t - t / 2, &cfg).unwrap();
    for (inn, lo, hi) in [(Innovation::Gaussian, 2.85, 3.15), (Innovation::GammaIi, 4.2, 4.8)] {
        let model = PreparedModel::new(ModelSpec::null(inn), p).unwrap();
        let est = monte_carlo(401, inn as u64, reps, None, |_, rng| {
            let x = model.generate(t, rng).unwrap();
            nu4::estimate_nu4_with(&x, &cfg, &cal).unwrap().nu4_hat
        })
        .unwrap();
        let mean = est.iter().sum::<f64>() / reps as f64;
        let sd = (est.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        card.check(mean >= lo && mean <= hi, format!("{inn:?} mean {mean:.3} (sd {sd:.3}) in [{lo}, {hi}]"));
    }
    card.finish();
}

/// Running sums of deviations from a reference value, enough for the mean,
/// variance and their standard errors.
#[derive(Clone, Copy, Default)]
struct Moments4 {
    n: f64,
    s: [f64; 4],
}

impl Moments4 {
    fn push(&mut self, d: f64) {
        self.n += 1.0;
        let mut pw = d;
        for s in &mut self.s {
            *s += pw;
            pw *= d;
        }
    }

    fn merge(&mut self, o: &Moments4) {
        self.n += o.n;
        for (a, b) in self.s.iter_mut().zip(&o.s) {
            *a += b;
        }
    }

    fn raw(&self, k: usize) -> f64 {
        self.s[k - 1] / self.n
    }

    fn mean_dev(&self) -> f64 {
        self.raw(1)
    }

    fn var(&self) -> f64 {
        self.raw(2) - self.raw(1).powi(2)
    }

    fn mean_se(&self) -> f64 {
        (self.var() / self.n).sqrt()
    }

    fn var_se(&self) -> f64 {
        let m = self.raw(1);
        let m4 = self.raw(4) - 4.0 * m * self.raw(3) + 6.0 * m * m * self.raw(2) - 3.0 * m.powi(4);
        ((m4 - self.var().powi(2)) / self.n).sqrt()
    }
}

/// Sums for the covariance of two deviations and its standard error.
#[derive(Clone, Copy, Default)]
struct CrossSums {
    n: f64,
    x: f64,
    y: f64,
    xy: f64,
    xy2: f64,
}

impl CrossSums {
    fn push(&mut self, dx: f64, dy: f64) {
        self.n += 1.0;
        self.x += dx;
        self.y += dy;
        self.xy += dx * dy;
        self.xy2 += (dx * dy).powi(2);
    }

    fn merge(&mut self, o: &CrossSums) {
        self.n += o.n;
        self.x += o.x;
        self.y += o.y;
        self.xy += o.xy;
        self.xy2 += o.xy2;
    }

    fn cov(&self) -> f64 {
        self.xy / self.n - (self.x / self.n) * (self.y / self.n)
    }

    fn se(&self) -> f64 {
        ((self.xy2 / self.n - (self.xy / self.n).powi(2)) / self.n).sqrt()
    }
}

const ORACLE_Q: [usize; 2] = [1, 3];
const N_V: usize = 7;

#[derive(Clone, Copy, Default)]
struct OracleSums {
    v: [Moments4; N_V],
    gq: [Moments4; 2],
    s1sq: Moments4,
    cross: [CrossSums; 2],
}

fn quad(s: &DMatrix<f64>, a: &nalgebra::DVectorView<f64>, b: &nalgebra::DVectorView<f64>) -> f64 {
    a.dot(&(s * b))
}

#[test]
fn criterion_5_moment_oracle() {
    let mut card = Scorecard::new("criterion 5 (moment oracle)");
    let (p, t) = (3usize, 20usize);
    let mut rng = ChaCha8Rng::seed_from_u64(501);
    let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    let sigma = &a * a.transpose() + DMatrix::identity(p, p) * 0.2;
    let half = {
        let e = sigma.clone().symmetric_eigen();
        &e.eigenvectors * DMatrix::from_diagonal(&e.eigenvalues.map(f64::sqrt)) * e.eigenvectors.transpose()
    };
    let (chunks, per_chunk) = (1000usize, 1000usize);
    for (inn, m) in [(Innovation::Gaussian, InnovationMoments::gaussian()), (Innovation::GammaIi, InnovationMoments::gamma_ii())] {
        let v = moments_v(&sigma, &m).unwrap();
        let v_theory = [v.v1, v.v2, v.v3, v.v4, v.v5, v.v6, v.v7];
        let gq_theory: Vec<(f64, f64)> = ORACLE_Q.iter().map(|&q| exact_gq_moments(&sigma, &m, q, t).unwrap()).collect();
        let s1_theory: Vec<_> = ORACLE_Q.iter().map(|&q| exact_s1sq_moments(&sigma, &m, q, t).unwrap()).collect();

        let parts = monte_carlo(502, inn as u64, chunks, None, |_, rng| {
            let mut acc = OracleSums::default();
            for _ in 0..per_chunk {
                let z = inn.sample_real(p, t, rng);
                let (z0, z1, z2) = (z.column(0), z.column(1), z.column(2));
                let q00 = quad(&sigma, &z0, &z0);
                let q01 = quad(&sigma, &z0, &z1);
                let q02 = quad(&sigma, &z0, &z2);
                let q11 = quad(&sigma, &z1, &z1);
                let q22 = quad(&sigma, &z2, &z2);
                let draws = [
                    q00,
                    q00 * q00,
                    q01 * q01,
                    q01 * q01 * q02 * q02,
                    q00.powi(3),
                    q00.powi(4),
                    q01 * q11 * q02 * q22,
                ];
                for (k, d) in draws.iter().enumerate() {
                    acc.v[k].push(d - v_theory[k]);
                }
                let x = TimeSeriesMatrix::real(&half * &z).unwrap();
                let s1 = x.as_real().unwrap().norm_squared() / (p * t) as f64;
                let ds = p as f64 * s1 * s1 - s1_theory[0].mean;
                acc.s1sq.push(ds);
                for (qi, &q) in ORACLE_Q.iter().enumerate() {
                    let dg = g_q(&x, q).unwrap() - gq_theory[qi].0;
                    acc.gq[qi].push(dg);
                    acc.cross[qi].push(dg, ds);
                }
            }
            acc
        })
        .unwrap();
        let mut tot = OracleSums::default();
        for part in &parts {
            for k in 0..N_V {
                tot.v[k].merge(&part.v[k]);
            }
            for qi in 0..ORACLE_Q.len() {
                tot.gq[qi].merge(&part.gq[qi]);
                tot.cross[qi].merge(&part.cross[qi]);
            }
            tot.s1sq.merge(&part.s1sq);
        }

        let within = |card: &mut Scorecard, label: String, diff: f64, se: f64| {
            let z = diff / se;
            card.check(z.abs() <= 3.0, format!("{inn:?} {label} z={z:+.2}"));
        };
        for (k, name) in ["V1", "V2", "V3", "V4", "V5", "V6", "V7"].iter().enumerate() {
            within(&mut card, name.to_string(), tot.v[k].mean_dev(), tot.v[k].mean_se());
        }
        // Real data: V3' and V4' coincide with V3 and V4.
        let mut extra = String::new();
        let _ = write!(extra, "V3'-V3 {:.1e}, V4'-V4 {:.1e}", v.v3p - v.v3, v.v4p - v.v4);
        card.check((v.v3p - v.v3).abs() < 1e-12 * v.v3 && (v.v4p - v.v4).abs() < 1e-10 * v.v4, extra);
        for (qi, &q) in ORACLE_Q.iter().enumerate() {
            within(&mut card, format!("E G_{q}"), tot.gq[qi].mean_dev(), tot.gq[qi].mean_se());
            within(&mut card, format!("Var G_{q}"), tot.gq[qi].var() - gq_theory[qi].1, tot.gq[qi].var_se());
            within(&mut card, format!("Cov(G_{q}, ps1^2)"), tot.cross[qi].cov() - s1_theory[qi].cov_gq, tot.cross[qi].se());
        }
        within(&mut card, "E ps1^2".into(), tot.s1sq.mean_dev(), tot.s1sq.mean_se());
        within(&mut card, "Var ps1^2".into(), tot.s1sq.var() - s1_theory[0].var, tot.s1sq.var_se());
    }
    card.finish();
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn criterion_6_property_suites() {
    let mut card = Scorecard::new("criterion 6 (properties)");
    let mut rng = ChaCha8Rng::seed_from_u64(601);
    let (p, t) = (12usize, 40usize);
    let m = DMatrix::from_fn(p, t, |_, _| rng.random_range(-1.0..1.0));
    let x = TimeSeriesMatrix::real(m.clone()).unwrap();

    // Orthogonal rotation, circular shift and scaling of G_q.
    let qr = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0)).qr();
    let rotated = TimeSeriesMatrix::real(qr.q() * &m).unwrap();
    let shifted = TimeSeriesMatrix::real(DMatrix::from_fn(p, t, |i, j| m[(i, (j + 7) % t)])).unwrap();
    let scaled = TimeSeriesMatrix::real(&m * 2.5).unwrap();
    let mut worst = [0.0f64; 4];
    for q in 1..=3 {
        let g = g_q(&x, q).unwrap();
        worst[0] = worst[0].max(rel(g_q(&rotated, q).unwrap(), g));
        worst[1] = worst[1].max(rel(g_q(&shifted, q).unwrap(), g));
        worst[2] = worst[2].max(rel(g_q(&scaled, q).unwrap(), 2.5f64.powi(4) * g));
        worst[3] = worst[3].max(rel(g_q_svd(&x, q).unwrap(), g));
    }
    card.check(worst[0] < 1e-9 && worst[1] < 1e-9 && worst[2] < 1e-9, format!("G_q invariances max rel {:.1e}", worst[..3].iter().fold(0.0f64, |a, &b| a.max(b))));
    card.check(worst[3] < 1e-10, format!("trace vs SVD {:.1e}", worst[3]));

    // Affine invariance of the portmanteau statistics.
    let a = DMatrix::from_fn(p, p, |i, j| if i == j { 2.0 } else { 0.0 } + rng.random_range(-0.5..0.5));
    let base = portmanteau_traces(&m, 3).unwrap();
    let moved = portmanteau_traces(&(&a * &m), 3).unwrap();
    let h = rel(hosking_statistic(&moved, t), hosking_statistic(&base, t));
    let lm = rel(hdwn::classical::li_mcleod_statistic(&moved, p, t), hdwn::classical::li_mcleod_statistic(&base, p, t));
    card.check(h < 1e-8 && lm < 1e-8, format!("portmanteau affine {:.1e}/{:.1e}", h, lm));

    // Quantile round trips.
    let mut qerr = 0.0f64;
    for alpha in [1e-6, 0.001, 0.01, 0.05, 0.5, 0.9] {
        qerr = qerr.max((normal_cdf(normal_upper_quantile(alpha).unwrap()) - (1.0 - alpha)).abs());
        for dof in [1.0, 3.0, 27.0, 2500.0, 2.43e6] {
            let c = chi2_upper_quantile(alpha, dof).unwrap();
            qerr = qerr.max((1.0 - chi2_cdf(c, dof).unwrap() - alpha).abs() / alpha);
        }
    }
    card.check(qerr < 1e-9, format!("quantile round trip {qerr:.1e}"));

    // Simulation tables are identical at any thread count.
    let mut small = plan(
        vec![
            null_cell(8, 30, &[1, 2]),
            Cell { p: 6, t: 40, qs: vec![1], model: ModelSpec::with_alternative(Innovation::GammaIi, Alternative::Var1 { a: 0.3 }) },
        ],
        &TestKind::ALL,
        603,
    );
    small.replicates = 300;
    small.nu4 = Some(SplitConfig { calibration_reps: 200, b: 4, ..SplitConfig::default() });
    let tables: Vec<_> = [Some(1), Some(3), None]
        .into_iter()
        .map(|threads| {
            let mut pl = small.clone();
            pl.threads = threads;
            run(&pl).unwrap().rows
        })
        .collect();
    card.check(tables[0] == tables[1] && tables[1] == tables[2], "thread-count determinism");

    // Wachter law: normalization and the spectrum of a large Fisher matrix.
    let mass = [(0.2, 0.2), (0.05, 0.5), (0.5, 0.05), (0.9, 0.9)]
        .iter()
        .map(|&(c1, c2)| (validate_wachter(c1, c2).unwrap().total_mass() - 1.0).abs())
        .fold(0.0f64, f64::max);
    card.check(mass < 1e-6, format!("Wachter mass err {mass:.1e}"));
    let (pw, t1, t2) = (200usize, 1000usize, 1000usize);
    let z = Innovation::Gaussian.sample_real(pw, t1 + t2, &mut rng);
    let idx: Vec<usize> = (0..t1 + t2).collect();
    let eig = fisher_eigenvalues(&z, &idx, t1).unwrap();
    let ks = wachter_ks(&eig, &validate_wachter(pw as f64 / t2 as f64, pw as f64 / t1 as f64).unwrap());
    card.check(ks < 0.05, format!("Wachter KS {ks:.4}"));

    card.finish();
}

#[test]
fn criterion_7_variance_collapse() {
    let mut card = Scorecard::new("criterion 7 (Q~ variance collapse)");
    let (p, t, q) = (50usize, 100usize, 3usize);
    let model = PreparedModel::new(ModelSpec::null(Innovation::Gaussian), p).unwrap();
    let stats = monte_carlo(701, 0, 2000, None, |_, rng| {
        let x = model.generate(t, rng).unwrap();
        hosking_statistic(&portmanteau_traces(x.as_real().unwrap(), q).unwrap(), t)
    })
    .unwrap();
    let d = diagnostics_moments(&stats, (p * p * q) as f64).unwrap();
    card.check(d.mean_rel_err.abs() < 0.01, format!("mean rel err {:.3}%", 100.0 * d.mean_rel_err));
    card.check(d.var_rel_err > 1.5, format!("variance rel err {:.1}%", 100.0 * d.var_rel_err));
    card.finish();
}
