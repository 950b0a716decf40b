use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DMatrix;
use serde::Serialize;

use hdwn::classical::{self, PortmanteauInput};
use hdwn::io::{self, Orientation};
use hdwn::moments::{self, InnovationMoments};
use hdwn::nu4::{self, Nu4Estimate, SplitConfig};
use hdwn::power::{self, VmaSpec};
use hdwn::simulation::{self, SimulationPlan, SimulationTable};
use hdwn::stats::GSummary;
use hdwn::{SpectralConstants, TestKind, TestReport, TimeSeriesMatrix, VERSION};

use crate::output::{self, field, num, opt_num};
use crate::{CalibrateArgs, Format, OracleArgs, PowerArgs, SimulateArgs, TestArgs};

const EXIT_ACCEPT: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_REJECT: u8 = 2;

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Reads a square matrix stored one row per CSV record.
fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let m = io::ingest(path, Orientation::ColumnsAreTime).with_context(|| format!("reading {}", path.display()))?;
    let m = m.as_real().ok_or_else(|| anyhow!("{} must be real", path.display()))?.clone();
    if m.nrows() != m.ncols() {
        bail!("{} is {}x{}, expected a square matrix", path.display(), m.nrows(), m.ncols());
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
enum Sigma0 {
    Identity,
    Estimate,
    File(String),
}

impl Sigma0 {
    fn parse(s: &str) -> Sigma0 {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" => Sigma0::Identity,
            "estimate" => Sigma0::Estimate,
            _ => Sigma0::File(s.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
enum Nu4Choice {
    Value(f64),
    Gaussian,
    Estimate,
}

impl Nu4Choice {
    fn parse(s: &str) -> Result<Nu4Choice> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Nu4Choice::Gaussian),
            "estimate" => Ok(Nu4Choice::Estimate),
            other => {
                let v: f64 = other.parse().map_err(|_| anyhow!("--nu4 must be a number, `gaussian` or `estimate`"))?;
                if !(v.is_finite() && v >= 1.0) {
                    bail!("--nu4 = {v} must be at least 1");
                }
                Ok(Nu4Choice::Value(v))
            }
        }
    }
}

#[derive(Debug, Serialize)]
struct ResolvedTestConfig {
    input: String,
    orientation: String,
    q: Vec<usize>,
    alpha: f64,
    tests: Vec<TestKind>,
    sigma0: Sigma0,
    nu4: Nu4Choice,
    seed: u64,
    threads: Option<usize>,
    format: Format,
    output: Option<String>,
}

#[derive(Debug, Serialize)]
struct DataSummary {
    p: usize,
    #[serde(rename = "T")]
    t: usize,
    complex: bool,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum Outcome {
    Report(Box<TestReport>),
    Error { test: TestKind, q: usize, error: String },
}

#[derive(Debug, Serialize)]
struct TestOutput {
    version: &'static str,
    config: ResolvedTestConfig,
    data: DataSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    nu4_estimate: Option<Nu4Estimate>,
    results: Vec<Outcome>,
}

/// Constants of `Σ̂ = X X*/T` for the known-covariance test with `--sigma0 estimate`.
fn estimated_constants(x: &TimeSeriesMatrix, nu4: f64) -> SpectralConstants {
    let (t, p) = (x.t() as f64, x.p() as f64);
    let (tr, fro, diag) = match x {
        TimeSeriesMatrix::Real(m) => {
            let s = m * m.transpose() / t;
            (s.trace(), s.norm_squared(), s.diagonal().norm_squared())
        }
        TimeSeriesMatrix::Complex(m) => {
            let s = m * m.adjoint() / nalgebra::Complex::new(t, 0.0);
            let d: f64 = s.diagonal().iter().map(|z| z.re * z.re).sum();
            (s.trace().re, s.norm_squared(), d)
        }
    };
    SpectralConstants { s1: tr / p, s2: fro / p, s_d2: diag / p, nu4, c_p: x.c_p() }
}

pub fn test(args: &TestArgs) -> Result<u8> {
    let orientation: Orientation = args.orientation.parse()?;
    let tests: Vec<TestKind> = args
        .tests
        .iter()
        .map(|s| TestKind::parse(s).ok_or_else(|| anyhow!("unknown test {s:?}")))
        .collect::<Result<_>>()?;
    if tests.is_empty() {
        bail!("no tests requested");
    }
    if args.q.is_empty() || args.q.contains(&0) {
        bail!("--q values must be positive");
    }
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        bail!("--alpha must lie in (0, 1)");
    }
    let sigma0 = Sigma0::parse(&args.sigma0);
    let nu4_choice = Nu4Choice::parse(&args.nu4)?;
    let split = SplitConfig { seed: args.common.seed.unwrap_or(SplitConfig::default().seed), ..SplitConfig::default() };
    let known_sigma = match &sigma0 {
        Sigma0::File(path) => Some(read_matrix(Path::new(path))?),
        _ => None,
    };
    init_threads(args.common.threads);

    let config = ResolvedTestConfig {
        input: args.input.display().to_string(),
        orientation: match orientation {
            Orientation::RowsAreTime => "rows-are-time".into(),
            Orientation::ColumnsAreTime => "columns-are-time".into(),
        },
        q: args.q.clone(),
        alpha: args.alpha,
        tests: tests.clone(),
        sigma0: sigma0.clone(),
        nu4: nu4_choice,
        seed: split.seed,
        threads: args.common.threads,
        format: args.common.format,
        output: args.common.output.as_ref().map(|p| p.display().to_string()),
    };

    let x = io::ingest(&args.input, orientation).with_context(|| format!("reading {}", args.input.display()))?;
    let data = DataSummary { p: x.p(), t: x.t(), complex: x.is_complex() };
    eprintln!("read {} series of length {} ({})", data.p, data.t, if data.complex { "complex" } else { "real" });

    let needs_nu4 = tests.iter().any(|k| matches!(k, TestKind::Gq | TestKind::Gq1Star));
    let mut nu4_estimate = None;
    let nu4_value: std::result::Result<f64, String> = match nu4_choice {
        Nu4Choice::Value(v) => Ok(v),
        Nu4Choice::Gaussian => Ok(if x.is_complex() { 2.0 } else { 3.0 }),
        Nu4Choice::Estimate if needs_nu4 => match nu4::estimate_nu4(&x, &split) {
            Ok(e) => {
                for w in &e.diagnostics.warnings {
                    eprintln!("warning: {w}");
                }
                let v = e.nu4_hat;
                nu4_estimate = Some(e);
                Ok(v)
            }
            Err(e) => Err(format!("nu4 estimation failed: {e}")),
        },
        Nu4Choice::Estimate => Err("nu4 not estimated".into()),
    };

    let q_max = *args.q.iter().max().expect("nonempty");
    let summary = GSummary::compute(&x, q_max).map_err(|e| e.to_string());
    let mut results = Vec::new();
    for &q in &args.q {
        for &kind in &tests {
            let report: std::result::Result<TestReport, String> = (|| {
                let summary = summary.as_ref().map_err(Clone::clone)?;
                match kind {
                    TestKind::Gq => {
                        let nu4 = nu4_value.clone()?;
                        let constants = match (&sigma0, &known_sigma) {
                            (Sigma0::Identity, _) => SpectralConstants::identity(x.c_p(), nu4),
                            (Sigma0::Estimate, _) => estimated_constants(&x, nu4),
                            (_, Some(s)) => {
                                if s.nrows() != x.p() {
                                    return Err(format!("sigma0 is {0}x{0} but the data have p = {1}", s.nrows(), x.p()));
                                }
                                SpectralConstants::from_covariance(s, x.c_p(), nu4)
                            }
                            (Sigma0::File(_), None) => unreachable!("matrix read above"),
                        };
                        summary.test_known(q, args.alpha, &constants).map_err(|e| e.to_string())
                    }
                    TestKind::Gq1 => summary.test_gq1(q, args.alpha).map_err(|e| e.to_string()),
                    TestKind::Gq1Star => {
                        let nu4 = nu4_value.clone()?;
                        summary.test_gq1_star(q, args.alpha, nu4).map_err(|e| e.to_string())
                    }
                    TestKind::Hosking => {
                        classical::hosking(&PortmanteauInput::new(&x, q), args.alpha).map_err(|e| e.to_string())
                    }
                    TestKind::LiMcLeod => {
                        classical::li_mcleod(&PortmanteauInput::new(&x, q), args.alpha).map_err(|e| e.to_string())
                    }
                }
            })();
            results.push(match report {
                Ok(r) => Outcome::Report(Box::new(r)),
                Err(error) => Outcome::Error { test: kind, q, error },
            });
        }
    }

    let code = if results.iter().all(|r| matches!(r, Outcome::Error { .. })) {
        EXIT_ERROR
    } else if results.iter().any(|r| matches!(r, Outcome::Report(rep) if rep.reject)) {
        EXIT_REJECT
    } else {
        EXIT_ACCEPT
    };
    for r in &results {
        if let Outcome::Error { test, q, error } = r {
            eprintln!("{test} (q = {q}): {error}");
        }
    }
    let out = TestOutput { version: VERSION, config, data, nu4_estimate, results };
    let text = match args.common.format {
        Format::Json => output::json(&out)?,
        Format::Csv => test_csv(&out)?,
    };
    output::emit(args.common.output.as_deref(), &text)?;
    Ok(code)
}

fn test_csv(out: &TestOutput) -> Result<String> {
    let mut s = output::csv_preamble(&out.config)?;
    s.push_str("test,q,statistic,centering,scale,z_or_chi2,p_value,reject,alpha,p,T,c_p,s1_hat,s2_tilde,s_d2_tilde,nu4,error\n");
    for r in &out.results {
        match r {
            Outcome::Report(r) => {
                let pr = &r.params;
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},\n",
                    r.test,
                    r.q,
                    num(r.statistic),
                    num(r.centering),
                    num(r.scale),
                    num(r.z_or_chi2),
                    num(r.p_value),
                    r.reject,
                    num(r.alpha),
                    pr.p,
                    pr.t,
                    num(pr.c_p),
                    num(pr.s1_hat),
                    num(pr.s2_tilde),
                    num(pr.s_d2_tilde),
                    opt_num(pr.nu4),
                ));
            }
            Outcome::Error { test, q, error } => {
                s.push_str(&format!("{test},{q},,,,,,,,{},{},,,,,,{}\n", out.data.p, out.data.t, field(error)));
            }
        }
    }
    Ok(s)
}

#[derive(Debug, Serialize)]
struct SimulateOutput<'a> {
    version: &'static str,
    config: &'a SimulationPlan,
    table: &'a SimulationTable,
}

pub fn simulate(args: &SimulateArgs) -> Result<u8> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut plan: SimulationPlan =
        serde_json::from_str(&text).with_context(|| format!("parsing plan {}", args.config.display()))?;
    if let Some(seed) = args.common.seed {
        plan.seed = seed;
    }
    if let Some(r) = args.replicates {
        plan.replicates = r;
    }
    if args.common.threads.is_some() {
        plan.threads = args.common.threads;
    }
    init_threads(plan.threads);
    let table = simulation::run(&plan)?;
    let out = SimulateOutput { version: VERSION, config: &plan, table: &table };
    let text = match args.common.format {
        Format::Json => output::json(&out)?,
        Format::Csv => table_csv(&plan, &table)?,
    };
    output::emit(args.common.output.as_deref(), &text)?;
    if let Some(fig) = &args.figure {
        output::emit(Some(fig), &figure_csv(&plan, &table)?)?;
    }
    Ok(EXIT_ACCEPT)
}

fn table_csv(plan: &SimulationPlan, table: &SimulationTable) -> Result<String> {
    let mut s = output::csv_preamble(plan)?;
    let walls: Vec<String> = table.wall_time.iter().map(|w| format!("{w:.3}")).collect();
    s.push_str(&format!("# wall_time_seconds {}\n", walls.join(" ")));
    s.push_str("cell,p,T,q,model,parameter,test,rejections,failures,replicates,rate,mc_se,skipped\n");
    for r in &table.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.cell,
            r.p,
            r.t,
            r.q,
            field(&r.model),
            num(r.parameter),
            r.test,
            r.rejections,
            r.failures,
            r.replicates,
            num(r.rate),
            num(r.mc_se),
            field(r.skipped.as_deref().unwrap_or("")),
        ));
    }
    Ok(s)
}

/// One row per (curve, x) with a rejection-rate column per test, where a
/// curve is a fixed (p, T, q, model) and x is the alternative parameter.
fn figure_csv(plan: &SimulationPlan, table: &SimulationTable) -> Result<String> {
    let mut curves: Vec<String> = Vec::new();
    let mut points: Vec<(usize, f64, Vec<(TestKind, f64)>)> = Vec::new();
    for r in &table.rows {
        let curve = format!("p={} T={} q={} {}", r.p, r.t, r.q, r.model);
        let ci = curves.iter().position(|c| *c == curve).unwrap_or_else(|| {
            curves.push(curve);
            curves.len() - 1
        });
        match points.iter_mut().find(|(c, x, _)| *c == ci && *x == r.parameter) {
            Some(pt) => pt.2.push((r.test, r.rate)),
            None => points.push((ci, r.parameter, vec![(r.test, r.rate)])),
        }
    }
    points.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut s = output::csv_preamble(plan)?;
    s.push_str("curve,x");
    for t in &plan.tests {
        s.push_str(&format!(",{t}"));
    }
    s.push('\n');
    for (ci, x, rates) in &points {
        s.push_str(&format!("{},{}", field(&curves[*ci]), num(*x)));
        for t in &plan.tests {
            let rate = rates.iter().find(|(k, _)| k == t).map(|&(_, v)| num(v)).unwrap_or_default();
            s.push_str(&format!(",{rate}"));
        }
        s.push('\n');
    }
    Ok(s)
}

#[derive(Debug, Serialize)]
struct LagPower {
    q: usize,
    beta: f64,
}

#[derive(Debug, Serialize)]
struct PowerOutput<'a> {
    version: &'static str,
    config: &'a PowerArgs,
    p: usize,
    prediction: power::PowerPrediction,
    by_lag: Vec<LagPower>,
}

pub fn power(args: &PowerArgs) -> Result<u8> {
    let spec = match (&args.a0, &args.a1, args.p, args.a) {
        (Some(a0), Some(a1), _, _) => VmaSpec::new(read_matrix(a0)?, read_matrix(a1)?)?,
        (None, None, Some(p), Some(a)) => VmaSpec::scaled_identity(p, a),
        _ => bail!("give either --p and --a, or --a0 and --a1"),
    };
    if args.q.contains(&0) {
        bail!("--q values must be positive");
    }
    let prediction = power::power_beta(&spec, args.t, args.nu4, args.alpha)?;
    let by_lag = args.q.iter().map(|&q| LagPower { q, beta: prediction.beta_for_lags(q) }).collect();
    let out = PowerOutput { version: VERSION, config: args, p: spec.p(), prediction, by_lag };
    let text = match args.common.format {
        Format::Json => output::json(&out)?,
        Format::Csv => {
            let mut s = output::csv_preamble(args)?;
            s.push_str("p,T,q,beta,mu_g11,sigma_g11,xi0,alpha\n");
            for l in &out.by_lag {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    out.p,
                    args.t,
                    l.q,
                    num(l.beta),
                    num(prediction.mu_g11),
                    num(prediction.sigma_g11),
                    num(prediction.xi0),
                    num(prediction.alpha)
                ));
            }
            s
        }
    };
    output::emit(args.common.output.as_deref(), &text)?;
    Ok(EXIT_ACCEPT)
}

#[derive(Debug, Serialize)]
struct CalibrationOutput<'a> {
    version: &'static str,
    config: &'a SplitConfig,
    calibration: &'a nu4::Calibration,
}

pub fn calibrate(args: &CalibrateArgs) -> Result<u8> {
    let mut cfg = SplitConfig::default();
    if let Some(seed) = args.common.seed {
        cfg.seed = seed;
    }
    if let Some(r) = args.reps {
        cfg.calibration_reps = r;
    }
    cfg.t1 = args.t1;
    let t1 = args.t1.unwrap_or(args.t / 2);
    if t1 == 0 || t1 >= args.t {
        bail!("--t1 must lie in 1..T");
    }
    init_threads(args.common.threads);
    let cal = nu4::calibrate_uv(args.p, t1, args.t - t1, &cfg.test_functions, cfg.calibration_reps, cfg.seed)?;
    let text = match args.common.format {
        Format::Json => output::json(&CalibrationOutput { version: VERSION, config: &cfg, calibration: &cal })?,
        Format::Csv => {
            let mut s = output::csv_preamble(&cfg)?;
            s.push_str(&format!("# p={} T1={} T2={}\n", cal.p, cal.t1, cal.t2));
            s.push_str("a,b,u,v,mean_gaussian,se_gaussian,mean_rademacher,se_rademacher\n");
            for (k, &(a, b)) in cal.test_functions.iter().enumerate() {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    num(a),
                    num(b),
                    num(cal.u[k]),
                    num(cal.v[k]),
                    num(cal.mean_gaussian[k]),
                    num(cal.se_gaussian[k]),
                    num(cal.mean_rademacher[k]),
                    num(cal.se_rademacher[k])
                ));
            }
            s
        }
    };
    output::emit(args.common.output.as_deref(), &text)?;
    Ok(EXIT_ACCEPT)
}

#[derive(Debug, Serialize)]
struct LagMoments {
    q: usize,
    e_gq: f64,
    var_gq: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    s1sq: Option<moments::S1sqMoments>,
    leading: moments::LeadingMoments,
}

#[derive(Debug, Serialize)]
struct OracleOutput<'a> {
    version: &'static str,
    config: &'a OracleArgs,
    v: Option<moments::VMoments>,
    lags: Vec<LagMoments>,
}

pub fn oracle(args: &OracleArgs) -> Result<u8> {
    let sigma = match Sigma0::parse(&args.sigma0) {
        Sigma0::Identity => {
            let p = args.p.ok_or_else(|| anyhow!("--sigma0 identity needs --p"))?;
            DMatrix::identity(p, p)
        }
        Sigma0::File(path) => read_matrix(Path::new(&path))?,
        Sigma0::Estimate => bail!("--sigma0 estimate needs data; use identity or a file"),
    };
    let m = match args.innovation.to_ascii_lowercase().as_str() {
        "gaussian" => InnovationMoments::gaussian(),
        "gamma-ii" | "gamma" => InnovationMoments::gamma_ii(),
        "complex-gaussian" | "complex" => InnovationMoments::complex_gaussian(),
        other => bail!("unknown innovation {other:?}"),
    };
    let v = moments::moments_v(&sigma, &m).ok();
    let mut lags = Vec::new();
    for &q in &args.q {
        let (e_gq, var_gq) = moments::exact_gq_moments(&sigma, &m, q, args.t)?;
        lags.push(LagMoments {
            q,
            e_gq,
            var_gq,
            s1sq: moments::exact_s1sq_moments(&sigma, &m, q, args.t).ok(),
            leading: moments::prop42_leading(&sigma, m.nu4, q, args.t),
        });
    }
    let out = OracleOutput { version: VERSION, config: args, v, lags };
    let text = match args.common.format {
        Format::Json => output::json(&out)?,
        Format::Csv => {
            let mut s = output::csv_preamble(args)?;
            s.push_str("q,e_gq,var_gq,e_ps1sq,var_ps1sq,cov_gq_ps1sq\n");
            for l in &out.lags {
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    l.q,
                    num(l.e_gq),
                    num(l.var_gq),
                    opt_num(l.s1sq.map(|x| x.mean)),
                    opt_num(l.s1sq.map(|x| x.var)),
                    opt_num(l.s1sq.map(|x| x.cov_gq))
                ));
            }
            s
        }
    };
    output::emit(args.common.output.as_deref(), &text)?;
    Ok(EXIT_ACCEPT)
}
