use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use kroncov::estimators::{self, EstimateResult, PenaltyPlan, ScheduleMode, FULL_GLASSO_GUARD};
use kroncov::glasso::{GlassoOptions, GlassoSolution};
use kroncov::harness::{
    self, ConcentrationConfig, EstimatorKind, ExperimentConfig, Provenance, RateConfig,
};
use kroncov::io;
use kroncov::matkit::{self, SpdMatrix};
use kroncov::sampler::{self, SampleCov};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(kroncov::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Lib(e) => write!(f, "{}: {e}", e.name()),
        }
    }
}

impl From<kroncov::Error> for CliError {
    fn from(e: kroncov::Error) -> Self {
        CliError::Lib(e)
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "kroncov", version, about = "Sparse Kronecker covariance estimation and Monte Carlo experiments")]
pub struct Cli {
    /// Worker threads for Monte Carlo trials [default: $KRONCOV_THREADS, else all cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate precision factors from a sample file
    Estimate(EstimateArgs),
    /// Draw a ground-truth model and matrix-normal samples
    Simulate(SimulateArgs),
    /// Run a Monte Carlo RMSE experiment
    Bench(BenchArgs),
    /// Precision MSE as p = f = ceil(base * n^alpha) grows with n
    Rates(RatesArgs),
    /// Sup-norm concentration of the compression map
    Concentration(ConcentrationArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Kglasso,
    Ff,
    FfThres,
    Glasso,
    Scm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Simulation,
    Asymptotic,
}

impl From<ScheduleArg> for ScheduleMode {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Simulation => ScheduleMode::Simulation,
            ScheduleArg::Asymptotic => ScheduleMode::Asymptotic,
        }
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    /// Sample matrix (n rows, p*f columns) in the matrix CSV format
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub p: usize,
    #[arg(long)]
    pub f: usize,
    #[arg(long, default_value_t = 0.4)]
    pub cx: f64,
    #[arg(long, default_value_t = 0.4)]
    pub cy: f64,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Simulation)]
    pub schedule: ScheduleArg,
    /// Flip-flop compression steps
    #[arg(long, default_value_t = 3)]
    pub k_steps: usize,
    /// KGlasso stop: relative change of the Kronecker product
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long, default_value_t = 50)]
    pub max_outer: usize,
    /// Glasso duality-gap tolerance
    #[arg(long, default_value_t = 1e-3)]
    pub gap_tol: f64,
    /// Full Glasso penalty [default: c_glasso * sqrt(ln max(pf, n) / n)]
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 0.2)]
    pub c_glasso: f64,
    /// FF/Thres off-diagonal target for X [default: KGlasso sparsity on the same data]
    #[arg(long)]
    pub target_sx: Option<usize>,
    /// FF/Thres off-diagonal target for Y [default: KGlasso sparsity on the same data]
    #[arg(long)]
    pub target_sy: Option<usize>,
    /// Guard on p*f for glasso and scm
    #[arg(long, default_value_t = FULL_GLASSO_GUARD)]
    pub guard: usize,
    /// Also write the pf x pf precision product
    #[arg(long)]
    pub emit_product: bool,
    /// Output prefix
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Ground-truth recipe from an example preset [default: 1]
    #[arg(long, conflicts_with = "config", value_parser = clap::value_parser!(u8).range(1..=4))]
    pub example: Option<u8>,
    /// Experiment config JSON; its generator, p and f are used
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// [default: from the preset or config]
    #[arg(long)]
    pub p: Option<usize>,
    /// [default: from the preset or config]
    #[arg(long)]
    pub f: Option<usize>,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Output prefix
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Example preset [default: 1 unless --config is given]
    #[arg(long, conflicts_with = "config", value_parser = clap::value_parser!(u8).range(1..=4))]
    pub example: Option<u8>,
    /// Experiment config JSON (a provenance sidecar is accepted too)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated sample sizes [default: 10,20,...,100]
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    /// Trials per sample size [default: 20, 40 for example 4]
    #[arg(long)]
    pub mc: Option<usize>,
    /// Master seed [default: 7]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated estimators: kglasso, ff, ff-thres, glasso, scm [default: per example]
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    /// [default: 0.4 for example 3, otherwise 0.1]
    #[arg(long)]
    pub cx: Option<f64>,
    /// [default: 0.4 for example 3, otherwise 0.1]
    #[arg(long)]
    pub cy: Option<f64>,
    /// Full Glasso penalty constant [default: 0.2]
    #[arg(long)]
    pub c_glasso: Option<f64>,
    /// [default: per example]
    #[arg(long)]
    pub p: Option<usize>,
    /// [default: per example]
    #[arg(long)]
    pub f: Option<usize>,
    /// Draw a new ground truth for every trial
    #[arg(long)]
    pub per_trial_truth: bool,
    /// Record median runtimes (makes the report machine-dependent)
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RatesArgs {
    /// 0.1, 0.2, 0.3, any value in (0, 1), or `borderline` for p = f = ceil(n^0.6) [default: 0.1]
    #[arg(long)]
    pub alpha: Option<String>,
    /// Rate config JSON (a provenance sidecar is accepted too)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// [default: 8, or 1 for borderline]
    #[arg(long)]
    pub base: Option<f64>,
    /// Comma-separated sample sizes [default: 100,200,400,800; 50,100,200,400 for borderline]
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    /// Trials per sample size [default: 10]
    #[arg(long)]
    pub mc: Option<usize>,
    /// [default: 7]
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConcentrationArgs {
    /// Concentration config JSON (a provenance sidecar is accepted too)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated p values [default: 10,20]
    #[arg(long, value_delimiter = ',')]
    pub p_grid: Option<Vec<usize>>,
    /// [default: 10]
    #[arg(long)]
    pub f: Option<usize>,
    /// Comma-separated sample sizes [default: 50,100]
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    /// Trials per grid point [default: 100]
    #[arg(long)]
    pub mc: Option<usize>,
    /// [default: 7]
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Estimate(a) => estimate(a),
        Command::Simulate(a) => simulate(a),
        Command::Bench(a) => bench(a),
        Command::Rates(a) => rates(a),
        Command::Concentration(a) => concentration(a),
    }
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(kroncov::Error::from)?;
    Ok(harness::sha256_hex(&bytes))
}

/// Reads a JSON config, unwrapping the `config` field of a provenance sidecar.
fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if value.get("provenance").is_some() {
        if let Some(inner) = value.get_mut("config") {
            value = inner.take();
        }
    }
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write_output(path: &Path, m: &DMatrix<f64>, sidecar: &Value) -> CliResult<()> {
    io::write_matrix(path, m)?;
    harness::write_sidecar(path, sidecar)?;
    Ok(())
}

fn write_trace(path: &Path, trace: &[f64], sidecar: &Value) -> CliResult<()> {
    let mut text = String::from("subiteration,J_lambda\n");
    for (i, v) in trace.iter().enumerate() {
        text.push_str(&format!("{},{v}\n", i + 1));
    }
    std::fs::write(path, text).map_err(kroncov::Error::from)?;
    harness::write_sidecar(path, sidecar)?;
    Ok(())
}

fn estimate(a: EstimateArgs) -> CliResult<()> {
    if a.p == 0 || a.f == 0 {
        return Err(CliError::Usage("--p and --f must be positive".into()));
    }
    let data = io::read_matrix(&a.samples)?;
    if data.ncols() != a.p * a.f {
        return Err(CliError::Usage(format!(
            "{} has {} columns but p*f = {}",
            a.samples.display(),
            data.ncols(),
            a.p * a.f
        )));
    }
    let gopts = GlassoOptions {
        gap_tol: a.gap_tol,
        ..GlassoOptions::default()
    };
    gopts.validate()?;
    let s = SampleCov::from_data(&data, a.p, a.f)?;
    let n = s.n();
    let plan = PenaltyPlan::new(a.p, a.f, n, a.cx, a.cy).with_mode(a.schedule.into());
    let a_init = SpdMatrix::identity(a.p);
    let prefix = a.out.as_str();
    let path = |suffix: &str| PathBuf::from(format!("{prefix}_{suffix}.csv"));

    let config = json!({
            "method": a.method,
            "samples": a.samples,
            "samples_sha256": sha256_file(&a.samples)?,
            "p": a.p, "f": a.f, "n": n,
            "cx": a.cx, "cy": a.cy, "schedule": ScheduleMode::from(a.schedule),
            "k_steps": a.k_steps, "eps": a.eps, "max_outer": a.max_outer,
            "glasso": gopts,
            "lambda": a.lambda, "c_glasso": a.c_glasso,
            "target_sx": a.target_sx, "target_sy": a.target_sy,
            "guard": a.guard, "emit_product": a.emit_product,
    });
    let hash = harness::sha256_hex(config.to_string().as_bytes());
    let sidecar = json!({
        "command": "estimate",
        "config": config,
        "provenance": {"seed": null, "config_hash": hash, "version": env!("CARGO_PKG_VERSION")},
    });

    let factored = |est: &EstimateResult| -> CliResult<()> {
        write_output(&path("x"), &est.x_hat, &sidecar)?;
        write_output(&path("y"), &est.y_hat, &sidecar)?;
        write_trace(&path("trace"), &est.objective_trace, &sidecar)?;
        if a.emit_product {
            write_output(&path("theta"), &est.theta_hat(), &sidecar)?;
        }
        Ok(())
    };
    let kglasso = || estimators::kglasso(&s, &plan, &a_init, a.eps, a.max_outer, &gopts);

    match a.method {
        Method::Kglasso => factored(&kglasso()?),
        Method::Ff => factored(&estimators::ff_estimate(&s, a.k_steps, &a_init)?),
        Method::FfThres => {
            let ff = estimators::ff_estimate(&s, a.k_steps, &a_init)?;
            let (sx, sy) = match (a.target_sx, a.target_sy) {
                (Some(x), Some(y)) => (x, y),
                (tx, ty) => {
                    let kg = kglasso()?;
                    (
                        tx.unwrap_or_else(|| matkit::sparsity(&kg.x_hat)),
                        ty.unwrap_or_else(|| matkit::sparsity(&kg.y_hat)),
                    )
                }
            };
            let est = estimators::ff_thres(&ff, sx, sy)?;
            if let (Some(lx), Some(ly)) = (est.diagnostics.lambda_min_x, est.diagnostics.lambda_min_y) {
                if lx <= 0.0 || ly <= 0.0 {
                    eprintln!("warning: thresholded factors are not positive definite (lambda_min {lx:.3e}, {ly:.3e})");
                }
            }
            factored(&est)
        }
        Method::Glasso => {
            let m = (a.p * a.f).max(n) as f64;
            let lambda = a.lambda.unwrap_or(a.c_glasso * (m.ln() / n as f64).sqrt());
            let sol: GlassoSolution = estimators::glasso_full(&s, lambda, &gopts, a.guard)?;
            write_output(&path("theta"), sol.theta.as_matrix(), &sidecar)?;
            write_trace(&path("trace"), &sol.primal_trace, &sidecar)
        }
        Method::Scm => {
            if s.dim() > a.guard {
                return Err(kroncov::Error::DimensionGuard {
                    dim: s.dim(),
                    limit: a.guard,
                }
                .into());
            }
            let (cov, prec) = estimators::scm(&s);
            write_output(&path("sigma"), &cov, &sidecar)?;
            match prec {
                Some(t) => write_output(&path("theta"), &t, &sidecar),
                None => {
                    eprintln!("warning: sample covariance is singular; no precision written");
                    Ok(())
                }
            }
        }
    }
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let mut cfg = match &a.config {
        Some(path) => load_json::<ExperimentConfig>(path)?,
        None => ExperimentConfig::example(a.example.unwrap_or(1))?,
    };
    if let Some(p) = a.p {
        cfg.p = p;
    }
    if let Some(f) = a.f {
        cfg.f = f;
    }
    if a.n == 0 || cfg.p == 0 || cfg.f == 0 {
        return Err(CliError::Usage("n, p and f must be positive".into()));
    }
    cfg.master_seed = a.seed;
    let model = cfg.fixed_model()?;
    let data = sampler::sample_matrix_normal(&model, a.n, harness::trial_seed(a.seed, a.n, 0))?;
    let sidecar = json!({
        "command": "simulate",
        "config": {
            "p": cfg.p, "f": cfg.f, "n": a.n, "seed": a.seed,
            "example": cfg.example,
            "generator": cfg.generator,
        },
        "provenance": Provenance::new(a.seed, cfg.hash()),
    });
    let prefix = a.out.as_str();
    write_output(Path::new(&format!("{prefix}_data.csv")), &data, &sidecar)?;
    write_output(Path::new(&format!("{prefix}_x0.csv")), model.x0().as_matrix(), &sidecar)?;
    write_output(Path::new(&format!("{prefix}_y0.csv")), model.y0().as_matrix(), &sidecar)?;
    Ok(())
}

fn bench(a: BenchArgs) -> CliResult<()> {
    let mut cfg = match &a.config {
        Some(path) => load_json::<ExperimentConfig>(path)?,
        None => ExperimentConfig::example(a.example.unwrap_or(1))?,
    };
    if let Some(v) = a.n_grid {
        cfg.n_grid = v;
    }
    if let Some(v) = a.mc {
        cfg.n_mc = v;
    }
    if let Some(v) = a.seed {
        cfg.master_seed = v;
    }
    if let Some(list) = &a.estimators {
        cfg.estimators = list
            .iter()
            .map(|s| EstimatorKind::parse(s.trim()))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(v) = a.cx {
        cfg.c_x = v;
    }
    if let Some(v) = a.cy {
        cfg.c_y = v;
    }
    if let Some(v) = a.c_glasso {
        cfg.c_glasso = v;
    }
    if let Some(v) = a.p {
        cfg.p = v;
    }
    if let Some(v) = a.f {
        cfg.f = v;
    }
    cfg.per_trial_truth |= a.per_trial_truth;
    cfg.timing |= a.timing;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let report = harness::run_example(&cfg)?;
    harness::write_report(&report, &a.out)?;
    harness::write_sidecar(
        &a.out,
        &json!({
            "command": "bench",
            "config": cfg,
            "provenance": report.provenance,
            "voided": report.voided,
            "dual_checks": report.dual_checks,
            "dual_failures": report.dual_failures,
        }),
    )?;
    if !report.voided.is_empty() {
        eprintln!("warning: {} trials voided", report.voided.len());
    }
    Ok(())
}

fn rates(a: RatesArgs) -> CliResult<()> {
    let mut cfg = match &a.config {
        Some(path) => load_json::<RateConfig>(path)?,
        None => RateConfig::default(),
    };
    match a.alpha.as_deref() {
        Some("borderline") => {
            let b = RateConfig::borderline();
            cfg.alpha = b.alpha;
            cfg.base = b.base;
            cfg.n_grid = b.n_grid;
        }
        Some(v) => {
            cfg.alpha = v
                .parse()
                .map_err(|_| CliError::Usage(format!("--alpha expects a number or 'borderline', got '{v}'")))?;
        }
        None => {}
    }
    if let Some(v) = a.base {
        cfg.base = v;
    }
    if let Some(v) = a.n_grid {
        cfg.n_grid = v;
    }
    if let Some(v) = a.mc {
        cfg.n_mc = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let table = harness::rate_experiment(&cfg)?;
    harness::write_rate_table(&table, File::create(&a.out).map_err(kroncov::Error::from)?)?;
    let slopes: Vec<Value> = cfg
        .estimators
        .iter()
        .map(|&k| {
            let (emp, th) = table.slopes(k, false);
            json!({"estimator": k.name(), "empirical": emp, "theory": th})
        })
        .collect();
    harness::write_sidecar(
        &a.out,
        &json!({
            "command": "rates",
            "config": cfg,
            "provenance": table.provenance,
            "slopes": slopes,
        }),
    )?;
    Ok(())
}

fn concentration(a: ConcentrationArgs) -> CliResult<()> {
    let mut cfg = match &a.config {
        Some(path) => load_json::<ConcentrationConfig>(path)?,
        None => ConcentrationConfig::default(),
    };
    if let Some(v) = a.p_grid {
        cfg.p_grid = v;
    }
    if let Some(v) = a.f {
        cfg.f = v;
    }
    if let Some(v) = a.n_grid {
        cfg.n_grid = v;
    }
    if let Some(v) = a.mc {
        cfg.n_mc = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let rows = harness::concentration_experiment(&cfg)?;
    harness::write_concentration(&rows, File::create(&a.out).map_err(kroncov::Error::from)?)?;
    harness::write_sidecar(
        &a.out,
        &json!({
            "command": "concentration",
            "config": cfg,
            "provenance": Provenance::new(cfg.seed, cfg.hash()),
        }),
    )?;
    Ok(())
}
