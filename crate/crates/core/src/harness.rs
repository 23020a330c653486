//! Monte Carlo experiments: normalized RMSE over a grid of sample sizes,
//! rate-scaling curves and the compression concentration check.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{self, EstimateResult, PenaltyPlan, ScheduleMode, FULL_GLASSO_GUARD};
use crate::glasso::GlassoOptions;
use crate::matkit::{self, SpdMatrix};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sampler::{self, KroneckerModel, SampleCov};

/// Seed-path tag for ground-truth draws, kept apart from `(n, trial)` paths.
const TRUTH_TAG: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FactorSpec {
    Identity,
    ErdosRenyi { edge_prob: f64, rho_floor: f64 },
    /// Random diagonal plus about `dim` symmetric off-diagonal nonzeros, floor 0.5.
    SparseRandom,
    /// `W W^T / dim + 0.1 I` with standard normal `W`.
    Dense,
}

impl FactorSpec {
    fn generate(&self, dim: usize, seed: u64) -> Result<SpdMatrix> {
        let mut rng = rng_from_seed(seed);
        match *self {
            FactorSpec::Identity => Ok(SpdMatrix::identity(dim)),
            FactorSpec::ErdosRenyi { edge_prob, rho_floor } => {
                sampler::gen_er_precision_with(&mut rng, dim, edge_prob, rho_floor)
            }
            FactorSpec::SparseRandom => sampler::gen_ex4_precision_with(&mut rng, dim),
            FactorSpec::Dense => sampler::gen_dense_precision_with(&mut rng, dim),
        }
    }
}

/// Recipes for the precision factors `X0` (p x p) and `Y0` (f x f).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub x: FactorSpec,
    pub y: FactorSpec,
}

impl GeneratorSpec {
    pub fn model(&self, p: usize, f: usize, seed: u64) -> Result<KroneckerModel> {
        let x0 = self.x.generate(p, derive_seed(seed, &[0]))?;
        let y0 = self.y.generate(f, derive_seed(seed, &[1]))?;
        KroneckerModel::from_precisions(x0, y0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Kglasso,
    Ff,
    FfThres,
    Glasso,
    Scm,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Kglasso,
        EstimatorKind::Ff,
        EstimatorKind::FfThres,
        EstimatorKind::Glasso,
        EstimatorKind::Scm,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Kglasso => "kglasso",
            EstimatorKind::Ff => "ff",
            EstimatorKind::FfThres => "ff-thres",
            EstimatorKind::Glasso => "glasso",
            EstimatorKind::Scm => "scm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown estimator '{s}'")))
    }

    /// Estimators that operate on the full `pf x pf` matrix.
    pub fn is_full_dimension(&self) -> bool {
        matches!(self, EstimatorKind::Glasso | EstimatorKind::Scm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Preset this config was derived from, if any (informational).
    pub example: Option<u8>,
    pub generator: GeneratorSpec,
    pub p: usize,
    pub f: usize,
    pub n_grid: Vec<usize>,
    pub n_mc: usize,
    pub master_seed: u64,
    pub estimators: Vec<EstimatorKind>,
    pub c_x: f64,
    pub c_y: f64,
    pub schedule: ScheduleMode,
    /// Full Glasso uses `lambda = c_glasso * sqrt(ln max(pf, n) / n)`.
    pub c_glasso: f64,
    /// Compression steps for FF (and the FF stage of FF/Thres).
    pub ff_steps: usize,
    pub eps: f64,
    pub max_outer: usize,
    pub glasso: GlassoOptions,
    pub full_glasso_guard: usize,
    /// Draw a fresh ground truth for every trial instead of once per experiment.
    pub per_trial_truth: bool,
    /// Record wall-clock runtimes. Off by default so reports are byte-reproducible.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            example: None,
            generator: GeneratorSpec {
                x: FactorSpec::ErdosRenyi {
                    edge_prob: 0.1,
                    rho_floor: 0.05,
                },
                y: FactorSpec::ErdosRenyi {
                    edge_prob: 0.1,
                    rho_floor: 0.05,
                },
            },
            p: 20,
            f: 10,
            n_grid: (1..=10).map(|k| 10 * k).collect(),
            n_mc: 20,
            master_seed: 7,
            estimators: vec![EstimatorKind::Kglasso, EstimatorKind::Ff, EstimatorKind::Glasso],
            // tuned on a separate seed, see README
            c_x: 0.1,
            c_y: 0.1,
            schedule: ScheduleMode::Simulation,
            c_glasso: 0.2,
            ff_steps: 3,
            eps: 1e-3,
            max_outer: 50,
            glasso: GlassoOptions::default(),
            full_glasso_guard: FULL_GLASSO_GUARD,
            per_trial_truth: false,
            timing: false,
        }
    }
}

impl ExperimentConfig {
    /// Presets for the four simulation examples.
    pub fn example(id: u8) -> Result<Self> {
        let base = ExperimentConfig {
            example: Some(id),
            ..Default::default()
        };
        let er = |edge_prob| FactorSpec::ErdosRenyi {
            edge_prob,
            rho_floor: 0.05,
        };
        Ok(match id {
            1 => base,
            2 => ExperimentConfig {
                generator: GeneratorSpec {
                    x: FactorSpec::Identity,
                    y: FactorSpec::Dense,
                },
                ..base
            },
            3 => ExperimentConfig {
                generator: GeneratorSpec { x: er(0.05), y: er(0.05) },
                p: 100,
                f: 100,
                estimators: vec![EstimatorKind::Kglasso, EstimatorKind::Ff],
                c_x: 0.4,
                c_y: 0.4,
                ..base
            },
            4 => ExperimentConfig {
                generator: GeneratorSpec {
                    x: FactorSpec::SparseRandom,
                    y: FactorSpec::SparseRandom,
                },
                p: 100,
                f: 100,
                n_mc: 40,
                estimators: vec![EstimatorKind::Kglasso, EstimatorKind::Ff, EstimatorKind::FfThres],
                ..base
            },
            _ => return Err(Error::InvalidConfig(format!("unknown example {id}; expected 1-4"))),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.p == 0 || self.f == 0 {
            return bad("p and f must be positive".into());
        }
        if self.n_grid.is_empty() {
            return bad("n_grid is empty".into());
        }
        if self.n_grid.contains(&0) {
            return bad("n_grid entries must be positive".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n_grid must be strictly ascending".into());
        }
        if self.n_mc == 0 {
            return bad("n_mc must be at least 1".into());
        }
        if self.estimators.is_empty() {
            return bad("no estimators selected".into());
        }
        if [self.c_x, self.c_y, self.c_glasso].iter().any(|c| !(*c >= 0.0)) {
            return bad("penalty constants must be nonnegative".into());
        }
        if self.ff_steps == 0 || self.max_outer == 0 || !(self.eps > 0.0) {
            return bad("ff_steps, max_outer and eps must be positive".into());
        }
        let d = self.p * self.f;
        if let Some(e) = self.estimators.iter().find(|e| e.is_full_dimension()) {
            if d > self.full_glasso_guard {
                return bad(format!(
                    "{} needs the full {d}-dimensional problem, above the guard {}",
                    e.name(),
                    self.full_glasso_guard
                ));
            }
        }
        self.glasso.validate()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }

    fn truth_seed(&self, n: usize, trial: usize) -> u64 {
        if self.per_trial_truth {
            derive_seed(self.master_seed, &[TRUTH_TAG, n as u64, trial as u64])
        } else {
            derive_seed(self.master_seed, &[TRUTH_TAG])
        }
    }

    /// Ground truth shared by every trial (fixed-truth mode).
    pub fn fixed_model(&self) -> Result<KroneckerModel> {
        self.generator.model(self.p, self.f, self.truth_seed(0, 0))
    }

    pub fn glasso_lambda(&self, n: usize) -> f64 {
        let m = (self.p * self.f).max(n) as f64;
        self.c_glasso * (m.ln() / n as f64).sqrt()
    }
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Seed used to draw the samples of trial `trial` at sample size `n`.
pub fn trial_seed(master: u64, n: usize, trial: usize) -> u64 {
    derive_seed(master, &[n as u64, trial as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
}

impl Provenance {
    pub fn new(seed: u64, config_hash: String) -> Self {
        Provenance {
            seed,
            config_hash,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub estimator: String,
    pub n: usize,
    pub rmse_precision: f64,
    pub rmse_precision_sd: f64,
    pub rmse_covariance: f64,
    pub rmse_covariance_sd: f64,
    /// Median wall-clock milliseconds per call; NaN unless timing was requested.
    pub runtime_ms: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoidedTrial {
    pub n: usize,
    pub trial: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub rows: Vec<RmseRow>,
    pub provenance: Provenance,
    pub voided: Vec<VoidedTrial>,
    pub dual_checks: usize,
    pub dual_failures: usize,
}

impl RmseReport {
    pub fn row(&self, estimator: EstimatorKind, n: usize) -> Option<&RmseRow> {
        self.rows.iter().find(|r| r.estimator == estimator.name() && r.n == n)
    }

    /// Percent reductions `(precision, covariance)` of `new` relative to `reference` at `n`.
    pub fn reduction(&self, reference: EstimatorKind, new: EstimatorKind, n: usize) -> Option<(f64, f64)> {
        let r = self.row(reference, n)?;
        let s = self.row(new, n)?;
        Some((
            reduction_pct(r.rmse_precision, s.rmse_precision),
            reduction_pct(r.rmse_covariance, s.rmse_covariance),
        ))
    }
}

/// `100 (1 - new/reference)`.
pub fn reduction_pct(reference: f64, new: f64) -> f64 {
    100.0 * (1.0 - new / reference)
}

/// `10 log10(reference/new)`: a 69% reduction is about 5.09 dB.
pub fn reduction_db(reference: f64, new: f64) -> f64 {
    10.0 * (reference / new).log10()
}

/// `sqrt(mean_i ||truth - est_i||_F^2 / ||truth||_F^2)`.
pub fn normalized_rmse(estimates: &[DMatrix<f64>], truth: &DMatrix<f64>) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::InvalidConfig("no estimates".into()));
    }
    let denom = truth.norm_squared();
    let mut acc = 0.0;
    for e in estimates {
        if e.shape() != truth.shape() {
            return Err(Error::DimensionMismatch(format!(
                "estimate is {:?}, truth is {:?}",
                e.shape(),
                truth.shape()
            )));
        }
        acc += (truth - e).norm_squared() / denom;
    }
    Ok((acc / estimates.len() as f64).sqrt())
}

fn rmse_from_ratios(ratios: &[f64]) -> f64 {
    (ratios.iter().sum::<f64>() / ratios.len() as f64).sqrt()
}

fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Squared normalized errors of one estimator in one trial.
#[derive(Debug, Clone, Copy)]
struct TrialError {
    precision: f64,
    covariance: f64,
    runtime_ms: f64,
}

#[derive(Debug, Default)]
struct TrialOutcome {
    errors: Vec<(EstimatorKind, TrialError)>,
    dual_checks: usize,
    dual_failures: usize,
}

fn factored_errors(est: &EstimateResult, model: &KroneckerModel) -> Result<(f64, f64)> {
    let prec = matkit::kron_distance_sq(&est.x_hat, &est.y_hat, model.x0(), model.y0()) / model.theta0_norm_sq();
    let (a, b) = est.covariance_factors()?;
    let cov = matkit::kron_distance_sq(&a, &b, model.a0(), model.b0()) / model.sigma0_norm_sq();
    Ok((prec, cov))
}

fn timed<T>(enabled: bool, f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    if enabled {
        let start = Instant::now();
        let out = f()?;
        Ok((out, start.elapsed().as_secs_f64() * 1e3))
    } else {
        Ok((f()?, f64::NAN))
    }
}

fn run_trial(cfg: &ExperimentConfig, model: &KroneckerModel, n: usize, trial: usize) -> Result<TrialOutcome> {
    let (p, f) = (cfg.p, cfg.f);
    let data = sampler::sample_matrix_normal(model, n, trial_seed(cfg.master_seed, n, trial))?;
    let s = SampleCov::from_data(&data, p, f)?;
    let a_init = SpdMatrix::identity(p);
    let wants = |k: EstimatorKind| cfg.estimators.contains(&k);
    let mut out = TrialOutcome::default();

    let need_kg = wants(EstimatorKind::Kglasso) || wants(EstimatorKind::FfThres);
    let need_ff = wants(EstimatorKind::Ff) || wants(EstimatorKind::FfThres);
    let plan = PenaltyPlan::new(p, f, n, cfg.c_x, cfg.c_y).with_mode(cfg.schedule);

    let kg = if need_kg {
        let (est, ms) = timed(cfg.timing, || {
            estimators::kglasso(&s, &plan, &a_init, cfg.eps, cfg.max_outer, &cfg.glasso)
        })?;
        out.dual_checks += est.diagnostics.dual_checks;
        out.dual_failures += est.diagnostics.dual_failures;
        Some((est, ms))
    } else {
        None
    };
    let ff = if need_ff {
        Some(timed(cfg.timing, || estimators::ff_estimate(&s, cfg.ff_steps, &a_init))?)
    } else {
        None
    };

    for &kind in &cfg.estimators {
        let err = match kind {
            EstimatorKind::Kglasso => {
                let (est, ms) = kg.as_ref().expect("kglasso computed");
                let (precision, covariance) = factored_errors(est, model)?;
                TrialError {
                    precision,
                    covariance,
                    runtime_ms: *ms,
                }
            }
            EstimatorKind::Ff => {
                let (est, ms) = ff.as_ref().expect("ff computed");
                let (precision, covariance) = factored_errors(est, model)?;
                TrialError {
                    precision,
                    covariance,
                    runtime_ms: *ms,
                }
            }
            EstimatorKind::FfThres => {
                let (kg_est, _) = kg.as_ref().expect("kglasso computed");
                let (ff_est, ff_ms) = ff.as_ref().expect("ff computed");
                let targets = (matkit::sparsity(&kg_est.x_hat), matkit::sparsity(&kg_est.y_hat));
                let (est, ms) = timed(cfg.timing, || estimators::ff_thres(ff_est, targets.0, targets.1))?;
                let (precision, covariance) = factored_errors(&est, model)?;
                TrialError {
                    precision,
                    covariance,
                    runtime_ms: ff_ms + ms,
                }
            }
            EstimatorKind::Glasso => {
                let lambda = cfg.glasso_lambda(n);
                let (sol, ms) = timed(cfg.timing, || {
                    estimators::glasso_full(&s, lambda, &cfg.glasso, cfg.full_glasso_guard)
                })?;
                TrialError {
                    precision: matkit::dense_kron_distance_sq(&sol.theta, model.x0(), model.y0())
                        / model.theta0_norm_sq(),
                    covariance: matkit::dense_kron_distance_sq(&sol.w, model.a0(), model.b0())
                        / model.sigma0_norm_sq(),
                    runtime_ms: ms,
                }
            }
            EstimatorKind::Scm => {
                let ((cov, prec), ms) = timed(cfg.timing, || Ok(estimators::scm(&s)))?;
                TrialError {
                    precision: prec.map_or(f64::NAN, |t| {
                        matkit::dense_kron_distance_sq(&t, model.x0(), model.y0()) / model.theta0_norm_sq()
                    }),
                    covariance: matkit::dense_kron_distance_sq(&cov, model.a0(), model.b0()) / model.sigma0_norm_sq(),
                    runtime_ms: ms,
                }
            }
        };
        out.errors.push((kind, err));
    }
    Ok(out)
}

/// Runs every estimator on `n_mc` paired trials at each sample size.
///
/// A failure in any estimator voids the whole trial, so every row of the
/// report is computed from the same set of sample covariances.
pub fn run_example(cfg: &ExperimentConfig) -> Result<RmseReport> {
    cfg.validate()?;
    let fixed = if cfg.per_trial_truth {
        None
    } else {
        Some(cfg.fixed_model()?)
    };
    let tasks: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.n_mc).map(move |t| (n, t)))
        .collect();
    let outcomes: Vec<Result<TrialOutcome>> = tasks
        .par_iter()
        .map(|&(n, t)| match &fixed {
            Some(model) => run_trial(cfg, model, n, t),
            None => {
                let model = cfg.generator.model(cfg.p, cfg.f, cfg.truth_seed(n, t))?;
                run_trial(cfg, &model, n, t)
            }
        })
        .collect();

    let mut estimators = cfg.estimators.clone();
    estimators.sort_by_key(|e| e.name());
    estimators.dedup();

    let mut report = RmseReport {
        rows: Vec::new(),
        provenance: Provenance::new(cfg.master_seed, cfg.hash()),
        voided: Vec::new(),
        dual_checks: 0,
        dual_failures: 0,
    };
    let mut per_n: Vec<Vec<&TrialOutcome>> = vec![Vec::new(); cfg.n_grid.len()];
    for (&(n, t), outcome) in tasks.iter().zip(&outcomes) {
        match outcome {
            Ok(o) => {
                report.dual_checks += o.dual_checks;
                report.dual_failures += o.dual_failures;
                let idx = cfg.n_grid.iter().position(|&m| m == n).expect("n in grid");
                per_n[idx].push(o);
            }
            Err(e) => report.voided.push(VoidedTrial {
                n,
                trial: t,
                error: e.name().to_string(),
            }),
        }
    }

    for kind in &estimators {
        for (idx, &n) in cfg.n_grid.iter().enumerate() {
            let errs: Vec<TrialError> = per_n[idx]
                .iter()
                .filter_map(|o| o.errors.iter().find(|(k, _)| k == kind).map(|(_, e)| *e))
                .collect();
            report.rows.push(aggregate(kind.name(), n, cfg.master_seed, &errs));
        }
    }
    Ok(report)
}

fn aggregate(name: &str, n: usize, seed: u64, errs: &[TrialError]) -> RmseRow {
    let prec: Vec<f64> = errs.iter().map(|e| e.precision).collect();
    let cov: Vec<f64> = errs.iter().map(|e| e.covariance).collect();
    let sqrt_all = |v: &[f64]| v.iter().map(|x| x.sqrt()).collect::<Vec<_>>();
    let (rp, rc) = if errs.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (rmse_from_ratios(&prec), rmse_from_ratios(&cov))
    };
    let times: Vec<f64> = errs.iter().map(|e| e.runtime_ms).filter(|t| t.is_finite()).collect();
    RmseRow {
        estimator: name.to_string(),
        n,
        rmse_precision: rp,
        rmse_precision_sd: sample_sd(&sqrt_all(&prec)),
        rmse_covariance: rc,
        rmse_covariance_sd: sample_sd(&sqrt_all(&cov)),
        runtime_ms: median(&times),
        seed,
    }
}

pub const REPORT_HEADER: [&str; 8] = [
    "estimator",
    "n",
    "rmse_precision",
    "rmse_precision_sd",
    "rmse_covariance",
    "rmse_covariance_sd",
    "runtime_ms",
    "seed",
];

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse().map_err(|_| Error::Parse(format!("bad number '{s}'")))
}

/// Writes report rows as CSV; NaN values (voided or unavailable) become empty fields.
pub fn write_report_to<W: Write>(rows: &[RmseRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    let mut sorted: Vec<&RmseRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.estimator.cmp(&b.estimator).then(a.n.cmp(&b.n)));
    for r in sorted {
        w.write_record([
            r.estimator.clone(),
            r.n.to_string(),
            fmt_f64(r.rmse_precision),
            fmt_f64(r.rmse_precision_sd),
            fmt_f64(r.rmse_covariance),
            fmt_f64(r.rmse_covariance_sd),
            fmt_f64(r.runtime_ms),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report(report: &RmseReport, path: &Path) -> Result<()> {
    write_report_to(&report.rows, std::fs::File::create(path)?)
}

pub fn read_report_from<R: Read>(input: R) -> Result<Vec<RmseRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(REPORT_HEADER) {
        return Err(Error::Parse(format!("unexpected report header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let int = |i: usize| -> Result<u64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Parse(format!("bad integer '{}'", &rec[i])))
        };
        rows.push(RmseRow {
            estimator: rec[0].to_string(),
            n: int(1)? as usize,
            rmse_precision: parse_f64(&rec[2])?,
            rmse_precision_sd: parse_f64(&rec[3])?,
            rmse_covariance: parse_f64(&rec[4])?,
            rmse_covariance_sd: parse_f64(&rec[5])?,
            runtime_ms: parse_f64(&rec[6])?,
            seed: int(7)?,
        });
    }
    Ok(rows)
}

pub fn read_report(path: &Path) -> Result<Vec<RmseRow>> {
    read_report_from(std::fs::File::open(path)?)
}

/// `<output>.provenance.json`.
pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".provenance.json");
    output.with_file_name(name)
}

/// Writes `value` as pretty JSON next to `output` and returns the sidecar path.
pub fn write_sidecar<T: Serialize>(output: &Path, value: &T) -> Result<PathBuf> {
    let path = sidecar_path(output);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateConfig {
    pub alpha: f64,
    pub base: f64,
    pub n_grid: Vec<usize>,
    pub n_mc: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    pub c_x: f64,
    pub c_y: f64,
    pub schedule: ScheduleMode,
    pub ff_steps: usize,
    pub eps: f64,
    pub max_outer: usize,
    pub glasso: GlassoOptions,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig {
            alpha: 0.1,
            base: 8.0,
            n_grid: vec![100, 200, 400, 800],
            n_mc: 10,
            seed: 7,
            estimators: vec![EstimatorKind::Kglasso, EstimatorKind::Ff],
            c_x: 0.4,
            c_y: 0.4,
            schedule: ScheduleMode::Simulation,
            ff_steps: 3,
            eps: 1e-3,
            max_outer: 50,
            glasso: GlassoOptions::default(),
        }
    }
}

impl RateConfig {
    /// `p = f = ceil(n^0.6)`.
    pub fn borderline() -> Self {
        RateConfig {
            alpha: 0.6,
            base: 1.0,
            n_grid: vec![50, 100, 200, 400],
            ..Default::default()
        }
    }

    pub fn dim(&self, n: usize) -> usize {
        (self.base * (n as f64).powf(self.alpha)).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.base > 0.0) {
            return Err(Error::InvalidConfig("alpha must lie in (0, 1) and base must be positive".into()));
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("n_grid must be nonempty, positive and strictly ascending".into()));
        }
        if self.n_mc == 0 {
            return Err(Error::InvalidConfig("n_mc must be at least 1".into()));
        }
        if let Some(e) = self
            .estimators
            .iter()
            .find(|e| !matches!(e, EstimatorKind::Kglasso | EstimatorKind::Ff))
        {
            return Err(Error::InvalidConfig(format!(
                "rate experiments support kglasso and ff, not {}",
                e.name()
            )));
        }
        self.glasso.validate()
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub estimator: String,
    pub n: usize,
    pub p: usize,
    pub f: usize,
    /// Mean over trials of `||Theta_hat - Theta0||_F^2`.
    pub mse_mean: f64,
    pub mse_median: f64,
    /// Predicted curve scaled to meet `mse_mean` at the largest `n`.
    pub theory: f64,
    pub voided: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    pub provenance: Provenance,
    pub dual_checks: usize,
    pub dual_failures: usize,
}

impl RateTable {
    pub fn curve(&self, estimator: EstimatorKind) -> Vec<&RateRow> {
        self.rows.iter().filter(|r| r.estimator == estimator.name()).collect()
    }

    /// Log-log slopes `(empirical, theoretical)` for one estimator; the
    /// empirical curve is the trial mean, or the median when `use_median`.
    pub fn slopes(&self, estimator: EstimatorKind, use_median: bool) -> (f64, f64) {
        let rows = self.curve(estimator);
        let n: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
        let emp: Vec<f64> = rows
            .iter()
            .map(|r| if use_median { r.mse_median } else { r.mse_mean })
            .collect();
        let th: Vec<f64> = rows.iter().map(|r| r.theory).collect();
        (loglog_slope(&n, &emp), loglog_slope(&n, &th))
    }
}

/// Unscaled predicted precision MSE: `(p^2 + f^2) ln M / n` for FF and
/// `(p + f) ln M / n` for KGlasso, with `M = max(p, f, n)`.
pub fn predicted_mse(estimator: EstimatorKind, p: usize, f: usize, n: usize) -> f64 {
    let (pf, ff, nf) = (p as f64, f as f64, n as f64);
    let ln_m = (p.max(f).max(n) as f64).ln();
    match estimator {
        EstimatorKind::Ff => (pf * pf + ff * ff) * ln_m / nf,
        _ => (pf + ff) * ln_m / nf,
    }
}

/// Precision MSE as dimensions grow with `n` (`p = f = ceil(base n^alpha)`) under identity truth.
pub fn rate_experiment(cfg: &RateConfig) -> Result<RateTable> {
    cfg.validate()?;
    let tasks: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.n_mc).map(move |t| (n, t)))
        .collect();
    let results: Vec<Result<(Vec<f64>, usize, usize)>> = tasks
        .par_iter()
        .map(|&(n, t)| {
            let d = cfg.dim(n);
            let model = KroneckerModel::from_precisions(SpdMatrix::identity(d), SpdMatrix::identity(d))?;
            let data = sampler::sample_matrix_normal(&model, n, trial_seed(cfg.seed, n, t))?;
            let s = SampleCov::from_data(&data, d, d)?;
            let a_init = SpdMatrix::identity(d);
            let mut errs = Vec::with_capacity(cfg.estimators.len());
            let (mut checks, mut fails) = (0, 0);
            for kind in &cfg.estimators {
                let est = match kind {
                    EstimatorKind::Ff => estimators::ff_estimate(&s, cfg.ff_steps, &a_init)?,
                    _ => {
                        let plan = PenaltyPlan::new(d, d, n, cfg.c_x, cfg.c_y).with_mode(cfg.schedule);
                        let est = estimators::kglasso(&s, &plan, &a_init, cfg.eps, cfg.max_outer, &cfg.glasso)?;
                        checks += est.diagnostics.dual_checks;
                        fails += est.diagnostics.dual_failures;
                        est
                    }
                };
                errs.push(matkit::kron_distance_sq(&est.x_hat, &est.y_hat, model.x0(), model.y0()));
            }
            Ok((errs, checks, fails))
        })
        .collect();

    let mut table = RateTable {
        rows: Vec::new(),
        provenance: Provenance::new(cfg.seed, cfg.hash()),
        dual_checks: 0,
        dual_failures: 0,
    };
    for r in results.iter().flatten() {
        table.dual_checks += r.1;
        table.dual_failures += r.2;
    }
    for (e_idx, kind) in cfg.estimators.iter().enumerate() {
        let mut rows = Vec::new();
        for &n in &cfg.n_grid {
            let vals: Vec<f64> = tasks
                .iter()
                .zip(&results)
                .filter(|((m, _), _)| *m == n)
                .filter_map(|(_, r)| r.as_ref().ok().map(|(e, _, _)| e[e_idx]))
                .collect();
            let d = cfg.dim(n);
            let mean = if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            rows.push(RateRow {
                estimator: kind.name().to_string(),
                n,
                p: d,
                f: d,
                mse_mean: mean,
                mse_median: median(&vals),
                theory: predicted_mse(*kind, d, d, n),
                voided: cfg.n_mc - vals.len(),
            });
        }
        let last = rows.last().expect("nonempty grid");
        let scale = last.mse_mean / last.theory;
        for r in &mut rows {
            r.theory *= scale;
        }
        table.rows.extend(rows);
    }
    Ok(table)
}

pub fn write_rate_table<W: Write>(table: &RateTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["estimator", "n", "p", "f", "mse_mean", "mse_median", "theory", "voided"])?;
    for r in &table.rows {
        w.write_record([
            r.estimator.clone(),
            r.n.to_string(),
            r.p.to_string(),
            r.f.to_string(),
            fmt_f64(r.mse_mean),
            fmt_f64(r.mse_median),
            fmt_f64(r.theory),
            r.voided.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConcentrationConfig {
    pub p_grid: Vec<usize>,
    pub f: usize,
    pub n_grid: Vec<usize>,
    pub n_mc: usize,
    pub seed: u64,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        ConcentrationConfig {
            p_grid: vec![10, 20],
            f: 10,
            n_grid: vec![50, 100],
            n_mc: 100,
            seed: 7,
        }
    }
}

impl ConcentrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p_grid.is_empty() || self.n_grid.is_empty() || self.f == 0 || self.n_mc == 0 {
            return Err(Error::InvalidConfig("grids must be nonempty and f, n_mc positive".into()));
        }
        if self.p_grid.contains(&0) || self.n_grid.contains(&0) {
            return Err(Error::InvalidConfig("grid entries must be positive".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub p: usize,
    pub f: usize,
    pub n: usize,
    /// Mean over trials of `|B_hat(I) - B*|_inf`.
    pub statistic: f64,
    /// Mean over trials of the squared statistic.
    pub statistic_sq: f64,
    /// `sqrt(ln max(f, n) / (n p))`.
    pub rate: f64,
    pub ratio: f64,
}

/// Sup-norm deviation of the `Y`-side compression at `X = I` from its
/// target `B* = tr(A0)/p * B0`, under identity factors.
pub fn concentration_experiment(cfg: &ConcentrationConfig) -> Result<Vec<ConcentrationRow>> {
    cfg.validate()?;
    let f = cfg.f;
    let mut rows = Vec::new();
    for &p in &cfg.p_grid {
        let model = KroneckerModel::from_precisions(SpdMatrix::identity(p), SpdMatrix::identity(f))?;
        let x = DMatrix::identity(p, p);
        let b_star = model.b0().as_matrix() * (model.a0().trace() / p as f64);
        for &n in &cfg.n_grid {
            let stats: Vec<f64> = (0..cfg.n_mc)
                .into_par_iter()
                .map(|t| -> Result<f64> {
                    let seed = derive_seed(cfg.seed, &[p as u64, n as u64, t as u64]);
                    let data = sampler::sample_matrix_normal(&model, n, seed)?;
                    let s = SampleCov::from_data(&data, p, f)?;
                    Ok(matkit::linf_norm(&(estimators::compress_b(&s, &x)? - &b_star)))
                })
                .collect::<Result<_>>()?;
            let k = stats.len() as f64;
            let statistic = stats.iter().sum::<f64>() / k;
            let statistic_sq = stats.iter().map(|v| v * v).sum::<f64>() / k;
            let rate = ((f.max(n) as f64).ln() / (n * p) as f64).sqrt();
            rows.push(ConcentrationRow {
                p,
                f,
                n,
                statistic,
                statistic_sq,
                rate,
                ratio: statistic / rate,
            });
        }
    }
    Ok(rows)
}

pub fn write_concentration<W: Write>(rows: &[ConcentrationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p", "f", "n", "statistic", "statistic_sq", "rate", "ratio"])?;
    for r in rows {
        w.write_record([
            r.p.to_string(),
            r.f.to_string(),
            r.n.to_string(),
            fmt_f64(r.statistic),
            fmt_f64(r.statistic_sq),
            fmt_f64(r.rate),
            fmt_f64(r.ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}
