//! Kronecker-structured covariance and precision estimators.
//!
//! All factor-pair estimators return precision factors `(X, Y)` with
//! `Theta = X (x) Y`. Factors are identifiable only up to `(cX, Y/c)`, so
//! comparisons should go through the products.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glasso::{self, GlassoOptions, GlassoSolution};
use crate::matkit::{self, kron, SpdMatrix};
use crate::sampler::SampleCov;

/// Slack allowed when checking `|G(T, lambda)^-1 - T|_inf <= lambda` after each Glasso step.
pub const DUAL_SLACK: f64 = 1e-6;

/// Default guard on the dimension handed to the full-dimension Glasso baseline.
pub const FULL_GLASSO_GUARD: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    /// `lambda_Y(1) = c_y sqrt(ln M / (n p))`, then
    /// `lambda_X = c_x sqrt(ln M / (n f)) + lambda_Y(1)` and `lambda_Y = lambda_X` thereafter.
    #[default]
    Simulation,
    /// `lambda_Y(1) = c_y sqrt(ln M / (n p))`, then both factors use
    /// `c (1/sqrt(p) + 1/sqrt(f)) sqrt(ln M / n)` with their own constant.
    Asymptotic,
}

/// Per-step Glasso penalties for KGlasso.
///
/// Steps are numbered from 1; outer iteration `k` updates `Y` with
/// `lambda_y(k)` and then `X` with `lambda_x(k)`. The first `X` update uses
/// the steady-state value, so only the very first `Y` update differs from
/// the rest. Barred values are `lambda_bar_x = f * lambda_x` and
/// `lambda_bar_y = p * lambda_y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyPlan {
    pub c_x: f64,
    pub c_y: f64,
    pub p: usize,
    pub f: usize,
    pub n: usize,
    pub mode: ScheduleMode,
}

impl PenaltyPlan {
    pub fn new(p: usize, f: usize, n: usize, c_x: f64, c_y: f64) -> Self {
        PenaltyPlan {
            c_x,
            c_y,
            p,
            f,
            n,
            mode: ScheduleMode::Simulation,
        }
    }

    pub fn with_mode(mut self, mode: ScheduleMode) -> Self {
        self.mode = mode;
        self
    }

    /// All penalties zero: KGlasso reduces to flip-flop.
    pub fn zero(p: usize, f: usize, n: usize) -> Self {
        Self::new(p, f, n, 0.0, 0.0)
    }

    /// `max(p, f, n)`.
    pub fn m(&self) -> usize {
        self.p.max(self.f).max(self.n)
    }

    pub fn lambda_y(&self, step: usize) -> f64 {
        self.values(step).0
    }

    pub fn lambda_x(&self, step: usize) -> f64 {
        self.values(step).1
    }

    pub fn lambda_bar_y(&self, step: usize) -> f64 {
        self.lambda_y(step) * self.p as f64
    }

    pub fn lambda_bar_x(&self, step: usize) -> f64 {
        self.lambda_x(step) * self.f as f64
    }

    /// `(lambda_bar_x, lambda_bar_y)` used from the second step on.
    pub fn steady_bars(&self) -> (f64, f64) {
        (self.lambda_bar_x(2), self.lambda_bar_y(2))
    }

    fn values(&self, step: usize) -> (f64, f64) {
        let (p, f, n) = (self.p as f64, self.f as f64, self.n as f64);
        let ln_m = (self.m() as f64).ln();
        let y1 = self.c_y * (ln_m / (n * p)).sqrt();
        match self.mode {
            ScheduleMode::Simulation => {
                let x = self.c_x * (ln_m / (n * f)).sqrt() + y1;
                if step <= 1 {
                    (y1, x)
                } else {
                    (x, x)
                }
            }
            ScheduleMode::Asymptotic => {
                let base = (1.0 / p.sqrt() + 1.0 / f.sqrt()) * (ln_m / n).sqrt();
                let x = self.c_x * base;
                if step <= 1 {
                    (y1, x)
                } else {
                    (self.c_y * base, x)
                }
            }
        }
    }
}

/// `(lambda_Y, lambda_X)` at `step_k` of the simulation schedule.
pub fn schedule(p: usize, f: usize, n: usize, c_x: f64, c_y: f64, step_k: usize) -> Result<(f64, f64)> {
    if step_k == 0 {
        return Err(Error::InvalidConfig("schedule steps start at 1".into()));
    }
    let plan = PenaltyPlan::new(p, f, n, c_x, c_y);
    Ok((plan.lambda_y(step_k), plan.lambda_x(step_k)))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Number of dual box checks performed after Glasso subiterations.
    pub dual_checks: usize,
    pub dual_failures: usize,
    /// Largest `|W - T|_inf - lambda` seen over all checks.
    pub max_dual_slack: f64,
    pub glasso_sweeps: usize,
    /// Relative Frobenius change of the product at the last outer iteration.
    pub last_change: f64,
    /// Smallest eigenvalues of the returned factors (reported by FF/Thres).
    pub lambda_min_x: Option<f64>,
    pub lambda_min_y: Option<f64>,
}

impl Diagnostics {
    fn record_dual(&mut self, w: &DMatrix<f64>, t: &DMatrix<f64>, lambda: f64) {
        let slack = matkit::linf_norm(&(w - t)) - lambda;
        self.dual_checks += 1;
        if slack > DUAL_SLACK {
            self.dual_failures += 1;
        }
        self.max_dual_slack = if self.dual_checks == 1 {
            slack
        } else {
            self.max_dual_slack.max(slack)
        };
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    /// Precision factor for the `p`-dimensional mode.
    pub x_hat: DMatrix<f64>,
    /// Precision factor for the `f`-dimensional mode.
    pub y_hat: DMatrix<f64>,
    /// `J_lambda` after every subiteration.
    pub objective_trace: Vec<f64>,
    pub outer_iters: usize,
    pub converged: bool,
    pub diagnostics: Diagnostics,
}

impl EstimateResult {
    pub fn p(&self) -> usize {
        self.x_hat.nrows()
    }

    pub fn f(&self) -> usize {
        self.y_hat.nrows()
    }

    /// `x_hat (x) y_hat`.
    pub fn theta_hat(&self) -> DMatrix<f64> {
        kron(&self.x_hat, &self.y_hat)
    }

    /// Covariance factors `(x_hat^-1, y_hat^-1)`; `Sigma_hat` is their Kronecker product.
    pub fn covariance_factors(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((invert(&self.x_hat)?, invert(&self.y_hat)?))
    }

    /// Factors rescaled so that `tr(y) = f`, for display only.
    pub fn normalized_factors(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let c = self.y_hat.trace() / self.f() as f64;
        if c > 0.0 {
            (&self.x_hat * c, &self.y_hat / c)
        } else {
            (self.x_hat.clone(), self.y_hat.clone())
        }
    }
}

/// Cholesky inverse when possible, general LU inverse otherwise.
fn invert(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Ok((inv, _)) = matkit::chol_inv_logdet(m) {
        return Ok(inv.into_inner());
    }
    m.clone().try_inverse().ok_or(Error::NotPositiveDefinite)
}

fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    matkit::chol_inv_logdet(m).map(|(inv, _)| inv.into_inner())
}

/// `B_hat(X) = (1/p) sum_{i,j} x[i,j] S(j,i)`.
pub fn compress_b(s: &SampleCov, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(s.weighted_block_sum(x)? / s.p() as f64)
}

/// `A_hat(Y) = (1/f) sum_{k,l} y[k,l] Sbar(l,k)`.
pub fn compress_a(s: &SampleCov, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(s.weighted_pblock_sum(y)? / s.f() as f64)
}

/// Enforces `n >= max(p/f, f/p) + 1`.
pub fn check_sample_size(n: usize, p: usize, f: usize) -> Result<()> {
    let (hi, lo) = (p.max(f) as f64, p.min(f).max(1) as f64);
    let needed = hi / lo + 1.0;
    if (n as f64) < needed {
        return Err(Error::SampleSizeTooSmall {
            n,
            required: needed.ceil() as usize,
        });
    }
    Ok(())
}

/// `tr((x (x) y) S) - f logdet x - p logdet y + lambda_bar_x |x|_1 + lambda_bar_y |y|_1`,
/// with the trace taken blockwise as `sum_{i,j} x[i,j] tr(y S(j,i))`.
pub fn objective_j(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    s: &SampleCov,
    lambda_bar_x: f64,
    lambda_bar_y: f64,
) -> Result<f64> {
    let (p, f) = (s.p() as f64, s.f() as f64);
    let weighted = s.weighted_block_sum(x)?;
    let tr = matkit::frobenius_inner(y, &weighted);
    let ld_x = matkit::logdet_spd(x)?;
    let ld_y = matkit::logdet_spd(y)?;
    Ok(tr - f * ld_x - p * ld_y + lambda_bar_x * matkit::l1_norm(x) + lambda_bar_y * matkit::l1_norm(y))
}

fn check_factor(m: &SpdMatrix, dim: usize, what: &str) -> Result<()> {
    if m.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "{what} is {}x{}, expected {dim}x{dim}",
            m.dim(),
            m.dim()
        )));
    }
    Ok(())
}

/// Relative Frobenius change between two Kronecker products.
fn product_change(x0: &DMatrix<f64>, y0: &DMatrix<f64>, x1: &DMatrix<f64>, y1: &DMatrix<f64>) -> f64 {
    let num = matkit::kron_distance_sq(x1, y1, x0, y0).sqrt();
    let den = matkit::kron_norm_sq(x0, y0).sqrt();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Flip-flop: `k_steps` alternating compressions starting from `a_init`.
///
/// Odd steps set `Y = B_hat(X)^-1`, even steps `X = A_hat(Y)^-1`; with one step the
/// `X` factor stays at `a_init^-1`.
pub fn ff_estimate(s: &SampleCov, k_steps: usize, a_init: &SpdMatrix) -> Result<EstimateResult> {
    check_sample_size(s.n(), s.p(), s.f())?;
    check_factor(a_init, s.p(), "a_init")?;
    if k_steps == 0 {
        return Err(Error::InvalidConfig("flip-flop needs at least one step".into()));
    }
    let mut x = a_init.inverse()?.into_inner();
    let mut y = DMatrix::zeros(0, 0);
    let mut trace = Vec::with_capacity(k_steps);
    let mut diagnostics = Diagnostics::default();
    let mut prev: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    for step in 1..=k_steps {
        if step % 2 == 1 {
            y = spd_inverse(&compress_b(s, &x)?)?;
        } else {
            if let Some((px, py)) = &prev {
                diagnostics.last_change = product_change(px, py, &x, &y);
            }
            prev = Some((x.clone(), y.clone()));
            x = spd_inverse(&compress_a(s, &y)?)?;
        }
        trace.push(objective_j(&x, &y, s, 0.0, 0.0)?);
    }
    if let Some((px, py)) = &prev {
        diagnostics.last_change = product_change(px, py, &x, &y);
    }
    Ok(EstimateResult {
        x_hat: x,
        y_hat: y,
        objective_trace: trace,
        outer_iters: k_steps.div_ceil(2),
        converged: true,
        diagnostics,
    })
}

fn threshold_factor(m: &DMatrix<f64>, target: usize, name: &str) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if !target.is_multiple_of(2) || target > d * d.saturating_sub(1) {
        return Err(Error::InvalidTarget(format!(
            "{name}: target {target} must be even and at most {}",
            d * d.saturating_sub(1)
        )));
    }
    let current = matkit::sparsity(m);
    if target > current {
        return Err(Error::InvalidTarget(format!(
            "{name}: target {target} exceeds current sparsity {current}"
        )));
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for j in 0..d {
        for i in 0..j {
            let v = m[(i, j)].abs().max(m[(j, i)].abs());
            if v != 0.0 {
                pairs.push((v, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let drop = (current - target) / 2;
    let mut out = m.clone();
    for &(_, i, j) in pairs.iter().take(drop) {
        out[(i, j)] = 0.0;
        out[(j, i)] = 0.0;
    }
    Ok(out)
}

/// FF/Thres: keeps the `target_sx` (resp. `target_sy`) largest-magnitude
/// off-diagonal entries of each flip-flop precision factor, zeroing symmetric
/// pairs from the smallest up (ties by ascending `(row, col)`). No positive
/// definiteness repair is applied; the resulting smallest eigenvalues are
/// reported in the diagnostics.
pub fn ff_thres(ff: &EstimateResult, target_sx: usize, target_sy: usize) -> Result<EstimateResult> {
    let x = threshold_factor(&ff.x_hat, target_sx, "x")?;
    let y = threshold_factor(&ff.y_hat, target_sy, "y")?;
    let mut diagnostics = ff.diagnostics.clone();
    diagnostics.lambda_min_x = Some(matkit::min_eigenvalue(&x));
    diagnostics.lambda_min_y = Some(matkit::min_eigenvalue(&y));
    Ok(EstimateResult {
        x_hat: x,
        y_hat: y,
        objective_trace: ff.objective_trace.clone(),
        outer_iters: ff.outer_iters,
        converged: ff.converged,
        diagnostics,
    })
}

/// KGlasso: alternating compressions, each passed through the Glasso operator.
///
/// `objective_trace` holds `J_lambda` (with the steady-state penalties) after
/// every Glasso subiteration. Every Glasso call is warm-started from the
/// factor it replaces, which makes the trace nonincreasing. Stops when the
/// relative Frobenius change of `x (x) y` over one outer iteration is at most
/// `eps`, or after `max_outer` iterations.
pub fn kglasso(
    s: &SampleCov,
    plan: &PenaltyPlan,
    a_init: &SpdMatrix,
    eps: f64,
    max_outer: usize,
    gopts: &GlassoOptions,
) -> Result<EstimateResult> {
    check_sample_size(s.n(), s.p(), s.f())?;
    check_factor(a_init, s.p(), "a_init")?;
    let x0 = a_init.inverse()?;
    run_kglasso(s, plan, x0, None, 1, eps, max_outer, gopts)
}

/// Continues KGlasso from a previous result for up to `max_outer` further
/// iterations, using the steady-state penalties.
pub fn kglasso_resume(
    s: &SampleCov,
    plan: &PenaltyPlan,
    prev: &EstimateResult,
    eps: f64,
    max_outer: usize,
    gopts: &GlassoOptions,
) -> Result<EstimateResult> {
    check_sample_size(s.n(), s.p(), s.f())?;
    let x = SpdMatrix::new(prev.x_hat.clone())?;
    let y = SpdMatrix::new(prev.y_hat.clone())?;
    run_kglasso(s, plan, x, Some(y), 2, eps, max_outer, gopts)
}

#[allow(clippy::too_many_arguments)]
fn run_kglasso(
    s: &SampleCov,
    plan: &PenaltyPlan,
    mut x: SpdMatrix,
    mut y: Option<SpdMatrix>,
    first_step: usize,
    eps: f64,
    max_outer: usize,
    gopts: &GlassoOptions,
) -> Result<EstimateResult> {
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig("eps must be positive".into()));
    }
    if max_outer == 0 {
        return Err(Error::InvalidConfig("max_outer must be at least 1".into()));
    }
    if plan.p != s.p() || plan.f != s.f() {
        return Err(Error::DimensionMismatch(format!(
            "penalty plan is for p={}, f={}, sample covariance has p={}, f={}",
            plan.p,
            plan.f,
            s.p(),
            s.f()
        )));
    }
    let (bar_x, bar_y) = plan.steady_bars();
    let mut trace = Vec::with_capacity(2 * max_outer);
    let mut diagnostics = Diagnostics::default();
    let mut converged = false;
    let mut outer = 0;

    for k in first_step..first_step + max_outer {
        outer += 1;
        let prev = y.as_ref().map(|yy| (x.as_matrix().clone(), yy.as_matrix().clone()));

        let b_hat = compress_b(s, &x)?;
        let lam_y = plan.lambda_y(k);
        let sol_y = solve(&b_hat, lam_y, gopts, y.as_ref())?;
        diagnostics.record_dual(&sol_y.w, &b_hat, lam_y);
        diagnostics.glasso_sweeps += sol_y.sweeps;
        let new_y = sol_y.theta;
        trace.push(objective_j(&x, &new_y, s, bar_x, bar_y)?);

        let a_hat = compress_a(s, &new_y)?;
        let lam_x = plan.lambda_x(k);
        let sol_x = solve(&a_hat, lam_x, gopts, Some(&x))?;
        diagnostics.record_dual(&sol_x.w, &a_hat, lam_x);
        diagnostics.glasso_sweeps += sol_x.sweeps;
        x = sol_x.theta;
        trace.push(objective_j(&x, &new_y, s, bar_x, bar_y)?);
        y = Some(new_y);

        if let Some((px, py)) = prev {
            let change = product_change(&px, &py, &x, y.as_ref().unwrap());
            diagnostics.last_change = change;
            if change <= eps {
                converged = true;
                break;
            }
        }
    }

    Ok(EstimateResult {
        x_hat: x.into_inner(),
        y_hat: y.expect("at least one iteration").into_inner(),
        objective_trace: trace,
        outer_iters: outer,
        converged,
        diagnostics,
    })
}

fn solve(t: &DMatrix<f64>, lambda: f64, gopts: &GlassoOptions, warm: Option<&SpdMatrix>) -> Result<GlassoSolution> {
    glasso::glasso_solve_from(t, lambda, gopts, warm, None)
}

/// Glasso on the full `pf x pf` sample covariance.
pub fn glasso_full(s: &SampleCov, lambda: f64, gopts: &GlassoOptions, guard: usize) -> Result<GlassoSolution> {
    let d = s.dim();
    if d > guard {
        return Err(Error::DimensionGuard { dim: d, limit: guard });
    }
    glasso::glasso_solve(s.matrix(), lambda, gopts)
}

/// Sample covariance baseline: returns `S_n` and its inverse when it exists.
pub fn scm(s: &SampleCov) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
    let m = s.matrix().clone();
    let inv = spd_inverse(&m).ok();
    (m, inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{gen_er_precision, sample_cov, sample_matrix_normal, KroneckerModel};
    use nalgebra::dmatrix;

    fn small_model(p: usize, f: usize, seed: u64) -> KroneckerModel {
        let x0 = gen_er_precision(p, 0.3, 0.3, seed).unwrap();
        let y0 = gen_er_precision(f, 0.3, 0.3, seed + 1).unwrap();
        KroneckerModel::from_precisions(x0, y0).unwrap()
    }

    fn population(model: &KroneckerModel) -> SampleCov {
        SampleCov::from_matrix(model.sigma0().clone(), 1000, model.p(), model.f()).unwrap()
    }

    fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn compress_b_population_cases() {
        let a0 = SpdMatrix::new(dmatrix![2.0, 1.0; 1.0, 2.0]).unwrap();
        let b0 = SpdMatrix::new(dmatrix![1.0, 0.3, 0.0; 0.3, 2.0, 0.5; 0.0, 0.5, 1.5]).unwrap();
        let model = KroneckerModel::from_covariances(a0.clone(), b0.clone()).unwrap();
        let s = population(&model);
        let at_truth = compress_b(&s, model.x0()).unwrap();
        assert!((at_truth - b0.as_matrix()).abs().max() < 1e-12);
        // tr(A0)/p = 2
        let at_identity = compress_b(&s, &DMatrix::identity(2, 2)).unwrap();
        assert!((at_identity - b0.as_matrix() * 2.0).abs().max() < 1e-12);
        let x = dmatrix![1.0, 0.2; 0.2, 0.7];
        let lin = compress_b(&s, &(&x * 3.0)).unwrap() - compress_b(&s, &x).unwrap() * 3.0;
        assert!(lin.abs().max() < 1e-12);
    }

    #[test]
    fn compress_a_population_cases() {
        let model = small_model(3, 4, 10);
        let s = population(&model);
        let at_truth = compress_a(&s, model.y0()).unwrap();
        assert!((at_truth - model.a0().as_matrix()).abs().max() < 1e-10);
        let scale = model.b0().trace() / 4.0;
        let at_identity = compress_a(&s, &DMatrix::identity(4, 4)).unwrap();
        assert!((at_identity - model.a0().as_matrix() * scale).abs().max() < 1e-10);
    }

    #[test]
    fn compress_a_is_compress_b_of_permuted() {
        let model = small_model(3, 2, 20);
        let data = sample_matrix_normal(&model, 6, 1).unwrap();
        let s = sample_cov(&data, 3, 2).unwrap();
        let permuted = matkit::permute_kron(s.matrix(), 3, 2).unwrap();
        let swapped = SampleCov::from_matrix(permuted, 6, 2, 3).unwrap();
        let y = dmatrix![1.0, 0.4; 0.4, 2.0];
        let a = compress_a(&s, &y).unwrap();
        let b = compress_b(&swapped, &y).unwrap();
        assert!((a - b).abs().max() < 1e-12);
    }

    #[test]
    fn compression_dimension_errors() {
        let model = small_model(3, 2, 30);
        let s = population(&model);
        assert!(matches!(
            compress_b(&s, &DMatrix::identity(2, 2)),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            compress_a(&s, &DMatrix::identity(3, 3)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn schedule_values() {
        let (y1, x1) = schedule(100, 100, 10, 0.4, 0.4, 1).unwrap();
        assert!((y1 - 0.0271446).abs() < 1e-7, "{y1}");
        let (y2, x2) = schedule(100, 100, 10, 0.4, 0.4, 2).unwrap();
        assert!((x2 - 0.0542891).abs() < 1e-7, "{x2}");
        assert_eq!(y2, x2);
        assert_eq!(x1, x2);
        let (y3, x3) = schedule(100, 100, 10, 0.4, 0.4, 3).unwrap();
        assert_eq!((y3, x3), (y2, x2));
        assert_eq!(schedule(5, 5, 5, 0.0, 0.0, 4).unwrap(), (0.0, 0.0));
        assert!(schedule(5, 5, 5, 0.4, 0.4, 0).is_err());
        let plan = PenaltyPlan::new(20, 10, 50, 0.4, 0.3);
        assert_eq!(plan.lambda_bar_x(2), plan.lambda_x(2) * 10.0);
        assert_eq!(plan.lambda_bar_y(1), plan.lambda_y(1) * 20.0);
    }

    #[test]
    fn asymptotic_schedule_shape() {
        let plan = PenaltyPlan::new(16, 25, 100, 0.5, 0.5).with_mode(ScheduleMode::Asymptotic);
        let base = (0.25 + 0.2) * ((100f64).ln() / 100.0).sqrt();
        assert!((plan.lambda_x(3) - 0.5 * base).abs() < 1e-15);
        assert!((plan.lambda_y(3) - 0.5 * base).abs() < 1e-15);
        assert!((plan.lambda_y(1) - 0.5 * ((100f64).ln() / 1600.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sample_size_guard() {
        assert!(check_sample_size(1, 100, 2).is_err());
        assert!(check_sample_size(51, 100, 2).is_ok());
        assert!(matches!(
            check_sample_size(50, 100, 2),
            Err(Error::SampleSizeTooSmall { n: 50, required: 51 })
        ));
        assert!(check_sample_size(2, 4, 4).is_ok());
    }

    #[test]
    fn objective_examples() {
        let model = small_model(3, 3, 40);
        let data = sample_matrix_normal(&model, 5, 2).unwrap();
        let s = sample_cov(&data, 3, 3).unwrap();
        let j = objective_j(&DMatrix::identity(3, 3), &DMatrix::identity(3, 3), &s, 0.7, 0.2).unwrap();
        assert!((j - (s.trace() + 0.7 * 3.0 + 0.2 * 3.0)).abs() < 1e-12);

        let pop = population(&model);
        let j = objective_j(model.x0(), model.y0(), &pop, 0.0, 0.0).unwrap();
        let expected = 9.0 - 3.0 * model.x0().logdet().unwrap() - 3.0 * model.y0().logdet().unwrap();
        assert!((j - expected).abs() < 1e-9);

        // blockwise trace against a naive kron-then-trace
        let x = model.x0().as_matrix();
        let y = dmatrix![1.0, 0.1, 0.0; 0.1, 2.0, -0.3; 0.0, -0.3, 1.0];
        let naive = (kron(x, &y) * s.matrix()).trace() - 3.0 * matkit::logdet_spd(x).unwrap()
            - 3.0 * matkit::logdet_spd(&y).unwrap()
            + 0.5 * matkit::l1_norm(x)
            + 0.25 * matkit::l1_norm(&y);
        let blockwise = objective_j(x, &y, &s, 0.5, 0.25).unwrap();
        assert!((naive - blockwise).abs() < 1e-9);
        assert!(matches!(
            objective_j(&-DMatrix::identity(3, 3), &y, &s, 0.0, 0.0),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn ff_population_recovers_product() {
        let model = small_model(4, 3, 50);
        let s = population(&model);
        let a_init = SpdMatrix::new(dmatrix![
            2.0, 0.3, 0.0, 0.1;
            0.3, 1.0, 0.2, 0.0;
            0.0, 0.2, 1.5, 0.4;
            0.1, 0.0, 0.4, 3.0
        ])
        .unwrap();
        for k in [2, 3, 4] {
            let ff = ff_estimate(&s, k, &a_init).unwrap();
            assert!(rel_frob(&ff.theta_hat(), model.theta0()) < 1e-8);
        }
    }

    #[test]
    fn ff_scale_invariance_and_single_step() {
        let model = small_model(3, 4, 60);
        let data = sample_matrix_normal(&model, 20, 3).unwrap();
        let s = sample_cov(&data, 3, 4).unwrap();
        let a_init = SpdMatrix::identity(3);
        let base = ff_estimate(&s, 3, &a_init).unwrap();
        for c in [0.1, 10.0] {
            let scaled = ff_estimate(&s, 3, &a_init.scaled(c).unwrap()).unwrap();
            assert!(rel_frob(&scaled.theta_hat(), &base.theta_hat()) < 1e-10);
        }
        let one = ff_estimate(&s, 1, &a_init).unwrap();
        let expected_y = compress_b(&s, &DMatrix::identity(3, 3)).unwrap().try_inverse().unwrap();
        assert!((one.y_hat - expected_y).abs().max() < 1e-10);
        assert_eq!(one.x_hat, DMatrix::identity(3, 3));
    }

    #[test]
    fn ff_rejects_small_samples() {
        let model = small_model(10, 2, 70);
        let data = sample_matrix_normal(&model, 3, 1).unwrap();
        let s = sample_cov(&data, 10, 2).unwrap();
        assert!(matches!(
            ff_estimate(&s, 3, &SpdMatrix::identity(10)),
            Err(Error::SampleSizeTooSmall { .. })
        ));
    }

    #[test]
    fn ff_thres_examples() {
        let x = dmatrix![2.0, 0.5, -0.2; 0.5, 2.0, 0.1; -0.2, 0.1, 2.0];
        let y = dmatrix![1.0, 0.3; 0.3, 1.0];
        let ff = EstimateResult {
            x_hat: x.clone(),
            y_hat: y.clone(),
            objective_trace: vec![],
            outer_iters: 1,
            converged: true,
            diagnostics: Diagnostics::default(),
        };
        let same = ff_thres(&ff, 6, 2).unwrap();
        assert_eq!(same.x_hat, x);
        assert_eq!(same.y_hat, y);
        let diag = ff_thres(&ff, 0, 0).unwrap();
        assert_eq!(diag.x_hat, DMatrix::from_diagonal(&x.diagonal()));
        let two = ff_thres(&ff, 2, 2).unwrap();
        assert_eq!(two.x_hat, dmatrix![2.0, 0.5, 0.0; 0.5, 2.0, 0.0; 0.0, 0.0, 2.0]);
        assert!(two.diagnostics.lambda_min_x.is_some());
        assert!(matches!(ff_thres(&ff, 3, 2), Err(Error::InvalidTarget(_))));
        assert!(matches!(ff_thres(&ff, 8, 2), Err(Error::InvalidTarget(_))));
    }

    #[test]
    fn ff_thres_ties_break_by_position() {
        let x = dmatrix![1.0, 0.2, 0.2; 0.2, 1.0, 0.2; 0.2, 0.2, 1.0];
        let ff = EstimateResult {
            x_hat: x,
            y_hat: DMatrix::identity(2, 2),
            objective_trace: vec![],
            outer_iters: 1,
            converged: true,
            diagnostics: Diagnostics::default(),
        };
        let out = ff_thres(&ff, 2, 0).unwrap();
        // pairs (0,1), (0,2), (1,2) tie; the first two in (row, col) order are dropped
        assert_eq!(out.x_hat[(0, 1)], 0.0);
        assert_eq!(out.x_hat[(0, 2)], 0.0);
        assert_eq!(out.x_hat[(1, 2)], 0.2);
    }

    #[test]
    fn kglasso_descends_and_stays_dual_feasible() {
        let model = small_model(5, 4, 80);
        let data = sample_matrix_normal(&model, 15, 9).unwrap();
        let s = sample_cov(&data, 5, 4).unwrap();
        let plan = PenaltyPlan::new(5, 4, 15, 0.4, 0.4);
        let est = kglasso(&s, &plan, &SpdMatrix::identity(5), 1e-3, 50, &GlassoOptions::default()).unwrap();
        assert!(est.converged);
        for w in est.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-8, "{} -> {}", w[0], w[1]);
        }
        assert_eq!(est.diagnostics.dual_failures, 0);
        assert_eq!(est.diagnostics.dual_checks, 2 * est.outer_iters);
        assert!(matkit::is_positive_definite(&est.x_hat));
        assert!(matkit::is_positive_definite(&est.y_hat));
    }

    #[test]
    fn kglasso_zero_penalty_tracks_ff() {
        let model = small_model(4, 4, 90);
        let data = sample_matrix_normal(&model, 40, 4).unwrap();
        let s = sample_cov(&data, 4, 4).unwrap();
        let plan = PenaltyPlan::zero(4, 4, 40);
        let a_init = SpdMatrix::identity(4);
        for k in 1..=4 {
            let kg = kglasso(&s, &plan, &a_init, 1e-12, k, &GlassoOptions::default()).unwrap();
            let ff = ff_estimate(&s, 2 * k, &a_init).unwrap();
            assert!(rel_frob(&kg.y_hat, &ff.y_hat) < 1e-2);
            assert!(rel_frob(&kg.x_hat, &ff.x_hat) < 1e-2);
        }
    }

    #[test]
    fn kglasso_rejects_mismatched_plan() {
        let model = small_model(3, 3, 100);
        let s = population(&model);
        let plan = PenaltyPlan::new(4, 3, 10, 0.4, 0.4);
        assert!(kglasso(&s, &plan, &SpdMatrix::identity(3), 1e-3, 5, &GlassoOptions::default()).is_err());
    }

    #[test]
    fn glasso_full_guard_and_unpenalized() {
        let model = small_model(2, 2, 110);
        let data = sample_matrix_normal(&model, 50, 5).unwrap();
        let s = sample_cov(&data, 2, 2).unwrap();
        let sol = glasso_full(&s, 0.0, &GlassoOptions::default(), FULL_GLASSO_GUARD).unwrap();
        let inv = s.matrix().clone().try_inverse().unwrap();
        assert!((sol.theta.as_matrix() - &inv).abs().max() < 1e-5 * inv.abs().max());
        assert!(matches!(
            glasso_full(&s, 0.1, &GlassoOptions::default(), 3),
            Err(Error::DimensionGuard { dim: 4, limit: 3 })
        ));
    }

    #[test]
    fn normalized_factors_keep_product() {
        let est = EstimateResult {
            x_hat: dmatrix![2.0, 0.0; 0.0, 1.0],
            y_hat: dmatrix![4.0, 1.0; 1.0, 2.0],
            objective_trace: vec![],
            outer_iters: 1,
            converged: true,
            diagnostics: Diagnostics::default(),
        };
        let (x, y) = est.normalized_factors();
        assert!((y.trace() - 2.0).abs() < 1e-15);
        assert!((kron(&x, &y) - est.theta_hat()).abs().max() < 1e-14);
    }
}
