//! The l1-penalized log-determinant program
//!
//! ```text
//! G(T, lambda) = argmin_{Theta > 0}  tr(Theta T) - logdet(Theta) + lambda |Theta|_1
//! ```
//!
//! and its dual `max logdet(W)` over the elementwise box `|W - T|_inf <= lambda`.
//!
//! The solver is block coordinate descent over the rows/columns of `Theta`.
//! With all other columns held fixed, the optimal off-diagonal column `theta`
//! of column `j` solves the lasso
//!
//! ```text
//! min  1/2 w_jj theta^T Q theta + t^T theta + lambda |theta|_1,   Q = Theta_11^-1,
//! ```
//!
//! (`w_jj = T_jj + lambda` when the diagonal is penalized) and the diagonal
//! entry follows in closed form from the Schur complement. Each lasso is
//! solved by cyclic coordinate descent warm-started from the current column,
//! so every column update lowers the primal objective and keeps `Theta`
//! positive definite. `W = Theta^-1` is carried along with block-inverse
//! updates and refreshed by Cholesky at the start of every sweep, where the
//! duality gap and the dual box residual are evaluated.
//!
//! That primal scheme is used for warm starts since it never increases the
//! objective. Cold starts use block coordinate ascent on the dual instead,
//! which keeps `W` inside the box and needs far fewer sweeps when `T` is
//! singular or badly conditioned.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matkit::{self, SpdMatrix};

/// Extra sweeps allowed after a cold solve meets its gap target, spent on
/// making the primal iterate satisfy the box condition as well.
pub const REFINE_SWEEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlassoOptions {
    /// Stop once the primal-dual gap is at or below this value.
    pub gap_tol: f64,
    pub max_sweeps: usize,
    /// Penalize the diagonal of `Theta` (`|Theta|_1` over all entries). When false only
    /// off-diagonal entries are penalized and the diagonal of `W` is pinned to `T`.
    pub penalize_diagonal: bool,
    /// KKT residual target for each column's lasso; capped at `box_tol / 4`.
    pub inner_tol: f64,
    /// Largest tolerated violation of the dual box by `Theta^-1` on return.
    pub box_tol: f64,
    /// Coordinate-descent passes allowed per column update.
    pub max_inner: usize,
}

impl Default for GlassoOptions {
    fn default() -> Self {
        GlassoOptions {
            gap_tol: 1e-3,
            max_sweeps: 500,
            penalize_diagonal: true,
            inner_tol: 1e-6,
            box_tol: 1e-7,
            max_inner: 5_000,
        }
    }
}

impl GlassoOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_tol > 0.0) {
            return Err(Error::InvalidConfig("gap_tol must be positive".into()));
        }
        if self.max_sweeps < 1 {
            return Err(Error::InvalidConfig("max_sweeps must be at least 1".into()));
        }
        if !(self.inner_tol > 0.0) || !(self.box_tol > 0.0) || self.max_inner < 1 {
            return Err(Error::InvalidConfig(
                "inner_tol, box_tol and max_inner must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GlassoSolution {
    pub theta: SpdMatrix,
    /// The dual variable. Equal to `theta^-1` after a warm start; after a cold
    /// start it is the dual iterate, which agrees with `theta^-1` up to the gap.
    pub w: SpdMatrix,
    pub gap: f64,
    pub sweeps: usize,
    /// Primal objective at the start of every sweep and at return.
    pub primal_trace: Vec<f64>,
}

/// Per-sweep diagnostics passed to the optional trace callback.
#[derive(Debug, Clone, Copy)]
pub struct SweepInfo {
    pub sweep: usize,
    pub primal: f64,
    pub gap: f64,
    pub box_violation: f64,
}

pub fn glasso_solve(t: &DMatrix<f64>, lambda: f64, opts: &GlassoOptions) -> Result<GlassoSolution> {
    glasso_solve_from(t, lambda, opts, None, None)
}

/// Solves `G(t, lambda)`, optionally warm-started from a positive definite `init`
/// and reporting every sweep to `trace`.
///
/// A warm start guarantees the returned primal objective is no larger than the
/// objective at `init`.
pub fn glasso_solve_from(
    t: &DMatrix<f64>,
    lambda: f64,
    opts: &GlassoOptions,
    init: Option<&SpdMatrix>,
    mut trace: Option<&mut dyn FnMut(SweepInfo)>,
) -> Result<GlassoSolution> {
    opts.validate()?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    let (t, _) = matkit::symmetrize(t.clone())?;
    let d = t.nrows();
    if d == 0 {
        return Err(Error::DimensionMismatch("empty matrix".into()));
    }
    if lambda == 0.0 && !matkit::is_positive_definite(&t) {
        return Err(Error::NotPositiveDefinite);
    }
    let diag_pen = if opts.penalize_diagonal { lambda } else { 0.0 };
    if (0..d).any(|i| !(t[(i, i)] + diag_pen > 0.0)) {
        return Err(Error::NotPositiveDefinite);
    }

    let mut theta = match init {
        Some(m) if m.dim() == d && matkit::is_positive_definite(m) => m.as_matrix().clone(),
        _ => {
            let shifted = &t + DMatrix::identity(d, d) * diag_pen;
            if matkit::is_positive_definite(&shifted) {
                return solve_dual(&t, shifted, lambda, opts, trace);
            }
            DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 / shifted[(i, i)] } else { 0.0 })
        }
    };

    let inner_target = opts.inner_tol.min(0.25 * opts.box_tol);
    let mut ws = Workspace::new(d);
    let mut primal_trace = Vec::new();
    let mut last = None;

    for sweep in 0..=opts.max_sweeps {
        let (w, logdet) = matkit::chol_inv_logdet(&theta)?;
        let w = w.into_inner();
        let primal = primal_value(&theta, logdet, &t, lambda, opts.penalize_diagonal);
        if let Some(&prev) = primal_trace.last() {
            let prev: f64 = prev;
            debug_assert!(
                primal <= prev + 1e-10 * prev.abs().max(1.0),
                "primal objective increased: {prev} -> {primal}"
            );
        }
        primal_trace.push(primal);
        let gap = gap_from_inverse(primal, &w, &t, lambda, opts.penalize_diagonal);
        let violation = box_violation(&w, &t, lambda, opts.penalize_diagonal);
        if let Some(cb) = trace.as_deref_mut() {
            cb(SweepInfo {
                sweep,
                primal,
                gap,
                box_violation: violation,
            });
        }
        if gap <= opts.gap_tol && violation <= opts.box_tol {
            return Ok(GlassoSolution {
                theta: SpdMatrix::from_verified(theta),
                w: SpdMatrix::from_verified(w),
                gap: gap.max(0.0),
                sweeps: sweep,
                primal_trace,
            });
        }
        if sweep == opts.max_sweeps {
            last = Some((w, gap));
            break;
        }
        let mut w = w;
        for j in 0..d {
            update_column(&mut theta, &mut w, &t, lambda, diag_pen, j, inner_target, opts.max_inner, &mut ws);
        }
    }

    let (w, gap) = last.expect("loop exits through the sweep budget");
    Err(Error::MaxSweepsExceeded {
        best: Box::new(GlassoSolution {
            theta: SpdMatrix::from_verified(theta),
            w: SpdMatrix::from_verified(w),
            gap,
            sweeps: opts.max_sweeps,
            primal_trace,
        }),
        gap,
    })
}

struct Workspace {
    idx: Vec<usize>,
    q: DMatrix<f64>,
    s: DVector<f64>,
    beta: DVector<f64>,
    u: DVector<f64>,
    wcol: DVector<f64>,
}

impl Workspace {
    fn new(d: usize) -> Self {
        let m = d.saturating_sub(1);
        Workspace {
            idx: Vec::with_capacity(m),
            q: DMatrix::zeros(m, m),
            s: DVector::zeros(m),
            beta: DVector::zeros(m),
            u: DVector::zeros(m),
            wcol: DVector::zeros(m),
        }
    }
}

/// Cold-start path: block coordinate ascent on the dual, starting from the
/// feasible point `W = T + diag_pen I`. Column `j` of `W` is set to `W_11 beta`
/// where `beta` solves the lasso
///
/// ```text
/// min  1/2 beta^T W_11 beta - t_12^T beta + lambda |beta|_1,
/// ```
///
/// which keeps `W` in the box and increases `logdet W`. The primal iterate is
/// read off the lasso coefficients, `theta_12 = -beta theta_jj`, and the gap
/// uses the better of `W` and `theta^-1` as the dual point.
///
/// Once the gap target is met, up to [`REFINE_SWEEPS`] more sweeps are spent
/// until `theta^-1` itself is inside the box to `box_tol`.
fn solve_dual(
    t: &DMatrix<f64>,
    mut w: DMatrix<f64>,
    lambda: f64,
    opts: &GlassoOptions,
    mut trace: Option<&mut dyn FnMut(SweepInfo)>,
) -> Result<GlassoSolution> {
    let d = t.nrows();
    let inner_target = opts.inner_tol.min(0.25 * opts.box_tol);
    let mut ws = Workspace::new(d);
    let mut betas = DMatrix::<f64>::zeros(d, d);
    let mut primal_trace = Vec::new();
    let mut gap = f64::INFINITY;
    let mut gap_met_at = None;

    for sweep in 0..=opts.max_sweeps {
        let theta = theta_from_betas(&w, &betas);
        let violation = box_violation(&w, t, lambda, opts.penalize_diagonal);
        let (primal, this_gap, mismatch) = match matkit::chol_inv_logdet(&theta) {
            Ok((inv, logdet)) => {
                let primal = primal_value(&theta, logdet, t, lambda, opts.penalize_diagonal);
                let from_inv = gap_from_inverse(primal, inv.as_matrix(), t, lambda, opts.penalize_diagonal);
                let from_w = gap_from_inverse(primal, &w, t, lambda, opts.penalize_diagonal);
                let mismatch = box_violation(inv.as_matrix(), t, lambda, opts.penalize_diagonal);
                (primal, from_inv.min(from_w), mismatch)
            }
            Err(_) => (f64::INFINITY, f64::INFINITY, f64::INFINITY),
        };
        gap = this_gap;
        if primal.is_finite() {
            primal_trace.push(primal);
        }
        if let Some(cb) = trace.as_deref_mut() {
            cb(SweepInfo {
                sweep,
                primal,
                gap,
                box_violation: violation,
            });
        }
        if gap <= opts.gap_tol && violation <= opts.box_tol {
            let met = *gap_met_at.get_or_insert(sweep);
            if mismatch <= opts.box_tol || sweep - met >= REFINE_SWEEPS {
                return Ok(GlassoSolution {
                    theta: SpdMatrix::from_verified(theta),
                    w: SpdMatrix::from_verified(w),
                    gap: gap.max(0.0),
                    sweeps: sweep,
                    primal_trace,
                });
            }
        }
        if sweep == opts.max_sweeps {
            break;
        }
        for j in 0..d {
            update_dual_column(&mut w, &mut betas, t, lambda, j, inner_target, opts.max_inner, &mut ws);
        }
    }

    // W stays positive definite, so its inverse is a valid fallback iterate.
    let mut theta = theta_from_betas(&w, &betas);
    if !matkit::is_positive_definite(&theta) {
        theta = matkit::chol_inv_logdet(&w)?.0.into_inner();
    }
    Err(Error::MaxSweepsExceeded {
        best: Box::new(GlassoSolution {
            theta: SpdMatrix::from_verified(theta),
            w: SpdMatrix::from_verified(w),
            gap,
            sweeps: opts.max_sweeps,
            primal_trace,
        }),
        gap,
    })
}

/// Symmetrized primal matrix implied by the dual iterate and lasso coefficients.
fn theta_from_betas(w: &DMatrix<f64>, betas: &DMatrix<f64>) -> DMatrix<f64> {
    let d = w.nrows();
    let mut theta = DMatrix::zeros(d, d);
    for j in 0..d {
        let cross: f64 = (0..d).filter(|&i| i != j).map(|i| w[(i, j)] * betas[(i, j)]).sum();
        let tjj = 1.0 / (w[(j, j)] - cross);
        theta[(j, j)] = tjj;
        for i in 0..d {
            if i != j {
                theta[(i, j)] = -betas[(i, j)] * tjj;
            }
        }
    }
    for j in 0..d {
        for i in 0..j {
            let v = 0.5 * (theta[(i, j)] + theta[(j, i)]);
            theta[(i, j)] = v;
            theta[(j, i)] = v;
        }
    }
    theta
}

#[allow(clippy::too_many_arguments)]
fn update_dual_column(
    w: &mut DMatrix<f64>,
    betas: &mut DMatrix<f64>,
    t: &DMatrix<f64>,
    lambda: f64,
    j: usize,
    inner_target: f64,
    max_inner: usize,
    ws: &mut Workspace,
) {
    let d = w.nrows();
    let m = d - 1;
    ws.idx.clear();
    ws.idx.extend((0..d).filter(|&i| i != j));
    let idx = &ws.idx;
    for b in 0..m {
        let ib = idx[b];
        for a in 0..m {
            ws.q[(a, b)] = w[(idx[a], ib)];
        }
    }
    for (a, &ia) in idx.iter().enumerate() {
        ws.s[a] = t[(ia, j)];
        ws.beta[a] = betas[(ia, j)];
    }
    ws.u.gemv(1.0, &ws.q, &ws.beta, 0.0);

    let mut full = true;
    for _ in 0..max_inner {
        let mut max_change: f64 = 0.0;
        for a in 0..m {
            if !full && ws.beta[a] == 0.0 {
                continue;
            }
            let qaa = ws.q[(a, a)];
            let old = ws.beta[a];
            let g = ws.s[a] - (ws.u[a] - qaa * old);
            let new = soft_threshold(g, lambda) / qaa;
            let delta = new - old;
            if delta != 0.0 {
                ws.beta[a] = new;
                ws.u.axpy(delta, &ws.q.column(a), 1.0);
                max_change = max_change.max(delta.abs() * qaa);
            }
        }
        if max_change > inner_target {
            full = false;
        } else if full {
            break;
        } else {
            full = true;
        }
    }

    for (a, &ia) in idx.iter().enumerate() {
        betas[(ia, j)] = ws.beta[a];
        w[(ia, j)] = ws.u[a];
        w[(j, ia)] = ws.u[a];
    }
}

fn soft_threshold(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

/// Replaces column `j` of `theta` by the solution of its lasso subproblem and
/// updates `w = theta^-1` to match.
#[allow(clippy::too_many_arguments)]
fn update_column(
    theta: &mut DMatrix<f64>,
    w: &mut DMatrix<f64>,
    t: &DMatrix<f64>,
    lambda: f64,
    diag_pen: f64,
    j: usize,
    inner_target: f64,
    max_inner: usize,
    ws: &mut Workspace,
) {
    let d = theta.nrows();
    let m = d - 1;
    ws.idx.clear();
    ws.idx.extend((0..d).filter(|&i| i != j));
    let idx = &ws.idx;

    // Q = Theta_11^-1 = W_11 - w_12 w_12^T / w_22
    let wjj_old = w[(j, j)];
    for (a, &ia) in idx.iter().enumerate() {
        ws.wcol[a] = w[(ia, j)];
        ws.s[a] = t[(ia, j)];
        ws.beta[a] = theta[(ia, j)];
    }
    for b in 0..m {
        let ib = idx[b];
        let wb = ws.wcol[b] / wjj_old;
        for a in 0..m {
            ws.q[(a, b)] = w[(idx[a], ib)] - ws.wcol[a] * wb;
        }
    }
    ws.u.gemv(1.0, &ws.q, &ws.beta, 0.0);

    let wjj = t[(j, j)] + diag_pen;
    // after a full pass, sweep only the support until it settles
    let mut full = true;
    for _ in 0..max_inner {
        let mut max_change: f64 = 0.0;
        for a in 0..m {
            if !full && ws.beta[a] == 0.0 {
                continue;
            }
            let qaa = ws.q[(a, a)];
            let old = ws.beta[a];
            let g = ws.s[a] + wjj * (ws.u[a] - qaa * old);
            let new = -soft_threshold(g, lambda) / (wjj * qaa);
            let delta = new - old;
            if delta != 0.0 {
                ws.beta[a] = new;
                ws.u.axpy(delta, &ws.q.column(a), 1.0);
                max_change = max_change.max(delta.abs() * wjj * qaa);
            }
        }
        if max_change > inner_target {
            full = false;
            continue;
        }
        if !full {
            full = true;
            continue;
        }
        let residual = (0..m)
            .map(|a| {
                let g = ws.s[a] + wjj * ws.u[a];
                let b = ws.beta[a];
                if b > 0.0 {
                    (g + lambda).abs()
                } else if b < 0.0 {
                    (g - lambda).abs()
                } else {
                    (g.abs() - lambda).max(0.0)
                }
            })
            .fold(0.0, f64::max);
        if residual <= inner_target {
            break;
        }
    }

    // Schur complement: theta_jj = 1/w_jj + beta^T Q beta
    let theta_jj = 1.0 / wjj + ws.beta.dot(&ws.u);
    for (a, &ia) in idx.iter().enumerate() {
        theta[(ia, j)] = ws.beta[a];
        theta[(j, ia)] = ws.beta[a];
    }
    theta[(j, j)] = theta_jj;

    // W = Theta^-1 in block form: w_22 = wjj, w_12 = -wjj Q beta, W_11 = Q + wjj u u^T
    w[(j, j)] = wjj;
    for (a, &ia) in idx.iter().enumerate().take(m) {
        let v = -wjj * ws.u[a];
        w[(ia, j)] = v;
        w[(j, ia)] = v;
    }
    for b in 0..m {
        let ib = idx[b];
        let ub = wjj * ws.u[b];
        for a in 0..m {
            w[(idx[a], ib)] = ws.q[(a, b)] + ws.u[a] * ub;
        }
    }
}

fn penalty(theta: &DMatrix<f64>, penalize_diagonal: bool) -> f64 {
    let l1 = matkit::l1_norm(theta);
    if penalize_diagonal {
        l1
    } else {
        l1 - theta.diagonal().iter().map(|v| v.abs()).sum::<f64>()
    }
}

fn primal_value(theta: &DMatrix<f64>, logdet: f64, t: &DMatrix<f64>, lambda: f64, pen_diag: bool) -> f64 {
    matkit::frobenius_inner(theta, t) - logdet + lambda * penalty(theta, pen_diag)
}

/// `tr(Theta T) - logdet(Theta) + lambda |Theta|_1`.
pub fn primal_objective(theta: &DMatrix<f64>, t: &DMatrix<f64>, lambda: f64, penalize_diagonal: bool) -> Result<f64> {
    let logdet = matkit::logdet_spd(theta)?;
    Ok(primal_value(theta, logdet, t, lambda, penalize_diagonal))
}

/// Projects `w` onto the dual box around `t`.
fn project_to_box(w: &DMatrix<f64>, t: &DMatrix<f64>, lambda: f64, pen_diag: bool) -> DMatrix<f64> {
    DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| {
        let lam = if i == j && !pen_diag { 0.0 } else { lambda };
        w[(i, j)].clamp(t[(i, j)] - lam, t[(i, j)] + lam)
    })
}

fn gap_from_inverse(primal: f64, w: &DMatrix<f64>, t: &DMatrix<f64>, lambda: f64, pen_diag: bool) -> f64 {
    let projected = project_to_box(w, t, lambda, pen_diag);
    match matkit::logdet_spd(&projected) {
        Ok(ld) => primal - (ld + w.nrows() as f64),
        Err(_) => f64::INFINITY,
    }
}

/// Largest amount by which `w` leaves the dual box around `t`.
pub fn box_violation(w: &DMatrix<f64>, t: &DMatrix<f64>, lambda: f64, penalize_diagonal: bool) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..w.ncols() {
        for i in 0..w.nrows() {
            let lam = if i == j && !penalize_diagonal { 0.0 } else { lambda };
            worst = worst.max((w[(i, j)] - t[(i, j)]).abs() - lam);
        }
    }
    worst.max(0.0)
}

/// Primal objective at `theta` minus the dual objective `logdet(W) + d`, where `W`
/// is `theta^-1` projected onto the feasible box. Infinite if the projection is
/// not positive definite. Uses the diagonal-penalized program.
pub fn duality_gap(theta: &DMatrix<f64>, t: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    duality_gap_with(theta, t, lambda, true)
}

pub fn duality_gap_with(theta: &DMatrix<f64>, t: &DMatrix<f64>, lambda: f64, penalize_diagonal: bool) -> Result<f64> {
    let (w, logdet) = matkit::chol_inv_logdet(theta)?;
    let primal = primal_value(theta, logdet, t, lambda, penalize_diagonal);
    Ok(gap_from_inverse(primal, &w, t, lambda, penalize_diagonal))
}

/// True iff `|w - t|_inf <= lambda + slack_tol`.
pub fn check_dual_feasibility(w: &DMatrix<f64>, t: &DMatrix<f64>, lambda: f64, slack_tol: f64) -> bool {
    w.shape() == t.shape() && matkit::linf_norm(&(w - t)) <= lambda + slack_tol
}
