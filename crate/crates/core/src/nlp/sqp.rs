use log::{debug, info};
use serde::{Deserialize, Serialize};

use super::qp::{solve_qp, QpStatus, Row};
use crate::linalg::{dot, DMat};
use crate::ocp::{Condensed, OcpError, ShootingProblem};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    /// Damped BFGS on the control parameters.
    #[default]
    Bfgs,
    /// `JᵀJ` of the quadrature residuals; needs [`crate::ocp::ObjectiveForm::LeastSquares`].
    GaussNewton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub hessian: HessianMode,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub qp_max_iter: usize,
    /// Fraction of the model decrease the penalty must leave for feasibility.
    pub merit_rho: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            hessian: HessianMode::Bfgs,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 12,
            qp_max_iter: 500,
            merit_rho: 0.5,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tol > 0.0) {
            return Err("tol must be positive".into());
        }
        if !(self.armijo > 0.0 && self.armijo < 0.5)
            || !(self.backtrack > 0.0 && self.backtrack < 1.0)
        {
            return Err("line-search constants out of range".into());
        }
        if !(self.merit_rho > 0.0 && self.merit_rho < 1.0) {
            return Err("merit_rho must lie in (0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    LineSearchFail,
    IntegrationFail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub violation: f64,
    pub stationarity: f64,
    /// Accepted step length, 0 on the final record.
    pub step: f64,
    /// l1 merit at the iterate and at the accepted trial, same penalty.
    pub merit: f64,
    pub accepted_merit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpSolution {
    pub decision: Vec<f64>,
    pub objective: f64,
    /// `‖c‖_∞` of the continuity residuals.
    pub violation: f64,
    /// Projected reduced gradient of the scaled objective.
    pub stationarity: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Reduced gradient on parameters at a bound (positive at lower,
    /// negative at upper when the bound binds), zero elsewhere.
    pub bound_multipliers: Vec<f64>,
    pub failed_interval: Option<usize>,
    pub history: Vec<IterationRecord>,
}

impl NlpSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn parameters(&self, problem: &ShootingProblem) -> &[f64] {
        &self.decision[problem.residual_count()..]
    }
}

struct Iterate {
    w: Vec<f64>,
    cond: Condensed,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn failed(w: Vec<f64>, np: usize, err: &OcpError, history: Vec<IterationRecord>) -> NlpSolution {
    let interval = match err {
        OcpError::Integration { interval, .. } => Some(*interval),
        _ => None,
    };
    NlpSolution {
        decision: w,
        objective: f64::NAN,
        violation: f64::INFINITY,
        stationarity: f64::INFINITY,
        iterations: history.len(),
        status: SolveStatus::IntegrationFail,
        bound_multipliers: vec![0.0; np],
        failed_interval: interval,
        history,
    }
}

/// Condensed SQP for the multiple shooting problem.
///
/// Node updates are eliminated through the linearized continuity
/// constraints, `Δx_k = P_k Δp + r_k`, so every QP lives in the control
/// parameter space; node box bounds enter as general rows. Globalized by an
/// l1 merit function with Armijo backtracking.
pub fn solve(problem: &ShootingProblem, start: &[f64], opts: &SolverOptions) -> NlpSolution {
    let np = problem.parameter_count();
    let n = problem.state_dim();
    let (lo, hi) = problem.variable_bounds();
    let mut w: Vec<f64> = start.to_vec();
    if w.len() != problem.variable_count() {
        let err = OcpError::Dimension(format!("start has {} entries", w.len()));
        return failed(w, np, &err, Vec::new());
    }
    for ((v, l), h) in w.iter_mut().zip(&lo).zip(&hi) {
        *v = v.clamp(*l, *h);
    }
    let cond = match problem.condense(&w) {
        Ok(c) => c,
        Err(e) => return failed(w, np, &e, Vec::new()),
    };
    let g0 = inf_norm(&cond.gradient);
    // only large gradients are scaled down, so a start near a stationary point
    // does not inflate the stationarity measure
    let scale = if g0.is_finite() && g0 > 1.0 {
        1.0 / g0
    } else {
        1.0
    };
    info!(
        "SQP: {} variables, {} parameters, objective scale {scale:.3e}",
        w.len(),
        np
    );

    let weights = residual_weights(&lo, &hi, problem.residual_count());
    let l1 = |res: &[f64]| {
        res.iter()
            .zip(&weights)
            .map(|(c, wt)| wt * c.abs())
            .sum::<f64>()
    };
    let mut it = Iterate { w, cond };
    let mut bfgs = DMat::identity(np);
    let mut first_update = true;
    let mut mu = 0.0f64;
    let mut history = Vec::new();
    let off_p = problem.residual_count();
    let p_lo = &lo[off_p..];
    let p_hi = &hi[off_p..];

    for iteration in 0..opts.max_iter {
        let g: Vec<f64> = it.cond.gradient.iter().map(|v| v * scale).collect();
        let slope = it.cond.restoration_slope * scale;
        let rows = qp_rows(problem, &it, &lo, &hi);
        let hessian = |bfgs: &DMat<f64>| match (opts.hessian, &it.cond.gauss_newton) {
            (HessianMode::GaussNewton, Some(gn)) => {
                let mut h = gn.clone();
                h.scale(scale);
                let reg = 1e-12 * (1.0 + h.max_abs());
                for i in 0..np {
                    h[(i, i)] += reg;
                }
                h
            }
            _ => bfgs.clone(),
        };
        let mut hess = hessian(&bfgs);
        let mut qp = solve_qp(&hess, &g, &rows, opts.qp_max_iter);
        if qp.status == QpStatus::Singular && opts.hessian == HessianMode::Bfgs {
            debug!("QP singular at iteration {iteration}, resetting the quasi-Newton matrix");
            bfgs = DMat::identity(np);
            first_update = true;
            hess = hessian(&bfgs);
            qp = solve_qp(&hess, &g, &rows, opts.qp_max_iter);
        }
        let d = qp.d;

        // reduced gradient net of the node-bound rows
        let mut z = g.clone();
        for &(r, lambda) in &qp.active {
            if r >= 2 * np {
                for (zi, ai) in z.iter_mut().zip(&rows[r].a) {
                    *zi -= lambda * ai;
                }
            }
        }
        let p = &it.w[off_p..];
        let stationarity = projected_gradient(p, &z, p_lo, p_hi);
        let violation = inf_norm(&it.cond.residuals);
        let c1 = l1(&it.cond.residuals);
        let objective = it.cond.objective;
        debug!(
            "iter {iteration}: Φ = {objective:.10e}, ‖c‖∞ = {violation:.3e}, stat = {stationarity:.3e}, |d| = {:.3e}, QP {:?}",
            inf_norm(&d),
            qp.status
        );

        if violation <= opts.tol && stationarity <= opts.tol {
            let merit = scale * objective + mu * c1;
            history.push(record(
                iteration,
                objective,
                violation,
                stationarity,
                0.0,
                merit,
                merit,
            ));
            return finish(
                problem,
                it,
                scale,
                &z,
                p_lo,
                p_hi,
                SolveStatus::Converged,
                history,
            );
        }

        let hd = hess.mul_vec(&d);
        let linear = dot(&g, &d) + slope;
        let model = linear + 0.5 * dot(&d, &hd);
        if c1 > 0.0 {
            mu = mu.max(model / ((1.0 - opts.merit_rho) * c1));
        }
        let mut merit0 = scale * objective + mu * c1;
        let mut derivative = linear - mu * c1;

        let mut dw = vec![0.0; it.w.len()];
        for k in 0..=problem.intervals() {
            let dx = it.cond.node_sensitivity[k].mul_vec(&d);
            for i in 0..n {
                dw[k * n + i] = dx[i] + it.cond.node_offset[k][i];
            }
        }
        dw[off_p..].copy_from_slice(&d);

        let eta = opts.armijo;
        let mut accepted = None;
        let full: Vec<f64> = it.w.iter().zip(&dw).map(|(a, b)| a + b).collect();
        if let Ok(v) = problem.values(&full) {
            let c1_trial = l1(&v.residuals);
            if c1_trial <= 0.5 * c1 {
                // The model is blind to objective curvature along the
                // restoration; when the full step at least halves the
                // infeasibility, raise the penalty until it is accepted.
                let needed = (scale * (v.objective - objective) - eta * linear)
                    / ((1.0 - eta) * c1 - c1_trial);
                if needed.is_finite() && needed > mu {
                    mu = 1.1 * needed;
                    merit0 = scale * objective + mu * c1;
                    derivative = linear - mu * c1;
                }
            }
            let merit = scale * v.objective + mu * c1_trial;
            if merit.is_finite() && merit <= merit0 + eta * derivative.min(0.0) {
                accepted = Some((full.clone(), merit, 1.0));
            }
        }
        if accepted.is_none() {
            // second-order correction: same parameters, nodes re-simulated
            let p_full = &full[off_p..];
            if let Ok((ws, v)) = problem.simulate(p_full) {
                let merit = scale * v.objective + mu * l1(&v.residuals);
                if merit.is_finite() && merit <= merit0 + eta * derivative.min(0.0) {
                    debug!("second-order correction accepted");
                    accepted = Some((ws, merit, 1.0));
                }
            }
        }
        let mut alpha = 1.0;
        for _ in 0..opts.max_backtracks {
            if accepted.is_some() {
                break;
            }
            alpha *= opts.backtrack;
            let trial: Vec<f64> = it.w.iter().zip(&dw).map(|(a, b)| a + alpha * b).collect();
            if let Ok(v) = problem.values(&trial) {
                let merit = scale * v.objective + mu * l1(&v.residuals);
                if merit.is_finite() && merit <= merit0 + eta * alpha * derivative.min(0.0) {
                    accepted = Some((trial, merit, alpha));
                }
            }
        }
        let Some((trial, merit, alpha)) = accepted else {
            history.push(record(
                iteration,
                objective,
                violation,
                stationarity,
                0.0,
                merit0,
                merit0,
            ));
            info!("SQP: line search failed at iteration {iteration}");
            return finish(
                problem,
                it,
                scale,
                &z,
                p_lo,
                p_hi,
                SolveStatus::LineSearchFail,
                history,
            );
        };
        history.push(record(
            iteration,
            objective,
            violation,
            stationarity,
            alpha,
            merit0,
            merit,
        ));
        let cond = match problem.condense(&trial) {
            Ok(c) => c,
            Err(e) => return failed(trial, np, &e, history),
        };
        debug!("accepted α = {alpha:.3e}, merit {merit0:.10e} -> {merit:.10e}");

        if opts.hessian == HessianMode::Bfgs {
            let s: Vec<f64> = trial[off_p..]
                .iter()
                .zip(&it.w[off_p..])
                .map(|(a, b)| a - b)
                .collect();
            let y: Vec<f64> = cond
                .gradient
                .iter()
                .zip(&it.cond.gradient)
                .map(|(a, b)| scale * (a - b))
                .collect();
            damped_bfgs(&mut bfgs, &s, &y, &mut first_update);
        }
        it = Iterate { w: trial, cond };
    }

    let g: Vec<f64> = it.cond.gradient.iter().map(|v| v * scale).collect();
    let objective = it.cond.objective;
    let violation = inf_norm(&it.cond.residuals);
    let stationarity = projected_gradient(&it.w[off_p..], &g, p_lo, p_hi);
    let merit = scale * objective + mu * l1(&it.cond.residuals);
    history.push(record(
        opts.max_iter,
        objective,
        violation,
        stationarity,
        0.0,
        merit,
        merit,
    ));
    finish(
        problem,
        it,
        scale,
        &g,
        p_lo,
        p_hi,
        SolveStatus::MaxIter,
        history,
    )
}

fn record(
    iteration: usize,
    objective: f64,
    violation: f64,
    stationarity: f64,
    step: f64,
    merit: f64,
    accepted_merit: f64,
) -> IterationRecord {
    IterationRecord {
        iteration,
        objective,
        violation,
        stationarity,
        step,
        merit,
        accepted_merit,
    }
}

/// `‖proj(p - z) - p‖_∞` over the parameter box.
fn projected_gradient(p: &[f64], z: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    (0..p.len())
        .map(|j| ((p[j] - z[j]).clamp(lo[j], hi[j]) - p[j]).abs())
        .fold(0.0f64, f64::max)
}

/// Penalty weights of the continuity residuals: the reciprocal magnitude
/// of the node bounds, so species on very different scales count alike.
fn residual_weights(lo: &[f64], hi: &[f64], count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| {
            let r = [lo[i].abs(), hi[i].abs()]
                .into_iter()
                .filter(|v| v.is_finite())
                .fold(0.0f64, f64::max);
            if r > 0.0 {
                1.0 / r
            } else {
                1.0
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &ShootingProblem,
    it: Iterate,
    scale: f64,
    z: &[f64],
    p_lo: &[f64],
    p_hi: &[f64],
    status: SolveStatus,
    history: Vec<IterationRecord>,
) -> NlpSolution {
    let off_p = problem.residual_count();
    let p = &it.w[off_p..];
    let bound_multipliers = (0..p.len())
        .map(|j| {
            let at_lo = p[j] <= p_lo[j] + 1e-12 * (1.0 + p_lo[j].abs());
            let at_hi = p[j] >= p_hi[j] - 1e-12 * (1.0 + p_hi[j].abs());
            if at_lo || at_hi {
                z[j] / scale
            } else {
                0.0
            }
        })
        .collect();
    let last = history.last();
    NlpSolution {
        objective: it.cond.objective,
        violation: inf_norm(&it.cond.residuals),
        stationarity: last.map_or(f64::INFINITY, |r| r.stationarity),
        iterations: last.map_or(0, |r| r.iteration),
        status,
        bound_multipliers,
        failed_interval: None,
        decision: it.w,
        history,
    }
}

/// Box rows on `Δp` (first `2 n_p`) and node bounds on `x_k + r_k + P_k Δp`,
/// relaxed to the current value where the linearized node already violates.
fn qp_rows(problem: &ShootingProblem, it: &Iterate, lo: &[f64], hi: &[f64]) -> Vec<Row> {
    let np = problem.parameter_count();
    let n = problem.state_dim();
    let off_p = problem.residual_count();
    let mut rows = Vec::with_capacity(2 * np);
    for j in 0..np {
        let p = it.w[off_p + j];
        let mut a = vec![0.0; np];
        a[j] = 1.0;
        rows.push(Row {
            a: a.clone(),
            b: (lo[off_p + j] - p).min(0.0),
        });
        a[j] = -1.0;
        rows.push(Row {
            a,
            b: (p - hi[off_p + j]).min(0.0),
        });
    }
    for k in 1..=problem.intervals() {
        let pk = &it.cond.node_sensitivity[k];
        let rk = &it.cond.node_offset[k];
        for i in 0..n {
            let a = pk.row(i);
            if a.iter().all(|v| *v == 0.0) {
                continue;
            }
            let idx = k * n + i;
            let v0 = it.w[idx] + rk[i];
            // rows far from binding for any step within the parameter box are skipped
            let reach: f64 = (0..np)
                .map(|j| a[j].abs() * (hi[off_p + j] - lo[off_p + j]))
                .sum();
            if v0 - reach > lo[idx] && v0 + reach < hi[idx] {
                continue;
            }
            if lo[idx].is_finite() {
                rows.push(Row {
                    a: a.to_vec(),
                    b: (lo[idx] - v0).min(0.0),
                });
            }
            if hi[idx].is_finite() {
                rows.push(Row {
                    a: a.iter().map(|v| -v).collect(),
                    b: (v0 - hi[idx]).min(0.0),
                });
            }
        }
    }
    rows
}

/// Powell-damped BFGS update keeping `B` positive definite.
pub fn damped_bfgs(b: &mut DMat<f64>, s: &[f64], y: &[f64], first: &mut bool) {
    let sy = dot(s, y);
    if *first && sy > 0.0 {
        let yy = dot(y, y);
        let m = b.rows();
        *b = DMat::identity(m);
        b.scale(yy / sy);
        *first = false;
    }
    let bs = b.mul_vec(s);
    let sbs = dot(s, &bs);
    if !(sbs > 0.0) || !sbs.is_finite() {
        return;
    }
    let theta = if sy >= 0.2 * sbs {
        1.0
    } else {
        0.8 * sbs / (sbs - sy)
    };
    let r: Vec<f64> = y
        .iter()
        .zip(&bs)
        .map(|(yi, bi)| theta * yi + (1.0 - theta) * bi)
        .collect();
    let sr = dot(s, &r);
    if !(sr > 0.0) {
        return;
    }
    let m = b.rows();
    for i in 0..m {
        for j in 0..m {
            b[(i, j)] += r[i] * r[j] / sr - bs[i] * bs[j] / sbs;
        }
    }
}
