use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ControlMap, OcpError, ShootingGrid};
use crate::esdirk::{
    Esdirk, IntegrationReport, IntegratorOptions, OdeSystem, Sensitivities, SensitivitySeeds,
    Solution,
};
use crate::linalg::DMat;

pub type SharedSystem = Arc<dyn OdeSystem<f64> + Send + Sync>;

/// How the interval quadratures `Q_k` combine into the objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveForm {
    /// `Φ = Σ_k Σ_j Q_kj`
    #[default]
    Sum,
    /// `Φ = ½ Σ_k ‖Q_k‖²`
    LeastSquares,
}

/// Box bounds applied to every shooting node state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl StateBounds {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }
}

/// Direct multiple shooting transcription. Decision vector layout:
/// `(x_0, …, x_N, p)` with `u_k = M_k p`.
#[derive(Clone)]
pub struct ShootingProblem {
    system: SharedSystem,
    grid: ShootingGrid,
    controls: ControlMap,
    bounds: StateBounds,
    initial_state: Vec<f64>,
    form: ObjectiveForm,
    integrator: IntegratorOptions<f64>,
}

/// Objective, residuals and full first-order information.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub objective: f64,
    /// `c_0 = x_0 - x̃_0`, `c_{k+1} = x_{k+1} - F_k(x_k, u_k)`.
    pub residuals: Vec<f64>,
    /// `∂Φ/∂w`
    pub gradient: Vec<f64>,
    /// `A_k = ∂F_k/∂x_k`
    pub a: Vec<DMat<f64>>,
    /// `B_k = ∂F_k/∂u_k`
    pub b: Vec<DMat<f64>>,
    pub report: IntegrationReport,
}

#[derive(Debug, Clone)]
pub struct Values {
    pub objective: f64,
    pub residuals: Vec<f64>,
    pub report: IntegrationReport,
}

/// First-order model with the linearized continuity conditions eliminated:
/// the node corrections satisfying them are `Δx_k = P_k Δp + r_k`.
#[derive(Debug, Clone)]
pub struct Condensed {
    pub objective: f64,
    pub residuals: Vec<f64>,
    /// Reduced gradient `∂Φ/∂Δp`.
    pub gradient: Vec<f64>,
    /// `∂Φ/∂w · (r, 0)`, the objective slope of the pure feasibility correction.
    pub restoration_slope: f64,
    pub node_sensitivity: Vec<DMat<f64>>,
    pub node_offset: Vec<Vec<f64>>,
    /// `Σ_k J_kᵀ J_k` of the quadrature residuals for least-squares objectives.
    pub gauss_newton: Option<DMat<f64>>,
    pub report: IntegrationReport,
}

pub fn build_problem(
    system: SharedSystem,
    grid: ShootingGrid,
    controls: ControlMap,
    bounds: StateBounds,
    initial_state: Vec<f64>,
    integrator: IntegratorOptions<f64>,
) -> Result<ShootingProblem, OcpError> {
    let n = system.dim();
    if controls.intervals() != grid.intervals() {
        return Err(OcpError::Dimension(format!(
            "control map has {} intervals, grid {}",
            controls.intervals(),
            grid.intervals()
        )));
    }
    if controls.control_dim() != system.control_dim() {
        return Err(OcpError::Dimension(format!(
            "control map yields {} controls, system expects {}",
            controls.control_dim(),
            system.control_dim()
        )));
    }
    if system.quadrature_dim() == 0 {
        return Err(OcpError::Dimension(
            "the system carries no objective quadrature".into(),
        ));
    }
    if bounds.lower.len() != n || bounds.upper.len() != n || initial_state.len() != n {
        return Err(OcpError::Dimension(format!(
            "state bounds and initial state need {n} entries"
        )));
    }
    if bounds
        .lower
        .iter()
        .zip(&bounds.upper)
        .any(|(l, u)| !(l <= u))
    {
        return Err(OcpError::InvalidBounds(
            "state lower bound exceeds upper bound".into(),
        ));
    }
    if initial_state.iter().any(|v| !v.is_finite()) {
        return Err(OcpError::Dimension("initial state is not finite".into()));
    }
    // identical Jacobian refreshes keep value-only and sensitivity runs on one path
    let integrator = IntegratorOptions {
        refresh_jacobian_every_step: true,
        ..integrator
    };
    Ok(ShootingProblem {
        system,
        grid,
        controls,
        bounds,
        initial_state,
        form: ObjectiveForm::Sum,
        integrator,
    })
}

impl ShootingProblem {
    pub fn with_form(mut self, form: ObjectiveForm) -> Self {
        self.form = form;
        self
    }

    pub fn with_integrator(mut self, integrator: IntegratorOptions<f64>) -> Self {
        self.integrator = IntegratorOptions {
            refresh_jacobian_every_step: true,
            ..integrator
        };
        self
    }

    pub fn system(&self) -> &SharedSystem {
        &self.system
    }

    pub fn grid(&self) -> &ShootingGrid {
        &self.grid
    }

    pub fn controls(&self) -> &ControlMap {
        &self.controls
    }

    pub fn bounds(&self) -> &StateBounds {
        &self.bounds
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial_state
    }

    pub fn form(&self) -> ObjectiveForm {
        self.form
    }

    pub fn integrator(&self) -> &IntegratorOptions<f64> {
        &self.integrator
    }

    pub fn state_dim(&self) -> usize {
        self.system.dim()
    }

    pub fn intervals(&self) -> usize {
        self.grid.intervals()
    }

    pub fn parameter_count(&self) -> usize {
        self.controls.parameter_count()
    }

    /// `(N + 1) n_x + n_p`
    pub fn variable_count(&self) -> usize {
        (self.intervals() + 1) * self.state_dim() + self.parameter_count()
    }

    /// `(N + 1) n_x`
    pub fn residual_count(&self) -> usize {
        (self.intervals() + 1) * self.state_dim()
    }

    pub fn node<'a>(&self, w: &'a [f64], k: usize) -> &'a [f64] {
        let n = self.state_dim();
        &w[k * n..(k + 1) * n]
    }

    pub fn parameters<'a>(&self, w: &'a [f64]) -> &'a [f64] {
        &w[self.residual_count()..]
    }

    /// Lower and upper bounds of the full decision vector.
    pub fn variable_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let nodes = self.intervals() + 1;
        let mut lo = self.bounds.lower.repeat(nodes);
        let mut hi = self.bounds.upper.repeat(nodes);
        lo.extend_from_slice(self.controls.lower());
        hi.extend_from_slice(self.controls.upper());
        (lo, hi)
    }

    fn check(&self, w: &[f64]) -> Result<(), OcpError> {
        if w.len() != self.variable_count() {
            return Err(OcpError::Dimension(format!(
                "decision vector has {} entries, expected {}",
                w.len(),
                self.variable_count()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(OcpError::NonFinite);
        }
        Ok(())
    }

    fn integrate(
        &self,
        k: usize,
        x: &[f64],
        u: &[f64],
        seeds: Option<&SensitivitySeeds<f64>>,
    ) -> Result<(Solution<f64>, Option<Sensitivities<f64>>), OcpError> {
        let (t0, t1) = self.grid.interval(k);
        let integ = Esdirk::new(self.integrator.clone());
        let sys = self.system.as_ref();
        let out = match seeds {
            Some(s) => integ
                .integrate_with_sensitivities(sys, t0, t1, x, u, s)
                .map(|(a, b)| (a, Some(b))),
            None => integ.integrate(sys, t0, t1, x, u).map(|a| (a, None)),
        };
        out.map_err(|source| OcpError::Integration {
            interval: k,
            source,
        })
    }

    fn stage_value(&self, q: &[f64]) -> f64 {
        match self.form {
            ObjectiveForm::Sum => q.iter().sum(),
            ObjectiveForm::LeastSquares => 0.5 * q.iter().map(|v| v * v).sum::<f64>(),
        }
    }

    /// `∂Φ_k/∂(seed directions)` from quadrature values and sensitivities.
    fn stage_gradient(&self, q: &[f64], sq: &DMat<f64>) -> Vec<f64> {
        let mut g = vec![0.0; sq.cols()];
        for (j, &qj) in q.iter().enumerate() {
            let w = match self.form {
                ObjectiveForm::Sum => 1.0,
                ObjectiveForm::LeastSquares => qj,
            };
            for (gc, &s) in g.iter_mut().zip(sq.row(j)) {
                *gc += w * s;
            }
        }
        g
    }

    fn initial_residual(&self, w: &[f64], residuals: &mut [f64]) {
        let n = self.state_dim();
        for i in 0..n {
            residuals[i] = w[i] - self.initial_state[i];
        }
    }

    /// Objective and continuity residuals; intervals run in parallel.
    pub fn values(&self, w: &[f64]) -> Result<Values, OcpError> {
        self.check(w)?;
        let n = self.state_dim();
        let p = self.parameters(w);
        let runs: Vec<_> = (0..self.intervals())
            .into_par_iter()
            .map(|k| self.integrate(k, self.node(w, k), &self.controls.control(k, p), None))
            .collect();
        let mut residuals = vec![0.0; self.residual_count()];
        self.initial_residual(w, &mut residuals);
        let mut objective = 0.0;
        let mut report = IntegrationReport::default();
        for (k, run) in runs.into_iter().enumerate() {
            let (sol, _) = run?;
            let next = self.node(w, k + 1);
            for i in 0..n {
                residuals[(k + 1) * n + i] = next[i] - sol.x[i];
            }
            objective += self.stage_value(&sol.quadrature);
            report.merge(&sol.report);
        }
        Ok(Values {
            objective,
            residuals,
            report,
        })
    }

    /// Full evaluation with `A_k`, `B_k`; intervals run in parallel.
    pub fn evaluate(&self, w: &[f64]) -> Result<Evaluation, OcpError> {
        self.check(w)?;
        let (n, nu, nq) = (
            self.state_dim(),
            self.controls.control_dim(),
            self.system.quadrature_dim(),
        );
        let p = self.parameters(w);
        let seeds = SensitivitySeeds::identity(n, nu, nq);
        let runs: Vec<_> = (0..self.intervals())
            .into_par_iter()
            .map(|k| {
                self.integrate(
                    k,
                    self.node(w, k),
                    &self.controls.control(k, p),
                    Some(&seeds),
                )
            })
            .collect();
        let mut residuals = vec![0.0; self.residual_count()];
        self.initial_residual(w, &mut residuals);
        let mut gradient = vec![0.0; self.variable_count()];
        let (mut a, mut b) = (Vec::new(), Vec::new());
        let mut objective = 0.0;
        let mut report = IntegrationReport::default();
        let off_p = self.residual_count();
        for (k, run) in runs.into_iter().enumerate() {
            let (sol, sens) = run?;
            let sens = sens.expect("seeded");
            let next = self.node(w, k + 1);
            for i in 0..n {
                residuals[(k + 1) * n + i] = next[i] - sol.x[i];
            }
            objective += self.stage_value(&sol.quadrature);
            let g = self.stage_gradient(&sol.quadrature, &sens.quadrature);
            for i in 0..n {
                gradient[k * n + i] += g[i];
            }
            let m = self.controls.map(k);
            for (j, gp) in gradient[off_p..].iter_mut().enumerate() {
                *gp += (0..nu).map(|r| g[n + r] * m[(r, j)]).sum::<f64>();
            }
            let (ak, bk) = sens.split(n);
            a.push(ak);
            b.push(bk);
            report.merge(&sol.report);
        }
        Ok(Evaluation {
            objective,
            residuals,
            gradient,
            a,
            b,
            report,
        })
    }

    /// Dense constraint Jacobian `∂c/∂w` assembled from an evaluation.
    pub fn constraint_jacobian(&self, eval: &Evaluation) -> DMat<f64> {
        let n = self.state_dim();
        let off_p = self.residual_count();
        let mut jac = DMat::zeros(self.residual_count(), self.variable_count());
        for i in 0..n {
            jac[(i, i)] = 1.0;
        }
        for k in 0..self.intervals() {
            let row = (k + 1) * n;
            let bm = eval.b[k].matmul(self.controls.map(k));
            for i in 0..n {
                jac[(row + i, row + i)] = 1.0;
                for j in 0..n {
                    jac[(row + i, k * n + j)] = -eval.a[k][(i, j)];
                }
                for j in 0..self.parameter_count() {
                    jac[(row + i, off_p + j)] = -bm[(i, j)];
                }
            }
        }
        jac
    }

    /// Sequential condensed evaluation with directional sensitivities
    /// seeded by the elimination recursion `P_{k+1} = A_k P_k + B_k M_k`,
    /// `r_{k+1} = A_k r_k - c_{k+1}`.
    pub fn condense(&self, w: &[f64]) -> Result<Condensed, OcpError> {
        self.check(w)?;
        let (n, nu, nq) = (
            self.state_dim(),
            self.controls.control_dim(),
            self.system.quadrature_dim(),
        );
        let np = self.parameter_count();
        let p = self.parameters(w);
        let mut residuals = vec![0.0; self.residual_count()];
        self.initial_residual(w, &mut residuals);
        let mut node_sensitivity = vec![DMat::zeros(n, np)];
        let mut node_offset = vec![residuals[..n].iter().map(|c| -c).collect::<Vec<_>>()];
        let mut gradient = vec![0.0; np];
        let mut restoration_slope = 0.0;
        let mut gauss_newton =
            (self.form == ObjectiveForm::LeastSquares).then(|| DMat::zeros(np, np));
        let mut objective = 0.0;
        let mut report = IntegrationReport::default();
        for k in 0..self.intervals() {
            let reach = self.controls.reach(k);
            let m = reach + 1;
            let (pk, rk) = (&node_sensitivity[k], &node_offset[k]);
            let map = self.controls.map(k);
            let seeds = SensitivitySeeds {
                state: DMat::from_fn(n, m, |i, j| if j < reach { pk[(i, j)] } else { rk[i] }),
                control: DMat::from_fn(nu, m, |i, j| if j < reach { map[(i, j)] } else { 0.0 }),
                quadrature: DMat::zeros(nq, m),
            };
            let (sol, sens) = self.integrate(
                k,
                self.node(w, k),
                &self.controls.control(k, p),
                Some(&seeds),
            )?;
            let sens = sens.expect("seeded");
            let next = self.node(w, k + 1);
            let mut pn = DMat::zeros(n, np);
            let mut rn = vec![0.0; n];
            for i in 0..n {
                let c = next[i] - sol.x[i];
                residuals[(k + 1) * n + i] = c;
                for j in 0..reach {
                    pn[(i, j)] = sens.state[(i, j)];
                }
                rn[i] = sens.state[(i, reach)] - c;
            }
            objective += self.stage_value(&sol.quadrature);
            let g = self.stage_gradient(&sol.quadrature, &sens.quadrature);
            for j in 0..reach {
                gradient[j] += g[j];
            }
            restoration_slope += g[reach];
            if let Some(h) = gauss_newton.as_mut() {
                for a in 0..reach {
                    for b in 0..reach {
                        h[(a, b)] += (0..nq)
                            .map(|r| sens.quadrature[(r, a)] * sens.quadrature[(r, b)])
                            .sum::<f64>();
                    }
                }
            }
            node_sensitivity.push(pn);
            node_offset.push(rn);
            report.merge(&sol.report);
        }
        Ok(Condensed {
            objective,
            residuals,
            gradient,
            restoration_slope,
            node_sensitivity,
            node_offset,
            gauss_newton,
            report,
        })
    }

    /// Forward simulation under `p` with the problem's own integrator; the
    /// returned decision vector has zero continuity residuals.
    pub fn simulate(&self, p: &[f64]) -> Result<(Vec<f64>, Values), OcpError> {
        if p.len() != self.parameter_count() {
            return Err(OcpError::Dimension(format!(
                "expected {} parameters",
                self.parameter_count()
            )));
        }
        let mut w = self.initial_state.clone();
        let mut objective = 0.0;
        let mut report = IntegrationReport::default();
        for k in 0..self.intervals() {
            let x = self.node(&w, k).to_vec();
            let (sol, _) = self.integrate(k, &x, &self.controls.control(k, p), None)?;
            objective += self.stage_value(&sol.quadrature);
            report.merge(&sol.report);
            w.extend_from_slice(&sol.x);
        }
        w.extend_from_slice(p);
        let residuals = vec![0.0; self.residual_count()];
        Ok((
            w,
            Values {
                objective,
                residuals,
                report,
            },
        ))
    }

    /// Decision vector whose nodes follow a forward simulation from `x̃_0`
    /// under `p`, restarted at every node.
    pub fn simulate_nodes(
        &self,
        p: &[f64],
        integrator: Option<&IntegratorOptions<f64>>,
    ) -> Result<Vec<f64>, OcpError> {
        if p.len() != self.parameter_count() {
            return Err(OcpError::Dimension(format!(
                "expected {} parameters",
                self.parameter_count()
            )));
        }
        let opts = integrator
            .cloned()
            .unwrap_or_else(|| self.integrator.clone());
        let integ = Esdirk::new(IntegratorOptions {
            refresh_jacobian_every_step: true,
            ..opts
        });
        let mut w = self.initial_state.clone();
        let mut x = self.initial_state.clone();
        for k in 0..self.intervals() {
            let (t0, t1) = self.grid.interval(k);
            let sol = integ
                .integrate(
                    self.system.as_ref(),
                    t0,
                    t1,
                    &x,
                    &self.controls.control(k, p),
                )
                .map_err(|source| OcpError::Integration {
                    interval: k,
                    source,
                })?;
            x = sol.x;
            w.extend_from_slice(&x);
        }
        w.extend_from_slice(p);
        Ok(w)
    }
}
