use log::trace;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tableau::{esdirk_tableau, ButcherTableau, STAGES};
use crate::linalg::{axpy, BlockTridiagonal, BlockTridiagonalLu, DMat};
use crate::scalar::Real;

/// Autonomous-in-control ODE `x' = f(t, x, u)` with optional quadratures
/// `Q' = g(t, x, u)`; `u` is held constant over an integration call.
pub trait OdeSystem<T: Real>: Sync {
    fn dim(&self) -> usize;

    fn control_dim(&self) -> usize;

    /// `(blocks, block size)` of `∂f/∂x`.
    fn jacobian_layout(&self) -> (usize, usize) {
        (1, self.dim())
    }

    fn rhs(&self, t: T, x: &[T], u: &[T], out: &mut [T]);

    /// Overwrites `jac` with `∂f/∂x`.
    fn jacobian_state(&self, t: T, x: &[T], u: &[T], jac: &mut BlockTridiagonal<T>);

    /// Writes `∂f/∂u` into a zeroed `dim × control_dim` matrix.
    fn jacobian_control(&self, _t: T, _x: &[T], _u: &[T], _jac: &mut DMat<T>) {}

    fn quadrature_dim(&self) -> usize {
        0
    }

    fn quadrature(&self, _t: T, _x: &[T], _u: &[T], _out: &mut [T]) {}

    /// Writes `∂g/∂x` and `∂g/∂u` into zeroed matrices.
    fn quadrature_jacobian(&self, _t: T, _x: &[T], _u: &[T], _dx: &mut DMat<T>, _du: &mut DMat<T>) {
    }
}

/// Linearization used by the staggered sensitivity recursion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMode {
    /// Each stage is linearized at its own state, which yields the exact
    /// derivative of the discrete step at one extra factorization per stage.
    #[default]
    StageJacobian,
    /// Every stage reuses the Jacobian and iteration matrix of the step
    /// start; first-order accurate in `h`.
    Frozen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorOptions<T> {
    pub rel_tol: T,
    pub abs_tol: T,
    /// Per-component multipliers of `abs_tol` over `[x, Q]`.
    pub abs_scale: Option<Vec<T>>,
    pub initial_step: Option<T>,
    /// Uniform steps without error control.
    pub fixed_step: Option<T>,
    pub max_steps: usize,
    /// Newton stops when the scaled increment estimate drops below this.
    pub newton_tol: T,
    pub newton_max_iter: usize,
    /// Contraction rate above which a step is rejected and `J` refreshed.
    pub contraction_limit: T,
    pub safety: T,
    pub min_factor: T,
    pub max_factor: T,
    /// Proposed growth factors in `[1, keep_band]` keep `h` and the LU.
    pub keep_band: T,
    /// Evaluate `J` at the start of every step even without sensitivities.
    pub refresh_jacobian_every_step: bool,
    /// Components recorded at every accepted step for Hermite dense output.
    pub dense_components: Option<Vec<usize>>,
    pub sensitivity_mode: SensitivityMode,
}

impl<T: Real> Default for IntegratorOptions<T> {
    fn default() -> Self {
        Self {
            rel_tol: T::lit(1e-6),
            abs_tol: T::lit(1e-8),
            abs_scale: None,
            initial_step: None,
            fixed_step: None,
            max_steps: 500_000,
            newton_tol: T::lit(0.03),
            newton_max_iter: 10,
            contraction_limit: T::lit(0.5),
            safety: T::lit(0.9),
            min_factor: T::lit(0.2),
            max_factor: T::lit(5.0),
            keep_band: T::lit(1.2),
            refresh_jacobian_every_step: false,
            dense_components: None,
            sensitivity_mode: SensitivityMode::default(),
        }
    }
}

impl<T: Real> IntegratorOptions<T> {
    pub fn with_tolerances(rel_tol: T, abs_tol: T) -> Self {
        Self {
            rel_tol,
            abs_tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegrationReport {
    pub accepted: usize,
    pub rejected: usize,
    pub newton_iterations: usize,
    pub newton_failures: usize,
    pub jacobian_evaluations: usize,
    pub lu_factorizations: usize,
    pub rhs_evaluations: usize,
    /// Stage iteration matrices factorized for sensitivities only.
    pub sensitivity_factorizations: usize,
    pub final_time: f64,
}

impl IntegrationReport {
    pub fn merge(&mut self, other: &IntegrationReport) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.newton_iterations += other.newton_iterations;
        self.newton_failures += other.newton_failures;
        self.jacobian_evaluations += other.jacobian_evaluations;
        self.lu_factorizations += other.lu_factorizations;
        self.rhs_evaluations += other.rhs_evaluations;
        self.sensitivity_factorizations += other.sensitivity_factorizations;
        self.final_time = other.final_time;
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrationError {
    #[error("integration interval [{t0}, {t1}] is empty or not finite")]
    InvalidInterval { t0: f64, t1: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("initial state is not finite")]
    NonFiniteInitial,
    #[error("step size underflow at t = {t}: h = {h}")]
    StepUnderflow {
        t: f64,
        h: f64,
        report: IntegrationReport,
    },
    #[error("step limit reached at t = {t}")]
    MaxSteps { t: f64, report: IntegrationReport },
    #[error("Newton iteration failed in fixed-step mode at t = {t}")]
    FixedStepFailure { t: f64, report: IntegrationReport },
    #[error("singular iteration matrix at t = {t}")]
    SingularIterationMatrix { t: f64, report: IntegrationReport },
}

/// Piecewise cubic Hermite interpolant through accepted step endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOutput<T> {
    pub components: Vec<usize>,
    pub t: Vec<T>,
    pub y: Vec<Vec<T>>,
    pub dy: Vec<Vec<T>>,
}

impl<T: Real> DenseOutput<T> {
    fn new(components: Vec<usize>) -> Self {
        Self {
            components,
            t: Vec::new(),
            y: Vec::new(),
            dy: Vec::new(),
        }
    }

    fn push(&mut self, t: T, x: &[T], f: &[T]) {
        self.t.push(t);
        self.y.push(self.components.iter().map(|&i| x[i]).collect());
        self.dy
            .push(self.components.iter().map(|&i| f[i]).collect());
    }

    /// Appends another trajectory that starts where this one ends. A shared
    /// junction time appears twice so each side keeps its own derivative.
    pub fn extend(&mut self, other: &DenseOutput<T>) {
        assert_eq!(self.components, other.components);
        self.t.extend_from_slice(&other.t);
        self.y.extend_from_slice(&other.y);
        self.dy.extend_from_slice(&other.dy);
    }

    pub fn start(&self) -> T {
        self.t[0]
    }

    pub fn end(&self) -> T {
        *self.t.last().expect("non-empty dense output")
    }

    /// Interpolated values of the recorded components at `t`, clamped to the range.
    pub fn eval(&self, t: T, out: &mut [T]) {
        let n = self.t.len();
        if n == 1 || t <= self.t[0] {
            out.copy_from_slice(&self.y[0]);
            return;
        }
        if t >= self.t[n - 1] {
            out.copy_from_slice(&self.y[n - 1]);
            return;
        }
        let k = self.t.partition_point(|&tk| tk <= t).clamp(1, n - 1) - 1;
        let (t0, t1) = (self.t[k], self.t[k + 1]);
        let h = t1 - t0;
        if h <= T::zero() {
            out.copy_from_slice(&self.y[k + 1]);
            return;
        }
        let s = (t - t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        let h00 = two * s3 - three * s2 + T::one();
        let h10 = s3 - two * s2 + s;
        let h01 = -two * s3 + three * s2;
        let h11 = s3 - s2;
        for (c, o) in out.iter_mut().enumerate() {
            *o = h00 * self.y[k][c]
                + h10 * h * self.dy[k][c]
                + h01 * self.y[k + 1][c]
                + h11 * h * self.dy[k + 1][c];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T> {
    pub x: Vec<T>,
    pub quadrature: Vec<T>,
    pub dense: Option<DenseOutput<T>>,
    pub report: IntegrationReport,
    /// Last step size proposed by the controller.
    pub next_step: T,
}

/// Directional seeds: `state` (`n × m`) and `quadrature` (`n_q × m`) are the
/// derivatives of the initial values, `control` (`n_u × m`) of the control.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivitySeeds<T> {
    pub state: DMat<T>,
    pub control: DMat<T>,
    pub quadrature: DMat<T>,
}

impl<T: Real> SensitivitySeeds<T> {
    /// `[I 0; 0 I]`: columns `0..n` seed the initial state, `n..n+n_u` the control.
    pub fn identity(n: usize, nu: usize, nq: usize) -> Self {
        let m = n + nu;
        Self {
            state: DMat::from_fn(n, m, |i, j| if i == j { T::one() } else { T::zero() }),
            control: DMat::from_fn(nu, m, |i, j| if j == n + i { T::one() } else { T::zero() }),
            quadrature: DMat::zeros(nq, m),
        }
    }

    pub fn columns(&self) -> usize {
        self.state.cols()
    }
}

/// Propagated seeds at the end of the interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivities<T> {
    pub state: DMat<T>,
    pub quadrature: DMat<T>,
}

impl<T: Real> Sensitivities<T> {
    /// Splits identity-seeded sensitivities into `(A, B)`.
    pub fn split(&self, n: usize) -> (DMat<T>, DMat<T>) {
        let m = self.state.cols();
        let a = DMat::from_fn(self.state.rows(), n, |i, j| self.state[(i, j)]);
        let b = DMat::from_fn(self.state.rows(), m - n, |i, j| self.state[(i, n + j)]);
        (a, b)
    }
}

/// Weighted rms norm `sqrt(mean((err_i / (abs_tol s_i + rel_tol |x_i|))²))`.
pub fn error_norm<T: Real>(
    err: &[T],
    x: &[T],
    rel_tol: T,
    abs_tol: T,
    abs_scale: Option<&[T]>,
) -> T {
    if err.is_empty() {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..err.len() {
        let s = abs_scale.map_or(T::one(), |s| s[i]);
        let w = abs_tol * s + rel_tol * x[i].abs();
        let r = err[i] / w;
        acc += r * r;
    }
    (acc / T::from_count(err.len())).sqrt()
}

/// Outcome of a single attempted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepStatus<T> {
    /// Stages converged; `error` is the weighted error norm.
    Converged { error: T },
    /// Newton diverged or contracted too slowly.
    NewtonFailed,
    /// The right-hand side produced a non-finite value.
    NonFinite,
}

/// Mutable state of one integration: Jacobian, factorization, stages.
pub struct StepWorkspace<T: Real> {
    tableau: ButcherTableau<T>,
    n: usize,
    nq: usize,
    jac: BlockTridiagonal<T>,
    jac_fresh: bool,
    jac_valid: bool,
    lu: Option<(BlockTridiagonalLu<T>, T)>,
    stage_x: [Vec<T>; STAGES],
    stage_f: [Vec<T>; STAGES],
    stage_g: [Vec<T>; STAGES],
    theta: Vec<T>,
    work: Vec<T>,
    weights: Vec<T>,
    eta: T,
    slow_contraction: bool,
    pub x_next: Vec<T>,
    pub q_next: Vec<T>,
    err: Vec<T>,
    pub report: IntegrationReport,
}

impl<T: Real> StepWorkspace<T> {
    pub fn new<S: OdeSystem<T> + ?Sized>(sys: &S) -> Self {
        let n = sys.dim();
        let nq = sys.quadrature_dim();
        let (blocks, bs) = sys.jacobian_layout();
        assert_eq!(blocks * bs, n, "Jacobian layout does not cover the state");
        let z = |len: usize| vec![T::zero(); len];
        Self {
            tableau: esdirk_tableau(),
            n,
            nq,
            jac: BlockTridiagonal::zeros(blocks, bs),
            jac_fresh: false,
            jac_valid: false,
            lu: None,
            stage_x: std::array::from_fn(|_| z(n)),
            stage_f: std::array::from_fn(|_| z(n)),
            stage_g: std::array::from_fn(|_| z(nq)),
            theta: z(n),
            work: z(n),
            weights: z(n),
            eta: T::one(),
            slow_contraction: false,
            x_next: z(n),
            q_next: z(nq),
            err: z(n + nq),
            report: IntegrationReport::default(),
        }
    }

    pub fn tableau(&self) -> &ButcherTableau<T> {
        &self.tableau
    }

    /// `f(t, x)` of the last converged step's first stage.
    pub fn start_derivative(&self) -> &[T] {
        &self.stage_f[0]
    }

    /// Derivative at the end of the last converged step.
    pub fn end_derivative(&self) -> &[T] {
        &self.stage_f[STAGES - 1]
    }

    pub fn refresh_jacobian<S: OdeSystem<T> + ?Sized>(&mut self, sys: &S, t: T, x: &[T], u: &[T]) {
        sys.jacobian_state(t, x, u, &mut self.jac);
        self.report.jacobian_evaluations += 1;
        self.jac_fresh = true;
        self.jac_valid = true;
        self.lu = None;
    }

    pub fn jacobian(&self) -> &BlockTridiagonal<T> {
        &self.jac
    }

    fn ensure_factorization(&mut self, h: T) -> Result<(), ()> {
        if let Some((_, h_lu)) = &self.lu {
            if *h_lu == h {
                return Ok(());
            }
        }
        let m = self.jac.identity_minus_scaled(h * self.tableau.gamma);
        self.report.lu_factorizations += 1;
        match m.factorize() {
            Ok(lu) => {
                self.lu = Some((lu, h));
                Ok(())
            }
            Err(_) => {
                self.lu = None;
                Err(())
            }
        }
    }

    /// One ESDIRK step from `(t, x, q)` with step `h`; the Jacobian must be
    /// valid. `f0` must hold `f(t, x, u)` and `g0` `g(t, x, u)`.
    #[allow(clippy::too_many_arguments)]
    pub fn step<S: OdeSystem<T> + ?Sized>(
        &mut self,
        sys: &S,
        opts: &IntegratorOptions<T>,
        t: T,
        x: &[T],
        q: &[T],
        u: &[T],
        f0: &[T],
        g0: &[T],
        h: T,
    ) -> StepStatus<T> {
        assert!(self.jac_valid, "Jacobian must be evaluated before stepping");
        let (n, nq) = (self.n, self.nq);
        let tab = self.tableau.clone();
        let hg = h * tab.gamma;
        if self.ensure_factorization(h).is_err() {
            return StepStatus::NewtonFailed;
        }
        for i in 0..n {
            let s = opts.abs_scale.as_ref().map_or(T::one(), |s| s[i]);
            self.weights[i] = T::one() / (opts.abs_tol * s + opts.rel_tol * x[i].abs());
        }
        self.stage_x[0].copy_from_slice(x);
        self.stage_f[0].copy_from_slice(f0);
        self.stage_g[0].copy_from_slice(g0);
        self.slow_contraction = false;
        let mut eta = self.eta.max(T::epsilon()).powf(T::lit(0.8));
        let kappa = opts.newton_tol;

        for i in 1..STAGES {
            let ti = t + tab.c[i] * h;
            self.theta.copy_from_slice(x);
            for j in 0..i {
                axpy(h * tab.a[i][j], &self.stage_f[j], &mut self.theta);
            }
            // predictor: continue along the previous stage derivative
            self.stage_x[i].copy_from_slice(&self.theta);
            axpy(hg, &self.stage_f[i - 1], &mut self.stage_x[i]);
            let mut prev_norm = T::zero();
            let mut converged = false;
            for m in 0..opts.newton_max_iter {
                sys.rhs(ti, &self.stage_x[i], u, &mut self.work);
                self.report.rhs_evaluations += 1;
                self.report.newton_iterations += 1;
                if self.work.iter().any(|v| !v.is_finite()) {
                    return StepStatus::NonFinite;
                }
                // -R = Θ + hγ f(X) - X
                for k in 0..n {
                    self.work[k] = self.theta[k] + hg * self.work[k] - self.stage_x[i][k];
                }
                self.lu
                    .as_ref()
                    .expect("factorized")
                    .0
                    .solve_in_place(&mut self.work);
                let mut acc = T::zero();
                for k in 0..n {
                    let r = self.work[k] * self.weights[k];
                    acc += r * r;
                    self.stage_x[i][k] += self.work[k];
                }
                let norm = (acc / T::from_count(n.max(1))).sqrt();
                if !norm.is_finite() {
                    return StepStatus::NonFinite;
                }
                if m > 0 {
                    let rate = norm / prev_norm;
                    if norm <= T::lit(1e-4) * kappa {
                        converged = true;
                        break;
                    }
                    if rate >= T::one() {
                        return StepStatus::NewtonFailed;
                    }
                    eta = rate / (T::one() - rate);
                    if rate > opts.contraction_limit {
                        self.slow_contraction = true;
                        return StepStatus::NewtonFailed;
                    }
                    let remaining = opts.newton_max_iter - 1 - m;
                    if eta * norm > kappa
                        && rate.powi(remaining as i32) / (T::one() - rate) * norm > kappa
                    {
                        return StepStatus::NewtonFailed;
                    }
                }
                if eta * norm <= kappa || norm == T::zero() {
                    converged = true;
                    break;
                }
                prev_norm = norm;
            }
            if !converged {
                return StepStatus::NewtonFailed;
            }
            for k in 0..n {
                self.stage_f[i][k] = (self.stage_x[i][k] - self.theta[k]) / hg;
            }
            if nq > 0 {
                sys.quadrature(ti, &self.stage_x[i], u, &mut self.stage_g[i]);
            }
        }
        self.eta = eta;

        self.x_next.copy_from_slice(&self.stage_x[STAGES - 1]);
        self.q_next.copy_from_slice(q);
        for j in 0..STAGES {
            axpy(h * tab.b[j], &self.stage_g[j], &mut self.q_next);
        }
        self.err.iter_mut().for_each(|e| *e = T::zero());
        for j in 0..STAGES {
            axpy(h * tab.d[j], &self.stage_f[j], &mut self.err[..n]);
            axpy(h * tab.d[j], &self.stage_g[j], &mut self.err[n..]);
        }
        if self
            .x_next
            .iter()
            .chain(self.q_next.iter())
            .any(|v| !v.is_finite())
        {
            return StepStatus::NonFinite;
        }
        let mut acc = T::zero();
        for k in 0..n + nq {
            let (a, b) = if k < n {
                (x[k], self.x_next[k])
            } else {
                (q[k - n], self.q_next[k - n])
            };
            let s = opts.abs_scale.as_ref().map_or(T::one(), |s| s[k]);
            let w = opts.abs_tol * s + opts.rel_tol * a.abs().max(b.abs());
            let r = self.err[k] / w;
            acc += r * r;
        }
        let error = (acc / T::from_count((n + nq).max(1))).sqrt();
        StepStatus::Converged { error }
    }
}

/// Adaptive ESDIRK integrator.
#[derive(Debug, Clone)]
pub struct Esdirk<T> {
    pub options: IntegratorOptions<T>,
}

struct SensitivityWork<T: Real> {
    s: DMat<T>,
    sq: DMat<T>,
    control: DMat<T>,
    control_active: bool,
    jac: BlockTridiagonal<T>,
    ju: DMat<T>,
    gx: DMat<T>,
    gu: DMat<T>,
    ju_sigma: DMat<T>,
    gu_sigma: DMat<T>,
    stage_s: [DMat<T>; STAGES],
    stage_k: [DMat<T>; STAGES],
}

impl<T: Real> Esdirk<T> {
    pub fn new(options: IntegratorOptions<T>) -> Self {
        Self { options }
    }

    pub fn integrate<S: OdeSystem<T> + ?Sized>(
        &self,
        sys: &S,
        t0: T,
        t1: T,
        x0: &[T],
        u: &[T],
    ) -> Result<Solution<T>, IntegrationError> {
        self.run(sys, t0, t1, x0, u, None).map(|(sol, _)| sol)
    }

    /// Integrates and propagates `seeds` through every accepted step.
    pub fn integrate_with_sensitivities<S: OdeSystem<T> + ?Sized>(
        &self,
        sys: &S,
        t0: T,
        t1: T,
        x0: &[T],
        u: &[T],
        seeds: &SensitivitySeeds<T>,
    ) -> Result<(Solution<T>, Sensitivities<T>), IntegrationError> {
        let (sol, sens) = self.run(sys, t0, t1, x0, u, Some(seeds))?;
        Ok((sol, sens.expect("seeded run")))
    }

    /// `x(t1)`, `A = ∂x(t1)/∂x0` and `B = ∂x(t1)/∂u`.
    pub fn integrate_full_sensitivities<S: OdeSystem<T> + ?Sized>(
        &self,
        sys: &S,
        t0: T,
        t1: T,
        x0: &[T],
        u: &[T],
    ) -> Result<(Solution<T>, DMat<T>, DMat<T>), IntegrationError> {
        let seeds = SensitivitySeeds::identity(sys.dim(), sys.control_dim(), sys.quadrature_dim());
        let (sol, sens) = self.integrate_with_sensitivities(sys, t0, t1, x0, u, &seeds)?;
        let (a, b) = sens.split(sys.dim());
        Ok((sol, a, b))
    }

    fn run<S: OdeSystem<T> + ?Sized>(
        &self,
        sys: &S,
        t0: T,
        t1: T,
        x0: &[T],
        u: &[T],
        seeds: Option<&SensitivitySeeds<T>>,
    ) -> Result<(Solution<T>, Option<Sensitivities<T>>), IntegrationError> {
        let opts = &self.options;
        let (n, nq, nu) = (sys.dim(), sys.quadrature_dim(), sys.control_dim());
        if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
            return Err(IntegrationError::InvalidInterval {
                t0: t0.to_f64_lossy(),
                t1: t1.to_f64_lossy(),
            });
        }
        if x0.len() != n || u.len() != nu {
            return Err(IntegrationError::Dimension(format!(
                "state {} (expected {n}), control {} (expected {nu})",
                x0.len(),
                u.len()
            )));
        }
        if let Some(s) = &opts.abs_scale {
            if s.len() != n + nq {
                return Err(IntegrationError::Dimension(format!(
                    "abs_scale has {} entries, expected {}",
                    s.len(),
                    n + nq
                )));
            }
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(IntegrationError::NonFiniteInitial);
        }
        let mut sens = match seeds {
            Some(sd) => {
                let m = sd.columns();
                if sd.state.rows() != n || sd.control.rows() != nu || sd.quadrature.rows() != nq {
                    return Err(IntegrationError::Dimension("seed shapes".into()));
                }
                if sd.control.cols() != m || sd.quadrature.cols() != m {
                    return Err(IntegrationError::Dimension(
                        "seed column counts differ".into(),
                    ));
                }
                let control_active = nu > 0 && sd.control.max_abs() > T::zero();
                let (blocks, bs) = sys.jacobian_layout();
                Some(SensitivityWork {
                    s: sd.state.clone(),
                    sq: sd.quadrature.clone(),
                    control: sd.control.clone(),
                    control_active,
                    jac: BlockTridiagonal::zeros(blocks, bs),
                    ju: DMat::zeros(n, nu),
                    gx: DMat::zeros(nq, n),
                    gu: DMat::zeros(nq, nu),
                    ju_sigma: DMat::zeros(if control_active { n } else { 0 }, m),
                    gu_sigma: DMat::zeros(if control_active { nq } else { 0 }, m),
                    stage_s: std::array::from_fn(|_| DMat::zeros(n, m)),
                    stage_k: std::array::from_fn(|_| DMat::zeros(n, m)),
                })
            }
            None => None,
        };
        let refresh_always = sens.is_some() || opts.refresh_jacobian_every_step;

        let span = t1 - t0;
        let mut ws = StepWorkspace::new(sys);
        let mut t = t0;
        let mut x = x0.to_vec();
        let mut q = vec![T::zero(); nq];
        let mut f0 = vec![T::zero(); n];
        let mut g0 = vec![T::zero(); nq];
        sys.rhs(t, &x, u, &mut f0);
        ws.report.rhs_evaluations += 1;
        if nq > 0 {
            sys.quadrature(t, &x, u, &mut g0);
        }
        if f0.iter().any(|v| !v.is_finite()) {
            return Err(IntegrationError::NonFiniteInitial);
        }
        let mut dense = opts.dense_components.clone().map(DenseOutput::new);
        if let Some(d) = dense.as_mut() {
            d.push(t, &x, &f0);
        }

        let (mut h, fixed_count) = match opts.fixed_step {
            Some(hf) => {
                let steps = ((span / hf).to_f64_lossy() - 1e-9).ceil().max(1.0) as usize;
                (span / T::from_count(steps), Some(steps))
            }
            None => (self.initial_step(sys, &x, &f0, span), None),
        };
        let mut prev_error: Option<T> = None;
        let mut fixed_done = 0usize;
        let mut steps_taken = 0usize;
        ws.refresh_jacobian(sys, t, &x, u);

        loop {
            let remaining = t1 - t;
            if fixed_count.is_some_and(|c| fixed_done == c) || remaining <= T::lit(1e-13) * span {
                break;
            }
            if fixed_count.is_none() {
                if h >= remaining * T::lit(0.999_999) {
                    h = remaining;
                }
                if h < T::lit(1e-12) * span {
                    ws.report.final_time = t.to_f64_lossy();
                    return Err(IntegrationError::StepUnderflow {
                        t: t.to_f64_lossy(),
                        h: h.to_f64_lossy(),
                        report: ws.report,
                    });
                }
            } else if fixed_count == Some(fixed_done + 1) {
                h = remaining;
            }
            steps_taken += 1;
            if steps_taken > opts.max_steps {
                ws.report.final_time = t.to_f64_lossy();
                return Err(IntegrationError::MaxSteps {
                    t: t.to_f64_lossy(),
                    report: ws.report,
                });
            }
            if refresh_always && !ws.jac_fresh {
                ws.refresh_jacobian(sys, t, &x, u);
            }

            let status = ws.step(sys, opts, t, &x, &q, u, &f0, &g0, h);
            let error = match status {
                StepStatus::Converged { error } => error,
                StepStatus::NewtonFailed | StepStatus::NonFinite => {
                    ws.report.newton_failures += 1;
                    if fixed_count.is_some() {
                        ws.report.final_time = t.to_f64_lossy();
                        if ws.lu.is_none() {
                            return Err(IntegrationError::SingularIterationMatrix {
                                t: t.to_f64_lossy(),
                                report: ws.report,
                            });
                        }
                        return Err(IntegrationError::FixedStepFailure {
                            t: t.to_f64_lossy(),
                            report: ws.report,
                        });
                    }
                    ws.report.rejected += 1;
                    trace!("t = {t}: Newton failure at h = {h} ({status:?})");
                    if !ws.jac_fresh {
                        ws.refresh_jacobian(sys, t, &x, u);
                    }
                    h *= T::lit(0.5);
                    prev_error = None;
                    continue;
                }
            };

            if fixed_count.is_none() && error > T::one() {
                ws.report.rejected += 1;
                let fac = (opts.safety * error.powf(T::lit(-0.25))).max(opts.min_factor);
                trace!("t = {t}: rejected h = {h}, error {error}");
                h *= fac;
                prev_error = None;
                continue;
            }

            // accepted
            if let Some(sw) = sens.as_mut() {
                if Self::update_sensitivities(sys, &mut ws, sw, opts.sensitivity_mode, t, u, h)
                    .is_err()
                {
                    ws.report.final_time = t.to_f64_lossy();
                    return Err(IntegrationError::SingularIterationMatrix {
                        t: t.to_f64_lossy(),
                        report: ws.report,
                    });
                }
            }
            ws.report.accepted += 1;
            t = if fixed_count.is_some() && fixed_done + 1 == fixed_count.unwrap() || h == remaining
            {
                t1
            } else {
                t + h
            };
            fixed_done += 1;
            x.copy_from_slice(&ws.x_next);
            q.copy_from_slice(&ws.q_next);
            ws.jac_fresh = false;
            sys.rhs(t, &x, u, &mut f0);
            ws.report.rhs_evaluations += 1;
            if nq > 0 {
                sys.quadrature(t, &x, u, &mut g0);
            }
            if let Some(d) = dense.as_mut() {
                d.push(t, &x, &f0);
            }
            if fixed_count.is_none() {
                let err = error.max(T::lit(1e-10));
                let mut fac = opts.safety * err.powf(T::lit(-0.175));
                if let Some(pe) = prev_error {
                    fac *= (pe / err).powf(T::lit(0.1));
                } else {
                    fac = opts.safety * err.powf(T::lit(-0.25));
                }
                fac = fac.max(opts.min_factor).min(opts.max_factor);
                if !refresh_always && fac >= T::one() && fac <= opts.keep_band {
                    fac = T::one();
                }
                prev_error = Some(err);
                h *= fac;
            }
        }

        ws.report.final_time = t.to_f64_lossy();
        let sol = Solution {
            x,
            quadrature: q,
            dense,
            report: ws.report,
            next_step: h,
        };
        let sens = sens.map(|sw| Sensitivities {
            state: sw.s,
            quadrature: sw.sq,
        });
        Ok((sol, sens))
    }

    /// Staggered direct update of the seeds over the last converged step,
    /// solved stage by stage. The step Jacobian must be fresh at `(t, x_n)`.
    fn update_sensitivities<S: OdeSystem<T> + ?Sized>(
        sys: &S,
        ws: &mut StepWorkspace<T>,
        sw: &mut SensitivityWork<T>,
        mode: SensitivityMode,
        t: T,
        u: &[T],
        h: T,
    ) -> Result<(), ()> {
        let tab = ws.tableau.clone();
        let hg = h * tab.gamma;
        let frozen = mode == SensitivityMode::Frozen;
        let has_q = sw.sq.rows() > 0;
        sw.stage_s[0]
            .as_mut_slice()
            .copy_from_slice(sw.s.as_slice());
        for i in 0..STAGES {
            let relinearize = i == 0 || !frozen;
            let (ti, xi) = if frozen {
                (t, &ws.stage_x[0])
            } else {
                (t + tab.c[i] * h, &ws.stage_x[i])
            };
            if relinearize {
                if sw.control_active {
                    sw.ju.fill(T::zero());
                    sys.jacobian_control(ti, xi, u, &mut sw.ju);
                    sw.ju_sigma.fill(T::zero());
                    sw.ju.matmul_acc(T::one(), &sw.control, &mut sw.ju_sigma);
                }
                if has_q {
                    sw.gx.fill(T::zero());
                    sw.gu.fill(T::zero());
                    sys.quadrature_jacobian(ti, xi, u, &mut sw.gx, &mut sw.gu);
                    if sw.control_active {
                        sw.gu_sigma.fill(T::zero());
                        sw.gu.matmul_acc(T::one(), &sw.control, &mut sw.gu_sigma);
                    }
                }
            }
            let jac = if i > 0 && !frozen {
                sys.jacobian_state(ti, xi, u, &mut sw.jac);
                &sw.jac
            } else {
                &ws.jac
            };
            if i > 0 {
                // (I - hγ J_i) dX_i = dx_n + h Σ a_ij K_j + hγ J_u σ
                let (done, rest) = sw.stage_s.split_at_mut(i);
                let target = &mut rest[0];
                target.as_mut_slice().copy_from_slice(done[0].as_slice());
                for j in 0..i {
                    target.add_scaled(h * tab.a[i][j], &sw.stage_k[j]);
                }
                if sw.control_active {
                    target.add_scaled(hg, &sw.ju_sigma);
                }
                if frozen {
                    ws.lu.as_ref().expect("factorized").0.solve_mat(target);
                } else {
                    let lu = jac.identity_minus_scaled(hg).factorize().map_err(|_| ())?;
                    ws.report.sensitivity_factorizations += 1;
                    lu.solve_mat(target);
                }
            }
            if i + 1 < STAGES {
                let k = &mut sw.stage_k[i];
                if sw.control_active {
                    k.as_mut_slice().copy_from_slice(sw.ju_sigma.as_slice());
                } else {
                    k.fill(T::zero());
                }
                jac.mul_mat_acc(T::one(), &sw.stage_s[i], k);
            }
            if has_q {
                sw.gx.matmul_acc(h * tab.b[i], &sw.stage_s[i], &mut sw.sq);
                if sw.control_active {
                    sw.sq.add_scaled(h * tab.b[i], &sw.gu_sigma);
                }
            }
        }
        sw.s.as_mut_slice()
            .copy_from_slice(sw.stage_s[STAGES - 1].as_slice());
        Ok(())
    }

    fn initial_step<S: OdeSystem<T> + ?Sized>(&self, sys: &S, x: &[T], f0: &[T], span: T) -> T {
        let opts = &self.options;
        if let Some(h) = opts.initial_step {
            return h.min(span);
        }
        let n = sys.dim();
        let scale: Option<Vec<T>> = opts.abs_scale.as_ref().map(|s| s[..n].to_vec());
        // ‖x‖ and ‖f‖ in the tolerance-weighted norm
        let d0 = error_norm(x, x, opts.rel_tol, opts.abs_tol, scale.as_deref());
        let d1 = error_norm(f0, x, opts.rel_tol, opts.abs_tol, scale.as_deref());
        if d1 <= T::lit(1e-12) {
            return span;
        }
        if d0 < T::lit(1e-5) {
            // a zero state gives no length scale for the first step
            return T::lit(1e-6) * span;
        }
        (T::lit(0.01) * d0.max(T::one()) / d1).min(span)
    }
}
