use std::sync::Arc;

use super::*;
use crate::esdirk::{IntegratorOptions, OdeSystem};
use crate::linalg::{BlockTridiagonal, DMat};
use crate::ocp::{build_problem, ControlMap, ShootingGrid, ShootingProblem, StateBounds};

/// `x1' = x2`, `x2' = u`, quadrature `w (x2² + u²)`.
struct DoubleIntegrator {
    weight: f64,
}

impl OdeSystem<f64> for DoubleIntegrator {
    fn dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn rhs(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = x[1];
        out[1] = u[0];
    }
    fn jacobian_state(&self, _t: f64, _x: &[f64], _u: &[f64], jac: &mut BlockTridiagonal<f64>) {
        jac.diag[0].fill(0.0);
        jac.diag[0][(0, 1)] = 1.0;
    }
    fn jacobian_control(&self, _t: f64, _x: &[f64], _u: &[f64], jac: &mut DMat<f64>) {
        jac[(1, 0)] = 1.0;
    }
    fn quadrature_dim(&self) -> usize {
        1
    }
    fn quadrature(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = self.weight * (x[1] * x[1] + u[0] * u[0]);
    }
    fn quadrature_jacobian(
        &self,
        _t: f64,
        x: &[f64],
        u: &[f64],
        dx: &mut DMat<f64>,
        du: &mut DMat<f64>,
    ) {
        dx[(0, 1)] = 2.0 * self.weight * x[1];
        du[(0, 0)] = 2.0 * self.weight * u[0];
    }
}

/// Static state; quadrature `target(t)`-tracking cost `(u - target)²`.
struct Tracking {
    targets: Vec<f64>,
    horizon: f64,
}

impl Tracking {
    fn target(&self, t: f64) -> f64 {
        let n = self.targets.len();
        let k = ((t / self.horizon * n as f64).floor() as usize).min(n - 1);
        self.targets[k]
    }
}

impl OdeSystem<f64> for Tracking {
    fn dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn rhs(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn jacobian_state(&self, _t: f64, _x: &[f64], _u: &[f64], jac: &mut BlockTridiagonal<f64>) {
        jac.diag[0][(0, 0)] = 0.0;
    }
    fn quadrature_dim(&self) -> usize {
        1
    }
    fn quadrature(&self, t: f64, _x: &[f64], u: &[f64], out: &mut [f64]) {
        // stage times can touch the right interval end
        let tc = t.min(self.horizon * (1.0 - 1e-12));
        let e = u[0] - self.target(tc - 1e-12 * self.horizon);
        out[0] = e * e;
    }
    fn quadrature_jacobian(
        &self,
        t: f64,
        _x: &[f64],
        u: &[f64],
        _dx: &mut DMat<f64>,
        du: &mut DMat<f64>,
    ) {
        let tc = t.min(self.horizon * (1.0 - 1e-12));
        du[(0, 0)] = 2.0 * (u[0] - self.target(tc - 1e-12 * self.horizon));
    }
}

/// Static state; double-well cost `(u² - 1)² + 0.3u`.
struct DoubleWell;

impl OdeSystem<f64> for DoubleWell {
    fn dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn rhs(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn jacobian_state(&self, _t: f64, _x: &[f64], _u: &[f64], jac: &mut BlockTridiagonal<f64>) {
        jac.diag[0][(0, 0)] = 0.0;
    }
    fn quadrature_dim(&self) -> usize {
        1
    }
    fn quadrature(&self, _t: f64, _x: &[f64], u: &[f64], out: &mut [f64]) {
        let v = u[0] * u[0] - 1.0;
        out[0] = v * v + 0.3 * u[0];
    }
    fn quadrature_jacobian(
        &self,
        _t: f64,
        _x: &[f64],
        u: &[f64],
        _dx: &mut DMat<f64>,
        du: &mut DMat<f64>,
    ) {
        du[(0, 0)] = 4.0 * u[0] * (u[0] * u[0] - 1.0) + 0.3;
    }
}

fn shooting<S: OdeSystem<f64> + Send + Sync + 'static>(
    sys: S,
    horizon: f64,
    intervals: usize,
    lo: f64,
    hi: f64,
    x0: Vec<f64>,
) -> ShootingProblem {
    let n = sys.dim();
    let grid = ShootingGrid::new(horizon, intervals).unwrap();
    let controls = ControlMap::piecewise_constant(intervals, &[lo], &[hi]).unwrap();
    build_problem(
        Arc::new(sys),
        grid,
        controls,
        StateBounds::unbounded(n),
        x0,
        IntegratorOptions::with_tolerances(1e-10, 1e-12),
    )
    .unwrap()
}

fn lqr(weight: f64, intervals: usize) -> ShootingProblem {
    shooting(
        DoubleIntegrator { weight },
        2.0,
        intervals,
        -50.0,
        50.0,
        vec![1.0, -0.5],
    )
}

/// Dense KKT solve of the same problem in closed form: the discrete maps
/// and interval costs of the double integrator are exact polynomials.
fn lqr_oracle(intervals: usize, horizon: f64, x0: [f64; 2]) -> Vec<f64> {
    let n = 2;
    let ts = horizon / intervals as f64;
    let nv = (intervals + 1) * n + intervals;
    let nc = (intervals + 1) * n;
    let up = (intervals + 1) * n;
    let mut h = DMat::zeros(nv, nv);
    for k in 0..intervals {
        let (x2, u) = (k * n + 1, up + k);
        h[(x2, x2)] += 2.0 * ts;
        h[(x2, u)] += ts * ts;
        h[(u, x2)] += ts * ts;
        h[(u, u)] += 2.0 * (ts * ts * ts / 3.0 + ts);
    }
    let mut c = DMat::zeros(nc, nv);
    let mut e = vec![0.0; nc];
    c[(0, 0)] = 1.0;
    c[(1, 1)] = 1.0;
    e[0] = x0[0];
    e[1] = x0[1];
    for k in 0..intervals {
        let r = (k + 1) * n;
        c[(r, r)] = 1.0;
        c[(r, k * n)] = -1.0;
        c[(r, k * n + 1)] = -ts;
        c[(r, up + k)] = -ts * ts / 2.0;
        c[(r + 1, r + 1)] = 1.0;
        c[(r + 1, k * n + 1)] = -1.0;
        c[(r + 1, up + k)] = -ts;
    }
    let dim = nv + nc;
    let mut kkt = DMat::zeros(dim, dim);
    for i in 0..nv {
        for j in 0..nv {
            kkt[(i, j)] = h[(i, j)];
        }
    }
    for i in 0..nc {
        for j in 0..nv {
            kkt[(nv + i, j)] = c[(i, j)];
            kkt[(j, nv + i)] = c[(i, j)];
        }
    }
    let mut rhs = vec![0.0; dim];
    rhs[nv..].copy_from_slice(&e);
    kkt.lu().unwrap().solve_in_place(&mut rhs);
    rhs.truncate(nv);
    rhs
}

#[test]
fn lqr_matches_dense_kkt() {
    let problem = lqr(1.0, 5);
    let start = vec![0.0; problem.variable_count()];
    let sol = solve(&problem, &start, &SolverOptions::default());
    assert_eq!(
        sol.status,
        SolveStatus::Converged,
        "{:?}",
        sol.history.last()
    );
    assert!(sol.violation <= 1e-8 && sol.stationarity <= 1e-8);
    let oracle = lqr_oracle(5, 2.0, [1.0, -0.5]);
    for (i, (a, b)) in sol.decision.iter().zip(&oracle).enumerate() {
        assert!((a - b).abs() < 1e-8, "variable {i}: {a} vs {b}");
    }
    assert!(sol.bound_multipliers.iter().all(|&z| z == 0.0));
}

#[test]
fn clipped_scalar_minimum() {
    let problem = shooting(
        Tracking {
            targets: vec![3.0],
            horizon: 1.0,
        },
        1.0,
        1,
        0.0,
        2.0,
        vec![0.0],
    );
    let sol = solve(&problem, &[0.0, 0.0, 0.5], &SolverOptions::default());
    assert_eq!(sol.status, SolveStatus::Converged);
    assert!((sol.parameters(&problem)[0] - 2.0).abs() < 1e-12);
    // upper bound binds: reduced gradient 2(u - 3) = -2
    assert!((sol.bound_multipliers[0] + 2.0).abs() < 1e-6);
}

#[test]
fn active_bounds_have_sign_correct_multipliers() {
    let targets = vec![-1.0, 0.5, 3.0, -2.0];
    let problem = shooting(
        Tracking {
            targets: targets.clone(),
            horizon: 4.0,
        },
        4.0,
        4,
        0.0,
        1.0,
        vec![0.0],
    );
    let mut start = vec![0.0; problem.variable_count()];
    let off = problem.residual_count();
    start[off..].copy_from_slice(&[1.0, 1.0, 0.0, 1.0]);
    let sol = solve(&problem, &start, &SolverOptions::default());
    assert_eq!(sol.status, SolveStatus::Converged);
    let u = sol.parameters(&problem);
    let expected = [0.0, 0.5, 1.0, 0.0];
    for k in 0..4 {
        assert!((u[k] - expected[k]).abs() < 1e-9, "{u:?}");
    }
    let z = &sol.bound_multipliers;
    assert!(z[0] > 0.0 && z[3] > 0.0, "lower bounds: {z:?}");
    assert!(z[2] < 0.0, "upper bound: {z:?}");
    assert_eq!(z[1], 0.0);
    assert!((z[0] - 2.0).abs() < 1e-6 && (z[2] + 4.0).abs() < 1e-6 && (z[3] - 4.0).abs() < 1e-6);

    // starting on the optimal bounds: nothing to improve
    let mut at_opt = start.clone();
    at_opt[off..].copy_from_slice(&[0.0, 0.5, 1.0, 0.0]);
    let sol = solve(&problem, &at_opt, &SolverOptions::default());
    assert_eq!(sol.status, SolveStatus::Converged);
    assert_eq!(sol.iterations, 0);
}

#[test]
fn start_is_projected_into_bounds() {
    let problem = shooting(
        Tracking {
            targets: vec![0.5],
            horizon: 1.0,
        },
        1.0,
        1,
        0.0,
        1.0,
        vec![0.0],
    );
    let sol = solve(&problem, &[0.0, 0.0, 7.0], &SolverOptions::default());
    assert_eq!(sol.status, SolveStatus::Converged);
    assert!((sol.parameters(&problem)[0] - 0.5).abs() < 1e-9);
}

#[test]
fn objective_scaling_leaves_solution_unchanged() {
    let start = vec![0.3; lqr(1.0, 4).variable_count()];
    // both start gradients exceed 1, so both objectives are normalized
    let a = solve(&lqr(10.0, 4), &start, &SolverOptions::default());
    let b = solve(&lqr(1e4, 4), &start, &SolverOptions::default());
    assert!(a.converged() && b.converged());
    for (x, y) in a.decision.iter().zip(&b.decision) {
        assert!((x - y).abs() < 1e-8);
    }
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn merit_decreases_and_runs_repeat() {
    let problem = lqr(1.0, 6);
    let mut start = vec![0.3; problem.variable_count()];
    start[1] = 4.0;
    let opts = SolverOptions::default();
    let a = solve(&problem, &start, &opts);
    for r in a.history.iter().filter(|r| r.step > 0.0) {
        assert!(r.accepted_merit <= r.merit, "{r:?}");
    }
    let b = solve(&problem, &start, &opts);
    assert_eq!(a, b);
}

#[test]
fn multi_start_keeps_the_better_local_optimum() {
    let problem = shooting(DoubleWell, 1.0, 1, -2.0, 2.0, vec![0.0]);
    let starts = vec![
        vec![0.0, 0.0, 0.9],
        vec![0.0, 0.0, -0.9],
        vec![0.0, 0.0, 1.4],
    ];
    let score = |s: &NlpSolution| Some(-s.objective);
    let res = multi_start(&problem, &starts, &SolverOptions::default(), score).unwrap();
    assert!(!res.fallback);
    let u: Vec<f64> = res
        .members
        .iter()
        .map(|m| m.parameters(&problem)[0])
        .collect();
    assert!(u[0] > 0.9 && u[1] < -0.9, "{u:?}");
    assert_eq!(res.best, 1);

    let same = vec![starts[0].clone(); 3];
    let res = multi_start(&problem, &same, &SolverOptions::default(), score).unwrap();
    assert_eq!(res.best, 0);
    assert!(res
        .members
        .iter()
        .all(|m| m.decision == res.members[0].decision));

    // known optimum as a member: the selection is at least as good
    let opt = res_opt(&problem);
    let res = multi_start(
        &problem,
        &[starts[0].clone(), opt.clone()],
        &SolverOptions::default(),
        score,
    )
    .unwrap();
    assert!(res.scores[res.best].unwrap() >= res.scores[1].unwrap());
    assert!(multi_start(&problem, &[], &SolverOptions::default(), score).is_err());
}

fn res_opt(problem: &ShootingProblem) -> Vec<f64> {
    solve(problem, &[0.0, 0.0, -1.0], &SolverOptions::default()).decision
}

#[test]
fn refinement_replicates_controls() {
    let coarse = lqr(1.0, 2);
    let start = vec![0.0; coarse.variable_count()];
    let sol = solve(&coarse, &start, &SolverOptions::default());
    let fine = lqr(1.0, 6);
    let strict = IntegratorOptions::with_tolerances(1e-12, 1e-14);
    let w = refine(&coarse, &sol.decision, &fine, &strict).unwrap();
    let pc = sol.parameters(&coarse);
    let pf = &w[fine.residual_count()..];
    assert_eq!(pf, &[pc[0], pc[0], pc[0], pc[1], pc[1], pc[1]]);
    let v = fine.values(&w).unwrap();
    assert!(v.residuals.iter().all(|c| c.abs() < 1e-10));
    assert!((v.objective - sol.objective).abs() < 1e-9);
    assert!(refine(&coarse, &sol.decision, &lqr(1.0, 5), &strict).is_err());
}

#[test]
fn export_round_trip() {
    let problem = lqr(1.0, 3);
    let mut start: Vec<f64> = (0..problem.variable_count())
        .map(|i| (i as f64 * 0.7).sin() / 3.0)
        .collect();
    start[0] = f64::MIN_POSITIVE;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lqr.nlp");
    export_problem(&problem, &start, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("nlp-export v1\n"));
    let e = import_problem(&path).unwrap();
    assert_eq!(e, to_exported(&problem, &start));
    assert_eq!(e.variables, 4 * 2 + 3);
    let (n, nu, ns) = (2, 1, 3);
    assert_eq!(e.jacobian.len(), n + ns * (n * n + n + n * nu));
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&e.start), bits(&start));

    let broken = text.replacen("dimensions 11", "dimensions 12", 1);
    let err = read_export(broken.as_bytes()).unwrap_err();
    assert!(matches!(err, ExportError::Parse { line: 2, .. }), "{err}");
}
