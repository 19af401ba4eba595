use super::*;
use crate::linalg::{BlockTridiagonal, DMat};
use approx::assert_relative_eq;
use proptest::prelude::*;

/// `x' = A x + B u` with a dense Jacobian.
struct Linear {
    a: DMat<f64>,
    b: DMat<f64>,
}

impl OdeSystem<f64> for Linear {
    fn dim(&self) -> usize {
        self.a.rows()
    }
    fn control_dim(&self) -> usize {
        self.b.cols()
    }
    fn rhs(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.a.mul_vec_acc(1.0, x, out);
        self.b.mul_vec_acc(1.0, u, out);
    }
    fn jacobian_state(&self, _t: f64, _x: &[f64], _u: &[f64], jac: &mut BlockTridiagonal<f64>) {
        jac.diag[0] = self.a.clone();
    }
    fn jacobian_control(&self, _t: f64, _x: &[f64], _u: &[f64], jac: &mut DMat<f64>) {
        *jac = self.b.clone();
    }
}

/// `x' = 1 + x²` with `x(0) = 0`, solution `tan t`.
struct Riccati;

impl OdeSystem<f64> for Riccati {
    fn dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        0
    }
    fn rhs(&self, _t: f64, x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 1.0 + x[0] * x[0];
    }
    fn jacobian_state(&self, _t: f64, x: &[f64], _u: &[f64], jac: &mut BlockTridiagonal<f64>) {
        jac.diag[0][(0, 0)] = 2.0 * x[0];
    }
}

/// Controlled Brusselator with quadrature `∫ (x₀² + u x₁) dt`, laid out in
/// two 1×1 blocks to exercise the block-tridiagonal path.
struct Brusselator;

impl OdeSystem<f64> for Brusselator {
    fn dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn jacobian_layout(&self) -> (usize, usize) {
        (2, 1)
    }
    fn rhs(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        let (a, b) = (u[0], 3.0);
        out[0] = a + x[0] * x[0] * x[1] - (b + 1.0) * x[0];
        out[1] = b * x[0] - x[0] * x[0] * x[1];
    }
    fn jacobian_state(&self, _t: f64, x: &[f64], _u: &[f64], jac: &mut BlockTridiagonal<f64>) {
        jac.diag[0][(0, 0)] = 2.0 * x[0] * x[1] - 4.0;
        jac.upper[0][(0, 0)] = x[0] * x[0];
        jac.lower[0][(0, 0)] = 3.0 - 2.0 * x[0] * x[1];
        jac.diag[1][(0, 0)] = -x[0] * x[0];
    }
    fn jacobian_control(&self, _t: f64, _x: &[f64], _u: &[f64], jac: &mut DMat<f64>) {
        jac[(0, 0)] = 1.0;
    }
    fn quadrature_dim(&self) -> usize {
        1
    }
    fn quadrature(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = x[0] * x[0] + u[0] * x[1];
    }
    fn quadrature_jacobian(
        &self,
        _t: f64,
        x: &[f64],
        u: &[f64],
        dx: &mut DMat<f64>,
        du: &mut DMat<f64>,
    ) {
        dx[(0, 0)] = 2.0 * x[0];
        dx[(0, 1)] = u[0];
        du[(0, 0)] = x[1];
    }
}

fn scalar(lambda: f64) -> Linear {
    Linear {
        a: DMat::from_row_major(1, 1, vec![lambda]),
        b: DMat::zeros(1, 0),
    }
}

fn tight_fixed(h: f64) -> IntegratorOptions<f64> {
    IntegratorOptions {
        rel_tol: 1e-13,
        abs_tol: 1e-13,
        fixed_step: Some(h),
        newton_tol: 1e-3,
        newton_max_iter: 50,
        contraction_limit: 0.9,
        refresh_jacobian_every_step: true,
        ..IntegratorOptions::default()
    }
}

/// `R(z) = det(I - zA + z 1 bᵀ) / det(I - zA)` via LU determinants.
fn stability_oracle(z: f64) -> f64 {
    let t = esdirk_tableau::<f64>();
    let det = |m: DMat<f64>| -> f64 {
        // Gaussian elimination with partial pivoting
        let n = m.rows();
        let mut a = m;
        let mut d = 1.0;
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs()))
                .unwrap();
            if p != k {
                for j in 0..n {
                    let tmp = a[(k, j)];
                    a[(k, j)] = a[(p, j)];
                    a[(p, j)] = tmp;
                }
                d = -d;
            }
            d *= a[(k, k)];
            for i in k + 1..n {
                let l = a[(i, k)] / a[(k, k)];
                for j in k..n {
                    a[(i, j)] -= l * a[(k, j)];
                }
            }
        }
        d
    };
    let ima = DMat::from_fn(4, 4, |i, j| f64::from(u8::from(i == j)) - z * t.a[i][j]);
    let num = DMat::from_fn(4, 4, |i, j| ima[(i, j)] + z * t.b[j]);
    det(num) / det(ima)
}

#[test]
fn single_step_reproduces_stability_function() {
    for &lambda in &[-0.3, -2.0, -25.0, 1.5] {
        let sys = scalar(lambda);
        let sol = Esdirk::new(tight_fixed(1.0))
            .integrate(&sys, 0.0, 1.0, &[1.0], &[])
            .unwrap();
        assert_relative_eq!(sol.x[0], stability_oracle(lambda), max_relative = 1e-12);
        assert_relative_eq!(
            stability_oracle(lambda),
            esdirk_tableau::<f64>().stability_function(lambda),
            max_relative = 1e-12
        );
    }
    let sol = Esdirk::new(tight_fixed(1.0))
        .integrate(&scalar(-1e6), 0.0, 1.0, &[1.0], &[])
        .unwrap();
    assert!(sol.x[0].abs() < 1e-3);
    assert_eq!(sol.report.accepted, 1);
}

#[test]
fn zero_rhs_takes_one_step() {
    let sys = scalar(0.0);
    let sol = Esdirk::new(IntegratorOptions::default())
        .integrate(&sys, 0.0, 3.0, &[2.5], &[])
        .unwrap();
    assert_eq!(sol.x, vec![2.5]);
    assert_eq!(sol.report.accepted, 1);
    assert_eq!(sol.report.final_time, 3.0);
}

#[test]
fn exponential_decay_to_tolerance() {
    let opts = IntegratorOptions::with_tolerances(1e-8, 1e-10);
    let sol = Esdirk::new(opts)
        .integrate(&scalar(-1.0), 0.0, 1.0, &[1.0], &[])
        .unwrap();
    assert!((sol.x[0] - (-1.0f64).exp()).abs() < 1e-7, "{}", sol.x[0]);
    let r = sol.report;
    assert!(r.lu_factorizations <= r.accepted + r.rejected);
}

#[test]
fn global_error_tracks_tolerance() {
    let errs: Vec<f64> = [1e-5, 1e-7, 1e-9]
        .iter()
        .map(|&tol| {
            let sol = Esdirk::new(IntegratorOptions::with_tolerances(tol, tol))
                .integrate(&scalar(-1.0), 0.0, 1.0, &[1.0], &[])
                .unwrap();
            (sol.x[0] - (-1.0f64).exp()).abs()
        })
        .collect();
    for (w, tol) in errs.windows(2).zip([1e-5, 1e-7]) {
        assert!(w[1] < w[0] / 20.0, "{errs:?}");
        assert!(w[0] < 50.0 * tol, "{errs:?}");
    }
}

#[test]
fn fixed_step_order_on_riccati() {
    let exact = 1.0f64.tan();
    let hs = [0.1, 0.05, 0.025, 0.0125];
    let errs: Vec<f64> = hs
        .iter()
        .map(|&h| {
            let sol = Esdirk::new(tight_fixed(h))
                .integrate(&Riccati, 0.0, 1.0, &[0.0], &[])
                .unwrap();
            (sol.x[0] - exact).abs()
        })
        .collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 2.8, "order {order}, errors {errs:?}");
    }
}

#[test]
fn local_error_estimate_scales_with_fourth_power() {
    let opts = tight_fixed(1.0);
    let est = |h: f64| {
        let mut ws = StepWorkspace::new(&Riccati);
        let x = [0.3];
        let f0 = [1.0 + 0.09];
        ws.refresh_jacobian(&Riccati, 0.0, &x, &[]);
        match ws.step(&Riccati, &opts, 0.0, &x, &[], &[], &f0, &[], h) {
            StepStatus::Converged { error } => error,
            other => panic!("{other:?}"),
        }
    };
    let ratio = est(0.04) / est(0.02);
    assert!(
        ratio > 2f64.powf(3.5) && ratio < 2f64.powf(4.5),
        "ratio {ratio}"
    );
}

#[test]
fn adaptive_stiff_system_needs_few_steps() {
    let a = DMat::from_row_major(2, 2, vec![-1e5, 0.0, 1.0, -1.0]);
    let sys = Linear {
        a,
        b: DMat::zeros(2, 0),
    };
    let sol = Esdirk::new(IntegratorOptions::with_tolerances(1e-6, 1e-9))
        .integrate(&sys, 0.0, 5.0, &[1.0, 0.0], &[])
        .unwrap();
    assert!(sol.report.accepted < 200, "{:?}", sol.report);
    // x₀ decays instantly, x₁ follows x₁' = x₀ - x₁
    let exact = 1e-5 / (1e5 - 1.0) * ((-5.0f64).exp() - (-5e5f64).exp()) * 1e5 / 1e-5 * 1e-5;
    assert!((sol.x[1] - exact).abs() < 1e-6, "{} vs {exact}", sol.x[1]);
}

#[test]
fn linear_sensitivities_match_exponential() {
    let (a, b, ts) = (-0.7, 2.0, 1.5);
    let sys = Linear {
        a: DMat::from_row_major(1, 1, vec![a]),
        b: DMat::from_row_major(1, 1, vec![b]),
    };
    let opts = IntegratorOptions::with_tolerances(1e-10, 1e-12);
    let (sol, am, bm) = Esdirk::new(opts)
        .integrate_full_sensitivities(&sys, 0.0, ts, &[0.4], &[0.3])
        .unwrap();
    let e = (a * ts).exp();
    assert_relative_eq!(am[(0, 0)], e, max_relative = 1e-6);
    assert_relative_eq!(bm[(0, 0)], (e - 1.0) * b / a, max_relative = 1e-6);
    assert_relative_eq!(
        sol.x[0],
        e * 0.4 + (e - 1.0) * b / a * 0.3,
        max_relative = 1e-8
    );
    // no control influence
    let sys0 = Linear {
        a: DMat::from_row_major(1, 1, vec![a]),
        b: DMat::zeros(1, 1),
    };
    let (_, _, b0) = Esdirk::new(IntegratorOptions::default())
        .integrate_full_sensitivities(&sys0, 0.0, ts, &[0.4], &[0.3])
        .unwrap();
    assert_eq!(b0[(0, 0)], 0.0);
}

#[test]
fn matrix_system_sensitivities_match_exponential() {
    // A = [[-1, 2], [0, -3]] has the closed-form exponential below.
    let sys = Linear {
        a: DMat::from_row_major(2, 2, vec![-1.0, 2.0, 0.0, -3.0]),
        b: DMat::from_row_major(2, 1, vec![0.0, 1.0]),
    };
    let t: f64 = 0.8;
    let (e1, e3) = ((-t).exp(), (-3.0 * t).exp());
    let expm = [[e1, e1 - e3], [0.0, e3]];
    let opts = IntegratorOptions::with_tolerances(1e-10, 1e-12);
    let (_, a, b) = Esdirk::new(opts)
        .integrate_full_sensitivities(&sys, 0.0, t, &[1.0, 1.0], &[0.5])
        .unwrap();
    for i in 0..2 {
        for j in 0..2 {
            assert!((a[(i, j)] - expm[i][j]).abs() < 1e-7);
        }
    }
    // B = ∫ e^{As} B ds = [(1 - e1) - (1 - e3)/3, (1 - e3)/3]
    assert!((b[(0, 0)] - ((1.0 - e1) - (1.0 - e3) / 3.0)).abs() < 1e-7);
    assert!((b[(1, 0)] - (1.0 - e3) / 3.0).abs() < 1e-7);
}

#[test]
fn nonlinear_sensitivities_match_finite_differences() {
    let opts = tight_fixed(0.02);
    let integ = Esdirk::new(opts.clone());
    let (x0, u0, t1) = ([1.2, 2.9], [1.1], 1.0);
    let seeds = SensitivitySeeds::identity(2, 1, 1);
    let (sol, sens) = integ
        .integrate_with_sensitivities(&Brusselator, 0.0, t1, &x0, &u0, &seeds)
        .unwrap();
    let run = |x: &[f64], u: &[f64]| {
        let s = integ.integrate(&Brusselator, 0.0, t1, x, u).unwrap();
        (s.x, s.quadrature)
    };
    let (xr, qr) = run(&x0, &u0);
    assert_eq!(xr, sol.x);
    assert_eq!(qr, sol.quadrature);
    let eps = 1e-6;
    for col in 0..3 {
        let mut xp = x0;
        let mut up = u0;
        let mut xm = x0;
        let mut um = u0;
        if col < 2 {
            xp[col] += eps;
            xm[col] -= eps;
        } else {
            up[0] += eps;
            um[0] -= eps;
        }
        let (a, qa) = run(&xp, &up);
        let (b, qb) = run(&xm, &um);
        for row in 0..2 {
            let fd = (a[row] - b[row]) / (2.0 * eps);
            let got = sens.state[(row, col)];
            assert!(
                (fd - got).abs() <= 1e-6 * got.abs().max(1.0),
                "x[{row}] col {col}: fd {fd} vs {got}"
            );
        }
        let fd = (qa[0] - qb[0]) / (2.0 * eps);
        let got = sens.quadrature[(0, col)];
        assert!(
            (fd - got).abs() <= 1e-6 * got.abs().max(1.0),
            "Q col {col}: fd {fd} vs {got}"
        );
    }
}

#[test]
fn frozen_sensitivities_converge_at_first_order() {
    let (x0, u0) = ([1.2, 2.9], [1.1]);
    let seeds = SensitivitySeeds::identity(2, 1, 1);
    let gap = |h: f64| {
        let exact = Esdirk::new(tight_fixed(h));
        let frozen = Esdirk::new(IntegratorOptions {
            sensitivity_mode: SensitivityMode::Frozen,
            ..tight_fixed(h)
        });
        let (_, se) = exact
            .integrate_with_sensitivities(&Brusselator, 0.0, 1.0, &x0, &u0, &seeds)
            .unwrap();
        let (_, sf) = frozen
            .integrate_with_sensitivities(&Brusselator, 0.0, 1.0, &x0, &u0, &seeds)
            .unwrap();
        let mut d = se.state.clone();
        d.add_scaled(-1.0, &sf.state);
        d.max_abs()
    };
    let (g1, g2) = (gap(0.04), gap(0.02));
    let order = (g1 / g2).log2();
    assert!(g1 > 1e-4, "{g1}");
    assert!(order > 0.8 && order < 1.3, "order {order}: {g1} {g2}");
}

#[test]
fn directional_seeds_equal_projected_full_sensitivities() {
    let integ = Esdirk::new(IntegratorOptions::with_tolerances(1e-8, 1e-10));
    let (x0, u0) = ([1.0, 3.0], [1.0]);
    let full = SensitivitySeeds::identity(2, 1, 1);
    let (_, s_full) = integ
        .integrate_with_sensitivities(&Brusselator, 0.0, 2.0, &x0, &u0, &full)
        .unwrap();
    // one direction mixing state and control
    let dir = SensitivitySeeds {
        state: DMat::from_row_major(2, 1, vec![0.5, -1.0]),
        control: DMat::from_row_major(1, 1, vec![2.0]),
        quadrature: DMat::zeros(1, 1),
    };
    let (_, s_dir) = integ
        .integrate_with_sensitivities(&Brusselator, 0.0, 2.0, &x0, &u0, &dir)
        .unwrap();
    let v = [0.5, -1.0, 2.0];
    for row in 0..2 {
        let proj: f64 = (0..3).map(|c| s_full.state[(row, c)] * v[c]).sum();
        assert_relative_eq!(
            s_dir.state[(row, 0)],
            proj,
            max_relative = 1e-12,
            epsilon = 1e-14
        );
    }
    let proj: f64 = (0..3).map(|c| s_full.quadrature[(0, c)] * v[c]).sum();
    assert_relative_eq!(s_dir.quadrature[(0, 0)], proj, max_relative = 1e-12);
}

#[test]
fn quadrature_tracks_integral() {
    // x' = -x, g = x ⇒ Q(T) = 1 - e^{-T}
    struct Decay;
    impl OdeSystem<f64> for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn control_dim(&self) -> usize {
            0
        }
        fn rhs(&self, _t: f64, x: &[f64], _u: &[f64], out: &mut [f64]) {
            out[0] = -x[0];
        }
        fn jacobian_state(&self, _t: f64, _x: &[f64], _u: &[f64], jac: &mut BlockTridiagonal<f64>) {
            jac.diag[0][(0, 0)] = -1.0;
        }
        fn quadrature_dim(&self) -> usize {
            1
        }
        fn quadrature(&self, _t: f64, x: &[f64], _u: &[f64], out: &mut [f64]) {
            out[0] = x[0];
        }
    }
    let sol = Esdirk::new(IntegratorOptions::with_tolerances(1e-9, 1e-11))
        .integrate(&Decay, 0.0, 2.0, &[1.0], &[])
        .unwrap();
    assert!((sol.quadrature[0] - (1.0 - (-2.0f64).exp())).abs() < 1e-8);
    // conservation of the linear invariant x + Q
    assert!((sol.x[0] + sol.quadrature[0] - 1.0).abs() < 1e-13);
}

#[test]
fn dense_output_interpolates_between_steps() {
    let opts = IntegratorOptions {
        dense_components: Some(vec![0]),
        ..IntegratorOptions::with_tolerances(1e-9, 1e-11)
    };
    let sol = Esdirk::new(opts)
        .integrate(&scalar(-1.0), 0.0, 2.0, &[1.0], &[])
        .unwrap();
    let dense = sol.dense.unwrap();
    assert_eq!(dense.t.len(), sol.report.accepted + 1);
    assert_eq!(dense.start(), 0.0);
    assert_eq!(dense.end(), 2.0);
    let mut out = [0.0];
    for k in 0..=40 {
        let t = k as f64 * 0.05;
        dense.eval(t, &mut out);
        assert!((out[0] - (-t).exp()).abs() < 1e-6, "t = {t}");
    }
}

#[test]
fn blow_up_reports_failure() {
    // x' = x² from x(0) = 1 blows up at t = 1
    struct Blow;
    impl OdeSystem<f64> for Blow {
        fn dim(&self) -> usize {
            1
        }
        fn control_dim(&self) -> usize {
            0
        }
        fn rhs(&self, _t: f64, x: &[f64], _u: &[f64], out: &mut [f64]) {
            out[0] = x[0] * x[0];
        }
        fn jacobian_state(&self, _t: f64, x: &[f64], _u: &[f64], jac: &mut BlockTridiagonal<f64>) {
            jac.diag[0][(0, 0)] = 2.0 * x[0];
        }
    }
    let err = Esdirk::new(IntegratorOptions::with_tolerances(1e-6, 1e-8))
        .integrate(&Blow, 0.0, 2.0, &[1.0], &[])
        .unwrap_err();
    match err {
        IntegrationError::StepUnderflow { t, .. } | IntegrationError::MaxSteps { t, .. } => {
            assert!(t > 0.9 && t < 1.01, "{t}")
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn rejects_bad_input() {
    let integ = Esdirk::new(IntegratorOptions::default());
    assert!(matches!(
        integ.integrate(&scalar(-1.0), 1.0, 1.0, &[1.0], &[]),
        Err(IntegrationError::InvalidInterval { .. })
    ));
    assert!(matches!(
        integ.integrate(&scalar(-1.0), 0.0, 1.0, &[1.0, 2.0], &[]),
        Err(IntegrationError::Dimension(_))
    ));
    assert!(matches!(
        integ.integrate(&scalar(-1.0), 0.0, 1.0, &[f64::NAN], &[]),
        Err(IntegrationError::NonFiniteInitial)
    ));
}

#[test]
fn error_norm_examples() {
    assert_eq!(error_norm(&[0.0, 0.0], &[1.0, 2.0], 1e-3, 1e-6, None), 0.0);
    assert_relative_eq!(
        error_norm(&[1e-6, 1e-6], &[0.0, 0.0], 1e-3, 1e-6, None),
        1.0
    );
    let a = error_norm(&[1e-4, -3e-5], &[0.5, 2.0], 1e-3, 1e-6, None);
    let b = error_norm(&[2e-4, -6e-5], &[0.5, 2.0], 1e-3, 1e-6, None);
    assert_relative_eq!(b, 2.0 * a, max_relative = 1e-15);
}

#[test]
fn runs_in_single_precision() {
    struct Decay32;
    impl OdeSystem<f32> for Decay32 {
        fn dim(&self) -> usize {
            1
        }
        fn control_dim(&self) -> usize {
            0
        }
        fn rhs(&self, _t: f32, x: &[f32], _u: &[f32], out: &mut [f32]) {
            out[0] = -2.0 * x[0];
        }
        fn jacobian_state(&self, _t: f32, _x: &[f32], _u: &[f32], jac: &mut BlockTridiagonal<f32>) {
            jac.diag[0][(0, 0)] = -2.0;
        }
    }
    let sol = Esdirk::new(IntegratorOptions::<f32>::with_tolerances(1e-4, 1e-6))
        .integrate(&Decay32, 0.0, 1.0, &[1.0], &[])
        .unwrap();
    assert!((sol.x[0] - (-2.0f32).exp()).abs() < 1e-3);
}

proptest! {
    #[test]
    fn counters_are_consistent(lambda in -1e4f64..-0.01, tol in 1e-9f64..1e-4) {
        let sol = Esdirk::new(IntegratorOptions::with_tolerances(tol, tol)).integrate(&scalar(lambda), 0.0, 1.0, &[1.0], &[]).unwrap();
        let r = sol.report;
        prop_assert!(r.lu_factorizations <= r.accepted + r.rejected);
        prop_assert!(r.accepted >= 1);
        prop_assert_eq!(r.final_time, 1.0);
    }
}
