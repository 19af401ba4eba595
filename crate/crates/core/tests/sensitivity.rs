//! Interval sensitivities and the multiple shooting gradient on the desk-scale
//! chromatography column, checked against central differences of the same
//! fixed-step integrator.

use adr_core::esdirk::{Esdirk, IntegratorOptions, OdeSystem};
use adr_core::models::case_study_config;
use adr_core::ocp::{ColumnModel, ControlMap, Discretization, ShootingGrid};

fn desk_column() -> ColumnModel {
    ColumnModel::new(
        case_study_config(),
        Discretization {
            elements: 4,
            degree: 2,
        },
    )
    .unwrap()
}

fn fixed_step() -> IntegratorOptions<f64> {
    IntegratorOptions {
        fixed_step: Some(0.005),
        rel_tol: 1e-9,
        abs_tol: 1e-15,
        newton_tol: 1e-6,
        newton_max_iter: 30,
        refresh_jacobian_every_step: true,
        ..IntegratorOptions::default()
    }
}

/// `max |a_ij - fd_ij| s_j / s_i` over the largest `|a_ij| s_j / s_i`: the
/// relative error of `D⁻¹ A D` with species reference levels `s` (`s_j` for
/// the control columns).
fn scaled_relative_error(
    exact: impl Fn(usize, usize) -> f64,
    fd: &[Vec<f64>],
    row_scale: &[f64],
    col_scale: &[f64],
) -> f64 {
    let (mut err, mut size) = (0.0f64, 0.0f64);
    for (j, col) in fd.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            let w = col_scale[j] / row_scale[i];
            err = err.max((v - exact(i, j)).abs() * w);
            size = size.max(exact(i, j).abs() * w);
        }
    }
    err / size
}

#[test]
fn interval_sensitivities_match_central_differences() {
    let model = desk_column();
    let adaptive = IntegratorOptions::with_tolerances(1e-8, 1e-14);
    let x0 = model.loaded_state(&adaptive).unwrap();
    let sys = model.elution_system();
    let u0 = [0.12];
    let integ = Esdirk::new(fixed_step());
    let (_, a, b) = integ
        .integrate_full_sensitivities(&sys, 0.0, 2.0, &x0, &u0)
        .unwrap();
    let run = |x: &[f64], u: &[f64]| integ.integrate(&sys, 0.0, 2.0, x, u).unwrap().x;
    let n = sys.dim();
    // species reference levels keep the steps above the Newton noise
    let reference = model.state_bounds().upper;
    let fd_a: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let eps = 1e-6 * x0[j].abs().max(0.1 * reference[j]);
            let (mut xp, mut xm) = (x0.clone(), x0.clone());
            xp[j] += eps;
            xm[j] -= eps;
            let (fp, fm) = (run(&xp, &u0), run(&xm, &u0));
            fp.iter()
                .zip(&fm)
                .map(|(p, m)| (p - m) / (2.0 * eps))
                .collect()
        })
        .collect();
    let eps = 1e-6;
    let (fp, fm) = (run(&x0, &[u0[0] + eps]), run(&x0, &[u0[0] - eps]));
    let fd_b = vec![fp
        .iter()
        .zip(&fm)
        .map(|(p, m)| (p - m) / (2.0 * eps))
        .collect::<Vec<f64>>()];
    let ea = scaled_relative_error(|i, j| a[(i, j)], &fd_a, &reference, &reference);
    let (_, hi) = model.control_bounds();
    let eb = scaled_relative_error(|i, j| b[(i, j)], &fd_b, &reference, &[hi]);
    assert!(ea < 1e-4, "A: {ea}");
    assert!(eb < 1e-4, "B: {eb}");
}

#[test]
fn shooting_gradient_matches_central_differences() {
    let model = desk_column();
    let intervals = 3;
    let grid = ShootingGrid::new(3.0, intervals).unwrap();
    let (lo, hi) = model.control_bounds();
    let controls = ControlMap::piecewise_constant(intervals, &[lo], &[hi]).unwrap();
    let adaptive = IntegratorOptions::with_tolerances(1e-8, 1e-14);
    let problem = model
        .elution_problem(grid, controls, 0.01, &adaptive)
        .unwrap()
        .with_integrator(fixed_step());
    let mut w = problem.simulate_nodes(&[0.1, 0.25, 0.4], None).unwrap();
    // move the nodes off the trajectory so node derivatives matter
    for (i, v) in w.iter_mut().enumerate().take(problem.residual_count()) {
        *v *= 1.0 + 1e-3 * ((i * 7919 % 13) as f64 / 6.0 - 1.0);
    }
    let eval = problem.evaluate(&w).unwrap();
    let (lo, hi) = problem.variable_bounds();
    let mut worst = 0.0f64;
    for d in 0..4 {
        let dir: Vec<f64> = (0..w.len())
            .map(|i| {
                let sign = if (i * 31 + d * 17) % 5 < 2 { -1.0 } else { 1.0 };
                sign * (w[i].abs() + 1e-6 * (hi[i] - lo[i]))
            })
            .collect();
        let eps = 1e-6;
        let at = |s: f64| -> f64 {
            let shifted: Vec<f64> = w.iter().zip(&dir).map(|(a, v)| a + s * eps * v).collect();
            problem.values(&shifted).unwrap().objective
        };
        let fd = (at(1.0) - at(-1.0)) / (2.0 * eps);
        let exact: f64 = eval.gradient.iter().zip(&dir).map(|(g, v)| g * v).sum();
        worst = worst.max((fd - exact).abs() / exact.abs().max(1e-12));
    }
    assert!(worst < 1e-5, "relative gradient error {worst}");
}
