use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use adr_core::esdirk::IntegratorOptions;
use adr_core::nlp::{export_problem, multi_start, refine, solve, NlpSolution};
use adr_core::ocp::{
    exact_metrics, gradient_elution, initial_guess_ensemble, ColumnModel, ControlMap,
    ElutionProfile, MetricsSpec, OutletSample, PerformanceMetrics, ShootingGrid,
};
use log::{info, warn};

use crate::artifacts::{
    finite_or_none, read_chromatogram, write_chromatogram, write_control, GradientSummary,
    MemberSummary, RunReport, SolverSummary,
};
use crate::config::RunConfig;
use crate::error::CliError;

/// Outputs of a run; nothing is written until [`RunArtifacts::write`].
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub proteins: Vec<String>,
    pub load_min: f64,
    pub spec: MetricsSpec,
    pub samples: Vec<OutletSample>,
    pub report: RunReport,
}

impl RunArtifacts {
    /// Writes `chromatogram.csv`, `control.csv` and `metrics.json`.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)?;
        let mut f = BufWriter::new(File::create(dir.join("chromatogram.csv"))?);
        write_chromatogram(
            &mut f,
            &self.proteins,
            &self.samples,
            &self.spec,
            &self.report.metrics.windows,
        )?;
        f.flush()?;
        let mut f = BufWriter::new(File::create(dir.join("control.csv"))?);
        write_control(
            &mut f,
            self.load_min,
            self.report.elution_min,
            &self.report.control,
        )?;
        f.flush()?;
        std::fs::write(dir.join("metrics.json"), self.report.to_json())?;
        Ok(())
    }
}

/// Column model plus the integrator settings of a configuration.
pub struct Case {
    pub cfg: RunConfig,
    pub model: ColumnModel,
    pub opts: IntegratorOptions<f64>,
    pub strict: IntegratorOptions<f64>,
}

impl Case {
    pub fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let model = ColumnModel::new(cfg.model.clone(), cfg.discretization)?;
        Ok(Self {
            cfg: cfg.clone(),
            model,
            opts: cfg.integrator(),
            strict: cfg.strict_integrator(),
        })
    }

    fn grid(&self, intervals: usize) -> Result<ShootingGrid, CliError> {
        Ok(ShootingGrid::new(self.cfg.shooting.elution_min, intervals)?)
    }

    fn require_elution(&self) -> Result<(), CliError> {
        if self.cfg.shooting.elution_min > 0.0 {
            Ok(())
        } else {
            Err(CliError::Validation(
                "optimization needs a positive elution duration".into(),
            ))
        }
    }

    pub fn run(&self, salt: &[f64]) -> Result<(Vec<OutletSample>, PerformanceMetrics), CliError> {
        let t = self.cfg.shooting.elution_min;
        let run = self.model.simulate_process(
            &ElutionProfile {
                duration: t,
                salt: salt.to_vec(),
            },
            &self.opts,
        )?;
        let metrics = exact_metrics(&run.samples, &self.model.metrics_spec(t))?;
        Ok((run.samples, metrics))
    }

    /// Exact yield of a full process run, `None` if the run fails.
    pub fn yield_of(&self, salt: &[f64]) -> Option<f64> {
        match self.run(salt) {
            Ok((_, m)) => Some(m.yield_fraction),
            Err(e) => {
                warn!("process simulation failed: {e}");
                None
            }
        }
    }

    fn artifacts(&self, command: &str, salt: Vec<f64>) -> Result<RunArtifacts, CliError> {
        let (samples, metrics) = self.run(&salt)?;
        Ok(RunArtifacts {
            proteins: self.cfg.model.isotherm.proteins.clone(),
            load_min: self.cfg.model.phases.load_min,
            spec: self.model.metrics_spec(self.cfg.shooting.elution_min),
            samples,
            report: RunReport {
                command: command.into(),
                elution_min: self.cfg.shooting.elution_min,
                intervals: salt.len(),
                decision_variables: None,
                control: salt,
                metrics,
                gradient: None,
                members: Vec::new(),
                selected_member: None,
                fallback: false,
                refined: None,
            },
        })
    }

    /// Elution salt of the configured profile on `intervals` intervals.
    fn profile_salt(&self, intervals: usize) -> Result<Vec<f64>, CliError> {
        match &self.cfg.profile.steps {
            Some(steps) => Ok(steps.clone()),
            None => Ok(gradient_elution(
                self.cfg.profile.start,
                self.cfg.profile.end,
                intervals,
            )),
        }
    }
}

fn summary(sol: &NlpSolution) -> SolverSummary {
    SolverSummary {
        status: sol.status,
        iterations: sol.iterations,
        objective: finite_or_none(sol.objective),
        violation: finite_or_none(sol.violation),
        stationarity: finite_or_none(sol.stationarity),
    }
}

/// Linear-gradient optimum on the shooting grid.
pub struct Baseline {
    pub salt: Vec<f64>,
    pub yield_fraction: f64,
    pub summary: GradientSummary,
}

fn levels(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let s = i as f64 / (n - 1) as f64;
            if lo > 0.0 {
                lo * (hi / lo).powf(s)
            } else {
                lo + (hi - lo) * s
            }
        })
        .collect()
}

/// Samples (start, end) on a geometric grid, then runs the solver on the
/// two-parameter ramp from the best sample; keeps whichever has the higher
/// exact yield.
pub fn gradient_baseline(case: &Case) -> Result<Baseline, CliError> {
    case.require_elution()?;
    let n = case.cfg.shooting.intervals;
    let (lo, hi) = case.cfg.control_bounds();
    let ramp = ControlMap::linear_ramp(n, lo, hi)?;
    let lv = levels(lo, hi, case.cfg.gradient.levels);
    let mut grid_results = Vec::new();
    let mut best: Option<([f64; 2], f64)> = None;
    for &a in &lv {
        for &b in &lv {
            if let Some(y) = case.yield_of(&ramp.controls(&[a, b])) {
                grid_results.push([a, b, y]);
                if best.is_none_or(|(_, by)| y > by) {
                    best = Some(([a, b], y));
                }
            }
        }
    }
    let Some((p0, y0)) = best else {
        return Err(CliError::Integration(
            "every start-grid simulation failed".into(),
        ));
    };
    info!(
        "gradient start grid: best (start, end) = ({:.4}, {:.4}), yield {y0:.6}",
        p0[0], p0[1]
    );

    let problem = case.model.elution_problem(
        case.grid(n)?,
        ramp.clone(),
        case.cfg.objective.delta,
        &case.opts,
    )?;
    let w0 = problem.simulate_nodes(&p0, Some(&case.strict))?;
    let sol = solve(&problem, &w0, &case.cfg.solver);
    let p_sol = sol.parameters(&problem).to_vec();
    let y_sol = case
        .yield_of(&ramp.controls(&p_sol))
        .filter(|_| sol.failed_interval.is_none());
    info!(
        "gradient solve: {:?} after {} iterations, yield {:?}",
        sol.status, sol.iterations, y_sol
    );
    let (p, y, kept_grid_sample) = match y_sol {
        Some(y) if y >= y0 => (p_sol, y, false),
        _ => (p0.to_vec(), y0, true),
    };
    let salt = ramp.controls(&p);
    let (_, metrics) = case.run(&salt)?;
    Ok(Baseline {
        salt,
        yield_fraction: y,
        summary: GradientSummary {
            start: p[0],
            end: p[1],
            metrics,
            solver: summary(&sol),
            kept_grid_sample,
            grid: grid_results,
        },
    })
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<RunArtifacts, CliError> {
    let case = Case::new(cfg)?;
    let salt = case.profile_salt(cfg.shooting.intervals)?;
    case.artifacts("simulate", salt)
}

pub fn cmd_optimize_gradient(cfg: &RunConfig) -> Result<RunArtifacts, CliError> {
    let case = Case::new(cfg)?;
    let base = gradient_baseline(&case)?;
    let mut art = case.artifacts("optimize-gradient", base.salt)?;
    art.report.gradient = Some(base.summary);
    Ok(art)
}

/// Gradient baseline, perturbed ensemble, multi-start on the piecewise
/// constant parameterization and optional refinement.
pub fn cmd_optimize(cfg: &RunConfig) -> Result<RunArtifacts, CliError> {
    let case = Case::new(cfg)?;
    let base = gradient_baseline(&case)?;
    let n = cfg.shooting.intervals;
    let (lo, hi) = cfg.control_bounds();
    let zoh = ControlMap::piecewise_constant(n, &[lo], &[hi])?;
    let problem =
        case.model
            .elution_problem(case.grid(n)?, zoh, cfg.objective.delta, &case.opts)?;
    info!(
        "multiple shooting NLP with {n} intervals: {} decision variables",
        problem.variable_count()
    );

    let e = &cfg.ensemble;
    let members = initial_guess_ensemble(
        &problem,
        &base.salt,
        e.count,
        e.scale,
        e.seed,
        Some(&case.strict),
    )?;
    let starts: Vec<Vec<f64>> = members.into_iter().map(|m| m.decision).collect();
    let result = multi_start(&problem, &starts, &cfg.solver, |s| {
        case.yield_of(s.parameters(&problem))
    })?;
    let member_summaries: Vec<MemberSummary> = result
        .members
        .iter()
        .zip(&result.scores)
        .enumerate()
        .map(|(i, (m, s))| MemberSummary {
            member: i,
            solver: summary(m),
            yield_fraction: *s,
        })
        .collect();
    for m in &member_summaries {
        info!(
            "member {}: {:?}, {} iterations, yield {:?}",
            m.member, m.solver.status, m.solver.iterations, m.yield_fraction
        );
    }

    let selected_member = select_member(&result.scores, result.best, base.yield_fraction)?;
    let mut salt = base.salt.clone();
    let mut best_yield = base.yield_fraction;
    match selected_member {
        Some(i) => {
            salt = result.best_solution().parameters(&problem).to_vec();
            best_yield = result.scores[i].unwrap_or(best_yield);
        }
        None => info!("no ensemble member improved on the gradient baseline"),
    }

    let mut refined = None;
    if let Some(m) = cfg.shooting.refine_intervals.filter(|&m| m != n) {
        let fine_map = ControlMap::piecewise_constant(m, &[lo], &[hi])?;
        let fine =
            case.model
                .elution_problem(case.grid(m)?, fine_map, cfg.objective.delta, &case.opts)?;
        info!(
            "refinement to {m} intervals: {} decision variables",
            fine.variable_count()
        );
        let coarse_w = problem.simulate_nodes(&salt, Some(&case.strict))?;
        let w0 = refine(&problem, &coarse_w, &fine, &case.strict)?;
        let sol = solve(&fine, &w0, &cfg.solver);
        let p = sol.parameters(&fine).to_vec();
        if let Some(y) = case.yield_of(&p).filter(|_| sol.failed_interval.is_none()) {
            info!("refined solve: {:?}, yield {y:.6}", sol.status);
            if y >= best_yield {
                salt = p;
                best_yield = y;
            }
        }
        refined = Some(summary(&sol));
    }
    info!(
        "optimized yield {best_yield:.6} (gradient baseline {:.6})",
        base.yield_fraction
    );

    let mut art = case.artifacts("optimize", salt)?;
    art.report.decision_variables = Some(problem.variable_count());
    art.report.gradient = Some(base.summary);
    art.report.members = member_summaries;
    art.report.selected_member = selected_member;
    art.report.fallback = result.fallback;
    art.report.refined = refined;
    Ok(art)
}

/// Best member if it matches or beats the baseline yield. A run in which no
/// member produced a usable solution is a solver failure.
fn select_member(
    scores: &[Option<f64>],
    best: usize,
    baseline: f64,
) -> Result<Option<usize>, CliError> {
    if scores.iter().all(Option::is_none) {
        return Err(CliError::Solver(format!(
            "none of the {} ensemble members reached a usable solution",
            scores.len()
        )));
    }
    Ok(scores[best].filter(|&y| y >= baseline).map(|_| best))
}

/// Recomputes the metrics of a chromatogram file.
pub fn cmd_metrics(cfg: &RunConfig, chromatogram: &Path) -> Result<PerformanceMetrics, CliError> {
    let case = Case::new(cfg)?;
    let file = File::open(chromatogram).map_err(|e| {
        CliError::Validation(format!("cannot read {}: {e}", chromatogram.display()))
    })?;
    let samples = read_chromatogram(BufReader::new(file), &cfg.model.isotherm.proteins)?;
    let spec = case.model.metrics_spec(cfg.shooting.elution_min);
    Ok(exact_metrics(&samples, &spec)?)
}

/// Writes `problem.nlp` for the configured profile on the shooting grid.
pub fn cmd_export(cfg: &RunConfig, dir: &Path) -> Result<(PathBuf, usize), CliError> {
    let case = Case::new(cfg)?;
    case.require_elution()?;
    let n = cfg.shooting.intervals;
    let salt = case.profile_salt(n)?;
    if salt.len() != n {
        return Err(CliError::Validation(format!(
            "profile.steps has {} levels for {n} intervals",
            salt.len()
        )));
    }
    let (lo, hi) = cfg.control_bounds();
    let zoh = ControlMap::piecewise_constant(n, &[lo], &[hi])?;
    let problem =
        case.model
            .elution_problem(case.grid(n)?, zoh, cfg.objective.delta, &case.opts)?;
    let w0 = problem.simulate_nodes(&salt, Some(&case.strict))?;
    std::fs::create_dir_all(dir)?;
    let path = dir.join("problem.nlp");
    export_problem(&problem, &w0, &path).map_err(|e| match e {
        adr_core::nlp::ExportError::Io(io) => CliError::Io(io),
        other => CliError::Validation(other.to_string()),
    })?;
    Ok((path, problem.variable_count()))
}
