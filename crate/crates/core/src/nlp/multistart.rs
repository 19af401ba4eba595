use rayon::prelude::*;

use super::sqp::{solve, NlpSolution, SolverOptions};
use crate::ocp::{OcpError, ShootingProblem};

/// Members ranked when none converged: continuity violation at most this.
pub const USABLE_VIOLATION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiStartResult {
    /// Index into `members` of the selected solution.
    pub best: usize,
    pub members: Vec<NlpSolution>,
    /// Ranking score per member (larger is better); `None` if not ranked.
    pub scores: Vec<Option<f64>>,
    /// True when no member converged and the best usable one was taken.
    pub fallback: bool,
}

impl MultiStartResult {
    pub fn best_solution(&self) -> &NlpSolution {
        &self.members[self.best]
    }
}

/// Solves every start independently and picks the member with the largest
/// `score` among the converged ones; ties go to the lowest index. When none
/// converged, members with violation ≤ [`USABLE_VIOLATION`] are ranked
/// instead, and failing that the first member is returned.
pub fn multi_start<F>(
    problem: &ShootingProblem,
    starts: &[Vec<f64>],
    opts: &SolverOptions,
    score: F,
) -> Result<MultiStartResult, OcpError>
where
    F: Fn(&NlpSolution) -> Option<f64> + Sync,
{
    if starts.is_empty() {
        return Err(OcpError::Dimension(
            "multi-start needs at least one member".into(),
        ));
    }
    let members: Vec<NlpSolution> = starts.par_iter().map(|s| solve(problem, s, opts)).collect();
    let converged = members.iter().any(NlpSolution::converged);
    let eligible = |m: &NlpSolution| {
        if converged {
            m.converged()
        } else {
            m.violation <= USABLE_VIOLATION && m.objective.is_finite()
        }
    };
    let scores: Vec<Option<f64>> = members
        .par_iter()
        .map(|m| {
            if eligible(m) {
                score(m).filter(|s| s.is_finite())
            } else {
                None
            }
        })
        .collect();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if s > best_score {
                best = i;
                best_score = s;
            }
        }
    }
    Ok(MultiStartResult {
        best,
        members,
        scores,
        fallback: !converged,
    })
}

/// Start vector for `fine` from a decision of `coarse`: ZOH controls
/// replicated onto the subintervals and nodes re-simulated with `strict`.
pub fn refine(
    coarse: &ShootingProblem,
    decision: &[f64],
    fine: &ShootingProblem,
    strict: &crate::esdirk::IntegratorOptions<f64>,
) -> Result<Vec<f64>, OcpError> {
    let (nc, nf) = (coarse.intervals(), fine.intervals());
    let nu = coarse.controls().control_dim();
    if nf % nc != 0 || nf < nc {
        return Err(OcpError::InvalidGrid(format!(
            "{nf} intervals is not a multiple of {nc}"
        )));
    }
    if coarse.parameter_count() != nc * nu
        || fine.parameter_count() != nf * nu
        || fine.controls().control_dim() != nu
    {
        return Err(OcpError::Dimension(
            "refinement needs piecewise constant controls on both grids".into(),
        ));
    }
    if (coarse.grid().horizon() - fine.grid().horizon()).abs() > 1e-12 * coarse.grid().horizon() {
        return Err(OcpError::InvalidGrid("refinement keeps the horizon".into()));
    }
    let m = nf / nc;
    let p = &decision[coarse.residual_count()..];
    let controls = coarse.controls().controls(p);
    let refined: Vec<f64> = (0..nf)
        .flat_map(|k| controls[(k / m) * nu..(k / m + 1) * nu].to_vec())
        .collect();
    fine.simulate_nodes(&refined, Some(strict))
}
