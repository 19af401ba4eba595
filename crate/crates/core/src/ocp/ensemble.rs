use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::problem::ShootingProblem;
use super::OcpError;
use crate::esdirk::IntegratorOptions;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMember {
    pub parameters: Vec<f64>,
    /// Decision vector with nodes from a forward simulation.
    pub decision: Vec<f64>,
}

/// `count` copies of `base` with every parameter multiplied by
/// `exp(scale z)`, `z ~ N(0, 1)`, clipped to the parameter bounds.
pub fn initial_guess_ensemble(
    problem: &ShootingProblem,
    base: &[f64],
    count: usize,
    scale: f64,
    seed: u64,
    integrator: Option<&IntegratorOptions<f64>>,
) -> Result<Vec<EnsembleMember>, OcpError> {
    if count == 0 {
        return Err(OcpError::Dimension(
            "ensemble needs at least one member".into(),
        ));
    }
    if base.len() != problem.parameter_count() {
        return Err(OcpError::Dimension(format!(
            "expected {} parameters",
            problem.parameter_count()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<Vec<f64>> = (0..count)
        .map(|_| {
            let mut p: Vec<f64> = base
                .iter()
                .map(|&b| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    b * (scale * z).exp()
                })
                .collect();
            problem.controls().project(&mut p);
            p
        })
        .collect();
    params
        .into_par_iter()
        .map(|p| {
            let decision = problem.simulate_nodes(&p, integrator)?;
            Ok(EnsembleMember {
                parameters: p,
                decision,
            })
        })
        .collect()
}
