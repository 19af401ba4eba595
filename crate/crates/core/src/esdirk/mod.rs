//! Four-stage ESDIRK integration with embedded error control and staggered
//! direct forward sensitivities.

mod integrator;
mod tableau;

pub use integrator::{
    error_norm, DenseOutput, Esdirk, IntegrationError, IntegrationReport, IntegratorOptions,
    OdeSystem, Sensitivities, SensitivityMode, SensitivitySeeds, Solution, StepStatus,
    StepWorkspace,
};
pub use tableau::{esdirk_tableau, ButcherTableau, STAGES};

#[cfg(test)]
mod tests;
