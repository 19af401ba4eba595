//! Direct multiple shooting transcription of the elution control problem
//! and the chromatography performance measures.

mod ensemble;
mod grid;
mod metrics;
mod objective;
mod problem;
mod process;

use thiserror::Error;

use crate::esdirk::IntegrationError;

pub use ensemble::{initial_guess_ensemble, EnsembleMember};
pub use grid::{gradient_elution, ControlMap, ShootingGrid};
pub use metrics::{exact_metrics, purity_trace, MetricsSpec, OutletSample, PerformanceMetrics};
pub use objective::{
    purity, sigmoid, Integrand, ObjectiveSystem, SmoothedYield, StageObjective, PURITY_GUARD,
};
pub use problem::{
    build_problem, Condensed, Evaluation, ObjectiveForm, SharedSystem, ShootingProblem,
    StateBounds, Values,
};
pub use process::{ColumnModel, Discretization, ElutionProfile, ProcessRun};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OcpError {
    #[error("invalid shooting grid: {0}")]
    InvalidGrid(String),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("decision vector is not finite")]
    NonFinite,
    #[error("integration failed in interval {interval}: {source}")]
    Integration {
        interval: usize,
        source: IntegrationError,
    },
    #[error("model: {0}")]
    Model(String),
    #[error("metrics: {0}")]
    Metrics(String),
}
