//! Front end of `adrctl`: configuration, the five subcommands and their
//! file formats.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

pub use artifacts::{RunReport, SolverSummary};
pub use commands::{
    cmd_export, cmd_metrics, cmd_optimize, cmd_optimize_gradient, cmd_simulate, Case, RunArtifacts,
};
pub use config::RunConfig;
pub use error::CliError;

/// Command-line values that take precedence over the configuration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub intervals: Option<usize>,
    pub elution_min: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.ensemble.seed = s;
        }
        if let Some(n) = self.intervals {
            cfg.shooting.intervals = n;
        }
        if let Some(t) = self.elution_min {
            cfg.shooting.elution_min = t;
        }
        cfg.validate()
    }
}
