use adr_core::ocp::OcpError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("solver failed: {0}")]
    Solver(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit code: 1 validation (and I/O), 2 integration, 3 solver.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 1,
            CliError::Integration(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl From<OcpError> for CliError {
    fn from(e: OcpError) -> Self {
        match e {
            OcpError::Integration { .. } | OcpError::NonFinite => {
                CliError::Integration(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}
