//! Box-constrained NLP solver for multiple shooting problems, the
//! multi-start driver and the text export for external solvers.

mod export;
mod multistart;
mod qp;
mod sqp;

pub use export::{
    export_problem, import_problem, jacobian_pattern, read_export, to_exported, write_export,
    ExportError, ExportedProblem, HEADER,
};
pub use multistart::{multi_start, refine, MultiStartResult, USABLE_VIOLATION};
pub use qp::{solve_qp, QpSolution, QpStatus, Row};
pub use sqp::{
    damped_bfgs, solve, HessianMode, IterationRecord, NlpSolution, SolveStatus, SolverOptions,
};

#[cfg(test)]
mod tests;
