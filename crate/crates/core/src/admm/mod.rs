//! Relaxed, regularized assignment solved by a two-block ADMM.
//!
//! Block one holds the link volumes ω, assignments S, fairness slacks β and
//! payments c̃ = [c; μ]; block two holds the route counts u, the copies W, H,
//! Z of S and the budget slack β̃. Ten linear constraints tie the blocks.

pub mod factor;
pub mod problem;
pub mod solver;
pub mod state;
pub mod updates;

use thiserror::Error;

pub use factor::UFactor;
pub use problem::{Group, OrgProblem, Problem};
pub use solver::{
    dual_ascent, evaluate_residuals, iterate, objective_value, solve_from, solve_relaxed, write_iteration_log,
    AnnealPhase, IterationRecord, RelaxedSolution, Residuals, SolverParams,
};
pub use state::{OrgState, SolverState};

#[derive(Debug, Error)]
pub enum AdmmError {
    #[error("invalid solver parameters: {0}")]
    InvalidParams(String),
    #[error("rho ({rho}) equals the regularizer weight; the binarity step is singular")]
    SingularZStep { rho: f64 },
    #[error("ADMM diverged at iteration {iteration} (residual {residual})")]
    Diverged { iteration: usize, residual: f64 },
    #[error("organization {org}, driver {driver}: {message}")]
    Infeasible {
        org: String,
        driver: usize,
        message: String,
    },
    #[error("dimension mismatch: {what} has length {found}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("factorization failed")]
    SingularFactorization,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Assignment(#[from] crate::assignment::AssignmentError),
}

pub type Result<T> = std::result::Result<T, AdmmError>;
