use thiserror::Error;

use crate::market::ValidationReport;
use crate::solver::EquilibriumResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(ValidationReport),

    #[error("patience value must be non-negative, got {0}")]
    NegativePatience(f64),

    #[error("patience value {delta} lies outside [0, {delta_bar}]")]
    PatienceOutOfRange { delta: f64, delta_bar: f64 },

    #[error("every tick has an infinite execution time; no feasible posting")]
    NoFeasibleTick,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("equilibrium search did not reach tolerance {tol:e}; best residual {:e}", .best.residual)]
    NoConvergence { tol: f64, best: Box<EquilibriumResult> },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidArgument(msg.into())
    }
}
