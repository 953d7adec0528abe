use thiserror::Error;

use crate::conic::ConicError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid scenario: {}", .0.join("; "))]
    InvalidScenario(Vec<String>),

    /// Every problem found in a configuration file, each prefixed with its location.
    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),

    /// A quantity that must be strictly positive vanished (no echo energy, unobservable target).
    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    /// The problem data make a subproblem infeasible before any solve is attempted.
    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),

    #[error("rank recovery failed: residual covariance has eigenvalue {min_eig:e} (norm {norm:e})")]
    RankRecovery { min_eig: f64, norm: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Conic(#[from] ConicError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
