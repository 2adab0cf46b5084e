use thiserror::Error;

use crate::fdfd::SolverError;
use crate::scene::SceneError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Scene(#[from] SceneError),

    #[error(transparent)]
    Solver(#[from] SolverError),

    /// `GᴴG` is not numerically invertible; the design is infeasible for the
    /// log-det objective.
    #[error("sensing matrix is rank deficient (sigma_min/sigma_max = {ratio:.3e})")]
    RankDeficient { ratio: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
