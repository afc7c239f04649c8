use nalgebra::DVector;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate instance: {0}")]
    DegenerateInstance(String),

    #[error("instance construction failed: {0}")]
    ConstructionFailure(String),

    /// The information matrix is singular, so the ellipsoid is unbounded in
    /// some direction.
    #[error("parameter not identified: {0}")]
    NotIdentified(String),

    /// The action set of a mode cannot span the parameter space.
    #[error("mode cannot identify the parameter: {0}")]
    NotIdentifiable(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        best: DVector<f64>,
        residual: f64,
        iterations: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
