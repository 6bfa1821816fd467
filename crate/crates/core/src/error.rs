use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inner fixed point did not converge after {iterations} iterations (worst residual {worst_residual:.3e})")]
    IterationLimit { iterations: usize, worst_residual: f64 },

    #[error("singularity: {0}")]
    Singularity(String),

    #[error("numerical PSD failure: {0}")]
    NumericalPsd(String),

    #[error("outer iteration did not converge within {iterations} iterations (last residual {last:.3e})", last = history.last().copied().unwrap_or(f64::NAN))]
    NonConvergence { iterations: usize, history: Vec<f64> },

    #[error("internal consistency: {0}")]
    InternalConsistency(String),

    #[error("path {path} exploded at step {step} (|X|^2 = {norm:.3e}); refine the time grid")]
    Instability { path: usize, step: usize, norm: f64 },

    #[error("stationarity residual {residual:.3e} exceeds {limit:.3e}")]
    StationarityFailure { residual: f64, limit: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
