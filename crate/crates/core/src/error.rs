use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension {0} not supported (need d >= 3)")]
    Dimension(usize),

    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),

    #[error("{what} = {value} is not a multiple of the step {step}")]
    OffGrid { what: &'static str, value: f64, step: f64 },

    #[error("index {index} out of range (limit {limit})")]
    OutOfRange { index: usize, limit: usize },

    #[error("beta = {beta} inadmissible: Khas'minskii margin {margin:.4} >= 1")]
    Inadmissible { beta: f64, margin: f64 },

    #[error("mollifier under-resolved: eps = {eps} needs lattice step <= {max_dx}, got {dx}")]
    UnderResolved { eps: f64, dx: f64, max_dx: f64 },

    #[error("covariance matrix of size {size} not positive definite within jitter budget")]
    Indefinite { size: usize },

    #[error("quadrature did not converge: error estimate {estimate:e} above tolerance {tol:e}")]
    Quadrature { estimate: f64, tol: f64 },

    #[error("{events} periodic wrap events exceed the limit {limit}")]
    Wrap { events: u64, limit: u64 },

    #[error("budget exhausted: {0}")]
    Budget(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
