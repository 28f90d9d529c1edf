use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {field}[{index}]")]
    NonFinite { field: &'static str, index: usize },

    #[error("tail constant did not converge: last two levels {last} and {previous}")]
    TailConstant { last: f64, previous: f64 },

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("regime mismatch: {0}")]
    Regime(String),

    #[error("table covers horizon {table} but {requested} was requested")]
    Horizon { table: usize, requested: usize },

    #[error("invalid contact points: {0}")]
    Points(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable short name for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::NonFinite { .. } => "non_finite",
            Error::TailConstant { .. } => "tail_constant",
            Error::NotConverged { .. } => "not_converged",
            Error::Regime(_) => "regime",
            Error::Horizon { .. } => "horizon",
            Error::Points(_) => "points",
        }
    }
}
