use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlvgError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("price {price} has no implied volatility (bounds [{lower}, {upper}])")]
    NoImpliedVol { price: f64, lower: f64, upper: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("quadratic program infeasible: {0}")]
    Infeasible(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("{0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, LlvgError>;
