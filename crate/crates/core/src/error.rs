use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("row {row} of the transition matrix sums to {sum} instead of 1")]
    NotStochastic { row: usize, sum: f64 },

    #[error("transition matrix entry ({row}, {col}) is negative or not finite: {value}")]
    BadEntry { row: usize, col: usize, value: f64 },

    #[error("offspring law of state `{state}` has mean {mean}; a positive mean is required")]
    ZeroMean { state: String, mean: f64 },

    #[error("invalid offspring law: {0}")]
    InvalidLaw(String),

    #[error("matrix is not primitive; run validate_model for the primitivity report")]
    NotPrimitive,

    #[error("vector is not stationary for the kernel (residual {residual:e})")]
    NotStationary { residual: f64 },

    #[error("power iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("offspring law of state `{state}` cannot be rescaled: {reason}")]
    UnsupportedRescale { state: String, reason: String },

    #[error("calibration target is infeasible: {0}")]
    Infeasible(String),

    #[error("regime precondition violated: {0}")]
    Regime(String),

    #[error("enumeration needs {paths:e} environment paths, above the limit {limit:e}; use dp_survival_bounds instead")]
    TooLarge { paths: f64, limit: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("conditioning by rejection is infeasible: acceptance rate {rate:e} after {attempts} attempts; try a smaller n")]
    Feasibility { rate: f64, attempts: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;
