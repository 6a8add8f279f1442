//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: {left} vs {right}")]
    DimensionMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    #[error("invalid mode index {mode} for a {modes}-mode space")]
    InvalidMode { mode: usize, modes: usize },

    #[error("operator marked hermitian but max |M - M†| = {deviation:.3e}")]
    NotHermitian { deviation: f64 },

    #[error("time {t} lies outside the pulse support [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("calibration failed: {0}")]
    CalibrationFailed(String),

    #[error("pulse file does not match the experiment: {0}")]
    PulseMismatch(String),

    #[error("step-halving check failed: coarse dt {dt} changes the result by {deviation:.3e} (tolerance {tolerance:.3e})")]
    StepCheckFailed {
        dt: f64,
        deviation: f64,
        tolerance: f64,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
