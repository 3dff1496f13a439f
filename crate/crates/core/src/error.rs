use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum SpeError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("physical grid {grid:?} is too coarse for alias-free products; need at least {required:?}")]
    Resolution { grid: [usize; 3], required: [usize; 3] },

    #[error("depth-averaged divergence {residual:e} exceeds tolerance {tolerance:e}")]
    ConstraintViolated { residual: f64, tolerance: f64 },

    #[error("integration blew up at step {step}; last finite time t = {last_finite_time}")]
    BlowUp { last_finite_time: f64, step: u64 },

    #[error("time {t} is outside the record span [{start}, {end}]")]
    OutsideRecord { t: f64, start: f64, end: f64 },

    #[error("noise record does not cover the requested interval: {0}")]
    RecordGap(String),

    #[error("not enough usable data: {0}")]
    InsufficientData(String),

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SpeError>;

pub(crate) fn invalid(msg: impl Into<String>) -> SpeError {
    SpeError::InvalidParameter(msg.into())
}
