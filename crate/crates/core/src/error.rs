use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point {t} lies outside the domain [{lower}, {upper}]")]
    OutOfDomain { t: f64, lower: f64, upper: f64 },

    /// A non-finite value appeared while iterating. Carries the iterate that produced it.
    #[error("numeric failure at scale {scale}, iteration {iteration}: {reason}")]
    NumericFailure {
        scale: usize,
        iteration: usize,
        reason: String,
        snapshot: Vec<f64>,
    },

    #[error("bound not applicable: {0}")]
    Inapplicable(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub(crate) fn ensure_len(actual: usize, expected: usize) -> Result<()> {
    if actual == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
