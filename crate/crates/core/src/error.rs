use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of the squeezing budget models.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-physical measurement: {0}")]
    NonPhysical(String),

    #[error("above threshold: {0}")]
    AboveThreshold(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("singular inversion: {0}")]
    SingularInversion(String),

    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),

    #[error("no squeezing: {0}")]
    NoSqueezing(String),

    #[error("underdetermined fit: {0}")]
    Underdetermined(String),

    #[error("fit did not converge after {iterations} iterations (last estimate {last_estimate})")]
    FitFailure { last_estimate: f64, iterations: usize },

    #[error("unstable estimate: {failed} of {total} samples failed")]
    UnstableEstimate { failed: usize, total: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
