use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in `{argument}`: expected {expected}, got {got}")]
    DimensionMismatch {
        argument: &'static str,
        expected: usize,
        got: usize,
    },

    /// A documented precondition of an operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A rollout left the finite region (|x_i| > 1e9 or non-finite).
    #[error("rollout diverged at step {step}")]
    Divergence { step: usize },

    #[error("iteration did not converge after {iterations} steps: {hint}")]
    NonConvergence { iterations: usize, hint: String },

    #[error("non-finite training loss in batch {batch} of optimizer epoch {epoch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    /// A rollout inside a learning epoch diverged.
    #[error("epoch {epoch}, trajectory {trajectory}: {source}")]
    EpochRollout {
        epoch: usize,
        trajectory: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    /// True for errors caused by caller-supplied inputs violating a contract.
    pub fn is_precondition(&self) -> bool {
        match self {
            Error::Precondition(_) | Error::DimensionMismatch { .. } => true,
            Error::EpochRollout { source, .. } => source.is_precondition(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(argument: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            argument,
            expected,
            got,
        })
    }
}
