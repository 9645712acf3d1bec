use thiserror::Error;

/// Failures of the linear-algebra layer.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum NumericsError {
    #[error("singular matrix: {operand}")]
    Singular { operand: String },
    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("matrix is not Hermitian (deviation {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Which half of a message-passing iteration failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Measurement-side updates, indexed by l.
    Output,
    /// Row-side updates, indexed by n.
    Input,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("metric unavailable: {0}")]
    UnavailableMetric(&'static str),
    #[error("unsupported channel: {0}")]
    UnsupportedChannel(String),
    #[error("iteration {iteration} failed at {stage:?} index {index}: {source}")]
    IterationFailure {
        iteration: usize,
        stage: Stage,
        index: usize,
        source: NumericsError,
    },
    #[error("state evolution failed at step {step}: {source}")]
    StateEvolution { step: usize, source: NumericsError },
    #[error("fixed-point iteration did not converge from any start (final residuals {residuals:?})")]
    NonConvergence { residuals: Vec<f64> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by numerics rather than by the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerics(_)
                | Error::IterationFailure { .. }
                | Error::StateEvolution { .. }
                | Error::NonConvergence { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
