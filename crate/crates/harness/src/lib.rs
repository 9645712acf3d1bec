//! Experiment configuration, baselines, sweeps and figure data for `rowamp`.

pub mod baselines;
pub mod cli;
pub mod config;
pub mod experiment;
pub mod figures;
pub mod sweep;

use thiserror::Error;

pub use config::{AxisPoint, Estimator, ExperimentConfig, SweepAxes};
pub use experiment::{run_experiment, ExperimentOutput, MiRecord, ResultRecord};
pub use sweep::{sweep_phase_diagram, PhaseDiagram};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    /// Some requested output could not be produced.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Core(#[from] rowamp::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 2 for bad input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numerical(_) => 3,
            HarnessError::Core(e) if e.is_numerical() => 3,
            HarnessError::Core(rowamp::Error::Io(_)) | HarnessError::Io(_) => 1,
            HarnessError::Core(_) => 2,
        }
    }
}
