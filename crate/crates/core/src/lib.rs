//! Message passing and asymptotic analysis for generalized linear models
//! `Y ~ P(Y | HX)` whose unknown `X` has IID rows.
//!
//! * [`ep`] runs the row-wise expectation-propagation estimator.
//! * [`analysis`] provides state evolution, the replica fixed point, free
//!   energy and mutual information.
//! * [`priors`] and [`channels`] hold the row denoisers and output channels.

pub mod analysis;
pub mod channels;
pub mod ep;
pub mod error;
pub mod mc;
pub mod model;
pub mod numerics;
pub mod priors;
mod special;

pub use channels::{AwgnRowChannel, Channel, ChannelPosterior, QuantizedRowChannel, RowChannel};
pub use ep::{ep_init, ep_iteration, ep_run, EpOutput, EpState, SolverMode, SolverOptions, Trajectory};
pub use error::{Error, NumericsError, Result};
pub use model::{ProblemInstance, ResolvedModel, ResultMetrics, SystemConfig};
pub use numerics::{ComplexMatrix, HermitianCov, RowVector};
pub use priors::{BernoulliGaussianPrior, GaussianPrior, Posterior, Prior, RowPrior};
