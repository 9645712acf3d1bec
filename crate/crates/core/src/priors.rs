//! Row priors and their Gaussian-observation denoisers.
//!
//! A denoiser returns the posterior mean and covariance of a row `x` given the
//! pseudo-observation `r = x + n`, `n ~ N_c(0, Qr)`.

use std::fmt::Debug;

use rand::{Rng, RngCore};

use crate::error::{Error, NumericsError};
use crate::mc::{run_chunks, MatrixAccumulator};
use crate::numerics::{
    ensure_psd, outer, psd_sqrt, standard_complex_vector, ComplexMatrix, HermitianCov, HermitianFactor, RowVector,
    DEFAULT_JITTER,
};

/// Posterior moments of one row.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub mean: RowVector,
    pub cov: HermitianCov,
    /// Posterior probability that the row is active (1 for non-sparse priors).
    pub activity: f64,
}

/// A denoiser specialised to a fixed noise covariance `Qr`.
pub trait PreparedPrior: Send + Sync {
    fn moments(&self, r: &RowVector) -> Posterior;
    /// `log P(r) = log E_x N_c(r | x, Qr)`.
    fn log_evidence(&self, r: &RowVector) -> f64;
}

/// An IID row prior. Implementations plug into the solver and the analysis
/// routines through this trait alone.
pub trait RowPrior: Send + Sync + Debug {
    fn dim(&self) -> usize;

    /// Second moment `E[x x^H]`.
    fn second_moment(&self) -> HermitianCov;

    fn prepare(&self, qr: &HermitianCov, jitter: f64) -> Result<Box<dyn PreparedPrior + '_>, NumericsError>;

    fn sample(&self, rng: &mut dyn RngCore) -> RowVector;

    fn posterior_moments(&self, r: &RowVector, qr: &HermitianCov) -> Result<Posterior, NumericsError> {
        Ok(self.prepare(qr, DEFAULT_JITTER)?.moments(r))
    }

    fn log_evidence(&self, r: &RowVector, qr: &HermitianCov) -> Result<f64, NumericsError> {
        Ok(self.prepare(qr, DEFAULT_JITTER)?.log_evidence(r))
    }

    /// `I(x; x + n)` with `n ~ N_c(0, precision^-1)` when known in closed form.
    fn mutual_information_closed(&self, _precision: &HermitianCov) -> Option<f64> {
        None
    }

    /// MMSE matrix for `r = x + n`, `n ~ N_c(0, qr)`, when known in closed form.
    fn mmse_closed(&self, _qr: &HermitianCov) -> Result<Option<HermitianCov>, NumericsError> {
        Ok(None)
    }
}

/// `rho N_c(0, Sigma_x) + (1 - rho) delta(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BernoulliGaussianPrior {
    rho: f64,
    sigma_x: HermitianCov,
    factor: ComplexMatrix,
}

impl BernoulliGaussianPrior {
    pub fn new(rho: f64, sigma_x: HermitianCov) -> Result<Self, Error> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1], got {rho}")));
        }
        if !sigma_x.is_psd() {
            return Err(NumericsError::NotPsd {
                min_eigenvalue: sigma_x.min_eigenvalue(),
            }
            .into());
        }
        let factor = psd_sqrt(&sigma_x);
        Ok(Self { rho, sigma_x, factor })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn sigma_x(&self) -> &HermitianCov {
        &self.sigma_x
    }
}

/// Zero-mean `N_c(0, Sigma_x)` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrior {
    inner: BernoulliGaussianPrior,
}

impl GaussianPrior {
    pub fn new(sigma_x: HermitianCov) -> Result<Self, Error> {
        Ok(Self {
            inner: BernoulliGaussianPrior::new(1.0, sigma_x)?,
        })
    }

    pub fn sigma_x(&self) -> &HermitianCov {
        &self.inner.sigma_x
    }
}

/// Precomputed quantities of the spike-and-slab posterior for one `Qr`.
struct MixtureKernel {
    rho: f64,
    /// `Sigma_x (Sigma_x + Qr)^-1`
    gain: ComplexMatrix,
    /// `(Qr^-1 + Sigma_x^-1)^-1`
    gamma: HermitianCov,
    slab: HermitianFactor,
    spike: Option<HermitianFactor>,
    jitter: f64,
}

impl MixtureKernel {
    fn new(rho: f64, sigma_x: &HermitianCov, qr: &HermitianCov, jitter: f64) -> Result<Self, NumericsError> {
        if qr.dim() != sigma_x.dim() {
            return Err(NumericsError::DimensionMismatch {
                expected: sigma_x.dim(),
                found: qr.dim(),
            });
        }
        let spike_factor = HermitianFactor::new(qr, jitter, "Qr")?;
        let slab = HermitianFactor::new(&sigma_x.add(qr), jitter, "Sigma_x+Qr")?;
        // Sigma_x S^-1 = (S^-1 Sigma_x)^H, and Gamma = Sigma_x S^-1 Qr needs no cancellation.
        let gain = slab.solve_mat(sigma_x.matrix()).adjoint();
        let gamma = HermitianCov::symmetrized(&gain * qr.matrix());
        let spike = (rho < 1.0).then_some(spike_factor);
        Ok(Self {
            rho,
            gain,
            gamma,
            slab,
            spike,
            jitter,
        })
    }

    fn log_weights(&self, r: &RowVector) -> (f64, f64) {
        let zero = RowVector::zeros(r.len());
        let l1 = self.rho.ln() + self.slab.log_density(r, &zero);
        let l0 = match &self.spike {
            Some(f) => (1.0 - self.rho).ln() + f.log_density(r, &zero),
            None => f64::NEG_INFINITY,
        };
        (l1, l0)
    }
}

impl PreparedPrior for MixtureKernel {
    fn moments(&self, r: &RowVector) -> Posterior {
        let m = r.len();
        let activity = if self.rho <= 0.0 {
            0.0
        } else if self.rho >= 1.0 {
            1.0
        } else {
            let (l1, l0) = self.log_weights(r);
            1.0 / (1.0 + (l0 - l1).exp())
        };
        if activity == 0.0 {
            return Posterior {
                mean: RowVector::zeros(m),
                cov: HermitianCov::zeros(m),
                activity,
            };
        }
        let p = &self.gain * r;
        let mean = &p * crate::numerics::c(activity);
        // C (Gamma + p p^H) - C^2 p p^H, written so both terms are PSD.
        let spread = outer(&p, &p) * crate::numerics::c(activity * (1.0 - activity));
        let cov = HermitianCov::symmetrized(self.gamma.matrix() * crate::numerics::c(activity) + spread);
        Posterior {
            mean,
            cov: ensure_psd(&cov, self.jitter),
            activity,
        }
    }

    fn log_evidence(&self, r: &RowVector) -> f64 {
        let (l1, l0) = self.log_weights(r);
        let hi = l1.max(l0);
        if hi == f64::NEG_INFINITY {
            return hi;
        }
        hi + ((l1 - hi).exp() + (l0 - hi).exp()).ln()
    }
}

impl RowPrior for BernoulliGaussianPrior {
    fn dim(&self) -> usize {
        self.sigma_x.dim()
    }

    fn second_moment(&self) -> HermitianCov {
        self.sigma_x.scale(self.rho)
    }

    fn prepare(&self, qr: &HermitianCov, jitter: f64) -> Result<Box<dyn PreparedPrior + '_>, NumericsError> {
        Ok(Box::new(MixtureKernel::new(self.rho, &self.sigma_x, qr, jitter)?))
    }

    fn sample(&self, rng: &mut dyn RngCore) -> RowVector {
        let u: f64 = rng.random();
        let g = standard_complex_vector(rng, self.dim());
        if u < self.rho {
            &self.factor * g
        } else {
            RowVector::zeros(self.dim())
        }
    }

    fn mutual_information_closed(&self, precision: &HermitianCov) -> Option<f64> {
        (self.rho >= 1.0).then(|| gaussian_mutual_information(&self.sigma_x, precision))
    }

    fn mmse_closed(&self, qr: &HermitianCov) -> Result<Option<HermitianCov>, NumericsError> {
        if self.rho < 1.0 {
            return Ok(None);
        }
        Ok(Some(MixtureKernel::new(1.0, &self.sigma_x, qr, DEFAULT_JITTER)?.gamma))
    }
}

impl RowPrior for GaussianPrior {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn second_moment(&self) -> HermitianCov {
        self.inner.sigma_x.clone()
    }

    fn prepare(&self, qr: &HermitianCov, jitter: f64) -> Result<Box<dyn PreparedPrior + '_>, NumericsError> {
        self.inner.prepare(qr, jitter)
    }

    fn sample(&self, rng: &mut dyn RngCore) -> RowVector {
        self.inner.sample(rng)
    }

    fn mutual_information_closed(&self, precision: &HermitianCov) -> Option<f64> {
        Some(gaussian_mutual_information(&self.inner.sigma_x, precision))
    }

    fn mmse_closed(&self, qr: &HermitianCov) -> Result<Option<HermitianCov>, NumericsError> {
        self.inner.mmse_closed(qr)
    }
}

/// `log det(I + Sigma_x B)` for a Gaussian row seen through precision `B`.
fn gaussian_mutual_information(sigma_x: &HermitianCov, precision: &HermitianCov) -> f64 {
    let root = psd_sqrt(sigma_x);
    let inner = HermitianCov::symmetrized(&root * precision.matrix() * &root)
        .add(&HermitianCov::identity(sigma_x.dim()));
    inner.eigenvalues().iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).sum()
}

/// The priors shipped with the crate.
#[derive(Clone, Debug, PartialEq)]
pub enum Prior {
    BernoulliGaussian(BernoulliGaussianPrior),
    Gaussian(GaussianPrior),
}

impl Prior {
    pub fn as_dyn(&self) -> &dyn RowPrior {
        match self {
            Prior::BernoulliGaussian(p) => p,
            Prior::Gaussian(p) => p,
        }
    }

    /// Activity probability `rho` (1 for the Gaussian prior).
    pub fn rho(&self) -> f64 {
        match self {
            Prior::BernoulliGaussian(p) => p.rho,
            Prior::Gaussian(_) => 1.0,
        }
    }

    pub fn sigma_x(&self) -> &HermitianCov {
        match self {
            Prior::BernoulliGaussian(p) => &p.sigma_x,
            Prior::Gaussian(p) => p.sigma_x(),
        }
    }

    /// The same prior family with `Sigma_x` replaced by its diagonal.
    pub fn diagonal_restricted(&self) -> Prior {
        let d = self.sigma_x().diagonal_part();
        match self {
            Prior::BernoulliGaussian(p) => {
                Prior::BernoulliGaussian(BernoulliGaussianPrior::new(p.rho, d).expect("diagonal of a PSD matrix is PSD"))
            }
            Prior::Gaussian(_) => Prior::Gaussian(GaussianPrior::new(d).expect("diagonal of a PSD matrix is PSD")),
        }
    }
}

impl RowPrior for Prior {
    fn dim(&self) -> usize {
        self.as_dyn().dim()
    }
    fn second_moment(&self) -> HermitianCov {
        self.as_dyn().second_moment()
    }
    fn prepare(&self, qr: &HermitianCov, jitter: f64) -> Result<Box<dyn PreparedPrior + '_>, NumericsError> {
        self.as_dyn().prepare(qr, jitter)
    }
    fn sample(&self, rng: &mut dyn RngCore) -> RowVector {
        self.as_dyn().sample(rng)
    }
    fn mutual_information_closed(&self, precision: &HermitianCov) -> Option<f64> {
        self.as_dyn().mutual_information_closed(precision)
    }
    fn mmse_closed(&self, qr: &HermitianCov) -> Result<Option<HermitianCov>, NumericsError> {
        self.as_dyn().mmse_closed(qr)
    }
}

/// Monte Carlo estimate of the MMSE matrix `E[(x - x_hat)(x - x_hat)^H]` for
/// the observation `r = x + n`, `n ~ N_c(0, Qr)`.
///
/// Each sample contributes the exact posterior covariance `Cov(x | r)`, and
/// the noise enters in antithetic pairs `(n, -n)`.
pub fn prior_mmse_mc(
    qr: &HermitianCov,
    prior: &dyn RowPrior,
    n_samples: usize,
    seed: u64,
) -> Result<MmseEstimate, NumericsError> {
    let m = prior.dim();
    let kernel = prior.prepare(qr, DEFAULT_JITTER)?;
    let noise = psd_sqrt(qr);
    let parts = run_chunks(n_samples.max(1), seed, |rng, count| {
        let mut acc = MatrixAccumulator::new(m);
        for _ in 0..count {
            let x = prior.sample(rng);
            let n = &noise * standard_complex_vector(rng, m);
            let a = kernel.moments(&(&x + &n));
            let b = kernel.moments(&(&x - &n));
            acc.push(&((a.cov.matrix() + b.cov.matrix()) * crate::numerics::c(0.5)));
        }
        acc
    });
    let mut total = MatrixAccumulator::new(m);
    for p in &parts {
        total.merge(p);
    }
    Ok(MmseEstimate {
        mmse: ensure_psd(&total.mean(), 0.0),
        trace_stderr: total.trace_stderr(),
    })
}

/// MMSE matrix with the standard error of its trace.
#[derive(Clone, Debug, PartialEq)]
pub struct MmseEstimate {
    pub mmse: HermitianCov,
    pub trace_stderr: f64,
}
