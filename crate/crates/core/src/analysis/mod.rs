//! Large-system predictions for the row-wise GLM.
//!
//! State evolution and the replica fixed point share one update map: given a
//! row MMSE matrix `D`, the channel side produces the equivalent noise
//! covariance `Qr` of the decoupled channel `r = x + n`, and the prior side
//! returns the MMSE of that channel. [`channel_step`] is the channel half.

pub mod info;
pub mod replica;
pub mod se;

use serde::{Deserialize, Serialize};

use crate::channels::RowChannel;
use crate::error::NumericsError;
use crate::mc::{run_chunks, McOptions, MatrixAccumulator};
use crate::numerics::{
    c, ensure_psd, psd_sqrt, standard_complex_vector, HermitianCov, HermitianFactor, RowVector, DEFAULT_JITTER,
    HERMITIAN_TOL,
};
use crate::priors::{prior_mmse_mc, RowPrior};

pub use info::{exact_gaussian_mutual_information, mi_loss, mutual_information, MutualInformation};
pub use replica::{free_energy, replica_fixed_point, select_branch, ReplicaOptions, ReplicaSolution};
pub use se::{se_fixed_point, se_init, se_step, se_trajectory, SeState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    pub mc: McOptions,
    /// Use `Qr = Sigma_w + D / alpha` when the channel is additive Gaussian.
    pub closed_form: bool,
    pub jitter: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            mc: McOptions::default(),
            closed_form: true,
            jitter: DEFAULT_JITTER,
        }
    }
}

/// Output of the channel half of the update map.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStep {
    /// Equivalent noise covariance of the decoupled channel.
    pub qr: HermitianCov,
    /// Mean posterior covariance of `z`.
    pub qz_tilde: HermitianCov,
    /// Standard error of `Tr(qz_tilde)` (zero in closed form).
    pub stderr: f64,
}

/// Mean posterior covariance `E[Cov(z | y, a)]` with `a = B^{1/2} zeta / sqrt(alpha)`,
/// `z ~ N_c(a, A')`, `y ~ P(y | z)`.
pub fn mean_channel_posterior_cov(
    b: &HermitianCov,
    a_prime: &HermitianCov,
    alpha: f64,
    channel: &dyn RowChannel,
    n_samples: usize,
    seed: u64,
    jitter: f64,
) -> Result<(HermitianCov, f64), NumericsError> {
    let m = b.dim();
    let kernel = channel.prepare(a_prime, jitter)?;
    let mean_root = psd_sqrt(b) * c(1.0 / alpha.sqrt());
    let spread_root = psd_sqrt(a_prime);
    let parts = run_chunks(n_samples.max(1), seed, |rng, count| {
        let mut acc = MatrixAccumulator::new(m);
        for _ in 0..count {
            let a: RowVector = &mean_root * standard_complex_vector(rng, m);
            let z = &a + &spread_root * standard_complex_vector(rng, m);
            let y = channel.sample(&z, rng);
            acc.push(kernel.moments(&y, &a).cov.matrix());
        }
        acc
    });
    let mut total = MatrixAccumulator::new(m);
    for p in &parts {
        total.merge(p);
    }
    Ok((total.mean(), total.trace_stderr()))
}

/// Monte Carlo estimate of `B_z = E[z_hat z_hat^H]` for the effective channel
/// with mean covariance `B / alpha` and spread `(A - B) / alpha`, evaluated as
/// `A / alpha - E[Cov(z | y)]`.
pub fn channel_bz_mc(
    b: &HermitianCov,
    a: &HermitianCov,
    alpha: f64,
    channel: &dyn RowChannel,
    n_samples: usize,
    seed: u64,
) -> Result<HermitianCov, NumericsError> {
    let spread = ensure_psd(&a.sub(b), 0.0).scale(1.0 / alpha);
    let (qzt, _) = mean_channel_posterior_cov(b, &spread, alpha, channel, n_samples, seed, DEFAULT_JITTER)?;
    Ok(HermitianCov::symmetrized(a.scale(1.0 / alpha).sub(&qzt).into_matrix()))
}

/// With real input covariances the law is invariant under conjugation, so the
/// exact integral is real; dropping the imaginary part of a Monte Carlo
/// estimate is the same as averaging each draw with its conjugate.
pub(crate) fn real_if(cov: HermitianCov, real: bool) -> HermitianCov {
    if real {
        HermitianCov::symmetrized(cov.matrix().map(|v| c(v.re)))
    } else {
        cov
    }
}

pub(crate) fn is_real(cov: &HermitianCov) -> bool {
    cov.max_imag() <= HERMITIAN_TOL
}

fn restrict_if(cov: HermitianCov, diagonal: bool) -> HermitianCov {
    if diagonal {
        cov.diagonal_part()
    } else {
        cov
    }
}

/// Channel half of the update map for the row MMSE matrix `d`:
/// `Qr = D (alpha D - alpha^2 Qz_tilde)^-1 D`, or `Sigma_w + D / alpha` in closed form.
pub fn channel_step(
    d: &HermitianCov,
    xi: &HermitianCov,
    alpha: f64,
    channel: &dyn RowChannel,
    opts: &AnalysisOptions,
) -> Result<ChannelStep, NumericsError> {
    let m = d.dim();
    let diagonal = channel.requires_diagonal();
    let d = restrict_if(ensure_psd(d, 0.0), diagonal);
    if d.trace() <= 0.0 {
        return Ok(ChannelStep {
            qr: HermitianCov::zeros(m),
            qz_tilde: HermitianCov::zeros(m),
            stderr: 0.0,
        });
    }
    let spread = d.scale(1.0 / alpha);
    if opts.closed_form {
        if let Some(sw) = channel.awgn_covariance() {
            let qzt = channel.prepare(&spread, opts.jitter)?.moments(&RowVector::zeros(m), &RowVector::zeros(m)).cov;
            return Ok(ChannelStep {
                qr: sw.add(&spread),
                qz_tilde: qzt,
                stderr: 0.0,
            });
        }
    }
    let b = ensure_psd(&xi.sub(&d), 0.0);
    let (qzt, stderr) = mean_channel_posterior_cov(
        &b,
        &spread,
        alpha,
        channel,
        opts.mc.channel_samples,
        opts.mc.seed,
        opts.jitter,
    )?;
    let real = is_real(&d) && is_real(xi) && is_real(channel.noise_covariance());
    let qzt = restrict_if(real_if(qzt, real), diagonal);
    let inner = ensure_psd(
        &HermitianCov::symmetrized((d.matrix() - qzt.matrix() * c(alpha)) * c(alpha)),
        opts.jitter,
    );
    let fac = HermitianFactor::new(&inner, opts.jitter, "alpha D - alpha^2 Qz_tilde")?;
    let qr = HermitianCov::symmetrized(d.matrix() * fac.solve_mat(d.matrix()));
    Ok(ChannelStep {
        qr: restrict_if(ensure_psd(&qr, opts.jitter), diagonal),
        qz_tilde: qzt,
        stderr,
    })
}

/// `B = Xi_x - MMSE(B_tilde^-1)`.
pub fn prior_b_mc(
    b_tilde: &HermitianCov,
    prior: &dyn RowPrior,
    n_samples: usize,
    seed: u64,
) -> Result<HermitianCov, NumericsError> {
    let qr = HermitianFactor::new(b_tilde, DEFAULT_JITTER, "B_tilde")?.inverse();
    let mmse = prior_mmse_mc(&qr, prior, n_samples, seed)?.mmse;
    Ok(prior.second_moment().sub(&mmse))
}

/// MMSE matrix of the decoupled channel with precision `B_tilde`, and its
/// per-entry trace `Tr / M`.
pub fn single_vector_mmse(
    b_tilde: &HermitianCov,
    prior: &dyn RowPrior,
    mc: &McOptions,
) -> Result<(HermitianCov, f64), NumericsError> {
    let b = prior_b_mc(b_tilde, prior, mc.prior_samples, mc.seed)?;
    let mmse = ensure_psd(&prior.second_moment().sub(&b), 0.0);
    let mse = mmse.trace() / mmse.dim() as f64;
    Ok((mmse, mse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{AwgnRowChannel, QuantizedRowChannel};
    use crate::priors::{BernoulliGaussianPrior, GaussianPrior};
    use approx::assert_relative_eq;

    fn scalar(v: f64) -> HermitianCov {
        HermitianCov::from_real_diagonal(&[v])
    }

    #[test]
    fn awgn_bz_matches_decoupled_noise_identity() {
        let a = HermitianCov::from_real_diagonal(&[1.0, 0.6]);
        let b = HermitianCov::from_real_diagonal(&[0.7, 0.2]);
        let sw = HermitianCov::from_real_diagonal(&[0.1, 0.3]);
        let alpha = 0.5;
        let ch = AwgnRowChannel::new(sw.clone()).unwrap();
        let bz = channel_bz_mc(&b, &a, alpha, &ch, 4000, 1).unwrap();
        // B_tilde = D^-1 (alpha^2 Bz - alpha B) D^-1 with D = A - B.
        let d = a.sub(&b);
        let di = HermitianFactor::new(&d, 0.0, "D").unwrap().inverse();
        let bt = di.matrix() * (bz.matrix() * c(alpha * alpha) - b.matrix() * c(alpha)) * di.matrix();
        let bt_inv = HermitianFactor::new(&HermitianCov::symmetrized(bt), 0.0, "Bt").unwrap().inverse();
        let expect = sw.add(&d.scale(1.0 / alpha));
        assert!((bt_inv.matrix() - expect.matrix()).norm() < 1e-10);
    }

    #[test]
    fn uninformative_channel_gives_zero_bz() {
        let ch = QuantizedRowChannel::new(1, 0, 1.0, 0.5).unwrap();
        let bz = channel_bz_mc(&scalar(0.0), &scalar(1.0), 0.5, &ch, 2000, 3).unwrap();
        assert!(bz.frobenius() < 1e-12);
    }

    #[test]
    fn scalar_awgn_bz_matches_quadrature() {
        // A = 1, B = 0.5, alpha = 0.5, sigma_w^2 = 0.1; a ~ CN(0, 1), z | a ~ CN(a, 1).
        let (a, b, alpha, sw) = (1.0, 0.5, 0.5, 0.1);
        let ch = AwgnRowChannel::new(scalar(sw)).unwrap();
        let bz = channel_bz_mc(&scalar(b), &scalar(a), alpha, &ch, 40_000, 9).unwrap();
        // Quadrature over the radial density of |z_hat|^2: z_hat = a + k (y - a),
        // with y - a ~ CN(0, s + sw), a ~ CN(0, b / alpha); both enter radially.
        let s = (a - b) / alpha;
        let k = s / (s + sw);
        let (va, vy) = (b / alpha, s + sw);
        let h = 1e-3;
        let mut total = 0.0;
        for i in 0..20_000 {
            for (var, weight) in [(va, 1.0), (vy, k * k)] {
                let r = (i as f64 + 0.5) * h * var.sqrt();
                let dens = 2.0 * r * (-r * r / var).exp() / var;
                total += weight * r * r * dens * h * var.sqrt();
            }
        }
        assert_relative_eq!(bz.matrix()[(0, 0)].re, total, max_relative = 1e-3);
    }

    #[test]
    fn prior_b_closed_forms() {
        let sx = HermitianCov::from_real_diagonal(&[1.0, 2.0]);
        let bt = HermitianCov::from_real_diagonal(&[3.0, 0.5]);
        let g = GaussianPrior::new(sx).unwrap();
        let b = prior_b_mc(&bt, &g, 5000, 1).unwrap();
        // Sigma_x - (Sigma_x^-1 + B_tilde)^-1
        let expect = [1.0 - 1.0 / 4.0, 2.0 - 1.0 / 1.0];
        for (i, v) in expect.iter().enumerate() {
            assert_relative_eq!(b.matrix()[(i, i)].re, *v, epsilon = 1e-12);
        }
        let bg = BernoulliGaussianPrior::new(0.3, HermitianCov::identity(2)).unwrap();
        let none = prior_b_mc(&HermitianCov::scaled_identity(2, 1e-9), &bg, 20_000, 2).unwrap();
        assert!(none.frobenius() < 1e-3);
        let off = BernoulliGaussianPrior::new(0.0, HermitianCov::identity(2)).unwrap();
        assert_eq!(prior_b_mc(&bt, &off, 100, 2).unwrap(), HermitianCov::zeros(2));
    }

    #[test]
    fn single_vector_mmse_properties() {
        let off = BernoulliGaussianPrior::new(0.0, HermitianCov::identity(2)).unwrap();
        let mc = McOptions::uniform(1000, 4);
        assert_eq!(single_vector_mmse(&HermitianCov::identity(2), &off, &mc).unwrap().1, 0.0);
        let g = GaussianPrior::new(HermitianCov::identity(1)).unwrap();
        let (_, mse) = single_vector_mmse(&scalar(4.0), &g, &mc).unwrap();
        assert_relative_eq!(mse, 1.0 / 5.0, epsilon = 1e-12);
        let bg = BernoulliGaussianPrior::new(0.2, HermitianCov::identity(2)).unwrap();
        let mc = McOptions::uniform(20_000, 4);
        let low = single_vector_mmse(&HermitianCov::scaled_identity(2, 2.0), &bg, &mc).unwrap().1;
        let high = single_vector_mmse(&HermitianCov::scaled_identity(2, 8.0), &bg, &mc).unwrap().1;
        assert!(high < low);
    }

    #[test]
    fn closed_and_mc_channel_steps_agree_for_awgn() {
        let xi = HermitianCov::from_real_diagonal(&[0.2, 0.1]);
        let d = HermitianCov::from_real_diagonal(&[0.05, 0.04]);
        let ch = AwgnRowChannel::new(HermitianCov::from_real_diagonal(&[0.02, 0.03])).unwrap();
        let closed = channel_step(&d, &xi, 0.5, &ch, &AnalysisOptions::default()).unwrap();
        let mc_opts = AnalysisOptions {
            closed_form: false,
            ..Default::default()
        };
        let mc = channel_step(&d, &xi, 0.5, &ch, &mc_opts).unwrap();
        assert!((closed.qr.matrix() - mc.qr.matrix()).norm() < 1e-10);
    }
}
