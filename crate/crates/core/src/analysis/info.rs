//! Input-output mutual information.

use serde::{Deserialize, Serialize};

use super::replica::{decoupled_information, free_energy, log_det, ReplicaSolution};
use super::AnalysisOptions;
use crate::channels::RowChannel;
use crate::error::{Error, NumericsError, Result};
use crate::mc::Estimate;
use crate::numerics::{ComplexMatrix, HermitianCov, HermitianFactor};
use crate::priors::RowPrior;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutualInformation {
    /// `I(X; Y | H) / N` in nats.
    pub per_row: Estimate,
    /// `I(X; Y | H)` for the configured `N`, in nats.
    pub total: Estimate,
}

impl MutualInformation {
    fn scaled(per_row: Estimate, n: usize) -> Self {
        let k = n as f64;
        Self {
            per_row,
            total: Estimate {
                value: per_row.value * k,
                stderr: per_row.stderr * k,
            },
        }
    }
}

/// Mutual information at a replica fixed point.
///
/// Additive Gaussian channels use
/// `I/N = I(x; r) + alpha (Tr(B_tilde Sigma_w) - log det(B_tilde Sigma_w) - M)`;
/// other channels use `I/N = F - alpha H(y | z)` and need a conditional entropy.
pub fn mutual_information(
    solution: &ReplicaSolution,
    alpha: f64,
    n: usize,
    prior: &dyn RowPrior,
    channel: &dyn RowChannel,
    opts: &AnalysisOptions,
) -> Result<MutualInformation> {
    let Some(h) = channel.conditional_entropy() else {
        return Err(Error::UnsupportedChannel(
            "mutual information needs the conditional output entropy".into(),
        ));
    };
    if let Some(sw) = channel.awgn_covariance() {
        let base = decoupled_information(&solution.b_tilde, prior, opts)?;
        let loss = mi_loss(&solution.b_tilde, sw, 1.0)?;
        let per_row = Estimate {
            value: base.value + alpha * loss,
            stderr: base.stderr,
        };
        return Ok(MutualInformation::scaled(per_row, n));
    }
    let f = match solution.free_energy {
        Some(f) => f,
        None => free_energy(solution, alpha, prior, channel, opts)?,
    };
    let per_row = Estimate {
        value: f.value - alpha * h,
        stderr: f.stderr,
    };
    Ok(MutualInformation::scaled(per_row, n))
}

/// Mutual information through the general free-energy route, `I/N = F - alpha H(y|z)`.
pub fn mutual_information_general(
    solution: &ReplicaSolution,
    alpha: f64,
    n: usize,
    prior: &dyn RowPrior,
    channel: &dyn RowChannel,
    opts: &AnalysisOptions,
) -> Result<MutualInformation> {
    let h = channel.conditional_entropy().ok_or_else(|| {
        Error::UnsupportedChannel("mutual information needs the conditional output entropy".into())
    })?;
    let f = free_energy(solution, alpha, prior, channel, opts)?;
    Ok(MutualInformation::scaled(
        Estimate {
            value: f.value - alpha * h,
            stderr: f.stderr,
        },
        n,
    ))
}

/// Information lost by the decoupled channel relative to the physical noise,
/// `scale * (Tr(B_tilde Sigma_w) - log det(B_tilde Sigma_w) - M)`; a
/// Gaussian relative entropy, hence non-negative.
pub fn mi_loss(b_tilde: &HermitianCov, sigma_w: &HermitianCov, scale: f64) -> Result<f64, NumericsError> {
    let m = b_tilde.dim() as f64;
    let tr = (b_tilde.matrix() * sigma_w.matrix()).trace().re;
    let ld = log_det(b_tilde) + log_det(sigma_w);
    Ok(scale * (tr - ld - m))
}

/// Exact `I(X; Y | H)` for Gaussian rows and additive Gaussian noise:
/// `log det(I (x) Sigma_w + (H H^H) (x) Sigma_x) - L log det(Sigma_w)`.
pub fn exact_gaussian_mutual_information(
    h: &ComplexMatrix,
    sigma_x: &HermitianCov,
    sigma_w: &HermitianCov,
) -> Result<f64, NumericsError> {
    let l = h.nrows();
    let m = sigma_x.dim();
    let hh = h * h.adjoint();
    let big = ComplexMatrix::from_fn(l * m, l * m, |i, j| {
        let (bi, ii) = (i / m, i % m);
        let (bj, jj) = (j / m, j % m);
        let noise = if bi == bj { sigma_w.matrix()[(ii, jj)] } else { Default::default() };
        noise + hh[(bi, bj)] * sigma_x.matrix()[(ii, jj)]
    });
    let total = HermitianFactor::new(&HermitianCov::symmetrized(big), 0.0, "output covariance")?;
    let noise = HermitianFactor::new(sigma_w, 0.0, "Sigma_w")?;
    Ok(total.log_det() - l as f64 * noise.log_det())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::replica::{replica_fixed_point, ReplicaOptions};
    use crate::channels::{AwgnRowChannel, QuantizedRowChannel};
    use crate::mc::McOptions;
    use crate::numerics::standard_complex_normal;
    use crate::priors::GaussianPrior;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> HermitianCov {
        HermitianCov::from_real_diagonal(&[v])
    }

    fn opts() -> ReplicaOptions {
        ReplicaOptions {
            tol: 1e-12,
            analysis: AnalysisOptions {
                mc: McOptions::uniform(2000, 1),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn huge_noise_carries_no_information() {
        let prior = GaussianPrior::new(HermitianCov::identity(2)).unwrap();
        let ch = AwgnRowChannel::new(HermitianCov::scaled_identity(2, 1e8)).unwrap();
        let o = opts();
        let sol = replica_fixed_point(1.0, &prior, &ch, &o).unwrap();
        let mi = mutual_information(&sol, 1.0, 64, &prior, &ch, &o.analysis).unwrap();
        assert!(mi.total.value.abs() < 1e-5);
    }

    #[test]
    fn scalar_loss_is_a_divergence() {
        for eta in [0.3, 1.0, 2.5] {
            let loss = mi_loss(&scalar(eta / 0.2), &scalar(0.2), 16.0).unwrap();
            assert_relative_eq!(loss, 16.0 * (eta - 1.0 - f64::ln(eta)), epsilon = 1e-12);
            assert!(loss >= 0.0);
        }
        assert!(mi_loss(&scalar(5.0), &scalar(0.2), 1.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn general_and_awgn_routes_agree() {
        let prior = GaussianPrior::new(HermitianCov::from_real_diagonal(&[0.7, 0.3])).unwrap();
        let ch = AwgnRowChannel::new(HermitianCov::from_real_diagonal(&[0.05, 0.1])).unwrap();
        let o = opts();
        let sol = replica_fixed_point(0.8, &prior, &ch, &o).unwrap();
        let a = mutual_information(&sol, 0.8, 10, &prior, &ch, &o.analysis).unwrap();
        let b = mutual_information_general(&sol, 0.8, 10, &prior, &ch, &o.analysis).unwrap();
        assert_relative_eq!(a.per_row.value, b.per_row.value, epsilon = 1e-8);
    }

    #[test]
    fn quantized_channel_is_unsupported() {
        let prior = GaussianPrior::new(scalar(1.0)).unwrap();
        let ch = QuantizedRowChannel::new(1, 2, 1.0, 0.1).unwrap();
        let sol = replica_fixed_point(1.0, &prior, &ch, &opts()).unwrap();
        let err = mutual_information(&sol, 1.0, 4, &prior, &ch, &AnalysisOptions::default()).unwrap_err();
        assert!(matches!(err, Error::UnsupportedChannel(_)));
    }

    #[test]
    fn exact_log_det_matches_scalar_formula() {
        // L = N = 1, M = 1: I = log(1 + |h|^2 sx / sw).
        let h = ComplexMatrix::from_element(1, 1, num_complex::Complex64::new(0.6, -0.8));
        let v = exact_gaussian_mutual_information(&h, &scalar(2.0), &scalar(0.5)).unwrap();
        assert_relative_eq!(v, (1.0f64 + 4.0).ln(), epsilon = 1e-12);
    }

    #[test]
    fn exact_log_det_matches_kronecker_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = ComplexMatrix::from_fn(3, 2, |_, _| standard_complex_normal(&mut rng));
        let sx = HermitianCov::symmetrized(ComplexMatrix::from_fn(2, 2, |i, j| {
            num_complex::Complex64::new(if i == j { 1.0 } else { 0.4 }, 0.0)
        }));
        let sw = HermitianCov::from_real_diagonal(&[0.3, 0.2]);
        // Row-major vec(Y) = (H (x) I) vec(X) + vec(W).
        let ht = ComplexMatrix::from_fn(6, 4, |i, j| {
            if i % 2 == j % 2 {
                h[(i / 2, j / 2)]
            } else {
                Default::default()
            }
        });
        let sxt = ComplexMatrix::from_fn(4, 4, |i, j| {
            if i / 2 == j / 2 {
                sx.matrix()[(i % 2, j % 2)]
            } else {
                Default::default()
            }
        });
        let swt = ComplexMatrix::from_fn(6, 6, |i, j| {
            if i / 2 == j / 2 {
                sw.matrix()[(i % 2, j % 2)]
            } else {
                Default::default()
            }
        });
        let cov = &swt + &ht * sxt * ht.adjoint();
        let expect = cov.determinant().re.ln() - swt.determinant().re.ln();
        let v = exact_gaussian_mutual_information(&h, &sx, &sw).unwrap();
        assert_relative_eq!(v, expect, epsilon = 1e-10);
    }
}
