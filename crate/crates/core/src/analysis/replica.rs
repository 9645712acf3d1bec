//! Replica-symmetric fixed point and free energy.
//!
//! The order parameters are `A = Xi_x`, `B`, the decoupled-channel precision
//! `B_tilde` and `B_z`. With `D = A - B` the map reads
//! `B_tilde^-1 = D (alpha D - alpha^2 E[Cov(z|y)])^-1 D` and
//! `B = Xi_x - MMSE(B_tilde^-1)`, the same map as state evolution.

use serde::{Deserialize, Serialize};

use super::se::prior_step;
use super::{channel_step, AnalysisOptions};
use crate::channels::RowChannel;
use crate::error::{Error, NumericsError};
use crate::mc::{run_chunks, Estimate, ScalarAccumulator};
use crate::numerics::{c, ensure_psd, psd_sqrt, standard_complex_vector, HermitianCov, HermitianFactor, RowVector};
use crate::priors::RowPrior;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicaOptions {
    pub damping: f64,
    /// Relative Frobenius tolerance on successive `B`.
    pub tol: f64,
    pub max_iters: usize,
    pub analysis: AnalysisOptions,
}

impl Default for ReplicaOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-8,
            max_iters: 1000,
            analysis: AnalysisOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSolution {
    pub a: HermitianCov,
    pub b: HermitianCov,
    pub b_tilde: HermitianCov,
    pub bz: HermitianCov,
    /// `A - B`
    pub mmse: HermitianCov,
    /// `Tr(A - B) / M`
    pub mse: f64,
    pub free_energy: Option<Estimate>,
    pub mutual_info: Option<Estimate>,
    pub iterations: usize,
    /// Final relative change of `B`.
    pub residual: f64,
    /// Index of the initialization this branch came from.
    pub start: usize,
}

impl ReplicaSolution {
    /// `B_tilde^-1`, the equivalent noise covariance.
    pub fn noise_covariance(&self) -> Result<HermitianCov, NumericsError> {
        Ok(HermitianFactor::new(&self.b_tilde, 0.0, "B_tilde")?.inverse())
    }
}

struct MapOutput {
    b_new: HermitianCov,
    qr: HermitianCov,
    bz: HermitianCov,
    /// Combined trace standard error of both integrals.
    stderr: f64,
}

fn replica_map(
    b: &HermitianCov,
    xi: &HermitianCov,
    alpha: f64,
    prior: &dyn RowPrior,
    channel: &dyn RowChannel,
    opts: &AnalysisOptions,
) -> Result<MapOutput, NumericsError> {
    let d = ensure_psd(&xi.sub(b), 0.0);
    let step = channel_step(&d, xi, alpha, channel, opts)?;
    let (mmse, stderr) = prior_step(&step.qr, prior, opts)?;
    let bz = HermitianCov::symmetrized(xi.scale(1.0 / alpha).sub(&step.qz_tilde).into_matrix());
    Ok(MapOutput {
        b_new: xi.sub(&mmse),
        qr: step.qr,
        bz,
        stderr: stderr * xi.dim() as f64 + alpha * step.stderr,
    })
}

/// Damped Picard iteration from `B = 0` and `B = (1 - 1e-3) Xi_x`; returns the
/// converged branch of least free energy.
pub fn replica_fixed_point(
    alpha: f64,
    prior: &dyn RowPrior,
    channel: &dyn RowChannel,
    options: &ReplicaOptions,
) -> Result<ReplicaSolution, Error> {
    let xi = prior.second_moment();
    let m = xi.dim();
    let starts = [HermitianCov::zeros(m), xi.scale(1.0 - 1e-3)];
    let mut branches = Vec::new();
    let mut residuals = Vec::new();
    for (idx, b0) in starts.iter().enumerate() {
        match solve_from(b0.clone(), idx, alpha, prior, channel, options)? {
            Ok(sol) => branches.push(sol),
            Err(res) => residuals.push(res),
        }
    }
    if branches.is_empty() {
        return Err(Error::NonConvergence { residuals });
    }
    for sol in &mut branches {
        sol.free_energy = Some(free_energy(sol, alpha, prior, channel, &options.analysis)?);
    }
    let best = select_branch(&branches).expect("at least one branch");
    Ok(branches.swap_remove(best))
}

fn solve_from(
    mut b: HermitianCov,
    start: usize,
    alpha: f64,
    prior: &dyn RowPrior,
    channel: &dyn RowChannel,
    options: &ReplicaOptions,
) -> Result<Result<ReplicaSolution, f64>, Error> {
    let xi = prior.second_moment();
    let m = xi.dim();
    let scale = xi.frobenius().max(f64::MIN_POSITIVE);
    let theta = options.damping;
    let mut residual = f64::INFINITY;
    let mut previous = f64::INFINITY;
    for k in 0..options.max_iters {
        let out = replica_map(&b, &xi, alpha, prior, channel, &options.analysis)
            .map_err(|source| Error::StateEvolution { step: k, source })?;
        let next = out.b_new.blend(theta, &b, 1.0 - theta);
        residual = next.sub(&b).frobenius() / scale;
        // With common random numbers the quantized map is piecewise constant,
        // so once below the Monte Carlo resolution the steps stop shrinking.
        let mc_floor = 3.0 * out.stderr / scale;
        let stalled = residual < mc_floor && residual >= previous;
        previous = residual;
        if residual < options.tol || stalled {
            let b_tilde = if out.qr.trace() > 0.0 {
                HermitianFactor::new(&out.qr, options.analysis.jitter, "B_tilde^-1")?.inverse()
            } else {
                HermitianCov::zeros(m)
            };
            let mmse = ensure_psd(&xi.sub(&next), 0.0);
            return Ok(Ok(ReplicaSolution {
                a: xi.clone(),
                mse: mmse.trace() / m as f64,
                b: next,
                b_tilde,
                bz: out.bz,
                mmse,
                free_energy: None,
                mutual_info: None,
                iterations: k + 1,
                residual,
                start,
            }));
        }
        b = next;
    }
    Ok(Err(residual))
}

/// Index of the branch with the smallest free energy.
pub fn select_branch(branches: &[ReplicaSolution]) -> Option<usize> {
    branches
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.free_energy.map(|f| (i, f.value)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// `E[log P(r)]` for `r = x + n`, `n ~ N_c(0, B_tilde^-1)`.
fn mean_log_evidence(
    b_tilde: &HermitianCov,
    prior: &dyn RowPrior,
    opts: &AnalysisOptions,
) -> Result<Estimate, NumericsError> {
    let m = b_tilde.dim() as f64;
    if let Some(i) = prior.mutual_information_closed(b_tilde) {
        // I(x; r) = -E log P(r) - M log pi + log det B_tilde - M
        return Ok(Estimate {
            value: -i - m * std::f64::consts::PI.ln() + log_det(b_tilde) - m,
            stderr: 0.0,
        });
    }
    let qr = HermitianFactor::new(b_tilde, opts.jitter, "B_tilde")?.inverse();
    let kernel = prior.prepare(&qr, opts.jitter)?;
    let noise = psd_sqrt(&qr);
    let dim = b_tilde.dim();
    let parts = run_chunks(opts.mc.prior_samples.max(1), opts.mc.seed ^ 0x1f, |rng, count| {
        let mut acc = ScalarAccumulator::default();
        for _ in 0..count {
            let x = prior.sample(rng);
            let r = x + &noise * standard_complex_vector(rng, dim);
            acc.push(kernel.log_evidence(&r));
        }
        acc
    });
    Ok(merge(&parts))
}

/// `E[log v(y)]` over the effective channel with mean covariance `B / alpha`
/// and spread `D / alpha`.
fn mean_log_marginal(
    b: &HermitianCov,
    d: &HermitianCov,
    alpha: f64,
    channel: &dyn RowChannel,
    opts: &AnalysisOptions,
) -> Result<Estimate, NumericsError> {
    let m = b.dim();
    let spread = d.scale(1.0 / alpha);
    if let Some(sw) = channel.awgn_covariance() {
        let total = spread.add(sw);
        return Ok(Estimate {
            value: -(m as f64) * (std::f64::consts::PI * std::f64::consts::E).ln() - log_det(&total),
            stderr: 0.0,
        });
    }
    let kernel = channel.prepare(&spread, opts.jitter)?;
    let mean_root = psd_sqrt(b) * c(1.0 / alpha.sqrt());
    let spread_root = psd_sqrt(&spread);
    let parts = run_chunks(opts.mc.channel_samples.max(1), opts.mc.seed ^ 0x2f, |rng, count| {
        let mut acc = ScalarAccumulator::default();
        for _ in 0..count {
            let a: RowVector = &mean_root * standard_complex_vector(rng, m);
            let z = &a + &spread_root * standard_complex_vector(rng, m);
            let y = channel.sample(&z, rng);
            acc.push(kernel.log_marginal(&y, &a));
        }
        acc
    });
    Ok(merge(&parts))
}

fn merge(parts: &[ScalarAccumulator]) -> Estimate {
    let mut total = ScalarAccumulator::default();
    for p in parts {
        total.merge(p);
    }
    Estimate::from(&total)
}

pub(crate) fn log_det(cov: &HermitianCov) -> f64 {
    cov.eigenvalues().iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).sum()
}

/// Per-row free energy
/// `F = -(E log P(r) + M log pi - log det B_tilde + M) - Tr((A - B) B_tilde) - alpha E[log v]`.
pub fn free_energy(
    solution: &ReplicaSolution,
    alpha: f64,
    prior: &dyn RowPrior,
    channel: &dyn RowChannel,
    opts: &AnalysisOptions,
) -> Result<Estimate, Error> {
    let m = solution.a.dim() as f64;
    let evidence = mean_log_evidence(&solution.b_tilde, prior, opts)?;
    let marginal = mean_log_marginal(&solution.b, &solution.mmse, alpha, channel, opts)?;
    let first = evidence.value + m * std::f64::consts::PI.ln() - log_det(&solution.b_tilde) + m;
    let coupling = (solution.mmse.matrix() * solution.b_tilde.matrix()).trace().re;
    Ok(Estimate {
        value: -first - coupling - alpha * marginal.value,
        stderr: (evidence.stderr.powi(2) + (alpha * marginal.stderr).powi(2)).sqrt(),
    })
}

/// `I(x; r)` of the decoupled channel, closed form when the prior provides one.
pub(crate) fn decoupled_information(
    b_tilde: &HermitianCov,
    prior: &dyn RowPrior,
    opts: &AnalysisOptions,
) -> Result<Estimate, NumericsError> {
    if let Some(v) = prior.mutual_information_closed(b_tilde) {
        return Ok(Estimate { value: v, stderr: 0.0 });
    }
    let m = b_tilde.dim() as f64;
    let e = mean_log_evidence(b_tilde, prior, opts)?;
    Ok(Estimate {
        value: -e.value - m * std::f64::consts::PI.ln() + log_det(b_tilde) - m,
        stderr: e.stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::AwgnRowChannel;
    use crate::mc::McOptions;
    use crate::priors::{BernoulliGaussianPrior, GaussianPrior};
    use approx::assert_relative_eq;

    fn scalar(v: f64) -> HermitianCov {
        HermitianCov::from_real_diagonal(&[v])
    }

    fn bisection(alpha: f64, sx: f64, sw: f64) -> f64 {
        let f = |q: f64| sw + (1.0 / alpha) / (1.0 / sx + 1.0 / q) - q;
        let (mut lo, mut hi) = (sw, sw + sx / alpha + 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn tight() -> ReplicaOptions {
        ReplicaOptions {
            tol: 1e-14,
            max_iters: 5000,
            analysis: AnalysisOptions {
                mc: McOptions::uniform(2000, 3),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn scalar_gaussian_matches_bisection() {
        let prior = GaussianPrior::new(scalar(1.0)).unwrap();
        let ch = AwgnRowChannel::new(scalar(0.1)).unwrap();
        let sol = replica_fixed_point(0.5, &prior, &ch, &tight()).unwrap();
        let q = bisection(0.5, 1.0, 0.1);
        assert_relative_eq!(sol.noise_covariance().unwrap().matrix()[(0, 0)].re, q, epsilon = 1e-8);
    }

    #[test]
    fn awgn_fixed_point_residual() {
        let prior = BernoulliGaussianPrior::new(0.1, HermitianCov::from_real_diagonal(&[1.0, 0.5])).unwrap();
        let sw = HermitianCov::from_real_diagonal(&[0.01, 0.02]);
        let ch = AwgnRowChannel::new(sw.clone()).unwrap();
        let opts = ReplicaOptions {
            analysis: AnalysisOptions {
                mc: McOptions::uniform(4000, 5),
                ..Default::default()
            },
            ..Default::default()
        };
        let sol = replica_fixed_point(0.5, &prior, &ch, &opts).unwrap();
        let inv = sol.noise_covariance().unwrap();
        let resid = inv.sub(&sw).sub(&sol.mmse.scale(2.0)).frobenius() / inv.frobenius();
        assert!(resid < 1e-6, "{resid:e}");
        assert!(sol.a.max_imag() < 1e-10 && sol.b.max_imag() < 1e-10);
    }

    #[test]
    fn branch_selection_is_offset_invariant() {
        let prior = GaussianPrior::new(scalar(1.0)).unwrap();
        let ch = AwgnRowChannel::new(scalar(0.1)).unwrap();
        let base = replica_fixed_point(0.5, &prior, &ch, &tight()).unwrap();
        let mut branches = vec![base.clone(), base.clone(), base];
        for (s, f) in branches.iter_mut().zip([0.3, -0.2, 0.1]) {
            s.free_energy = Some(Estimate { value: f, stderr: 0.0 });
        }
        assert_eq!(select_branch(&branches), Some(1));
        for s in &mut branches {
            s.free_energy.as_mut().unwrap().value += 17.5;
        }
        assert_eq!(select_branch(&branches), Some(1));
    }

    #[test]
    fn free_energy_is_deterministic() {
        let prior = BernoulliGaussianPrior::new(0.2, HermitianCov::identity(2)).unwrap();
        let ch = AwgnRowChannel::new(HermitianCov::scaled_identity(2, 0.05)).unwrap();
        let opts = ReplicaOptions {
            analysis: AnalysisOptions {
                mc: McOptions::uniform(3000, 11),
                ..Default::default()
            },
            ..Default::default()
        };
        let sol = replica_fixed_point(1.0, &prior, &ch, &opts).unwrap();
        let a = free_energy(&sol, 1.0, &prior, &ch, &opts.analysis).unwrap();
        let b = free_energy(&sol, 1.0, &prior, &ch, &opts.analysis).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_free_energy_matches_closed_form_information() {
        // For Gaussian rows and AWGN, F - alpha H(y|z) must equal the mutual
        // information of the scalar decoupled channel plus its loss term.
        let (alpha, sx, sw) = (0.5, 1.0, 0.1);
        let prior = GaussianPrior::new(scalar(sx)).unwrap();
        let ch = AwgnRowChannel::new(scalar(sw)).unwrap();
        let mut opts = tight();
        opts.analysis.mc = McOptions::uniform(20_000, 8);
        let sol = replica_fixed_point(alpha, &prior, &ch, &opts).unwrap();
        let f = sol.free_energy.unwrap();
        let h = ch.conditional_entropy().unwrap();
        let q = bisection(alpha, sx, sw);
        let eta = sw / q;
        let closed = (1.0 + sx / q).ln() + alpha * (eta - 1.0 - eta.ln());
        assert!((f.value - alpha * h - closed).abs() <= 2.0 * f.stderr + 1e-9);
    }

    #[test]
    fn mc_free_energy_agrees_with_closed_form() {
        // Same solution, evidence term by Monte Carlo through the BG kernel at rho = 1.
        let (alpha, sx, sw) = (0.5, 1.0, 0.1);
        let g = GaussianPrior::new(scalar(sx)).unwrap();
        let bg = BernoulliGaussianPrior::new(1.0 - 1e-12, scalar(sx)).unwrap();
        let ch = AwgnRowChannel::new(scalar(sw)).unwrap();
        let opts = tight();
        let sol = replica_fixed_point(alpha, &g, &ch, &opts).unwrap();
        let mut an = opts.analysis;
        an.mc = McOptions::uniform(40_000, 21);
        let exact = free_energy(&sol, alpha, &g, &ch, &an).unwrap();
        let mc = free_energy(&sol, alpha, &bg, &ch, &an).unwrap();
        assert!((exact.value - mc.value).abs() <= 2.0 * mc.stderr + 1e-6, "{exact:?} {mc:?}");
    }
}
