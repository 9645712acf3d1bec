//! State evolution of the EP solver.
//!
//! `SeState` at step `t` predicts the average row posterior covariance after
//! `t - 1` solver iterations; [`se_init`] matches the solver's `Qx = Xi_x`.

use serde::{Deserialize, Serialize};

use super::{channel_step, is_real, real_if, AnalysisOptions};
use crate::channels::RowChannel;
use crate::error::{Error, NumericsError};
use crate::model::to_db;
use crate::numerics::{ensure_psd, HermitianCov};
use crate::priors::{prior_mmse_mc, RowPrior};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeState {
    pub t: usize,
    /// Average row posterior covariance, the predicted MMSE matrix.
    pub qx_bar: HermitianCov,
    /// Average channel posterior covariance of the previous step.
    pub qz_tilde_bar: HermitianCov,
    /// Equivalent noise covariance of the previous step.
    pub qr: HermitianCov,
    /// `Tr(qx_bar) / M`
    pub mse: f64,
    /// Standard error of `mse` from the prior integral.
    pub mse_stderr: f64,
}

impl SeState {
    /// `10 log10(Tr(Qx_bar) / Tr(Xi_x))`, comparable to the empirical NMSE.
    pub fn nmse_db(&self, xi: &HermitianCov) -> f64 {
        to_db(self.qx_bar.trace() / xi.trace())
    }
}

pub fn se_init(prior: &dyn RowPrior) -> SeState {
    let xi = prior.second_moment();
    let m = xi.dim();
    SeState {
        t: 1,
        mse: xi.trace() / m as f64,
        qx_bar: xi,
        qz_tilde_bar: HermitianCov::zeros(m),
        qr: HermitianCov::zeros(m),
        mse_stderr: 0.0,
    }
}

/// Prior half of the update map: the MMSE matrix for noise covariance `qr`.
/// A zero `qr` is the perfect-recovery point.
pub(crate) fn prior_step(
    qr: &HermitianCov,
    prior: &dyn RowPrior,
    opts: &AnalysisOptions,
) -> Result<(HermitianCov, f64), NumericsError> {
    let m = qr.dim();
    if qr.trace() <= 0.0 {
        return Ok((HermitianCov::zeros(m), 0.0));
    }
    if opts.closed_form {
        if let Some(mmse) = prior.mmse_closed(qr)? {
            return Ok((mmse, 0.0));
        }
    }
    let est = prior_mmse_mc(qr, prior, opts.mc.prior_samples, opts.mc.seed)?;
    let real = is_real(qr) && is_real(&prior.second_moment());
    Ok((real_if(est.mmse, real), est.trace_stderr / m as f64))
}

/// One state-evolution step. Monte Carlo integrals reuse `opts.mc.seed` at
/// every step, so successive steps see common random numbers.
pub fn se_step(
    state: &SeState,
    alpha: f64,
    prior: &dyn RowPrior,
    channel: &dyn RowChannel,
    opts: &AnalysisOptions,
) -> Result<SeState, Error> {
    let fail = |source| Error::StateEvolution { step: state.t, source };
    let xi = prior.second_moment();
    let m = xi.dim();
    if state.qx_bar.trace() <= 0.0 {
        return Ok(SeState {
            t: state.t + 1,
            qx_bar: HermitianCov::zeros(m),
            qz_tilde_bar: HermitianCov::zeros(m),
            qr: HermitianCov::zeros(m),
            mse: 0.0,
            mse_stderr: 0.0,
        });
    }
    let step = channel_step(&state.qx_bar, &xi, alpha, channel, opts).map_err(fail)?;
    let (mmse, stderr) = prior_step(&step.qr, prior, opts).map_err(fail)?;
    let qx_bar = ensure_psd(&mmse, 0.0);
    Ok(SeState {
        t: state.t + 1,
        mse: qx_bar.trace() / m as f64,
        qx_bar,
        qz_tilde_bar: step.qz_tilde,
        qr: step.qr,
        mse_stderr: stderr,
    })
}

/// `steps + 1` states starting from [`se_init`].
pub fn se_trajectory(
    alpha: f64,
    prior: &dyn RowPrior,
    channel: &dyn RowChannel,
    steps: usize,
    opts: &AnalysisOptions,
) -> Result<Vec<SeState>, Error> {
    let mut out = vec![se_init(prior)];
    for _ in 0..steps {
        let next = se_step(out.last().expect("non-empty"), alpha, prior, channel, opts)?;
        out.push(next);
    }
    Ok(out)
}

/// Iterates until the relative Frobenius change of `Qx_bar` is below `tol`.
pub fn se_fixed_point(
    alpha: f64,
    prior: &dyn RowPrior,
    channel: &dyn RowChannel,
    tol: f64,
    max_steps: usize,
    opts: &AnalysisOptions,
) -> Result<SeState, Error> {
    let mut state = se_init(prior);
    let scale = prior.second_moment().frobenius().max(f64::MIN_POSITIVE);
    let mut last = f64::INFINITY;
    for _ in 0..max_steps {
        let next = se_step(&state, alpha, prior, channel, opts)?;
        last = next.qx_bar.sub(&state.qx_bar).frobenius() / scale;
        state = next;
        if last < tol {
            return Ok(state);
        }
    }
    Err(Error::NonConvergence { residuals: vec![last] })
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

    /// Root of `q = sw + (1/alpha) (1/sx + 1/q)^-1` by bisection.
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

    #[test]
    fn scalar_gaussian_matches_bisection() {
        let prior = GaussianPrior::new(scalar(1.0)).unwrap();
        let ch = AwgnRowChannel::new(scalar(0.1)).unwrap();
        let opts = AnalysisOptions {
            mc: McOptions::uniform(100, 1),
            ..Default::default()
        };
        let fp = se_fixed_point(0.5, &prior, &ch, 1e-14, 10_000, &opts).unwrap();
        let q = bisection(0.5, 1.0, 0.1);
        assert_relative_eq!(fp.qr.matrix()[(0, 0)].re, q, epsilon = 1e-6);
    }

    #[test]
    fn perfect_recovery_is_absorbing() {
        let prior = BernoulliGaussianPrior::new(0.2, HermitianCov::identity(2)).unwrap();
        let ch = AwgnRowChannel::new(HermitianCov::scaled_identity(2, 0.1)).unwrap();
        let mut st = se_init(&prior);
        st.qx_bar = HermitianCov::zeros(2);
        let next = se_step(&st, 0.5, &prior, &ch, &AnalysisOptions::default()).unwrap();
        assert_eq!(next.qx_bar, HermitianCov::zeros(2));
        // Same through the Monte Carlo route.
        let mc = AnalysisOptions {
            closed_form: false,
            ..Default::default()
        };
        assert_eq!(se_step(&st, 0.5, &prior, &ch, &mc).unwrap().qx_bar, HermitianCov::zeros(2));
    }

    #[test]
    fn mse_is_non_increasing() {
        for rho in [0.05, 0.1, 0.2] {
            for snr in [5.0, 10.0, 15.0] {
                let m = 2;
                let prior = BernoulliGaussianPrior::new(rho, HermitianCov::identity(m)).unwrap();
                let alpha = 0.5;
                let sw = crate::model::noise_trace_for_snr(rho, m as f64, alpha, snr) / m as f64;
                let ch = AwgnRowChannel::new(HermitianCov::scaled_identity(m, sw)).unwrap();
                let opts = AnalysisOptions {
                    mc: McOptions::uniform(5000, 7),
                    ..Default::default()
                };
                let traj = se_trajectory(alpha, &prior, &ch, 10, &opts).unwrap();
                for w in traj.windows(2) {
                    assert!(w[1].mse <= w[0].mse + 3.0 * w[1].mse_stderr + 1e-12, "rho {rho} snr {snr}");
                }
            }
        }
    }
}
