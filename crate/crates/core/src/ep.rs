//! Row-wise expectation-propagation estimator.
//!
//! Each iteration runs the measurement-side updates (one per row `l` of `Y`)
//! followed by the signal-side updates (one per row `n` of `X`):
//!
//! ```text
//! Qz_l = sum_n |h_ln|^2 Qx_n                z_l = sum_n h_ln x_n - Qz_l s_l
//! (zt_l, Qzt_l) = channel posterior of z_l given y_l
//! Qs_l = Qz_l^-1 (Qz_l - Qzt_l) Qz_l^-1    s_l = Qz_l^-1 (zt_l - z_l)
//! Qr_n = (sum_l |h_ln|^2 Qs_l)^-1           r_n = x_n + Qr_n sum_l conj(h_ln) s_l
//! (x_n, Qx_n) = prior posterior of x_n given r_n
//! ```

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::RowChannel;
use crate::error::{Error, NumericsError, Stage};
use crate::model::{nmse, ProblemInstance};
use crate::numerics::{c, ensure_psd, frob_sqr, ComplexMatrix, HermitianCov, HermitianFactor, RowVector, DEFAULT_JITTER};
use crate::priors::RowPrior;

/// Covariance structure maintained by the solver.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMode {
    /// Full M x M covariances.
    #[default]
    Full,
    /// Every covariance is reduced to its diagonal, which decouples the columns of `X`.
    Diagonal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Weight of the new value in `new <- damping * new + (1 - damping) * old`.
    pub damping: f64,
    /// Stop once the relative Frobenius change of `X_hat` drops below this.
    pub tol: f64,
    pub jitter: f64,
    pub mode: SolverMode,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            damping: 0.7,
            tol: 1e-8,
            jitter: DEFAULT_JITTER,
            mode: SolverMode::Full,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), Error> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if !(self.tol >= 0.0 && self.jitter >= 0.0) {
            return Err(Error::Config("tol and jitter must be non-negative".into()));
        }
        Ok(())
    }
}

/// Counters of repairs made during a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `Qs` matrices clipped back to PSD.
    pub qs_clips: usize,
    /// Channel posteriors that used the empty-cell fallback.
    pub flagged_rows: usize,
}

/// Solver state. Row-indexed quantities are stored as `N x M` or `L x M` matrices.
#[derive(Clone, Debug)]
pub struct EpState {
    pub t: usize,
    pub xhat: ComplexMatrix,
    pub qx: Vec<HermitianCov>,
    pub s: ComplexMatrix,
    pub qs: Vec<HermitianCov>,
    pub zext: ComplexMatrix,
    pub qz: Vec<HermitianCov>,
    pub r: ComplexMatrix,
    pub qr: Vec<HermitianCov>,
    pub diagnostics: Diagnostics,
}

/// Initial state: `x_hat = 0`, `Qx = Xi_x`, `s = 0`.
pub fn ep_init(instance: &ProblemInstance, prior: &dyn RowPrior) -> EpState {
    let (l, n) = instance.h.shape();
    let m = instance.y.ncols();
    let xi = prior.second_moment();
    EpState {
        t: 1,
        xhat: ComplexMatrix::zeros(n, m),
        qx: vec![xi; n],
        s: ComplexMatrix::zeros(l, m),
        qs: vec![HermitianCov::zeros(m); l],
        zext: ComplexMatrix::zeros(l, m),
        qz: vec![HermitianCov::zeros(m); l],
        r: ComplexMatrix::zeros(n, m),
        qr: vec![HermitianCov::zeros(m); n],
        diagnostics: Diagnostics::default(),
    }
}

fn restrict(cov: HermitianCov, mode: SolverMode) -> HermitianCov {
    match mode {
        SolverMode::Full => cov,
        SolverMode::Diagonal => diagonal_restriction(&cov),
    }
}

/// Zeroes the off-diagonal entries of a covariance.
pub fn diagonal_restriction(cov: &HermitianCov) -> HermitianCov {
    cov.diagonal_part()
}

/// Splits covariances into real and imaginary `K x M^2` stacks.
fn stack(covs: &[HermitianCov], m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = covs.len();
    let mut re = DMatrix::zeros(k, m * m);
    let mut im = DMatrix::zeros(k, m * m);
    for (i, cov) in covs.iter().enumerate() {
        for (j, v) in cov.matrix().iter().enumerate() {
            re[(i, j)] = v.re;
            im[(i, j)] = v.im;
        }
    }
    (re, im)
}

fn unstack(re: &DMatrix<f64>, im: &DMatrix<f64>, row: usize, m: usize) -> HermitianCov {
    HermitianCov::symmetrized(ComplexMatrix::from_fn(m, m, |i, j| {
        let k = j * m + i;
        Complex64::new(re[(row, k)], im[(row, k)])
    }))
}

/// Clips negative eigenvalues to zero; returns the matrix and whether it changed.
fn clip_psd(cov: HermitianCov) -> (HermitianCov, bool) {
    if crate::numerics::cholesky(cov.matrix().clone()).is_some() {
        return (cov, false);
    }
    let m = cov.dim() as f64;
    let eig = nalgebra::SymmetricEigen::new(cov.matrix().clone());
    let floor = -crate::numerics::PSD_TOL * cov.trace().abs() / m;
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return (cov, false);
    }
    let d = eig.eigenvalues.map(|v| c(v.max(0.0)));
    let v = &eig.eigenvectors;
    (
        HermitianCov::symmetrized(v * ComplexMatrix::from_diagonal(&d) * v.adjoint()),
        true,
    )
}

fn first_error<T>(results: Vec<Result<T, (usize, NumericsError)>>, iteration: usize, stage: Stage) -> Result<Vec<T>, Error> {
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(v) => out.push(v),
            Err((index, source)) => {
                return Err(Error::IterationFailure {
                    iteration,
                    stage,
                    index,
                    source,
                })
            }
        }
    }
    Ok(out)
}

struct OutputUpdate {
    qz: HermitianCov,
    z: RowVector,
    s: RowVector,
    qs: HermitianCov,
    clipped: bool,
    flagged: bool,
}

/// Per-row `(x_hat, Qx, r, Qr)` from the signal-side update.
type PriorInput = (RowVector, HermitianCov, RowVector, HermitianCov);

/// One full pass over the measurement-side and signal-side updates.
pub fn ep_iteration(
    state: &EpState,
    instance: &ProblemInstance,
    prior: &dyn RowPrior,
    channel: &dyn RowChannel,
    options: &SolverOptions,
) -> Result<EpState, Error> {
    let h = &instance.h;
    let (l, n) = h.shape();
    let m = instance.y.ncols();
    let mode = if channel.requires_diagonal() {
        SolverMode::Diagonal
    } else {
        options.mode
    };
    let theta = options.damping;
    let jitter = options.jitter;
    let t = state.t;
    let habs2 = h.map(|v| v.norm_sqr());

    // Qz_l = sum_n |h_ln|^2 Qx_n
    let qx_used: Vec<HermitianCov> = state.qx.iter().map(|q| restrict(q.clone(), mode)).collect();
    let (qx_re, qx_im) = stack(&qx_used, m);
    let qz_re = &habs2 * qx_re;
    let qz_im = &habs2 * qx_im;
    let hx = h * &state.xhat;

    let outputs: Vec<Result<OutputUpdate, (usize, NumericsError)>> = (0..l)
        .into_par_iter()
        .map(|i| {
            let qz = restrict(ensure_psd(&unstack(&qz_re, &qz_im, i, m), jitter), mode);
            let s_old: RowVector = state.s.row(i).transpose();
            let z: RowVector = hx.row(i).transpose() - qz.matrix() * &s_old;
            let y: RowVector = instance.y.row(i).transpose();
            let fac = HermitianFactor::new(&qz, jitter, "Qz").map_err(|e| (i, e))?;
            let post = channel.prepare(&qz, jitter).map_err(|e| (i, e))?.moments(&y, &z);
            let qzt = restrict(post.cov, mode);
            let qz_inv = fac.inverse();
            let qs_raw = HermitianCov::symmetrized(qz_inv.matrix() * (qz.matrix() - qzt.matrix()) * qz_inv.matrix());
            let (qs, clipped) = clip_psd(restrict(qs_raw, mode));
            let s = fac.solve_vec(&(post.mean - &z));
            Ok(OutputUpdate {
                qz,
                z,
                s,
                qs: ensure_psd(&qs, jitter),
                clipped,
                flagged: post.flagged,
            })
        })
        .collect();
    let outputs = first_error(outputs, t, Stage::Output)?;

    let mut diagnostics = state.diagnostics;
    let mut s = ComplexMatrix::zeros(l, m);
    let mut zext = ComplexMatrix::zeros(l, m);
    let mut qz = Vec::with_capacity(l);
    let mut qs = Vec::with_capacity(l);
    for (i, o) in outputs.into_iter().enumerate() {
        let damped = &o.s * c(theta) + state.s.row(i).transpose() * c(1.0 - theta);
        s.set_row(i, &damped.transpose());
        zext.set_row(i, &o.z.transpose());
        diagnostics.qs_clips += o.clipped as usize;
        diagnostics.flagged_rows += o.flagged as usize;
        qz.push(o.qz);
        qs.push(o.qs);
    }

    // Qr_n = (sum_l |h_ln|^2 Qs_l)^-1, r_n = x_n + Qr_n (H^H s)_n
    let (qs_re, qs_im) = stack(&qs, m);
    let habs2_t = habs2.transpose();
    let pr_re = &habs2_t * qs_re;
    let pr_im = &habs2_t * qs_im;
    let g = h.adjoint() * &s;

    let inputs: Vec<Result<PriorInput, (usize, NumericsError)>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let precision = restrict(unstack(&pr_re, &pr_im, j, m), mode);
            let qr = restrict(
                HermitianFactor::new(&precision, jitter, "sum |h|^2 Qs")
                    .map_err(|e| (j, e))?
                    .inverse(),
                mode,
            );
            let qr = ensure_psd(&qr, jitter);
            let xo: RowVector = state.xhat.row(j).transpose();
            let r = &xo + qr.matrix() * g.row(j).transpose();
            let post = prior.prepare(&qr, jitter).map_err(|e| (j, e))?.moments(&r);
            let qx_new = restrict(post.cov, mode);
            let qx = ensure_psd(&qx_new.blend(theta, &state.qx[j], 1.0 - theta), jitter);
            Ok((post.mean, qx, r, qr))
        })
        .collect();
    let inputs = first_error(inputs, t, Stage::Input)?;

    let mut xhat = ComplexMatrix::zeros(n, m);
    let mut r = ComplexMatrix::zeros(n, m);
    let mut qx = Vec::with_capacity(n);
    let mut qr = Vec::with_capacity(n);
    for (j, (mean, qxj, rj, qrj)) in inputs.into_iter().enumerate() {
        xhat.set_row(j, &mean.transpose());
        r.set_row(j, &rj.transpose());
        qx.push(qxj);
        qr.push(qrj);
    }

    let next = EpState {
        t: t + 1,
        xhat,
        qx,
        s,
        qs,
        zext,
        qz,
        r,
        qr,
        diagnostics,
    };
    debug_assert!(all_psd(&next), "covariance left the PSD cone at iteration {t}");
    Ok(next)
}

fn all_psd(state: &EpState) -> bool {
    let ok = |c: &HermitianCov| crate::numerics::cholesky(c.matrix().clone()).is_some() || c.is_psd();
    state.qx.iter().all(ok) && state.qs.iter().all(ok) && state.qz.iter().all(ok) && state.qr.iter().all(ok)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iter: usize,
    /// NMSE against the true signal, when it is non-zero.
    pub nmse: Option<f64>,
    pub nmse_db: Option<f64>,
    /// `mean_n Tr(Qx_n) / M`
    pub mean_trace_qx: f64,
    /// Relative Frobenius change of `X_hat`.
    pub rel_change: f64,
    /// Wall time since the start of the run.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// CSV with header `iter,nmse_db,mean_trace_qx,seconds`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iter,nmse_db,mean_trace_qx,seconds")?;
        for p in &self.points {
            let db = p.nmse_db.map(|v| format!("{v:.6}")).unwrap_or_default();
            writeln!(out, "{},{},{:.6e},{:.6}", p.iter, db, p.mean_trace_qx, p.seconds)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EpOutput {
    pub xhat: ComplexMatrix,
    pub qx: Vec<HermitianCov>,
    pub trajectory: Trajectory,
    pub converged: bool,
    pub diagnostics: Diagnostics,
    pub state: EpState,
}

/// A failed run together with the iterations completed before the failure.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct EpFailure {
    pub error: Error,
    pub trajectory: Trajectory,
}

fn rel_change(new: &ComplexMatrix, old: &ComplexMatrix) -> f64 {
    let num = frob_sqr(&(new - old)).sqrt();
    let den = frob_sqr(new).sqrt();
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Iterates from [`ep_init`] until the tolerance or the iteration cap is reached.
pub fn ep_run(
    instance: &ProblemInstance,
    prior: &dyn RowPrior,
    channel: &dyn RowChannel,
    options: &SolverOptions,
) -> Result<EpOutput, EpFailure> {
    let start = Instant::now();
    let mut trajectory = Trajectory::default();
    if let Err(error) = options.validate() {
        return Err(EpFailure { error, trajectory });
    }
    let m = instance.y.ncols() as f64;
    let has_truth = frob_sqr(&instance.x) > 0.0;
    let mut state = ep_init(instance, prior);
    let mut converged = false;
    for _ in 0..options.max_iters {
        let next = match ep_iteration(&state, instance, prior, channel, options) {
            Ok(next) => next,
            Err(error) => return Err(EpFailure { error, trajectory }),
        };
        let change = rel_change(&next.xhat, &state.xhat);
        let metrics = has_truth.then(|| nmse(&instance.x, &next.xhat).ok()).flatten();
        let mean_trace_qx = next.qx.iter().map(|q| q.trace()).sum::<f64>() / (next.qx.len() as f64 * m);
        trajectory.points.push(TrajectoryPoint {
            iter: state.t,
            nmse: metrics.map(|v| v.nmse),
            nmse_db: metrics.map(|v| v.nmse_db),
            mean_trace_qx,
            rel_change: change,
            seconds: start.elapsed().as_secs_f64(),
        });
        state = next;
        if change < options.tol {
            converged = true;
            break;
        }
    }
    Ok(EpOutput {
        xhat: state.xhat.clone(),
        qx: state.qx.clone(),
        trajectory,
        converged,
        diagnostics: state.diagnostics,
        state,
    })
}
