//! Row-wise output channels `P(y | z)`.
//!
//! Given the Gaussian belief `z ~ N_c(z0, Qz)` and an observed row `y`, a
//! channel returns the posterior mean and covariance of `z`.

use std::fmt::Debug;

use num_complex::Complex64;
use rand::RngCore;

use crate::error::{Error, NumericsError};
use crate::numerics::{
    c, psd_sqrt, standard_complex_vector, ComplexMatrix, HermitianCov, HermitianFactor, RowVector, DEFAULT_JITTER,
};
use crate::special::truncated_std_normal;

/// Posterior moments of `z` given `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelPosterior {
    pub mean: RowVector,
    pub cov: HermitianCov,
    /// Set when a numerically empty cell forced the point-mass fallback.
    pub flagged: bool,
}

/// A channel specialised to a fixed prior covariance `Qz`.
pub trait PreparedChannel: Send + Sync {
    fn moments(&self, y: &RowVector, z0: &RowVector) -> ChannelPosterior;
    /// `log v(y) = log E_z P(y | z)` with `z ~ N_c(z0, Qz)`.
    fn log_marginal(&self, y: &RowVector, z0: &RowVector) -> f64;
}

pub trait RowChannel: Send + Sync + Debug {
    fn dim(&self) -> usize;

    /// Covariance of the additive noise applied before [`RowChannel::observe`].
    fn noise_covariance(&self) -> &HermitianCov;

    /// Deterministic map from the noisy row `z + w` to the recorded output.
    fn observe(&self, noisy: &RowVector) -> RowVector;

    fn prepare(&self, qz: &HermitianCov, jitter: f64) -> Result<Box<dyn PreparedChannel + '_>, NumericsError>;

    fn posterior_moments(
        &self,
        y: &RowVector,
        z0: &RowVector,
        qz: &HermitianCov,
    ) -> Result<ChannelPosterior, NumericsError> {
        Ok(self.prepare(qz, DEFAULT_JITTER)?.moments(y, z0))
    }

    /// Draws `y ~ P(y | z)`.
    fn sample(&self, z: &RowVector, rng: &mut dyn RngCore) -> RowVector;

    /// Solver must run with diagonal covariances.
    fn requires_diagonal(&self) -> bool {
        false
    }

    /// Conditional entropy `H(y | z)` of one row, when available.
    fn conditional_entropy(&self) -> Option<f64> {
        None
    }

    /// Noise covariance when the channel is plain additive Gaussian noise.
    fn awgn_covariance(&self) -> Option<&HermitianCov> {
        None
    }
}

/// `y = z + w`, `w ~ N_c(0, Sigma_w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AwgnRowChannel {
    sigma_w: HermitianCov,
    factor: ComplexMatrix,
}

impl AwgnRowChannel {
    pub fn new(sigma_w: HermitianCov) -> Result<Self, Error> {
        if !sigma_w.is_psd() {
            return Err(NumericsError::NotPsd {
                min_eigenvalue: sigma_w.min_eigenvalue(),
            }
            .into());
        }
        let factor = psd_sqrt(&sigma_w);
        Ok(Self { sigma_w, factor })
    }

    pub fn sigma_w(&self) -> &HermitianCov {
        &self.sigma_w
    }
}

struct AwgnKernel {
    /// `Qz (Qz + Sigma_w)^-1`
    gain: ComplexMatrix,
    post_cov: HermitianCov,
    total: HermitianFactor,
}

impl PreparedChannel for AwgnKernel {
    fn moments(&self, y: &RowVector, z0: &RowVector) -> ChannelPosterior {
        ChannelPosterior {
            mean: z0 + &self.gain * (y - z0),
            cov: self.post_cov.clone(),
            flagged: false,
        }
    }

    fn log_marginal(&self, y: &RowVector, z0: &RowVector) -> f64 {
        self.total.log_density(y, z0)
    }
}

impl RowChannel for AwgnRowChannel {
    fn dim(&self) -> usize {
        self.sigma_w.dim()
    }

    fn noise_covariance(&self) -> &HermitianCov {
        &self.sigma_w
    }

    fn observe(&self, noisy: &RowVector) -> RowVector {
        noisy.clone()
    }

    fn prepare(&self, qz: &HermitianCov, jitter: f64) -> Result<Box<dyn PreparedChannel + '_>, NumericsError> {
        if qz.dim() != self.dim() {
            return Err(NumericsError::DimensionMismatch {
                expected: self.dim(),
                found: qz.dim(),
            });
        }
        // (Sigma_w^-1 + Qz^-1)^-1 = Qz (Qz + Sigma_w)^-1 Sigma_w, valid when either is singular.
        let total = HermitianFactor::new(&qz.add(&self.sigma_w), jitter, "Qz+Sigma_w")?;
        let gain = total.solve_mat(qz.matrix()).adjoint();
        let post_cov = HermitianCov::symmetrized(&gain * self.sigma_w.matrix());
        Ok(Box::new(AwgnKernel { gain, post_cov, total }))
    }

    fn sample(&self, z: &RowVector, rng: &mut dyn RngCore) -> RowVector {
        z + &self.factor * standard_complex_vector(rng, self.dim())
    }

    fn conditional_entropy(&self) -> Option<f64> {
        let m = self.dim() as f64;
        let logdet: f64 = self.sigma_w.eigenvalues().iter().map(|v| v.ln()).sum();
        Some(m * (std::f64::consts::PI * std::f64::consts::E).ln() + logdet)
    }

    fn awgn_covariance(&self) -> Option<&HermitianCov> {
        Some(&self.sigma_w)
    }
}

/// Complex uniform quantizer applied to `z + w` per real dimension,
/// `w ~ N_c(0, sigma_w^2 I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedRowChannel {
    m: usize,
    bits: u32,
    clip: f64,
    step: f64,
    noise_var: f64,
    noise: HermitianCov,
}

/// Largest supported resolution per real dimension.
pub const MAX_BITS: u32 = 24;

impl QuantizedRowChannel {
    pub fn new(m: usize, bits: u32, clip: f64, noise_var: f64) -> Result<Self, Error> {
        if bits > MAX_BITS {
            return Err(Error::Config(format!("bits must be at most {MAX_BITS}, got {bits}")));
        }
        if !(clip > 0.0 && clip.is_finite()) {
            return Err(Error::Config(format!("clip must be positive, got {clip}")));
        }
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::Config(format!("noise_var must be non-negative, got {noise_var}")));
        }
        let step = 2.0 * clip / (1u64 << bits) as f64;
        Ok(Self {
            m,
            bits,
            clip,
            step,
            noise_var,
            noise: HermitianCov::scaled_identity(m, noise_var),
        })
    }

    /// Clip level `3 sqrt(E|z_d|^2 / 2)` for a per-component complex second moment.
    pub fn clip_for_second_moment(mean_power: f64) -> f64 {
        3.0 * (mean_power / 2.0).sqrt()
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn levels(&self) -> usize {
        1usize << self.bits
    }

    /// Cell label and reconstruction midpoint of a real value. Values on an
    /// interior boundary go to the upper cell.
    pub fn quantize(&self, v: f64) -> (usize, f64) {
        let top = self.levels() - 1;
        let k = ((v + self.clip) / self.step).floor();
        let mut label = if k.is_nan() || k < 0.0 {
            0
        } else if k >= top as f64 {
            top
        } else {
            k as usize
        };
        // Keep the label consistent with `interval` under rounding.
        let (lo, hi) = self.interval(label);
        if v < lo {
            label -= 1;
        } else if v >= hi {
            label += 1;
        }
        (label, self.midpoint(label))
    }

    pub fn midpoint(&self, label: usize) -> f64 {
        -self.clip + (label as f64 + 0.5) * self.step
    }

    /// Input interval `[q_low, q_up)` of a cell; the outer cells are unbounded.
    pub fn interval(&self, label: usize) -> (f64, f64) {
        let lo = if label == 0 {
            f64::NEG_INFINITY
        } else {
            -self.clip + label as f64 * self.step
        };
        let hi = if label + 1 >= self.levels() {
            f64::INFINITY
        } else {
            -self.clip + (label + 1) as f64 * self.step
        };
        (lo, hi)
    }

    /// Posterior of one real component: prior `N(z0, qz)` and observed cell.
    /// Returns `(mean, var, flagged)`.
    pub fn scalar_posterior(&self, label: usize, z0: f64, qz: f64) -> (f64, f64, bool) {
        let s = self.noise_var / 2.0;
        let v = qz + s;
        let sd = v.sqrt();
        let (lo, hi) = self.interval(label);
        let (a, b) = ((lo - z0) / sd, (hi - z0) / sd);
        let t = truncated_std_normal(a, b);
        let (et, vt, flagged) = if t.log_mass < (1e-300f64).ln() || !t.mean.is_finite() {
            // Nearest boundary of the empty cell.
            let edge = if a >= 0.0 { lo } else { hi };
            (edge, 0.0, true)
        } else {
            (z0 + sd * t.mean, v * t.var, false)
        };
        if v == 0.0 {
            return (z0, 0.0, flagged);
        }
        let g = qz / v;
        let mean = z0 + g * (et - z0);
        let var = (qz - qz * g * (1.0 - vt / v)).clamp(0.0, qz);
        (mean, var, flagged)
    }

    /// Log probability of the cell under `t ~ N(z0, qz + sigma_w^2 / 2)`.
    pub fn log_cell_probability(&self, label: usize, z0: f64, qz: f64) -> f64 {
        let sd = (qz + self.noise_var / 2.0).sqrt();
        let (lo, hi) = self.interval(label);
        truncated_std_normal((lo - z0) / sd, (hi - z0) / sd).log_mass
    }

    fn labels(&self, y: &RowVector) -> Vec<(usize, usize)> {
        y.iter().map(|v| (self.quantize(v.re).0, self.quantize(v.im).0)).collect()
    }
}

struct QuantizedKernel<'a> {
    channel: &'a QuantizedRowChannel,
    /// Per real component prior variance.
    q: Vec<f64>,
}

impl PreparedChannel for QuantizedKernel<'_> {
    fn moments(&self, y: &RowVector, z0: &RowVector) -> ChannelPosterior {
        let mut mean = RowVector::zeros(y.len());
        let mut var = vec![0.0; y.len()];
        let mut flagged = false;
        for (d, (lr, li)) in self.channel.labels(y).into_iter().enumerate() {
            let (mr, vr, fr) = self.channel.scalar_posterior(lr, z0[d].re, self.q[d]);
            let (mi, vi, fi) = self.channel.scalar_posterior(li, z0[d].im, self.q[d]);
            mean[d] = Complex64::new(mr, mi);
            var[d] = vr + vi;
            flagged |= fr || fi;
        }
        ChannelPosterior {
            mean,
            cov: HermitianCov::from_real_diagonal(&var),
            flagged,
        }
    }

    fn log_marginal(&self, y: &RowVector, z0: &RowVector) -> f64 {
        self.channel
            .labels(y)
            .into_iter()
            .enumerate()
            .map(|(d, (lr, li))| {
                self.channel.log_cell_probability(lr, z0[d].re, self.q[d])
                    + self.channel.log_cell_probability(li, z0[d].im, self.q[d])
            })
            .sum()
    }
}

impl RowChannel for QuantizedRowChannel {
    fn dim(&self) -> usize {
        self.m
    }

    fn noise_covariance(&self) -> &HermitianCov {
        &self.noise
    }

    fn observe(&self, noisy: &RowVector) -> RowVector {
        noisy.map(|v| Complex64::new(self.quantize(v.re).1, self.quantize(v.im).1))
    }

    /// Only the diagonal of `qz` is used.
    fn prepare(&self, qz: &HermitianCov, jitter: f64) -> Result<Box<dyn PreparedChannel + '_>, NumericsError> {
        if qz.dim() != self.m {
            return Err(NumericsError::DimensionMismatch {
                expected: self.m,
                found: qz.dim(),
            });
        }
        let diag = qz.diagonal();
        if diag.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(NumericsError::Singular {
                operand: "Qz".to_string(),
            });
        }
        let floor = jitter * diag.iter().sum::<f64>().max(0.0) / self.m.max(1) as f64;
        let q = diag.iter().map(|v| (v / 2.0).max(floor / 2.0)).collect();
        Ok(Box::new(QuantizedKernel { channel: self, q }))
    }

    fn sample(&self, z: &RowVector, rng: &mut dyn RngCore) -> RowVector {
        let w = standard_complex_vector(rng, self.m) * c(self.noise_var.sqrt());
        self.observe(&(z + w))
    }

    fn requires_diagonal(&self) -> bool {
        true
    }
}

/// The channels shipped with the crate.
#[derive(Clone, Debug, PartialEq)]
pub enum Channel {
    Awgn(AwgnRowChannel),
    Quantized(QuantizedRowChannel),
}

impl Channel {
    pub fn as_dyn(&self) -> &dyn RowChannel {
        match self {
            Channel::Awgn(ch) => ch,
            Channel::Quantized(ch) => ch,
        }
    }

    /// AWGN channel with `Sigma_w` replaced by its diagonal; other channels unchanged.
    pub fn diagonal_restricted(&self) -> Channel {
        match self {
            Channel::Awgn(ch) => Channel::Awgn(
                AwgnRowChannel::new(ch.sigma_w.diagonal_part()).expect("diagonal of a PSD matrix is PSD"),
            ),
            other => other.clone(),
        }
    }
}

impl RowChannel for Channel {
    fn dim(&self) -> usize {
        self.as_dyn().dim()
    }
    fn noise_covariance(&self) -> &HermitianCov {
        self.as_dyn().noise_covariance()
    }
    fn observe(&self, noisy: &RowVector) -> RowVector {
        self.as_dyn().observe(noisy)
    }
    fn prepare(&self, qz: &HermitianCov, jitter: f64) -> Result<Box<dyn PreparedChannel + '_>, NumericsError> {
        self.as_dyn().prepare(qz, jitter)
    }
    fn sample(&self, z: &RowVector, rng: &mut dyn RngCore) -> RowVector {
        self.as_dyn().sample(z, rng)
    }
    fn requires_diagonal(&self) -> bool {
        self.as_dyn().requires_diagonal()
    }
    fn conditional_entropy(&self) -> Option<f64> {
        self.as_dyn().conditional_entropy()
    }
    fn awgn_covariance(&self) -> Option<&HermitianCov> {
        self.as_dyn().awgn_covariance()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian_product, standard_complex_normal};
    use crate::special::{norm_pdf, norm_sf};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_pd(rng: &mut ChaCha8Rng, m: usize, floor: f64) -> HermitianCov {
        let a = ComplexMatrix::from_fn(m, m, |_, _| standard_complex_normal(rng));
        let mut p = &a * a.adjoint();
        for i in 0..m {
            p[(i, i)] += c(floor);
        }
        HermitianCov::symmetrized(p)
    }

    /// Posterior moments of `z ~ N(z0, qz)` given `z + w` in `[lo, hi)`,
    /// `w ~ N(0, s)`, by trapezoidal integration on `[-8, 8]`.
    fn quadrature(lo: f64, hi: f64, z0: f64, qz: f64, s: f64) -> (f64, f64) {
        let h = 1e-4;
        let n = 160_000;
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..=n {
            let x = -8.0 + i as f64 * h;
            let prior = norm_pdf((x - z0) / qz.sqrt()) / qz.sqrt();
            let up = if hi.is_finite() { norm_sf((hi - x) / s.sqrt()) } else { 0.0 };
            let low = if lo.is_finite() { norm_sf((lo - x) / s.sqrt()) } else { 1.0 };
            let w = if i == 0 || i == n { 0.5 } else { 1.0 } * h * prior * (low - up);
            z += w;
            m1 += w * x;
            m2 += w * x * x;
        }
        let mean = m1 / z;
        (mean, m2 / z - mean * mean)
    }

    #[test]
    fn noiseless_awgn_returns_observation() {
        let ch = AwgnRowChannel::new(HermitianCov::scaled_identity(2, 1e-12)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = standard_complex_vector(&mut rng, 2);
        let z0 = standard_complex_vector(&mut rng, 2);
        let post = ch.posterior_moments(&y, &z0, &HermitianCov::identity(2)).unwrap();
        assert!((post.mean - y).norm() < 1e-9);
    }

    #[test]
    fn perfect_prior_returns_prior_mean() {
        let ch = AwgnRowChannel::new(HermitianCov::identity(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = standard_complex_vector(&mut rng, 2);
        let z0 = standard_complex_vector(&mut rng, 2);
        let post = ch
            .posterior_moments(&y, &z0, &HermitianCov::scaled_identity(2, 1e-12))
            .unwrap();
        assert!((post.mean - z0).norm() < 1e-9);
    }

    #[test]
    fn awgn_matches_gaussian_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let sw = random_pd(&mut rng, 2, 0.1);
            let qz = random_pd(&mut rng, 2, 0.1);
            let y = standard_complex_vector(&mut rng, 2);
            let z0 = standard_complex_vector(&mut rng, 2);
            let ch = AwgnRowChannel::new(sw.clone()).unwrap();
            let post = ch.posterior_moments(&y, &z0, &qz).unwrap();
            let (mean, cov, _) = gaussian_product(&y, &sw, &z0, &qz).unwrap();
            assert!((&post.mean - &mean).norm() < 1e-12 * (1.0 + mean.norm()) * 10.0);
            assert!((post.cov.matrix() - cov.matrix()).norm() < 1e-12 * 10.0);
        }
    }

    #[test]
    fn awgn_rejects_doubly_singular() {
        let ch = AwgnRowChannel::new(HermitianCov::zeros(2)).unwrap();
        let bad = HermitianCov::from_real_diagonal(&[1.0, -1.0]);
        assert!(ch.posterior_moments(&RowVector::zeros(2), &RowVector::zeros(2), &bad).is_err());
    }

    #[test]
    fn sign_quantizer() {
        let q = QuantizedRowChannel::new(1, 1, 1.0, 0.1).unwrap();
        let (label, mid) = q.quantize(0.3);
        assert_eq!(label, 1);
        assert_eq!(mid, 0.5);
        assert_eq!(q.interval(label), (0.0, f64::INFINITY));
    }

    #[test]
    fn boundary_goes_to_upper_cell() {
        let q = QuantizedRowChannel::new(1, 3, 3.0, 0.1).unwrap();
        // Step is 0.75; 0.75 is the boundary between cells 4 and 5.
        assert_eq!(q.quantize(0.75).0, 5);
        assert_eq!(q.quantize(0.0).0, 4);
        assert_eq!(q.quantize(-3.0).0, 0);
        assert_eq!(q.quantize(-2.25).0, 1);
        assert_eq!(q.midpoint(0), -(3.0 - 0.375));
        assert_eq!(q.midpoint(7), 3.0 - 0.375);
    }

    #[test]
    fn cells_tile_the_line() {
        let q = QuantizedRowChannel::new(1, 3, 3.0, 0.1).unwrap();
        assert_eq!(q.interval(0).0, f64::NEG_INFINITY);
        assert_eq!(q.interval(7).1, f64::INFINITY);
        for k in 0..7 {
            assert_eq!(q.interval(k).1, q.interval(k + 1).0);
        }
        for i in -5000..=5000 {
            let v = i as f64 * 1e-3;
            let hits: Vec<usize> = (0..8)
                .filter(|&k| {
                    let (lo, hi) = q.interval(k);
                    lo <= v && v < hi
                })
                .collect();
            assert_eq!(hits, vec![q.quantize(v).0], "v = {v}");
        }
    }

    #[test]
    fn symmetric_cell_gives_zero_mean() {
        // B=0 has a single cell covering the line.
        let q = QuantizedRowChannel::new(1, 0, 1.0, 0.3).unwrap();
        let (mean, var, _) = q.scalar_posterior(0, 0.0, 0.7);
        assert_eq!(mean, 0.0);
        assert_relative_eq!(var, 0.7, epsilon = 1e-12);
        // Cells of B=1 are mirror images, so their posterior means are opposite.
        let q1 = QuantizedRowChannel::new(1, 1, 1.0, 0.3).unwrap();
        let up = q1.scalar_posterior(1, 0.0, 0.7).0;
        let down = q1.scalar_posterior(0, 0.0, 0.7).0;
        assert_relative_eq!(up, -down, epsilon = 1e-14);
    }

    #[test]
    fn sign_quantizer_matches_quadrature() {
        let q = QuantizedRowChannel::new(1, 1, 1.0, 0.5).unwrap();
        let (mean, var, flagged) = q.scalar_posterior(1, 0.4, 1.0);
        let (qm, qv) = quadrature(0.0, f64::INFINITY, 0.4, 1.0, 0.25);
        assert!(!flagged);
        assert_relative_eq!(mean, qm, max_relative = 1e-5);
        assert_relative_eq!(var, qv, max_relative = 1e-5);
    }

    #[test]
    fn quantized_moments_match_quadrature_grid() {
        let q = QuantizedRowChannel::new(1, 2, 1.5, 0.2).unwrap();
        for label in 0..4 {
            for &z0 in &[-1.0, -0.2, 0.5, 1.3] {
                for &qz in &[0.1, 0.5, 1.0] {
                    let (lo, hi) = q.interval(label);
                    let (mean, var, _) = q.scalar_posterior(label, z0, qz);
                    let (qm, qv) = quadrature(lo, hi, z0, qz, 0.1);
                    assert!((mean - qm).abs() <= 1e-5 * qm.abs().max(1e-2), "{label} {z0} {qz}");
                    assert!((var - qv).abs() <= 1e-5 * qv, "{label} {z0} {qz}");
                }
            }
        }
    }

    #[test]
    fn fine_quantizer_approaches_awgn() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let q = QuantizedRowChannel::new(2, 12, 4.0, 0.2).unwrap();
        let awgn = AwgnRowChannel::new(HermitianCov::scaled_identity(2, 0.2)).unwrap();
        for _ in 0..20 {
            let z = standard_complex_vector(&mut rng, 2);
            let z0 = standard_complex_vector(&mut rng, 2) * c(0.5);
            let qz = HermitianCov::scaled_identity(2, 0.8);
            let noisy = &z + standard_complex_vector(&mut rng, 2) * c(0.2f64.sqrt());
            let y = q.observe(&noisy);
            let a = q.posterior_moments(&y, &z0, &qz).unwrap();
            let b = awgn.posterior_moments(&y, &z0, &qz).unwrap();
            assert!((&a.mean - &b.mean).norm() <= 1e-4 * (1.0 + b.mean.norm()));
            assert!((a.cov.matrix() - b.cov.matrix()).norm() <= 1e-3 * b.cov.frobenius());
        }
    }

    #[test]
    fn empty_cell_falls_back_to_edge() {
        let q = QuantizedRowChannel::new(1, 2, 1.0, 1e-4).unwrap();
        // Cell [0.5, inf) seen from a prior sitting far below it.
        let (mean, var, flagged) = q.scalar_posterior(3, -400.0, 1e-2);
        assert!(flagged);
        assert!(mean.is_finite() && var >= 0.0);
    }

    #[test]
    fn cell_probabilities_sum_to_one() {
        let q = QuantizedRowChannel::new(1, 3, 2.0, 0.3).unwrap();
        for i in -40..=40 {
            let z0 = i as f64 * 0.1;
            let total: f64 = (0..8).map(|k| q.log_cell_probability(k, z0, 0.0).exp()).sum();
            assert!((total - 1.0).abs() < 1e-12, "z0 = {z0}: {total}");
        }
    }

    #[test]
    fn empirical_cell_frequencies() {
        let q = QuantizedRowChannel::new(1, 2, 1.0, 0.5).unwrap();
        let z = RowVector::from_vec(vec![Complex64::new(0.3, -0.6)]);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let y = q.sample(&z, &mut rng);
            counts[q.quantize(y[0].re).0] += 1;
        }
        for (k, &count) in counts.iter().enumerate() {
            let p = q.log_cell_probability(k, 0.3, 0.0).exp();
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((count as f64 / n as f64 - p).abs() < 4.0 * sd, "cell {k}");
        }
    }

    #[test]
    fn sampling_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = standard_complex_vector(&mut rng, 3);
        let clean = AwgnRowChannel::new(HermitianCov::zeros(3)).unwrap();
        assert_eq!(clean.sample(&z, &mut rng), z);
        let q = QuantizedRowChannel::new(3, 12, 4.0, 0.0).unwrap();
        let y = q.sample(&z, &mut rng);
        for d in 0..3 {
            assert!((y[d].re - z[d].re).abs() <= q.step() / 2.0 + 1e-15);
            assert!((y[d].im - z[d].im).abs() <= q.step() / 2.0 + 1e-15);
        }
    }

    proptest! {
        #[test]
        fn awgn_contracts_trace(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sw = random_pd(&mut rng, 3, 0.01);
            let qz = random_pd(&mut rng, 3, 0.01);
            let ch = AwgnRowChannel::new(sw.clone()).unwrap();
            let post = ch.posterior_moments(&RowVector::zeros(3), &RowVector::zeros(3), &qz).unwrap();
            prop_assert!(post.cov.trace() <= qz.trace().min(sw.trace()) + 1e-10);
        }

        #[test]
        fn quantized_variance_and_direction(label in 0usize..8, z0 in -3.0f64..3.0, qz in 0.05f64..2.0) {
            let q = QuantizedRowChannel::new(1, 3, 2.0, 0.2).unwrap();
            let (mean, var, _) = q.scalar_posterior(label, z0, qz);
            prop_assert!(var > 0.0 && var <= qz);
            let sd = (qz + 0.1f64).sqrt();
            let (lo, hi) = q.interval(label);
            let t = truncated_std_normal((lo - z0) / sd, (hi - z0) / sd);
            let pull = z0 + sd * t.mean - z0;
            prop_assert!((mean - z0) * pull >= 0.0);
        }
    }
}
