//! Problem definition, synthetic instances and error metrics.

use std::io::{Read, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{AwgnRowChannel, Channel, QuantizedRowChannel, RowChannel};
use crate::error::{Error, Result};
use crate::numerics::{
    c, frob_sqr, standard_complex_normal, ComplexGaussianSampler, ComplexMatrix, HermitianCov, MatrixRecord, RowVector,
};
use crate::priors::{BernoulliGaussianPrior, GaussianPrior, Prior, RowPrior};

/// Decibel values are clamped to this magnitude.
pub const DB_CLAMP: f64 = 300.0;

/// `10 log10(v)` clamped to `[-300, 300]`.
pub fn to_db(v: f64) -> f64 {
    if v.is_nan() {
        return v;
    }
    (10.0 * v.log10()).clamp(-DB_CLAMP, DB_CLAMP)
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceKind {
    /// `A A^H` with IID uniform `[0, 1)` entries.
    #[serde(rename = "uniform-outer")]
    UniformOuter,
    /// `A A^H + 2 I` with IID uniform `[0, 1)` entries.
    #[serde(rename = "uniform-outer-plus-2I", alias = "uniform-outer-plus-2i")]
    UniformOuterPlus2I,
    #[serde(rename = "scaled-identity")]
    ScaledIdentity,
    /// `I + 1 1^T`.
    #[serde(rename = "ones-plus-I", alias = "ones-plus-i")]
    OnesPlusI,
}

fn unit_trace() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceSpec {
    pub kind: CovarianceKind,
    #[serde(default = "unit_trace")]
    pub trace: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorSpec {
    BernoulliGaussian { rho: f64, covariance: CovarianceSpec },
    Gaussian { covariance: CovarianceSpec },
}

impl PriorSpec {
    pub fn rho(&self) -> f64 {
        match self {
            PriorSpec::BernoulliGaussian { rho, .. } => *rho,
            PriorSpec::Gaussian { .. } => 1.0,
        }
    }

    pub fn covariance(&self) -> &CovarianceSpec {
        match self {
            PriorSpec::BernoulliGaussian { covariance, .. } | PriorSpec::Gaussian { covariance } => covariance,
        }
    }
}

/// Output channel. With `snr_db` set, the noise power follows
/// `SNR = rho Tr(Sigma_x) / (alpha Tr(Sigma_w))` and overrides `trace`/`noise_var`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ChannelSpec {
    Awgn {
        covariance: CovarianceSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        snr_db: Option<f64>,
    },
    Quantized {
        bits: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise_var: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        snr_db: Option<f64>,
        /// Overrides the default `3 sigma` clip level.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        clip: Option<f64>,
    },
}

impl ChannelSpec {
    pub fn snr_db(&self) -> Option<f64> {
        match self {
            ChannelSpec::Awgn { snr_db, .. } | ChannelSpec::Quantized { snr_db, .. } => *snr_db,
        }
    }

    pub fn set_snr_db(&mut self, value: f64) {
        match self {
            ChannelSpec::Awgn { snr_db, .. } | ChannelSpec::Quantized { snr_db, .. } => *snr_db = Some(value),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "L", alias = "l")]
    pub l: usize,
    #[serde(rename = "N", alias = "n")]
    pub n: usize,
    #[serde(rename = "M", alias = "m")]
    pub m: usize,
    pub prior: PriorSpec,
    pub channel: ChannelSpec,
    #[serde(default)]
    pub seed: u64,
}

/// A configuration with its prior and channel instantiated.
#[derive(Clone, Debug)]
pub struct ResolvedModel {
    pub config: SystemConfig,
    pub prior: Prior,
    pub channel: Channel,
}

impl ResolvedModel {
    pub fn alpha(&self) -> f64 {
        self.config.alpha()
    }

    /// Prior second moment `Xi_x`.
    pub fn xi(&self) -> HermitianCov {
        self.prior.second_moment()
    }

    /// The model seen by a solver that keeps only `diag(Sigma_x)` and `diag(Sigma_w)`.
    pub fn diagonal_restricted(&self) -> ResolvedModel {
        ResolvedModel {
            config: self.config.clone(),
            prior: self.prior.diagonal_restricted(),
            channel: self.channel.diagonal_restricted(),
        }
    }
}

/// Noise trace giving the requested SNR.
pub fn noise_trace_for_snr(rho: f64, sigma_x_trace: f64, alpha: f64, snr_db: f64) -> f64 {
    rho * sigma_x_trace / (alpha * from_db(snr_db))
}

impl SystemConfig {
    pub fn alpha(&self) -> f64 {
        self.l as f64 / self.n as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.l == 0 || self.n == 0 || self.m == 0 {
            return Err(Error::Config(format!(
                "dimensions must be positive (L={}, N={}, M={})",
                self.l, self.n, self.m
            )));
        }
        let rho = self.prior.rho();
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1], got {rho}")));
        }
        let cov = self.prior.covariance();
        if !(cov.trace > 0.0 && cov.trace.is_finite()) {
            return Err(Error::Config("prior covariance trace must be positive".into()));
        }
        match &self.channel {
            ChannelSpec::Awgn { covariance, snr_db } => {
                if snr_db.is_none() && !(covariance.trace > 0.0 && covariance.trace.is_finite()) {
                    return Err(Error::Config("noise covariance trace must be positive".into()));
                }
            }
            ChannelSpec::Quantized {
                noise_var, snr_db, bits, ..
            } => {
                if noise_var.is_none() && snr_db.is_none() {
                    return Err(Error::Config("quantized channel needs noise_var or snr_db".into()));
                }
                if *bits > crate::channels::MAX_BITS {
                    return Err(Error::Config(format!("bits must be at most {}", crate::channels::MAX_BITS)));
                }
            }
        }
        if let Some(snr) = self.channel.snr_db() {
            if !snr.is_finite() {
                return Err(Error::Config("snr_db must be finite".into()));
            }
        }
        Ok(())
    }

    /// Instantiates prior and channel. Random covariances are drawn from a
    /// stream of `seed` that is disjoint from the instance streams.
    pub fn resolve(&self) -> Result<ResolvedModel> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let pc = self.prior.covariance();
        let sigma_x = make_covariance(pc.kind, self.m, pc.trace, &mut rng);
        let prior = match &self.prior {
            PriorSpec::BernoulliGaussian { rho, .. } => {
                Prior::BernoulliGaussian(BernoulliGaussianPrior::new(*rho, sigma_x.clone())?)
            }
            PriorSpec::Gaussian { .. } => Prior::Gaussian(GaussianPrior::new(sigma_x.clone())?),
        };
        let alpha = self.alpha();
        let noise_trace = |fallback: f64| match self.channel.snr_db() {
            Some(snr) => noise_trace_for_snr(self.prior.rho(), sigma_x.trace(), alpha, snr),
            None => fallback,
        };
        let channel = match &self.channel {
            ChannelSpec::Awgn { covariance, .. } => {
                let tr = noise_trace(covariance.trace);
                let sigma_w = if tr > 0.0 {
                    make_covariance(covariance.kind, self.m, tr, &mut rng)
                } else {
                    HermitianCov::zeros(self.m)
                };
                Channel::Awgn(AwgnRowChannel::new(sigma_w)?)
            }
            ChannelSpec::Quantized {
                bits, noise_var, clip, ..
            } => {
                let var = noise_trace(noise_var.unwrap_or(0.0) * self.m as f64) / self.m as f64;
                let power = prior.second_moment().trace() / (self.m as f64 * alpha);
                let clip = clip.unwrap_or_else(|| QuantizedRowChannel::clip_for_second_moment(power));
                Channel::Quantized(QuantizedRowChannel::new(self.m, *bits, clip, var)?)
            }
        };
        Ok(ResolvedModel {
            config: self.clone(),
            prior,
            channel,
        })
    }
}

/// Builds a PSD covariance with the requested trace.
pub fn make_covariance<R: Rng + ?Sized>(kind: CovarianceKind, m: usize, trace: f64, rng: &mut R) -> HermitianCov {
    let raw = match kind {
        CovarianceKind::ScaledIdentity => ComplexMatrix::identity(m, m),
        CovarianceKind::OnesPlusI => ComplexMatrix::from_fn(m, m, |i, j| c(if i == j { 2.0 } else { 1.0 })),
        CovarianceKind::UniformOuter | CovarianceKind::UniformOuterPlus2I => {
            let a = ComplexMatrix::from_fn(m, m, |_, _| c(rng.random::<f64>()));
            let mut p = &a * a.adjoint();
            if kind == CovarianceKind::UniformOuterPlus2I {
                for i in 0..m {
                    p[(i, i)] += c(2.0);
                }
            }
            p
        }
    };
    let cov = HermitianCov::symmetrized(raw);
    cov.scale(trace / cov.trace())
}

/// One synthetic draw of `(H, X, Z, W, Y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    pub h: ComplexMatrix,
    pub x: ComplexMatrix,
    pub z: ComplexMatrix,
    /// Noise added before the channel's output map; absent for records without it.
    pub w: Option<ComplexMatrix>,
    pub y: ComplexMatrix,
    pub config: SystemConfig,
}

/// Resolves `config` and draws an instance from `config.seed`.
pub fn generate_instance(config: &SystemConfig) -> Result<ProblemInstance> {
    let model = config.resolve()?;
    ProblemInstance::sample(&model, config.seed)
}

impl ProblemInstance {
    /// Draws an instance of `model` from stream 0 of `seed`.
    pub fn sample(model: &ResolvedModel, seed: u64) -> Result<Self> {
        let cfg = &model.config;
        let (l, n, m) = (cfg.l, cfg.n, cfg.m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let scale = c(1.0 / (l as f64).sqrt());
        let mut h = ComplexMatrix::zeros(l, n);
        for i in 0..l {
            for j in 0..n {
                h[(i, j)] = standard_complex_normal(&mut rng) * scale;
            }
        }
        let mut x = ComplexMatrix::zeros(n, m);
        for i in 0..n {
            let row = model.prior.sample(&mut rng as &mut dyn RngCore);
            x.set_row(i, &row.transpose());
        }
        let z = &h * &x;
        let noise = ComplexGaussianSampler::new(RowVector::zeros(m), model.channel.noise_covariance())?;
        let mut w = ComplexMatrix::zeros(l, m);
        let mut y = ComplexMatrix::zeros(l, m);
        for i in 0..l {
            let wi = noise.sample(&mut rng);
            let zi: RowVector = z.row(i).transpose();
            y.set_row(i, &model.channel.observe(&(zi + &wi)).transpose());
            w.set_row(i, &wi.transpose());
        }
        Ok(Self {
            h,
            x,
            z,
            w: Some(w),
            y,
            config: cfg.clone(),
        })
    }

    pub fn row(m: &ComplexMatrix, i: usize) -> RowVector {
        m.row(i).transpose()
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, &InstanceRecord::from(self))?;
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        let rec: InstanceRecord = serde_json::from_reader(input)?;
        rec.try_into()
    }

    /// Binary container: magic `RWAMPINS`, `u32` version, `u64`-prefixed JSON
    /// config, then `H, X, Z, W, Y` each as a presence byte, `u64` rows, `u64`
    /// cols and row-major `(re, im)` little-endian `f64` pairs.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(BINARY_MAGIC)?;
        out.write_all(&BINARY_VERSION.to_le_bytes())?;
        let cfg = serde_json::to_vec(&self.config)?;
        out.write_all(&(cfg.len() as u64).to_le_bytes())?;
        out.write_all(&cfg)?;
        for mat in [Some(&self.h), Some(&self.x), Some(&self.z), self.w.as_ref(), Some(&self.y)] {
            match mat {
                None => out.write_all(&[0u8])?,
                Some(mat) => {
                    out.write_all(&[1u8])?;
                    out.write_all(&(mat.nrows() as u64).to_le_bytes())?;
                    out.write_all(&(mat.ncols() as u64).to_le_bytes())?;
                    for i in 0..mat.nrows() {
                        for j in 0..mat.ncols() {
                            out.write_all(&mat[(i, j)].re.to_le_bytes())?;
                            out.write_all(&mat[(i, j)].im.to_le_bytes())?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Config("not an instance container".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut input)?);
        if version != BINARY_VERSION {
            return Err(Error::Config(format!("unsupported container version {version}")));
        }
        let len = u64::from_le_bytes(read_array(&mut input)?) as usize;
        let mut cfg = vec![0u8; len];
        input.read_exact(&mut cfg)?;
        let config: SystemConfig = serde_json::from_slice(&cfg)?;
        let mut mats = Vec::with_capacity(5);
        for _ in 0..5 {
            let [present] = read_array::<1, _>(&mut input)?;
            if present == 0 {
                mats.push(None);
                continue;
            }
            let rows = u64::from_le_bytes(read_array(&mut input)?) as usize;
            let cols = u64::from_le_bytes(read_array(&mut input)?) as usize;
            let mut mat = ComplexMatrix::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    let re = f64::from_le_bytes(read_array(&mut input)?);
                    let im = f64::from_le_bytes(read_array(&mut input)?);
                    mat[(i, j)] = num_complex::Complex64::new(re, im);
                }
            }
            mats.push(Some(mat));
        }
        let missing = || Error::Config("instance container lacks a required matrix".into());
        let mut it = mats.into_iter();
        Ok(Self {
            h: it.next().flatten().ok_or_else(missing)?,
            x: it.next().flatten().ok_or_else(missing)?,
            z: it.next().flatten().ok_or_else(missing)?,
            w: it.next().flatten(),
            y: it.next().flatten().ok_or_else(missing)?,
            config,
        })
    }
}

const BINARY_MAGIC: &[u8; 8] = b"RWAMPINS";
const BINARY_VERSION: u32 = 1;

fn read_array<const K: usize, R: Read>(input: &mut R) -> Result<[u8; K]> {
    let mut buf = [0u8; K];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

#[derive(Serialize, Deserialize)]
struct InstanceRecord {
    config: SystemConfig,
    h: MatrixRecord,
    x: MatrixRecord,
    z: MatrixRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w: Option<MatrixRecord>,
    y: MatrixRecord,
}

impl From<&ProblemInstance> for InstanceRecord {
    fn from(p: &ProblemInstance) -> Self {
        Self {
            config: p.config.clone(),
            h: MatrixRecord::from_matrix(&p.h),
            x: MatrixRecord::from_matrix(&p.x),
            z: MatrixRecord::from_matrix(&p.z),
            w: p.w.as_ref().map(MatrixRecord::from_matrix),
            y: MatrixRecord::from_matrix(&p.y),
        }
    }
}

impl TryFrom<InstanceRecord> for ProblemInstance {
    type Error = Error;

    fn try_from(r: InstanceRecord) -> Result<Self> {
        Ok(Self {
            h: r.h.to_matrix()?,
            x: r.x.to_matrix()?,
            z: r.z.to_matrix()?,
            w: r.w.map(|w| w.to_matrix()).transpose()?,
            y: r.y.to_matrix()?,
            config: r.config,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultMetrics {
    pub nmse: f64,
    pub nmse_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
}

/// `||X - X_hat||_F^2 / ||X||_F^2`.
pub fn nmse(x: &ComplexMatrix, xhat: &ComplexMatrix) -> Result<ResultMetrics> {
    if x.shape() != xhat.shape() {
        return Err(Error::Config(format!(
            "shape mismatch: {:?} vs {:?}",
            x.shape(),
            xhat.shape()
        )));
    }
    let denom = frob_sqr(x);
    if denom == 0.0 {
        return Err(Error::UndefinedMetric("NMSE of an all-zero signal"));
    }
    let v = frob_sqr(&(x - xhat)) / denom;
    Ok(ResultMetrics {
        nmse: v,
        nmse_db: to_db(v),
        snr_db: None,
    })
}

/// `||H X||_F^2 / ||W||_F^2` in dB.
pub fn empirical_snr(instance: &ProblemInstance) -> Result<f64> {
    let w = instance
        .w
        .as_ref()
        .ok_or(Error::UnavailableMetric("SNR of a record without noise"))?;
    let signal = frob_sqr(&(&instance.h * &instance.x));
    Ok(to_db(signal / frob_sqr(w)))
}
