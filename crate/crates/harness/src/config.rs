//! Experiment configuration files.

use std::fmt;
use std::path::{Path, PathBuf};

use rowamp::analysis::AnalysisOptions;
use rowamp::model::{ChannelSpec, PriorSpec};
use rowamp::{SolverOptions, SystemConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

/// Estimator tags used in result records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Ep,
    EpDiagonal,
    Ls,
    Se,
    Replica,
}

impl Estimator {
    pub fn tag(self) -> &'static str {
        match self {
            Estimator::Ep => "ep",
            Estimator::EpDiagonal => "ep-diagonal",
            Estimator::Ls => "ls",
            Estimator::Se => "se",
            Estimator::Replica => "replica",
        }
    }

    /// Runs on sampled instances rather than on the model alone.
    pub fn is_empirical(self) -> bool {
        matches!(self, Estimator::Ep | Estimator::EpDiagonal | Estimator::Ls)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Axes swept by an experiment; empty axes keep the value in `system`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub snr_db: Vec<f64>,
    pub rho: Vec<f64>,
    #[serde(rename = "L", alias = "l")]
    pub l: Vec<usize>,
    pub bits: Vec<u32>,
}

/// One point of the sweep grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AxisPoint {
    pub snr_db: Option<f64>,
    pub rho: Option<f64>,
    #[serde(rename = "L")]
    pub l: Option<usize>,
    pub bits: Option<u32>,
}

impl SweepAxes {
    /// Cartesian product in the order snr, rho, L, bits (last varies fastest).
    pub fn points(&self) -> Vec<AxisPoint> {
        fn axis<T: Copy>(v: &[T]) -> Vec<Option<T>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().copied().map(Some).collect()
            }
        }
        let mut out = Vec::new();
        for snr_db in axis(&self.snr_db) {
            for rho in axis(&self.rho) {
                for l in axis(&self.l) {
                    for bits in axis(&self.bits) {
                        out.push(AxisPoint { snr_db, rho, l, bits });
                    }
                }
            }
        }
        out
    }
}

impl AxisPoint {
    /// `system` with this point's axis values substituted.
    pub fn apply(&self, system: &SystemConfig) -> Result<SystemConfig, HarnessError> {
        let mut cfg = system.clone();
        if let Some(snr) = self.snr_db {
            cfg.channel.set_snr_db(snr);
        }
        if let Some(r) = self.rho {
            match &mut cfg.prior {
                PriorSpec::BernoulliGaussian { rho, .. } => *rho = r,
                PriorSpec::Gaussian { .. } => {
                    return Err(HarnessError::Config("the rho axis needs a bernoulli-gaussian prior".into()))
                }
            }
        }
        if let Some(l) = self.l {
            cfg.l = l;
        }
        if let Some(b) = self.bits {
            match &mut cfg.channel {
                ChannelSpec::Quantized { bits, .. } => *bits = b,
                ChannelSpec::Awgn { .. } => {
                    return Err(HarnessError::Config("the bits axis needs a quantized channel".into()))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Ep]
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub system: SystemConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub analysis: AnalysisOptions,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    /// Also evaluate the replica mutual information.
    #[serde(default)]
    pub mutual_info: bool,
    #[serde(default)]
    pub sweep: SweepAxes,
    #[serde(default = "one")]
    pub trials: usize,
    /// Base seed; defaults to `system.seed`. Trial `k` uses `seed + k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn base_seed(&self) -> u64 {
        self.seed.unwrap_or(self.system.seed)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.estimators.is_empty() && !self.mutual_info {
            return Err(HarnessError::Config(
                "enable at least one estimator or mutual_info".into(),
            ));
        }
        if self.trials == 0 {
            return Err(HarnessError::Config("trials must be at least 1".into()));
        }
        self.solver.validate()?;
        for p in self.sweep.points() {
            p.apply(&self.system)?;
        }
        Ok(())
    }

    /// Short hex digest of everything that determines the results.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.name.clear();
        canonical.output = None;
        canonical.seed = Some(self.base_seed());
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        let hash = Sha256::digest(&bytes);
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
