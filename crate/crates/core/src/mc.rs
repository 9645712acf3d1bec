//! Deterministic, chunked Monte Carlo plumbing.
//!
//! Samples are split into fixed-size chunks; chunk `k` draws from stream `k`
//! of a ChaCha generator seeded with the run seed. Chunks run in parallel and
//! are reduced in chunk order, so results do not depend on the thread count.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numerics::{ComplexMatrix, HermitianCov};

/// Samples per chunk; part of the reproducibility contract.
pub const CHUNK: usize = 1024;

/// Default sample budget for prior-side integrals.
pub const PRIOR_SAMPLES: usize = 20_000;
/// Default sample budget for channel-side integrals.
pub const CHANNEL_SAMPLES: usize = 40_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McOptions {
    pub prior_samples: usize,
    pub channel_samples: usize,
    pub seed: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            prior_samples: PRIOR_SAMPLES,
            channel_samples: CHANNEL_SAMPLES,
            seed: 0x5eed,
        }
    }
}

impl McOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    /// Same budget for both integrals.
    pub fn uniform(samples: usize, seed: u64) -> Self {
        Self {
            prior_samples: samples,
            channel_samples: samples,
            seed,
        }
    }
}

/// Generator for chunk `chunk` of the run seeded by `seed`.
pub fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// Runs `body(rng, count)` on each chunk of `samples` and returns the
/// per-chunk results in chunk order.
pub fn run_chunks<T, F>(samples: usize, seed: u64, body: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync,
{
    let chunks = samples.div_ceil(CHUNK).max(1);
    (0..chunks)
        .into_par_iter()
        .map(|k| {
            let count = if k + 1 == chunks { samples - k * CHUNK } else { CHUNK };
            let mut rng = chunk_rng(seed, k as u64);
            body(&mut rng, count)
        })
        .collect()
}

/// Running sums for a matrix-valued estimator. The standard error tracks the trace.
#[derive(Clone, Debug)]
pub struct MatrixAccumulator {
    sum: ComplexMatrix,
    trace_sum: f64,
    trace_sq: f64,
    count: usize,
}

impl MatrixAccumulator {
    pub fn new(m: usize) -> Self {
        Self {
            sum: DMatrix::zeros(m, m),
            trace_sum: 0.0,
            trace_sq: 0.0,
            count: 0,
        }
    }

    pub fn push(&mut self, value: &ComplexMatrix) {
        self.sum += value;
        let tr: f64 = (0..value.nrows()).map(|i| value[(i, i)].re).sum();
        self.trace_sum += tr;
        self.trace_sq += tr * tr;
        self.count += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        self.sum += &other.sum;
        self.trace_sum += other.trace_sum;
        self.trace_sq += other.trace_sq;
        self.count += other.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> HermitianCov {
        let n = self.count.max(1) as f64;
        HermitianCov::symmetrized(&self.sum / Complex64::new(n, 0.0))
    }

    /// Standard error of the trace of the mean.
    pub fn trace_stderr(&self) -> f64 {
        stderr(self.trace_sum, self.trace_sq, self.count)
    }
}

/// Running sums for a scalar estimator.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScalarAccumulator {
    sum: f64,
    sum_sq: f64,
    count: usize,
}

impl ScalarAccumulator {
    pub fn push(&mut self, v: f64) {
        self.sum += v;
        self.sum_sq += v * v;
        self.count += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.count += other.count;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count.max(1) as f64
    }

    pub fn stderr(&self) -> f64 {
        stderr(self.sum, self.sum_sq, self.count)
    }
}

fn stderr(sum: f64, sum_sq: f64, n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (var / nf).sqrt()
}

/// Mean and standard error of a scalar estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl From<&ScalarAccumulator> for Estimate {
    fn from(acc: &ScalarAccumulator) -> Self {
        Self {
            value: acc.mean(),
            stderr: acc.stderr(),
        }
    }
}
