#![allow(dead_code)]

use std::path::Path;

use rowamp_harness::ExperimentConfig;
use serde_json::{json, Value};

/// A small Bernoulli-Gaussian / AWGN experiment as JSON.
pub fn mini(l: usize, n: usize, m: usize, rho: f64, trials: usize) -> Value {
    json!({
        "name": "mini",
        "system": {
            "L": l, "N": n, "M": m,
            "prior": {"type": "bernoulli-gaussian", "rho": rho, "covariance": {"kind": "uniform-outer"}},
            "channel": {"type": "awgn", "covariance": {"kind": "uniform-outer"}, "snr_db": 10.0},
            "seed": 7
        },
        "solver": {"max_iters": 8},
        "estimators": ["ep", "ep-diagonal", "ls"],
        "trials": trials
    })
}

pub fn config(v: &Value) -> ExperimentConfig {
    ExperimentConfig::from_json(&v.to_string()).unwrap()
}

pub fn write_json(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}
