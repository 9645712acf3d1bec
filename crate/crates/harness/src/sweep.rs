//! Rectangular (rho, L) sweeps of the terminal EP NMSE.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::{Estimator, ExperimentConfig};
use crate::experiment::{run_experiment, ExperimentOutput};
use crate::HarnessError;

/// Header of the phase-diagram CSV.
pub const PHASE_CSV_HEADER: &str = "rho,L,nmse_db,nmse_db_stderr,trials";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub rho: Vec<f64>,
    #[serde(rename = "L")]
    pub l: Vec<usize>,
    /// `nmse_db[i][j]` for `rho[i]` and `L[j]`.
    pub nmse_db: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub trials: Vec<Vec<usize>>,
    /// Adjacent pairs along L where the NMSE rises by more than two standard errors.
    pub l_violations: Vec<(usize, usize)>,
    /// Adjacent pairs along rho where the NMSE falls by more than two standard errors.
    pub rho_violations: Vec<(usize, usize)>,
    pub experiment: ExperimentOutput,
}

fn exceeds(higher: f64, lower: f64, se_a: f64, se_b: f64) -> bool {
    higher - lower > 2.0 * (se_a * se_a + se_b * se_b).sqrt()
}

/// Runs the `rho` x `L` grid of `cfg` with the `ep` estimator and tabulates
/// the terminal NMSE. Cells whose trials all failed hold NaN.
pub fn sweep_phase_diagram(cfg: &ExperimentConfig) -> Result<PhaseDiagram, HarnessError> {
    if cfg.sweep.rho.is_empty() || cfg.sweep.l.is_empty() {
        return Err(HarnessError::Config("a phase diagram needs non-empty rho and L axes".into()));
    }
    if cfg.sweep.snr_db.len() > 1 || cfg.sweep.bits.len() > 1 {
        return Err(HarnessError::Config("a phase diagram sweeps only rho and L".into()));
    }
    let mut run = cfg.clone();
    run.estimators = vec![Estimator::Ep];
    run.mutual_info = false;
    let out = run_experiment(&run)?;
    let (nr, nl) = (cfg.sweep.rho.len(), cfg.sweep.l.len());
    let mut nmse_db = vec![vec![f64::NAN; nl]; nr];
    let mut stderr = vec![vec![f64::NAN; nl]; nr];
    let mut trials = vec![vec![0; nl]; nr];
    for r in out.terminal(Estimator::Ep) {
        let i = cfg.sweep.rho.iter().position(|&v| v == r.rho).expect("rho on the grid");
        let j = cfg.sweep.l.iter().position(|&v| v == r.l).expect("L on the grid");
        nmse_db[i][j] = r.nmse_db;
        stderr[i][j] = r.nmse_db_stderr;
        trials[i][j] = r.trials;
    }
    let mut l_violations = Vec::new();
    let mut rho_violations = Vec::new();
    for i in 0..nr {
        for j in 0..nl {
            if j + 1 < nl && exceeds(nmse_db[i][j + 1], nmse_db[i][j], stderr[i][j], stderr[i][j + 1]) {
                l_violations.push((i, j));
            }
            if i + 1 < nr && exceeds(nmse_db[i][j], nmse_db[i + 1][j], stderr[i][j], stderr[i + 1][j]) {
                rho_violations.push((i, j));
            }
        }
    }
    Ok(PhaseDiagram {
        rho: cfg.sweep.rho.clone(),
        l: cfg.sweep.l.clone(),
        nmse_db,
        stderr,
        trials,
        l_violations,
        rho_violations,
        experiment: out,
    })
}

impl PhaseDiagram {
    /// Long-format CSV, one line per cell.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{PHASE_CSV_HEADER}")?;
        for (i, rho) in self.rho.iter().enumerate() {
            for (j, l) in self.l.iter().enumerate() {
                writeln!(
                    out,
                    "{rho},{l},{:.6},{:.6},{}",
                    self.nmse_db[i][j], self.stderr[i][j], self.trials[i][j]
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn violation_uses_combined_stderr() {
        assert!(!exceeds(-10.0, -10.5, 0.2, 0.2));
        assert!(exceeds(-10.0, -11.0, 0.2, 0.2));
    }
}
