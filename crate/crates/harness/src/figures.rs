//! Presets that regenerate the data behind the five result figures.
//!
//! Every figure has a desk-scale preset that runs in minutes and a
//! `full` preset with the original dimensions and trial counts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rowamp::analysis::AnalysisOptions;
use rowamp::mc::McOptions;
use rowamp::{SolverMode, SolverOptions, SystemConfig};
use serde_json::json;

use crate::config::{Estimator, ExperimentConfig, SweepAxes};
use crate::experiment::{run_experiment, write_csv, ExperimentOutput, ResultRecord, CSV_HEADER, MI_CSV_HEADER};
use crate::sweep::sweep_phase_diagram;
use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Figure {
    /// Per-iteration NMSE of full versus diagonal EP on correlated covariances.
    Fig4,
    /// EP against its state evolution.
    Fig5,
    /// Phase diagram over (rho, L).
    Fig6,
    /// Replica mutual information against the exact Gaussian value.
    Fig7,
    /// NMSE versus SNR for low-resolution quantizers.
    Fig8,
}

impl Figure {
    pub const ALL: [Figure; 5] = [Figure::Fig4, Figure::Fig5, Figure::Fig6, Figure::Fig7, Figure::Fig8];

    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
            Figure::Fig6 => "fig6",
            Figure::Fig7 => "fig7",
            Figure::Fig8 => "fig8",
        }
    }
}

impl FromStr for Figure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Figure::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown figure {s:?} (expected fig4..fig8)"))
    }
}

#[derive(Clone, Debug, Default)]
pub struct ReproduceOptions {
    pub full: bool,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub mc_samples: Option<usize>,
}

fn system(l: usize, n: usize, m: usize, prior: serde_json::Value, channel: serde_json::Value) -> SystemConfig {
    serde_json::from_value(json!({"L": l, "N": n, "M": m, "prior": prior, "channel": channel, "seed": 1}))
        .expect("preset system is well formed")
}

fn bg(rho: f64, kind: &str) -> serde_json::Value {
    json!({"type": "bernoulli-gaussian", "rho": rho, "covariance": {"kind": kind}})
}

fn awgn(kind: &str, snr_db: f64) -> serde_json::Value {
    json!({"type": "awgn", "covariance": {"kind": kind}, "snr_db": snr_db})
}

fn experiment(name: &str, system: SystemConfig, trials: usize) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        system,
        solver: SolverOptions::default(),
        analysis: AnalysisOptions::default(),
        estimators: vec![Estimator::Ep],
        mutual_info: false,
        sweep: SweepAxes::default(),
        trials,
        seed: None,
        output: None,
    }
}

/// Experiment configurations behind `figure`, before command-line overrides.
pub fn preset(figure: Figure, full: bool) -> Vec<ExperimentConfig> {
    let pick = |desk: usize, paper: usize| if full { paper } else { desk };
    match figure {
        Figure::Fig4 => {
            let sys = system(
                pick(128, 256),
                pick(256, 512),
                pick(8, 10),
                bg(0.1, "uniform-outer"),
                awgn("uniform-outer", 10.0),
            );
            let mut cfg = experiment("fig4", sys, pick(20, 10_000));
            cfg.estimators = vec![Estimator::Ep, Estimator::EpDiagonal];
            cfg.sweep.rho = vec![0.1, 0.15, 0.2];
            cfg.solver.max_iters = 30;
            vec![cfg]
        }
        Figure::Fig5 => {
            let sys = system(
                256,
                512,
                pick(4, 10),
                bg(0.1, "uniform-outer-plus-2I"),
                awgn("uniform-outer-plus-2I", 10.0),
            );
            let mut cfg = experiment("fig5", sys, pick(20, 10_000));
            cfg.estimators = vec![Estimator::Ep, Estimator::Se];
            cfg.sweep.snr_db = vec![5.0, 10.0, 15.0];
            // State evolution describes the undamped iteration.
            cfg.solver.damping = 1.0;
            cfg.solver.max_iters = 15;
            cfg.solver.tol = 0.0;
            vec![cfg]
        }
        Figure::Fig6 => {
            let n = pick(256, 512);
            let sys = system(n, n, pick(4, 20), bg(0.1, "uniform-outer"), awgn("uniform-outer", 20.0));
            let mut cfg = experiment("fig6", sys, pick(5, 100));
            cfg.sweep.rho = vec![0.05, 0.1, 0.15, 0.2, 0.25, 0.3];
            cfg.sweep.l = (2..=10).map(|k| k * n / 10).collect();
            vec![cfg]
        }
        Figure::Fig7 => {
            let n = pick(64, 512);
            let sys = system(
                n,
                n,
                2,
                json!({"type": "gaussian", "covariance": {"kind": "ones-plus-I"}}),
                awgn("ones-plus-I", 0.0),
            );
            let mut cfg = experiment("fig7", sys, pick(20, 100));
            cfg.estimators = Vec::new();
            cfg.mutual_info = true;
            cfg.sweep.snr_db = (-2..=4).map(|k| 5.0 * k as f64).collect();
            vec![cfg]
        }
        Figure::Fig8 => {
            let (l, n, m) = (pick(512, 1024), pick(100, 200), pick(4, 10));
            let snr: Vec<f64> = (0..=6).map(|k| 5.0 * k as f64).collect();
            let trials = pick(10, 1000);
            let quantized = json!({"type": "quantized", "bits": 1, "snr_db": 0.0});
            let mut q = experiment("fig8", system(l, n, m, bg(0.05, "scaled-identity"), quantized), trials);
            q.estimators = vec![Estimator::Ep, Estimator::Ls];
            q.sweep.snr_db = snr.clone();
            q.sweep.bits = vec![1, 2, 3];
            let mut a = experiment(
                "fig8",
                system(l, n, m, bg(0.05, "scaled-identity"), awgn("scaled-identity", 0.0)),
                trials,
            );
            a.estimators = vec![Estimator::Ep, Estimator::Ls];
            a.sweep.snr_db = snr;
            // Same solver path as the quantized runs.
            a.solver.mode = SolverMode::Diagonal;
            vec![q, a]
        }
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, opts: &ReproduceOptions) {
    if let Some(t) = opts.trials {
        cfg.trials = t;
    }
    if let Some(s) = opts.seed {
        cfg.seed = Some(s);
    }
    if let Some(n) = opts.mc_samples {
        cfg.analysis.mc = McOptions {
            prior_samples: n,
            channel_samples: n,
            ..cfg.analysis.mc
        };
    }
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), HarnessError> {
    let path = dir.join(name);
    let file = BufWriter::new(File::create(&path)?);
    Ok((path, file))
}

fn records_csv<'a>(
    dir: &Path,
    name: &str,
    records: impl IntoIterator<Item = &'a ResultRecord>,
) -> Result<PathBuf, HarnessError> {
    let (path, file) = create(dir, name)?;
    write_csv(file, CSV_HEADER, records.into_iter().map(ResultRecord::csv_line))?;
    Ok(path)
}

fn script(dir: &Path, name: &str, body: &str) -> Result<PathBuf, HarnessError> {
    let (path, mut file) = create(dir, name)?;
    file.write_all(body.as_bytes())?;
    Ok(path)
}

fn json_summary(dir: &Path, name: &str, outputs: &[ExperimentOutput]) -> Result<PathBuf, HarnessError> {
    let (path, file) = create(dir, name)?;
    serde_json::to_writer_pretty(file, outputs).map_err(|e| HarnessError::Io(e.into()))?;
    Ok(path)
}

const GP_PREAMBLE: &str = "set datafile separator ','\nset key outside right\nset grid\n";

/// Runs the preset for `figure` and writes its CSV files, a gnuplot script and
/// a JSON summary into `dir`. Returns the written paths.
pub fn reproduce(figure: Figure, opts: &ReproduceOptions, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut configs = preset(figure, opts.full);
    for cfg in &mut configs {
        apply_overrides(cfg, opts);
    }
    let name = figure.name();
    let mut written = Vec::new();
    if figure == Figure::Fig6 {
        let phase = sweep_phase_diagram(&configs[0])?;
        let (path, file) = create(dir, "fig6.csv")?;
        phase.write_csv(file)?;
        written.push(path);
        written.push(script(
            dir,
            "fig6.gp",
            &format!(
                "{GP_PREAMBLE}set xlabel 'L'\nset ylabel 'rho'\nset cblabel 'NMSE (dB)'\nset view map\n\
                 splot 'fig6.csv' every ::1 using 2:1:3 with image notitle\n"
            ),
        )?);
        let (path, file) = create(dir, "fig6.json")?;
        serde_json::to_writer_pretty(file, &phase).map_err(|e| HarnessError::Io(e.into()))?;
        written.push(path);
        return finish(written, phase.experiment.incomplete_points);
    }

    let outputs = configs.iter().map(run_experiment).collect::<Result<Vec<_>, _>>()?;
    let all = || outputs.iter().flat_map(|o| o.records.iter());
    match figure {
        Figure::Fig4 => {
            written.push(records_csv(dir, "fig4.csv", all())?);
            written.push(script(
                dir,
                "fig4.gp",
                &format!(
                    "{GP_PREAMBLE}set xlabel 'iteration'\nset ylabel 'NMSE (dB)'\n\
                     plot for [r in '0.1 0.15 0.2'] for [e in 'ep ep-diagonal'] 'fig4.csv' \
                     using (($3 == r + 0 && strcol(6) eq e && strcol(8) ne 'final') ? $8 : 1/0):9 \
                     with linespoints title e.' rho='.r\n"
                ),
            )?);
        }
        Figure::Fig5 => {
            let by = |e: Estimator| all().filter(move |r| r.estimator == e && r.iteration.is_some());
            written.push(records_csv(dir, "fig5_ep.csv", by(Estimator::Ep))?);
            written.push(records_csv(dir, "fig5_se.csv", by(Estimator::Se))?);
            written.push(script(
                dir,
                "fig5.gp",
                &format!(
                    "{GP_PREAMBLE}set xlabel 'iteration'\nset ylabel 'NMSE (dB)'\n\
                     plot for [s in '5 10 15'] 'fig5_ep.csv' using ($2 == s + 0 ? $8 : 1/0):9 \
                     with points title 'EP '.s.' dB', \\\n     \
                     for [s in '5 10 15'] 'fig5_se.csv' using ($2 == s + 0 ? $8 : 1/0):9 \
                     with lines title 'SE '.s.' dB'\n"
                ),
            )?);
        }
        Figure::Fig7 => {
            let (path, file) = create(dir, "fig7.csv")?;
            write_csv(
                file,
                MI_CSV_HEADER,
                outputs.iter().flat_map(|o| o.mutual_info.iter().map(|r| r.csv_line())),
            )?;
            written.push(path);
            written.push(script(
                dir,
                "fig7.gp",
                &format!(
                    "{GP_PREAMBLE}set xlabel 'SNR (dB)'\nset ylabel 'I(X;Y) (nats)'\n\
                     plot 'fig7.csv' every ::1 using 2:5 with lines title 'replica', \
                     '' every ::1 using 2:7:8 with yerrorbars title 'exact'\n"
                ),
            )?);
        }
        Figure::Fig8 => {
            written.push(records_csv(dir, "fig8.csv", all().filter(|r| r.iteration.is_none()))?);
            written.push(script(
                dir,
                "fig8.gp",
                &format!(
                    "{GP_PREAMBLE}set xlabel 'SNR (dB)'\nset ylabel 'NMSE (dB)'\n\
                     plot for [b in '1 2 3'] for [e in 'ep ls'] 'fig8.csv' \
                     using ((strcol(5) eq b && strcol(6) eq e) ? $2 : 1/0):9 with linespoints title e.' B='.b, \\\n     \
                     for [e in 'ep ls'] 'fig8.csv' using ((strcol(5) eq '' && strcol(6) eq e) ? $2 : 1/0):9 \
                     with linespoints title e.' unquantized'\n"
                ),
            )?);
        }
        Figure::Fig6 => unreachable!("handled above"),
    }
    written.push(json_summary(dir, &format!("{name}.json"), &outputs)?);
    finish(written, outputs.iter().map(|o| o.incomplete_points).sum())
}

fn finish(written: Vec<PathBuf>, incomplete: usize) -> Result<Vec<PathBuf>, HarnessError> {
    if incomplete > 0 {
        return Err(HarnessError::Numerical(format!(
            "{incomplete} axis point(s) produced no result"
        )));
    }
    Ok(written)
}
