//! Running configured experiments and tabulating the results.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use rowamp::analysis::{
    exact_gaussian_mutual_information, mutual_information, replica_fixed_point, se_trajectory, ReplicaOptions,
    ReplicaSolution,
};
use rowamp::model::{nmse, to_db, ChannelSpec, PriorSpec, ResolvedModel};
use rowamp::{ep_run, Channel, Prior, ProblemInstance, RowChannel, RowPrior, SolverMode, SolverOptions};
use serde::{Deserialize, Serialize};

use crate::baselines::ls_baseline;
use crate::config::{AxisPoint, Estimator, ExperimentConfig};
use crate::HarnessError;

/// Column layout of the results CSV.
pub const CSV_HEADER: &str = "digest,snr_db,rho,L,bits,estimator,mode,iteration,nmse_db,nmse_db_stderr,trials,failures";

/// Column layout of the mutual-information CSV.
pub const MI_CSV_HEADER: &str = "digest,snr_db,rho,L,replica_mi,replica_mi_stderr,exact_mi,exact_mi_stderr,trials";

/// Largest `L M` for which the exact Gaussian mutual information is evaluated.
pub const EXACT_MI_MAX_DIM: usize = 4096;

/// Aggregated NMSE of one estimator at one axis point and iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub digest: String,
    pub snr_db: Option<f64>,
    pub rho: f64,
    #[serde(rename = "L")]
    pub l: usize,
    pub bits: Option<u32>,
    pub estimator: Estimator,
    /// Covariance structure used by the solver; absent for non-iterative estimators.
    pub mode: Option<SolverMode>,
    /// `None` for the terminal value.
    pub iteration: Option<usize>,
    /// dB of the trial-averaged linear NMSE.
    pub nmse_db: f64,
    /// Standard error over trials (Monte Carlo error for `se`/`replica`).
    pub nmse_db_stderr: f64,
    /// Successful trials; zero for the deterministic predictions.
    pub trials: usize,
    pub failures: usize,
    /// Mean wall time per trial. Kept out of the CSV so reruns are byte-identical.
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiRecord {
    pub digest: String,
    pub snr_db: Option<f64>,
    pub rho: f64,
    #[serde(rename = "L")]
    pub l: usize,
    /// Replica prediction of `I(X; Y | H)` in nats.
    pub replica_mi: f64,
    pub replica_mi_stderr: f64,
    /// Mean exact value over the trial channel draws (Gaussian rows, AWGN).
    pub exact_mi: Option<f64>,
    pub exact_mi_stderr: Option<f64>,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub point: AxisPoint,
    pub estimator: Option<Estimator>,
    pub trial: Option<usize>,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub name: String,
    pub digest: String,
    pub config: ExperimentConfig,
    pub records: Vec<ResultRecord>,
    pub mutual_info: Vec<MiRecord>,
    pub failures: Vec<TrialFailure>,
    /// Axis points where some requested output could not be produced at all.
    pub incomplete_points: usize,
    pub wall_seconds: f64,
}

/// Linear NMSE of each trial, one entry per iteration plus the terminal value.
struct TrialCurve {
    per_iter: Vec<f64>,
    last: f64,
    seconds: f64,
}

/// Mean in dB with its delta-method standard error.
pub fn aggregate_db(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 || mean <= 0.0 {
        return (to_db(mean), 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (to_db(mean), 10.0 / std::f64::consts::LN_10 * (var / n).sqrt() / mean)
}

fn solver_mode(estimator: Estimator, options: &SolverOptions, channel: &Channel) -> Option<SolverMode> {
    match estimator {
        Estimator::Ep if channel.requires_diagonal() => Some(SolverMode::Diagonal),
        Estimator::Ep => Some(options.mode),
        Estimator::EpDiagonal => Some(SolverMode::Diagonal),
        _ => None,
    }
}

fn run_trial(
    estimator: Estimator,
    model: &ResolvedModel,
    instance: &ProblemInstance,
    options: &SolverOptions,
) -> Result<TrialCurve, rowamp::Error> {
    let start = Instant::now();
    match estimator {
        Estimator::Ls => {
            let v = nmse(&instance.x, &ls_baseline(instance))?.nmse;
            Ok(TrialCurve {
                per_iter: Vec::new(),
                last: v,
                seconds: start.elapsed().as_secs_f64(),
            })
        }
        Estimator::Ep | Estimator::EpDiagonal => {
            let mut opts = *options;
            if estimator == Estimator::EpDiagonal {
                opts.mode = SolverMode::Diagonal;
            }
            let out = ep_run(instance, &model.prior, &model.channel, &opts).map_err(|f| f.error)?;
            let mut per_iter = out
                .trajectory
                .points
                .iter()
                .map(|p| p.nmse.ok_or(rowamp::Error::UndefinedMetric("NMSE of an all-zero signal")))
                .collect::<Result<Vec<_>, _>>()?;
            let last = *per_iter.last().expect("at least one iteration");
            // A converged run stays at its fixed point.
            per_iter.resize(opts.max_iters, last);
            Ok(TrialCurve {
                per_iter,
                last,
                seconds: start.elapsed().as_secs_f64(),
            })
        }
        Estimator::Se | Estimator::Replica => unreachable!("not an empirical estimator"),
    }
}

struct PointContext<'a> {
    cfg: &'a ExperimentConfig,
    digest: &'a str,
    point: AxisPoint,
    rho: f64,
    l: usize,
    snr_db: Option<f64>,
    bits: Option<u32>,
}

impl PointContext<'_> {
    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        estimator: Estimator,
        mode: Option<SolverMode>,
        iteration: Option<usize>,
        (nmse_db, nmse_db_stderr): (f64, f64),
        trials: usize,
        failures: usize,
        wall_seconds: f64,
    ) -> ResultRecord {
        ResultRecord {
            digest: self.digest.to_string(),
            snr_db: self.snr_db,
            rho: self.rho,
            l: self.l,
            bits: self.bits,
            estimator,
            mode,
            iteration,
            nmse_db,
            nmse_db_stderr,
            trials,
            failures,
            wall_seconds,
        }
    }
}

/// Runs every axis point of `cfg`. Per-trial failures are recorded and left
/// out of the aggregates.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    let digest = cfg.digest();
    let base = cfg.base_seed();
    let mut records = Vec::new();
    let mut mi_records = Vec::new();
    let mut failures = Vec::new();
    let mut incomplete = 0;

    for point in cfg.sweep.points() {
        let mut system = point.apply(&cfg.system)?;
        system.seed = base;
        let model = system.resolve()?;
        let ctx = PointContext {
            cfg,
            digest: &digest,
            point,
            rho: system.prior.rho(),
            l: system.l,
            snr_db: system.channel.snr_db(),
            bits: match system.channel {
                ChannelSpec::Quantized { bits, .. } => Some(bits),
                ChannelSpec::Awgn { .. } => None,
            },
        };
        let mut complete = true;
        complete &= empirical(&ctx, &model, base, &mut records, &mut failures)?;
        complete &= analytical(&ctx, &model, base, &mut records, &mut mi_records, &mut failures)?;
        if !complete {
            incomplete += 1;
        }
    }
    Ok(ExperimentOutput {
        name: cfg.name.clone(),
        digest,
        config: cfg.clone(),
        records,
        mutual_info: mi_records,
        failures,
        incomplete_points: incomplete,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

fn empirical(
    ctx: &PointContext,
    model: &ResolvedModel,
    base: u64,
    records: &mut Vec<ResultRecord>,
    failures: &mut Vec<TrialFailure>,
) -> Result<bool, HarnessError> {
    let cfg = ctx.cfg;
    let estimators: Vec<Estimator> = cfg.estimators.iter().copied().filter(|e| e.is_empirical()).collect();
    if estimators.is_empty() {
        return Ok(true);
    }
    let diagonal = estimators
        .contains(&Estimator::EpDiagonal)
        .then(|| model.diagonal_restricted());
    let trials: Vec<Result<Vec<Result<TrialCurve, String>>, rowamp::Error>> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| {
            let instance = ProblemInstance::sample(model, base.wrapping_add(k as u64))?;
            Ok(estimators
                .iter()
                .map(|&e| {
                    let m = if e == Estimator::EpDiagonal {
                        diagonal.as_ref().expect("built above")
                    } else {
                        model
                    };
                    run_trial(e, m, &instance, &cfg.solver).map_err(|err| err.to_string())
                })
                .collect())
        })
        .collect();
    let mut per_estimator: Vec<Vec<TrialCurve>> = estimators.iter().map(|_| Vec::new()).collect();
    for (k, trial) in trials.into_iter().enumerate() {
        for (i, result) in trial?.into_iter().enumerate() {
            match result {
                Ok(curve) => per_estimator[i].push(curve),
                Err(error) => failures.push(TrialFailure {
                    point: ctx.point,
                    estimator: Some(estimators[i]),
                    trial: Some(k),
                    error,
                }),
            }
        }
    }
    let mut complete = true;
    for (&e, curves) in estimators.iter().zip(&per_estimator) {
        let ok = curves.len();
        let failed = cfg.trials - ok;
        if ok == 0 {
            complete = false;
            continue;
        }
        let mode = solver_mode(e, &cfg.solver, &model.channel);
        let secs = curves.iter().map(|c| c.seconds).sum::<f64>() / ok as f64;
        let iters = curves[0].per_iter.len();
        for t in 0..iters {
            let vals: Vec<f64> = curves.iter().map(|c| c.per_iter[t]).collect();
            records.push(ctx.record(e, mode, Some(t + 1), aggregate_db(&vals), ok, failed, secs));
        }
        let last: Vec<f64> = curves.iter().map(|c| c.last).collect();
        records.push(ctx.record(e, mode, None, aggregate_db(&last), ok, failed, secs));
    }
    Ok(complete)
}

fn analytical(
    ctx: &PointContext,
    model: &ResolvedModel,
    base: u64,
    records: &mut Vec<ResultRecord>,
    mi_records: &mut Vec<MiRecord>,
    failures: &mut Vec<TrialFailure>,
) -> Result<bool, HarnessError> {
    let cfg = ctx.cfg;
    let alpha = model.alpha();
    let xi_trace = model.xi().trace();
    let db_stderr = |mse_trace: f64, trace_stderr: f64| {
        if mse_trace > 0.0 {
            10.0 / std::f64::consts::LN_10 * trace_stderr / mse_trace
        } else {
            0.0
        }
    };
    let mut complete = true;
    let mut fail = |estimator: Option<Estimator>, error: &rowamp::Error| {
        if !error.is_numerical() {
            return Err(HarnessError::Config(error.to_string()));
        }
        failures.push(TrialFailure {
            point: ctx.point,
            estimator,
            trial: None,
            error: error.to_string(),
        });
        Ok(())
    };

    if cfg.estimators.contains(&Estimator::Se) {
        let start = Instant::now();
        match se_trajectory(alpha, &model.prior, &model.channel, cfg.solver.max_iters, &cfg.analysis) {
            Ok(traj) => {
                let secs = start.elapsed().as_secs_f64();
                let m = model.config.m as f64;
                for (t, st) in traj.iter().enumerate().skip(1) {
                    let tr = st.qx_bar.trace();
                    let v = (to_db(tr / xi_trace), db_stderr(tr, st.mse_stderr * m));
                    records.push(ctx.record(Estimator::Se, None, Some(t), v, 0, 0, secs));
                    if t + 1 == traj.len() {
                        records.push(ctx.record(Estimator::Se, None, None, v, 0, 0, secs));
                    }
                }
            }
            Err(e) => {
                fail(Some(Estimator::Se), &e)?;
                complete = false;
            }
        }
    }

    let want_replica = cfg.estimators.contains(&Estimator::Replica);
    if want_replica || cfg.mutual_info {
        let start = Instant::now();
        let options = ReplicaOptions {
            analysis: cfg.analysis,
            ..Default::default()
        };
        match replica_fixed_point(alpha, &model.prior, &model.channel, &options) {
            Ok(sol) => {
                if want_replica {
                    let tr = sol.mmse.trace();
                    let v = (to_db(tr / xi_trace), 0.0);
                    let secs = start.elapsed().as_secs_f64();
                    records.push(ctx.record(Estimator::Replica, None, None, v, 0, 0, secs));
                }
                if cfg.mutual_info {
                    match mi_record(ctx, model, &sol, base) {
                        Ok(r) => mi_records.push(r),
                        Err(e) => {
                            fail(None, &e)?;
                            complete = false;
                        }
                    }
                }
            }
            Err(e) => {
                fail(Some(Estimator::Replica), &e)?;
                complete = false;
            }
        }
    }
    Ok(complete)
}

fn mi_record(
    ctx: &PointContext,
    model: &ResolvedModel,
    sol: &ReplicaSolution,
    base: u64,
) -> Result<MiRecord, rowamp::Error> {
    let cfg = ctx.cfg;
    let n = model.config.n;
    let mi = mutual_information(sol, model.alpha(), n, &model.prior, &model.channel, &cfg.analysis)?;
    let exact = match (&model.prior, &model.channel, &model.config.prior) {
        (Prior::Gaussian(g), Channel::Awgn(ch), PriorSpec::Gaussian { .. })
            if model.config.l * model.config.m <= EXACT_MI_MAX_DIM =>
        {
            let values = (0..cfg.trials)
                .into_par_iter()
                .map(|k| {
                    let inst = ProblemInstance::sample(model, base.wrapping_add(k as u64))?;
                    Ok(exact_gaussian_mutual_information(&inst.h, &g.second_moment(), ch.sigma_w())?)
                })
                .collect::<Result<Vec<f64>, rowamp::Error>>()?;
            let k = values.len() as f64;
            let mean = values.iter().sum::<f64>() / k;
            let se = if values.len() > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
            } else {
                0.0
            };
            Some((mean, se))
        }
        _ => None,
    };
    Ok(MiRecord {
        digest: ctx.digest.to_string(),
        snr_db: ctx.snr_db,
        rho: ctx.rho,
        l: ctx.l,
        replica_mi: mi.total.value,
        replica_mi_stderr: mi.total.stderr,
        exact_mi: exact.map(|e| e.0),
        exact_mi_stderr: exact.map(|e| e.1),
        trials: if exact.is_some() { cfg.trials } else { 0 },
    })
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ResultRecord {
    pub fn csv_line(&self) -> String {
        let mode = match self.mode {
            Some(SolverMode::Full) => "full",
            Some(SolverMode::Diagonal) => "diagonal",
            None => "",
        };
        let iteration = self.iteration.map_or_else(|| "final".to_string(), |t| t.to_string());
        format!(
            "{},{},{},{},{},{},{},{},{:.6},{:.6},{},{}",
            self.digest,
            opt(self.snr_db),
            self.rho,
            self.l,
            opt(self.bits),
            self.estimator,
            mode,
            iteration,
            self.nmse_db,
            self.nmse_db_stderr,
            self.trials,
            self.failures
        )
    }
}

impl MiRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{},{},{}",
            self.digest,
            opt(self.snr_db),
            self.rho,
            self.l,
            self.replica_mi,
            self.replica_mi_stderr,
            opt(self.exact_mi.map(|v| format!("{v:.6}"))),
            opt(self.exact_mi_stderr.map(|v| format!("{v:.6}"))),
            self.trials
        )
    }
}

/// Writes `header` and one line per record.
pub fn write_csv<W: Write>(mut out: W, header: &str, lines: impl IntoIterator<Item = String>) -> std::io::Result<()> {
    writeln!(out, "{header}")?;
    for line in lines {
        writeln!(out, "{line}")?;
    }
    Ok(())
}

impl ExperimentOutput {
    pub fn write_records_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_csv(out, CSV_HEADER, self.records.iter().map(ResultRecord::csv_line))
    }

    pub fn write_mi_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_csv(out, MI_CSV_HEADER, self.mutual_info.iter().map(MiRecord::csv_line))
    }

    pub fn write_json<W: Write>(&self, out: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(out, self)
    }

    /// Writes `<name>.csv`, `<name>.json` and, when present, `<name>_mi.csv`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        if !self.records.is_empty() {
            let path = dir.join(format!("{}.csv", self.name));
            self.write_records_csv(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
            written.push(path);
        }
        if !self.mutual_info.is_empty() {
            let path = dir.join(format!("{}_mi.csv", self.name));
            self.write_mi_csv(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
            written.push(path);
        }
        let path = dir.join(format!("{}.json", self.name));
        self.write_json(std::io::BufWriter::new(std::fs::File::create(&path)?))
            .map_err(|e| HarnessError::Io(e.into()))?;
        written.push(path);
        Ok(written)
    }

    /// Records of one estimator, in iteration order with the terminal value last.
    pub fn records_for(&self, estimator: Estimator) -> impl Iterator<Item = &ResultRecord> {
        self.records.iter().filter(move |r| r.estimator == estimator)
    }

    pub fn terminal(&self, estimator: Estimator) -> impl Iterator<Item = &ResultRecord> {
        self.records_for(estimator).filter(|r| r.iteration.is_none())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_single_value_has_no_spread() {
        assert_eq!(aggregate_db(&[0.1]), (-10.0, 0.0));
    }

    #[test]
    fn aggregate_averages_linear_values() {
        let (db, se) = aggregate_db(&[0.1, 0.3]);
        assert!((db - to_db(0.2)).abs() < 1e-12);
        // sd = 0.1414, se = 0.1, relative 0.5
        assert!((se - 10.0 / std::f64::consts::LN_10 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn csv_line_layout() {
        let r = ResultRecord {
            digest: "ab".into(),
            snr_db: Some(10.0),
            rho: 0.1,
            l: 8,
            bits: None,
            estimator: Estimator::EpDiagonal,
            mode: Some(SolverMode::Diagonal),
            iteration: None,
            nmse_db: -12.5,
            nmse_db_stderr: 0.25,
            trials: 3,
            failures: 1,
            wall_seconds: 9.0,
        };
        assert_eq!(r.csv_line(), "ab,10,0.1,8,,ep-diagonal,diagonal,final,-12.500000,0.250000,3,1");
        assert_eq!(r.csv_line().split(',').count(), CSV_HEADER.split(',').count());
    }
}
