//! Command-line front end of the `rowamp` binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{Estimator, ExperimentConfig};
use crate::experiment::run_experiment;
use crate::figures::{reproduce, Figure, ReproduceOptions};
use crate::sweep::sweep_phase_diagram;
use crate::HarnessError;

/// Environment variable that takes precedence over `--threads`.
pub const THREADS_ENV: &str = "ROWAMP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "rowamp", version, about = "EP recovery of row-structured signals from generalized linear measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the estimators listed in the config on sampled instances.
    Simulate(RunArgs),
    /// State-evolution prediction per iteration.
    Se(RunArgs),
    /// Replica fixed-point prediction.
    Replica(RunArgs),
    /// Replica mutual information, with the exact value for Gaussian inputs.
    MutualInfo(RunArgs),
    /// Terminal NMSE over the rho x L grid of the config.
    PhaseDiagram(RunArgs),
    /// Regenerate the data behind one of the result figures.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Base seed; trial k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads (overridden by ROWAMP_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    /// Monte Carlo samples for the prior and channel integrals.
    #[arg(long)]
    mc_samples: Option<usize>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct ReproduceArgs {
    #[arg(value_parser = parse_figure)]
    figure: Figure,
    /// Use the original dimensions and trial counts.
    #[arg(long)]
    full: bool,
    #[command(flatten)]
    common: Common,
}

fn parse_figure(s: &str) -> Result<Figure, String> {
    s.parse()
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, HarnessError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| HarnessError::Config(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}"))),
        Err(_) => Ok(flag),
    }
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    let c = &args.common;
    if let Some(s) = c.seed {
        cfg.seed = Some(s);
    }
    if let Some(t) = c.trials {
        cfg.trials = t;
    }
    if let Some(n) = c.mc_samples {
        cfg.analysis.mc.prior_samples = n;
        cfg.analysis.mc.channel_samples = n;
    }
    if let Some(out) = &c.out {
        cfg.output = Some(out.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.clone().unwrap_or_else(|| PathBuf::from("results"))
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run_config(cfg: ExperimentConfig) -> Result<(), HarnessError> {
    cfg.validate()?;
    let out = run_experiment(&cfg)?;
    report(&out.write_to_dir(&out_dir(&cfg))?);
    check_failures(out.failures.len(), out.incomplete_points)
}

fn check_failures(failures: usize, incomplete: usize) -> Result<(), HarnessError> {
    if failures > 0 {
        eprintln!("warning: {failures} trial(s) failed and were left out of the aggregates");
    }
    if incomplete > 0 {
        return Err(HarnessError::Numerical(format!(
            "{incomplete} axis point(s) produced no result"
        )));
    }
    Ok(())
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Simulate(args) => {
            let mut cfg = load(&args)?;
            cfg.estimators.retain(|e| e.is_empirical());
            cfg.mutual_info = false;
            if cfg.estimators.is_empty() {
                return Err(HarnessError::Config("simulate needs at least one of ep, ep-diagonal, ls".into()));
            }
            run_config(cfg)
        }
        Command::Se(args) => {
            let mut cfg = load(&args)?;
            cfg.estimators = vec![Estimator::Se];
            cfg.mutual_info = false;
            run_config(cfg)
        }
        Command::Replica(args) => {
            let mut cfg = load(&args)?;
            cfg.estimators = vec![Estimator::Replica];
            cfg.mutual_info = false;
            run_config(cfg)
        }
        Command::MutualInfo(args) => {
            let mut cfg = load(&args)?;
            cfg.estimators.clear();
            cfg.mutual_info = true;
            run_config(cfg)
        }
        Command::PhaseDiagram(args) => {
            let cfg = load(&args)?;
            let phase = sweep_phase_diagram(&cfg)?;
            let dir = out_dir(&cfg);
            std::fs::create_dir_all(&dir)?;
            let csv = dir.join(format!("{}.csv", cfg.name));
            phase.write_csv(std::io::BufWriter::new(std::fs::File::create(&csv)?))?;
            let json = dir.join(format!("{}.json", cfg.name));
            serde_json::to_writer_pretty(std::io::BufWriter::new(std::fs::File::create(&json)?), &phase)
                .map_err(|e| HarnessError::Io(e.into()))?;
            report(&[csv, json]);
            if !phase.l_violations.is_empty() || !phase.rho_violations.is_empty() {
                eprintln!(
                    "warning: {} monotonicity violation(s) along L, {} along rho",
                    phase.l_violations.len(),
                    phase.rho_violations.len()
                );
            }
            let e = &phase.experiment;
            check_failures(e.failures.len(), e.incomplete_points)
        }
        Command::Reproduce(args) => {
            let c = &args.common;
            let opts = ReproduceOptions {
                full: args.full,
                trials: c.trials,
                seed: c.seed,
                mc_samples: c.mc_samples,
            };
            let dir = c.out.clone().unwrap_or_else(|| Path::new("results").join(args.figure.name()));
            report(&reproduce(args.figure, &opts, &dir)?);
            Ok(())
        }
    }
}

fn common(command: &Command) -> &Common {
    match command {
        Command::Simulate(a) | Command::Se(a) | Command::Replica(a) | Command::MutualInfo(a) | Command::PhaseDiagram(a) => {
            &a.common
        }
        Command::Reproduce(a) => &a.common,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code: 0 on success, 2 for usage or configuration errors, 3 for numerical
/// failures.
pub fn cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(args) {
        Ok(p) => p,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = thread_count(common(&parsed.command).threads).and_then(|threads| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n);
        }
        let pool = builder
            .build()
            .map_err(|e| HarnessError::Config(format!("cannot start worker pool: {e}")))?;
        pool.install(|| execute(parsed.command))
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
