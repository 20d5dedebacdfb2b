//! `spcuq` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use spcuq::data::NoiseSpec;
use spcuq::harness::report::{self, UqReport};
use spcuq::harness::run::{write_config, CONFIG_FILE};
use spcuq::harness::stages::{self, TrialContext};
use spcuq::harness::{self, ExperimentConfig};

/// Exit status when some (but not all) trials failed.
const PARTIAL_FAILURE: u8 = 3;

#[derive(Parser)]
#[command(name = "spcuq", version, about = "Split-point self-consistency uncertainty quantification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or load and split) the dataset of each trial.
    Generate(StageArgs),
    /// Train the base model of each trial.
    TrainBase(StageArgs),
    /// Train the uncertainty heads of each trial.
    TrainUq(StageArgs),
    /// Evaluate each trial on its test split.
    Evaluate(StageArgs),
    /// Aggregate trial evaluations into report files.
    Report {
        /// Experiment directory.
        #[arg(long)]
        output: PathBuf,
    },
    /// All stages for every trial, then the report.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Worker threads for running trials concurrently.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment config (JSON). Defaults to <output>/config.json.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment directory; overrides the config's output_dir.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed; trial i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Noise law for the cubic dataset: gaussian, trimodal, lognormal or none.
    #[arg(long)]
    noise: Option<NoiseSpec>,
}

#[derive(Args, Clone)]
struct StageArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Only this trial index.
    #[arg(long)]
    trial: Option<usize>,
}

fn resolve(args: &CommonArgs) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
    let path = match (&args.config, &args.output) {
        (Some(c), _) => c.clone(),
        (None, Some(o)) => o.join(CONFIG_FILE),
        (None, None) => bail!("either --config or --output is required"),
    };
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
        cfg.seeds = None;
    }
    if let Some(n) = &args.noise {
        cfg.set_noise(n.clone())?;
    }
    if let Some(o) = &args.output {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    Ok((cfg, out))
}

fn selected(cfg: &ExperimentConfig, trial: Option<usize>) -> anyhow::Result<Vec<TrialContext>> {
    match trial {
        Some(i) if i >= cfg.trials => bail!("trial {i} out of range (config has {} trials)", cfg.trials),
        Some(i) => Ok(vec![TrialContext::new(cfg, i)]),
        None => Ok((0..cfg.trials).map(|i| TrialContext::new(cfg, i)).collect()),
    }
}

type Stage = fn(&ExperimentConfig, &TrialContext, &Path) -> spcuq::Result<()>;

fn stage(args: &StageArgs, f: Stage, name: &str, writes_config: bool) -> anyhow::Result<()> {
    let (cfg, out) = resolve(&args.common)?;
    if writes_config {
        write_config(&cfg, &out)?;
    }
    for ctx in selected(&cfg, args.trial)? {
        log::info!("{name}: trial {} (seed {})", ctx.index, ctx.seed);
        f(&cfg, &ctx, &out).with_context(|| format!("{name} failed for trial {}", ctx.index))?;
    }
    Ok(())
}

fn evaluate_only(cfg: &ExperimentConfig, ctx: &TrialContext, root: &Path) -> spcuq::Result<()> {
    stages::evaluate_stage(cfg, ctx, root).map(|_| ())
}

fn finish(report: &UqReport) -> ExitCode {
    print!("{}", report.render_table());
    if report.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(PARTIAL_FAILURE)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPCUQ_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => stage(a, stages::generate_stage, "generate", true).map(|_| ExitCode::SUCCESS),
        Command::TrainBase(a) => stage(a, stages::train_base_stage, "train-base", false).map(|_| ExitCode::SUCCESS),
        Command::TrainUq(a) => stage(a, stages::train_uq_stage, "train-uq", false).map(|_| ExitCode::SUCCESS),
        Command::Evaluate(a) => stage(a, evaluate_only, "evaluate", false).map(|_| ExitCode::SUCCESS),
        Command::Report { output } => report::collect(output)
            .and_then(|r| r.write(output).map(|_| r))
            .map(|r| finish(&r))
            .map_err(Into::into),
        Command::Run { common, parallel } => resolve(common)
            .and_then(|(cfg, out)| harness::run(&cfg, &out, *parallel).map_err(Into::into))
            .map(|r| finish(&r)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
