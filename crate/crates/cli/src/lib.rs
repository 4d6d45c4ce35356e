//! Command-line pipeline around `taskemb`: a TOML run config, one
//! subcommand per stage, and a content-hashed manifest of every artifact.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

pub use config::{Preset, RunConfig};
pub use error::{CliError, CliResult};
pub use manifest::{Manifest, StageRecord};
pub use stages::{Pipeline, Stage, StageStatus};

use clap::{Parser, Subcommand};
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "taskemb", version, about = "Learn and evaluate information-theoretic task embeddings")]
pub struct Cli {
    /// Run config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; overrides the config. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Rerun stages even when up to date and ignore stale upstream hashes.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a config for one environment and preset.
    InitConfig {
        #[arg(long)]
        env: String,
        /// `desk` or `full`.
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "run")]
        output_dir: PathBuf,
        /// Destination file; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the agent population and snapshot it.
    TrainPopulation,
    /// Estimate MI and PoS over split task pools and sample constraints.
    GenConstraints {
        /// Drop triplets whose two MI estimates differ by less than this.
        #[arg(long)]
        drop_ties: Option<f64>,
    },
    /// Fit the embedding network, plus the variant without norm constraints.
    TrainEmbedding {
        /// Sample fresh constraints every iteration instead of using the pool.
        #[arg(long)]
        online_constraints: bool,
    },
    /// Train the variational prediction-model baseline.
    TrainPredmodel,
    /// Performance prediction against all baselines for every quiz size.
    EvalPrediction,
    /// Type-1 and Type-2 task selection against all baselines.
    EvalSelection,
    /// Silhouette scores on cluster labels and the norm/difficulty correlation.
    Silhouette,
    /// Test loss for each embedding dimension.
    DimSweep,
    /// Embeddings and their PCA projection for plotting.
    ExportViz,
    /// Per-figure CSVs from the benchmark results.
    PlotData,
    /// Every stage in order, skipping those already up to date.
    RunAll,
}

impl Command {
    fn stage(&self) -> Option<Stage> {
        Some(match self {
            Command::TrainPopulation => Stage::TrainPopulation,
            Command::GenConstraints { .. } => Stage::GenConstraints,
            Command::TrainEmbedding { .. } => Stage::TrainEmbedding,
            Command::TrainPredmodel => Stage::TrainPredModel,
            Command::EvalPrediction => Stage::EvalPrediction,
            Command::EvalSelection => Stage::EvalSelection,
            Command::Silhouette => Stage::Silhouette,
            Command::DimSweep => Stage::DimSweep,
            Command::ExportViz => Stage::ExportViz,
            Command::PlotData => Stage::PlotData,
            Command::InitConfig { .. } | Command::RunAll => return None,
        })
    }
}

/// Runs `f` on a pool of `threads` workers, or the global pool when `None`.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> CliResult<R> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Config("threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}"))),
    }
}

fn init_config(env: &str, preset: &str, seed: u64, output_dir: PathBuf, out: Option<PathBuf>) -> CliResult<()> {
    let env = env.parse().map_err(|e: taskemb::Error| CliError::Config(e.to_string()))?;
    let cfg = RunConfig::preset(env, preset.parse()?, seed, output_dir)?;
    let text = cfg.to_toml();
    match out {
        Some(path) => std::fs::write(&path, text).map_err(|source| CliError::Io { path, source }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    if let Command::InitConfig {
        env,
        preset,
        seed,
        output_dir,
        out,
    } = cli.command
    {
        return init_config(&env, &preset, seed, output_dir, out);
    }
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config <path> is required for this command".into()))?;
    let mut cfg = RunConfig::load(&path)?;
    match &cli.command {
        Command::GenConstraints { drop_ties: Some(eps) } => cfg.constraints.drop_ties = Some(*eps),
        Command::TrainEmbedding {
            online_constraints: true,
        } => cfg.training.online = true,
        _ => {}
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    let threads = cfg.threads;
    let mut pipeline = Pipeline::new(cfg, cli.force)?;
    let stage = cli.command.stage();
    with_threads(threads, move || match stage {
        Some(s) => pipeline.run(s).map(|_| ()),
        None => pipeline.run_all().map(|_| ()),
    })?
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
