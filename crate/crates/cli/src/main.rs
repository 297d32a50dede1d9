//! Operator surface: configuration loading, run orchestration, replay,
//! reporting, and export of plot-ready data.
//!
//! Exit codes: 0 success, 2 config error, 3 runtime error, 4 replay
//! divergence.

mod runner;

use anyhow::Context;
use cimnas::config::{ConfigError, OptimizerKind, RunConfig};
use cimnas::llm::LlmError;
use cimnas::search::SearchError;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "cimnas", version, about = "LLM-guided co-design of CNNs and crossbar accelerators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// Run configuration (TOML). Omit to use built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.directory` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Search seed; overrides `search.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Episode count; overrides `search.episodes`.
    #[arg(long)]
    episodes: Option<usize>,
    /// Optimizer; overrides `search.optimizer`.
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
enum OptimizerArg {
    LlmFull,
    LlmNaive,
    Random,
    Evolutionary,
    HeuristicOracle,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(value: OptimizerArg) -> Self {
        match value {
            OptimizerArg::LlmFull => OptimizerKind::LlmFull,
            OptimizerArg::LlmNaive => OptimizerKind::LlmNaive,
            OptimizerArg::Random => OptimizerKind::Random,
            OptimizerArg::Evolutionary => OptimizerKind::Evolutionary,
            OptimizerArg::HeuristicOracle => OptimizerKind::HeuristicOracle,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the episode loop with the configured optimizer.
    Search {
        #[command(flatten)]
        common: CommonArgs,
        /// Resume an interrupted run from its history file instead of
        /// starting over.
        #[arg(long)]
        resume: bool,
    },
    /// Re-run a search against a recorded transcript; byte-identical history
    /// or exit code 4.
    Replay {
        #[command(flatten)]
        common: CommonArgs,
        /// Recorded transcript to replay.
        #[arg(long, value_name = "TRANSCRIPT")]
        replay: PathBuf,
    },
    /// Compute and export the Pareto front of a history file.
    Pareto {
        #[command(flatten)]
        common: CommonArgs,
        /// History file (JSONL) to analyze.
        #[arg(long)]
        history: PathBuf,
    },
    /// Score a single rollout: accuracy, cost, and reward.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Rollout in bracket form, e.g.
        /// "[[32,3],[32,3],[64,3],[64,3],[128,3],[128,3],[128,6,2]]".
        #[arg(long)]
        rollout: String,
    },
    /// Exhaustively evaluate a small space with the surrogate and export the
    /// ground-truth table.
    Enumerate {
        #[command(flatten)]
        common: CommonArgs,
        /// Enumeration cap.
        #[arg(long, default_value_t = 1_000_000)]
        cap: u128,
    },
    /// Cold-start experiment: heuristic-oracle vs random episodes-to-optimum
    /// over many seeds.
    ColdstartBench {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 2000)]
        max_episodes: usize,
        /// Target band around the optimum, as a fraction.
        #[arg(long, default_value_t = 0.02)]
        within: f64,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(classify(&err));
        }
    }
}

/// 2 for configuration problems, 4 for replay divergence, 3 otherwise.
fn classify(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(LlmError::ReplayDivergence { .. }) = cause.downcast_ref::<LlmError>() {
            return 4;
        }
        if let Some(SearchError::Llm(LlmError::ReplayDivergence { .. })) =
            cause.downcast_ref::<SearchError>()
        {
            return 4;
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
    }
    3
}

fn load_config(common: &CommonArgs) -> anyhow::Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        config.output.directory = out.clone();
        config.output.transcript = None;
    }
    if let Some(seed) = common.seed {
        config.search.seed = seed;
    }
    if let Some(episodes) = common.episodes {
        config.search.episodes = episodes;
    }
    if let Some(optimizer) = common.optimizer {
        config.search.optimizer = optimizer.into();
    }
    config.check().context("validating configuration")?;
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Search { common, resume } => {
            let config = load_config(&common)?;
            runner::search(&config, None, resume)
        }
        Command::Replay { common, replay } => {
            let config = load_config(&common)?;
            runner::search(&config, Some(replay), false)
        }
        Command::Pareto { common, history } => {
            let config = load_config(&common)?;
            runner::pareto(&config, &history)
        }
        Command::Evaluate { common, rollout } => {
            let config = load_config(&common)?;
            runner::evaluate(&config, &rollout)
        }
        Command::Enumerate { common, cap } => {
            let config = load_config(&common)?;
            runner::enumerate(&config, cap)
        }
        Command::ColdstartBench {
            common,
            seeds,
            max_episodes,
            within,
        } => {
            let config = load_config(&common)?;
            runner::coldstart_bench(&config, seeds, max_episodes, within)
        }
    }
}
