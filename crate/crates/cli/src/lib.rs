//! Config-driven experiments: data generation, reward-model training and
//! evaluation, uncertainty studies, policy-optimization runs and reports.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod config;

pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or configuration; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Failures while running; exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<purm::Error> for CliError {
    fn from(e: purm::Error) -> Self {
        match e {
            purm::Error::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub(crate) fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "purm", version, about = "Probabilistic uncertain reward model experiments")]
pub struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replaces the config seed list with this single seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train.jsonl and test.jsonl.
    GenData,
    /// Train the configured model kind; writes model.ckpt and loss.csv.
    TrainRm {
        /// Defaults to `<out>/train.jsonl`.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Print accuracy and NLL of a checkpoint as JSON.
    EvalRm {
        /// Defaults to `<out>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `<out>/test.jsonl`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// How ensemble members are combined.
        #[arg(long, value_enum, default_value_t = AggregationArg::Mean)]
        aggregation: AggregationArg,
    },
    /// Label-reversal sweep and covariate-shift evaluation.
    UncertaintyEval,
    /// One policy-optimization run per seed.
    RunRl,
    /// Summarize the metrics CSVs in a run directory as a markdown table.
    Report { run_dir: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Mean,
    Wco,
    Uwo,
}

impl From<AggregationArg> for purm::reward_models::Aggregation {
    fn from(a: AggregationArg) -> Self {
        use purm::reward_models::Aggregation;
        match a {
            AggregationArg::Mean => Aggregation::Mean,
            AggregationArg::Wco => Aggregation::Wco,
            AggregationArg::Uwo => Aggregation::Uwo,
        }
    }
}

/// Resolved global options.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: Option<ExperimentConfig>,
    pub out: PathBuf,
}

impl Context {
    pub fn from_cli(cli: &Cli) -> Result<Self, CliError> {
        let mut config = cli.config.as_deref().map(ExperimentConfig::load).transpose()?;
        if let (Some(cfg), Some(seed)) = (config.as_mut(), cli.seed) {
            cfg.seeds = vec![seed];
        }
        let out = cli
            .out
            .clone()
            .or_else(|| config.as_ref().map(|c| c.output.dir.clone()))
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Self { config, out })
    }

    pub fn require_config(&self) -> Result<&ExperimentConfig, CliError> {
        self.config
            .as_ref()
            .ok_or_else(|| CliError::Usage("this command needs --config".into()))
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| io_error(&self.out, e))?;
        Ok(&self.out)
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = Context::from_cli(cli)?;
    match &cli.command {
        Command::GenData => commands::gen_data(&ctx),
        Command::TrainRm { dataset } => commands::train_rm(&ctx, dataset.as_deref()),
        Command::EvalRm {
            checkpoint,
            dataset,
            aggregation,
        } => commands::eval_rm(&ctx, checkpoint.as_deref(), dataset.as_deref(), (*aggregation).into()),
        Command::UncertaintyEval => commands::uncertainty_eval(&ctx),
        Command::RunRl => commands::run_rl(&ctx),
        Command::Report { run_dir } => commands::report(run_dir).map(|table| print!("{table}")),
    }
}
