//! Command-line pipeline: collect a dataset, train the VAE, optimize in its
//! latent space, run the baselines and aggregate the results.

pub mod commands;
pub mod config;
pub mod error;
pub mod objective;
pub mod report;
pub mod stats;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "glso", version, about = "Grammar-guided latent space optimization of robot designs")]
pub struct Cli {
    /// JSON file with per-command defaults; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample designs and write a JSONL dataset with contact features.
    Collect(CollectArgs),
    /// Train the graph VAE on a dataset.
    Train(TrainArgs),
    /// Bayesian optimization in the latent space of a trained model.
    Optimize(OptimizeArgs),
    /// Random search or genetic algorithm directly on designs.
    Baseline(BaselineArgs),
    /// Aggregate result files, or project a dataset into the latent plane.
    Report(ReportArgs),
}

#[derive(Debug, Args, Default, Clone)]
pub struct CollectArgs {
    /// Grammar JSON file, or `default`.
    #[arg(long)]
    pub grammar: Option<String>,
    /// Number of sampling attempts.
    #[arg(long)]
    pub count: Option<usize>,
    /// Keep sampling until this many distinct designs were found.
    #[arg(long, conflicts_with = "count")]
    pub unique: Option<usize>,
    /// Sample uniformly random trees instead of grammar derivations.
    #[arg(long)]
    pub free_random: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Grammar JSON file, or `default`.
    #[arg(long)]
    pub grammar: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Weight of the property-prediction loss; 0 trains without the head.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Final learning rate as a share of --lr under cosine annealing.
    #[arg(long)]
    pub final_lr_fraction: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Message-passing rounds of the encoder.
    #[arg(long)]
    pub t_mp: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint path; metrics go to `<out>.metrics.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args, Default, Clone)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Grammar the model was trained with, or `default`.
    #[arg(long)]
    pub grammar: Option<String>,
    /// flat, frozen_lake, ridged or wall.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub n_init: Option<usize>,
    #[arg(long)]
    pub candidates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluator command line, whitespace separated, used instead of the surrogate.
    #[arg(long)]
    pub external: Option<String>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// Results CSV; wall times go to `<out>.timing.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default, Clone)]
pub struct BaselineArgs {
    /// random or ga.
    #[arg(long)]
    pub algo: Option<String>,
    #[arg(long)]
    pub grammar: Option<String>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub budget: Option<usize>,
    /// GA population size.
    #[arg(long)]
    pub population: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub external: Option<String>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default, Clone)]
pub struct ReportArgs {
    /// Result files, each `path` or `label=path`. Without a label the file
    /// stem minus a trailing `_seed<N>` or `_<N>` names the method.
    #[arg(long, num_args = 1..)]
    pub runs: Vec<String>,
    /// Curve length in evaluations; defaults to the longest run.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Project designs into the top two principal components of the latent means.
    #[arg(long, requires_all = ["model", "data"])]
    pub latent: bool,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub grammar: Option<String>,
    /// Terrain used to score projected designs.
    #[arg(long)]
    pub task: Option<String>,
    /// Designs to project, from the start of the dataset.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs one parsed invocation.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = config::ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Collect(a) => commands::collect(&a, &file.collect).map(|_| ()),
        Command::Train(a) => commands::train(&a, &file.train).map(|_| ()),
        Command::Optimize(a) => commands::optimize(&a, &file.optimize).map(|_| ()),
        Command::Baseline(a) => commands::baseline(&a, &file.baseline).map(|_| ()),
        Command::Report(a) => report::run(&a, &file.report),
    }
}

/// Parses `args` (program name first) and runs them.
pub fn run_from<I, S>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    run(cli)
}
