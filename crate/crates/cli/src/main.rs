//! `carl`: generate corpora, train, evaluate, rank and simulate clicks.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

/// Data directory used when `--data` is omitted.
pub const DATA_DIR_ENV: &str = "CARL_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "carl", version, about = "Context-aware aggregated search ranking")]
struct Cli {
    /// Print every config default (TOML) and exit.
    #[arg(long)]
    print_config: bool,

    /// Worker threads for rollouts and evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    GenerateData(GenerateArgs),
    /// Train a policy and write a checkpoint and report.
    Train(TrainArgs),
    /// Score greedy pages of a checkpoint (or a reference ranker).
    Eval(EvalArgs),
    /// Print the page for one query.
    Rank(RankArgs),
    /// Rank with a base checkpoint and simulate clicks on the pages.
    SimulateClicks(ClickArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured query count.
    #[arg(long)]
    pub queries: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SupervisionArg {
    Full,
    Weak,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ContextArg {
    Policy,
    Random,
    Oracle,
    None,
}

#[derive(Debug, Args)]
pub struct DataArg {
    /// Dataset directory (defaults to $CARL_DATA_DIR).
    #[arg(long, env = DATA_DIR_ENV)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct FoldArgs {
    /// Number of cross-validation folds.
    #[arg(long, requires = "fold")]
    pub folds: Option<usize>,
    /// Fold index in `0..folds`; train uses its training part, eval its test part.
    #[arg(long, requires = "folds")]
    pub fold: Option<usize>,
    /// Seed of the fold permutation.
    #[arg(long, default_value_t = 0)]
    pub fold_seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// Training config (TOML); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub supervision: Option<SupervisionArg>,
    /// Reward metric: ndcg, as_dcg or as_err (dcg and err are accepted too).
    #[arg(long)]
    pub reward: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_updates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Click log (JSONL) to derive weak rewards from instead of simulating.
    #[arg(long)]
    pub clicks: Option<PathBuf>,
    #[command(flatten)]
    pub folds: FoldArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long, required_unless_present_any = ["oracle", "random_seed"])]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated `name@cutoff` list.
    #[arg(long, default_value = "ndcg@5,ndcg@10,as_dcg@10,as_err@10")]
    pub metrics: String,
    /// Rank by true gain instead of a checkpoint.
    #[arg(long, conflicts_with = "random_seed")]
    pub oracle: bool,
    /// Rank uniformly at random with this seed instead of a checkpoint.
    #[arg(long)]
    pub random_seed: Option<u64>,
    #[arg(long, value_enum)]
    pub context_mode: Option<ContextArg>,
    #[arg(long)]
    pub target_length: Option<usize>,
    /// Output directory; the CSV goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub folds: FoldArgs,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub query_id: String,
    /// Add per-step probabilities and attention weights (JSON).
    #[arg(long)]
    pub explain: bool,
    #[arg(long, value_enum)]
    pub context_mode: Option<ContextArg>,
    #[arg(long)]
    pub target_length: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ClickArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// Base ranker checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Click model config (TOML); defaults apply when omitted.
    #[arg(long)]
    pub click_config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    if cli.print_config {
        print!("{}", commands::default_configs()?);
        return Ok(());
    }
    match cli.command {
        None => Err(CliError::Usage("a subcommand or --print-config is required".into())),
        Some(Command::GenerateData(a)) => commands::generate_data(&a),
        Some(Command::Train(a)) => commands::train(&a),
        Some(Command::Eval(a)) => commands::eval(&a),
        Some(Command::Rank(a)) => commands::rank(&a),
        Some(Command::SimulateClicks(a)) => commands::simulate_clicks(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("carl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
