//! `denoise`: ingest data, build LLM knowledge, train and evaluate.

mod commands;
mod failure;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "denoise", version, about = "Knowledge-guided graph denoising for implicit-feedback recommendation")]
pub struct Cli {
    /// Directory holding artifacts and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Filter, split and index raw interactions.
    Ingest(IngestArgs),
    /// Generate preference or relation knowledge.
    Knowledge(KnowledgeArgs),
    /// Train a model and save the best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Retrain under injected noise and report the drop in Recall.
    Robustness(RobustnessArgs),
    /// Evaluate a checkpoint per interaction-frequency group.
    Coldstart(EvalArgs),
    /// Write edge keep-probabilities and the hard-masked edge list.
    ExportGraph(ExportArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Tab-separated `user \t item \t rating \t timestamp` lines.
    #[arg(long)]
    pub interactions: PathBuf,
    /// Tab-separated `kind \t id \t field \t text` lines.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Minimum degree of every kept user and item.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Interactions rated below this are dropped; unrated ones are kept.
    #[arg(long, default_value_t = 3)]
    pub min_rating: u8,
    /// Keep every rating.
    #[arg(long)]
    pub no_rating_filter: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KnowledgeKind {
    Prefs,
    Relations,
}

#[derive(Args, Debug)]
pub struct GatewayArgs {
    /// Answer from the offline rule-based provider.
    #[arg(long)]
    pub mock: bool,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub embedding_model: Option<String>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "LLARD_API_KEY")]
    pub api_key_env: String,
    #[arg(long)]
    pub max_parallel: Option<usize>,
    /// Directory of prompt templates overriding the built-in ones.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct KnowledgeArgs {
    #[arg(value_enum)]
    pub kind: KnowledgeKind,
    #[command(flatten)]
    pub gateway: GatewayArgs,
    /// Output width of the build-time projection head.
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = denoise_core::preference::DEFAULT_TEXT_BUDGET)]
    pub text_budget: usize,
    #[arg(long, default_value_t = denoise_core::preference::DEFAULT_MAX_KEYWORDS)]
    pub max_keywords: usize,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub backbone: Option<String>,
    /// Drop the compression term.
    #[arg(long)]
    pub no_mi_min: bool,
    /// Drop both knowledge alignment terms.
    #[arg(long)]
    pub no_mi_max: bool,
    /// Drop preference alignment.
    #[arg(long)]
    pub no_pk: bool,
    /// Drop relation alignment.
    #[arg(long)]
    pub no_rk: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Val,
    Test,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Defaults to `checkpoint.bin` in the work directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Comma-separated cutoffs.
    #[arg(long, value_delimiter = ',', default_values_t = denoise_core::evaluation::DEFAULT_NS)]
    pub ns: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct RobustnessArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Comma-separated noise ratios.
    #[arg(long, value_delimiter = ',', default_values_t = denoise_core::evaluation::DEFAULT_NOISE_RATIOS)]
    pub ratios: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub n: usize,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(Failure { code, message }) = commands::run(cli) {
        eprintln!("error: {message}");
        std::process::exit(code);
    }
}
