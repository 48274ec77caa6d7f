//! `rdm`: command-line workflow for retrieval-augmented diffusion experiments.
//!
//! Artifacts live under `--out` (default `$RDM_DATA_DIR`, else `.`):
//!
//! ```text
//! world/       spec.json, corpus.rdmv, train.rdmv   (gen-world)
//! db/<name>/   vector databases                     (build-db, build-index)
//! checkpoint/  trained model                        (train)
//! train/       config.toml, loss.csv                (train)
//! samples/     *.rdms with .json provenance         (sample, sample-postfix)
//! eval/        report.json, records.jsonl, ...      (evaluate)
//! ```

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rdm_core::error::ErrorKind;
use rdm_core::RdmError;

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("RDM_GIT_DESCRIBE"), ")");

#[derive(Debug, Parser)]
#[command(name = "rdm", version = VERSION, about = "Retrieval-augmented diffusion experiments")]
pub struct Cli {
    /// Experiment config (TOML); defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for the command's randomness (see each command's help).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Artifact root.
    #[arg(long, global = true, env = "RDM_DATA_DIR", default_value = ".")]
    pub out: PathBuf,

    /// Worker threads; 1 runs sequentially, 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic world from `[data]` (--seed overrides data.seed).
    GenWorld,
    /// Build the training and per-style databases, or one database from an embedding file.
    BuildDb(BuildDbArgs),
    /// Attach an IVF index to a database (--seed seeds k-means).
    BuildIndex(BuildIndexArgs),
    /// Train the denoiser (--seed overrides train.seed).
    Train(TrainArgs),
    /// Sample with a swapped-in database (--seed seeds sampling).
    Sample(SampleArgs),
    /// Sample with a style token appended to the query (--seed seeds sampling).
    SamplePostfix(PostfixArgs),
    /// Compare database swapping against the style postfix (--seed seeds sampling).
    Evaluate(EvaluateArgs),
    /// Print a database summary as JSON.
    InspectDb(InspectArgs),
}

#[derive(Debug, Args)]
pub struct BuildDbArgs {
    /// Precomputed embeddings (RDMV) to load instead of the world.
    #[arg(long, requires = "name")]
    pub embeddings: Option<PathBuf>,
    /// Database name for --embeddings.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct BuildIndexArgs {
    /// Database name under db/ or a directory.
    #[arg(long)]
    pub db: String,
    #[arg(long)]
    pub n_list: usize,
    /// Output database name (default `<db>-ivf`).
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Override train.steps.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Continue from this checkpoint directory.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Checkpoint directory (default `<out>/checkpoint`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Override retrieval.k_infer.
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of samples.
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    /// Comma-separated content vector for the prompt.
    #[arg(long, value_delimiter = ',', conflicts_with = "prompt_seed")]
    pub content: Option<Vec<f64>>,
    /// Draw the prompt content from the world with this seed.
    #[arg(long, default_value_t = 0)]
    pub prompt_seed: u64,
    /// Output file under samples/ (default derived from the database and seed).
    #[arg(long)]
    pub output: Option<String>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Database name under db/ or a directory.
    #[arg(long)]
    pub db: String,
    #[command(flatten)]
    pub query: QueryArgs,
}

#[derive(Debug, Args)]
pub struct PostfixArgs {
    /// Style token appended to the prompt.
    #[arg(long)]
    pub style: Option<usize>,
    /// Training database name under db/ or a directory.
    #[arg(long, default_value = "train")]
    pub db: String,
    #[command(flatten)]
    pub query: QueryArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint directory (default `<out>/checkpoint`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 70)]
    pub n_per_style: usize,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Database name under db/ or a directory.
    #[arg(long)]
    pub db: String,
}

fn fail(kind: &str, reason: &str) {
    let reason = reason.lines().next().unwrap_or("").trim();
    eprintln!("error: kind={kind} reason={reason:?}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let reason = text.strip_prefix("error: ").unwrap_or(&text);
            fail("usage", reason);
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = exit_code(&e);
            fail(kind, &e.to_string());
            ExitCode::from(code)
        }
    }
}

fn exit_code(e: &RdmError) -> (&'static str, u8) {
    match e.kind() {
        ErrorKind::Usage => ("usage", 2),
        ErrorKind::Data => ("data", 3),
        ErrorKind::Numeric => ("numeric", 4),
    }
}
