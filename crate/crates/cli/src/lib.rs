//! The `ltx` command-line tool: tokenizer training, model training,
//! generation, evaluation and report aggregation.

pub mod error;
pub mod files;

mod evaluate;
mod generate;
mod report;
mod tokenize;
mod train;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::{CliError, CliResult};
pub use report::render_table;

#[derive(Debug, Parser)]
#[command(name = "ltx", version, about = "Sentence autoencoders and their automatic evaluation")]
pub struct Cli {
    /// Worker threads for per-sentence metric computation.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Allow overwriting existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a BPE vocabulary from a corpus.
    TokenizerTrain(TokenizerTrainArgs),
    /// Train an autoencoder or language model from a key=value config.
    Train(TrainArgs),
    /// Sample, reconstruct, interpolate or export embeddings.
    Generate(GenerateArgs),
    /// Compute every metric for one model (or the real data) against a test set.
    Evaluate(EvaluateArgs),
    /// Combine evaluation reports into one table sorted by FID.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct TokenizerTrainArgs {
    /// One sentence per line, UTF-8.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub vocab_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// key=value file with model, training and path keys (`corpus`, `vocab`, `out_dir`).
    #[arg(long)]
    pub config: PathBuf,
    /// Extra `key=value` settings applied on top of the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Overrides the config's `seed`.
    #[arg(long, env = "LTX_SEED")]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Sample,
    Reconstruct,
    Interpolate,
    Embeddings,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Number of samples (sample mode).
    #[arg(long)]
    pub n: Option<usize>,
    /// Input sentences (reconstruct, embeddings; or two lines for interpolate).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// The two endpoint sentences (interpolate mode).
    #[arg(long, num_args = 2, value_names = ["FROM", "TO"])]
    pub pair: Option<Vec<String>>,
    /// Points on the interpolation path, endpoints included.
    #[arg(long, default_value_t = ltx_core::generate::DEFAULT_INTERPOLATION_STEPS)]
    pub steps: usize,
    /// Posterior draws per sentence (embeddings mode).
    #[arg(long, default_value_t = 100)]
    pub samples_per_sentence: usize,
    #[arg(long, env = "LTX_SEED", default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = ltx_core::generate::DEFAULT_MAX_DECODE_LEN)]
    pub max_len: usize,
    /// Vocabulary file, if not at the path recorded in the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Basis {
    Subword,
    Word,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model to evaluate.
    #[arg(long, required_unless_present = "real_data", conflicts_with = "real_data")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate real sentences instead of a model (reconstruction metrics are omitted).
    #[arg(long)]
    pub real_data: Option<PathBuf>,
    #[arg(long)]
    pub test: PathBuf,
    /// Language model trained on real data (`model=lm`).
    #[arg(long)]
    pub data_lm: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub n_samples: usize,
    /// Surrogate LM training steps; defaults to the data LM's budget.
    #[arg(long)]
    pub surrogate_steps: Option<u64>,
    #[arg(long, env = "LTX_SEED", default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = ltx_core::generate::DEFAULT_MAX_DECODE_LEN)]
    pub max_len: usize,
    /// Unit for BLEU-3 / ROUGE-3 n-grams.
    #[arg(long, value_enum, default_value_t = Basis::Subword)]
    pub overlap_basis: Basis,
    /// Row label; defaults to the checkpoint file stem.
    #[arg(long)]
    pub label: Option<String>,
    /// Vocabulary file, if not at the path recorded in the data LM.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Report path; a CSV row is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding `*.report` files.
    #[arg(long)]
    pub reports: PathBuf,
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    match cli.command {
        Command::TokenizerTrain(a) => tokenize::run(&a, cli.force),
        Command::Train(a) => train::run(&a, cli.force),
        Command::Generate(a) => generate::run(&a, cli.force),
        Command::Evaluate(a) => evaluate::run(&a, cli.force, cli.threads),
        Command::Report(a) => report::run(&a, cli.force),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
