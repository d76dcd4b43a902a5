//! `dseq`: train, evaluate and apply deep-feature CRF sequence labelers.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "dseq", version, about = "Deep-feature linear-chain CRF sequence labeler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Tab-separated OCR letters (optionally gzip-compressed)
    Ocr,
    /// JSON lines: {"id", "labels", "frames"}
    Generic,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Generic)]
    pub format: Format,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Flat key = value config file; defaults are used for missing keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra KEY=VALUE overrides, applied after the config file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_rbm: bool,
    #[arg(long)]
    pub no_independent: bool,
    /// Hold out this fold of the dataset's own fold column and report its error
    #[arg(long)]
    pub holdout_fold: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Training log (JSON lines); defaults to <out>.log.jsonl
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Run manifest; defaults to <out>.manifest.json
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, required_unless_present = "folds")]
    pub model: Option<PathBuf>,
    /// Evaluate only this fold of the dataset's own fold column
    #[arg(long, conflicts_with = "folds")]
    pub fold: Option<usize>,
    /// Run seeded k-fold cross-validation of the full pipeline instead
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Output records {id, labels}; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    /// Negate the analytic gradient of one group to test the harness
    #[arg(long, value_name = "GROUP", num_args = 0..=1, default_missing_value = "A")]
    pub break_sign: Option<String>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 6)]
    pub d: usize,
    #[arg(long, default_value_t = 0.9)]
    pub strength: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub t_min: usize,
    #[arg(long, default_value_t = 16)]
    pub t_max: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// RBM and independent-stage pretraining only
    Pretrain(TrainArgs),
    /// Full pipeline: pretraining followed by online epochs
    Train(TrainArgs),
    /// Frame error of a saved model, or cross-validation with --folds
    Eval(EvalArgs),
    /// Viterbi labelings for every sequence
    Predict(PredictArgs),
    /// Finite-difference check of the objective gradient
    Gradcheck(GradcheckArgs),
    /// Sample a synthetic HMM dataset in the generic format
    Synth(SynthArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pretrain(a) => commands::train(&a, false),
        Command::Train(a) => commands::train(&a, true),
        Command::Eval(a) => commands::eval(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
