mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hatelens::ensemble::CombineRule;
use hatelens::explain::Method;
use hatelens::faithfulness::SufficiencyForm;
use hatelens::pipeline::Architecture;
use serde::de::DeserializeOwned;

/// Explainable hate-speech classification: prepare data, measure annotator
/// agreement, train, evaluate, explain, score faithfulness and ensemble.
#[derive(Debug, Parser)]
#[command(name = "hatelens", version, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the configuration.
    #[arg(long, short = 'o', env = "HATELENS_OUT")]
    pub out: Option<PathBuf>,
    /// Root seed; overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelData {
    /// Model file written by `train`.
    #[arg(long, short = 'm')]
    pub model: PathBuf,
    /// Corpus CSV; defaults to the configured test file.
    #[arg(long, short = 'd')]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-token corpus and a stratified train/test split.
    Synth(SynthArgs),
    /// Preprocess, filter rare tokens and split the configured corpus.
    Prepare(PrepareArgs),
    /// Per-category and overall kappa of an annotation file.
    Agree(AgreeArgs),
    /// Train a classifier and evaluate it on the held-out data.
    Train(TrainArgs),
    /// Evaluate a trained model.
    Eval(EvalArgs),
    /// Token relevance JSON and heat maps for documents.
    Explain(ExplainArgs),
    /// Comprehensiveness, sufficiency and rationale match of extracted rationales.
    Faithfulness(FaithfulnessArgs),
    /// Cross-validation ensemble, or top-k selection among trained candidates.
    Ensemble(EnsembleArgs),
    /// Highest and lowest mean-relevance terms per class.
    GlobalTerms(GlobalTermsArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 200)]
    pub per_class: usize,
    /// Indicator tokens per class.
    #[arg(long, default_value_t = 2)]
    pub planted: usize,
    /// Noise vocabulary size.
    #[arg(long, default_value_t = 200)]
    pub vocab: usize,
    /// Noise tokens per document.
    #[arg(long, default_value_t = 20)]
    pub noise_len: usize,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct AgreeArgs {
    /// CSV with `id,annotator,label` rows.
    #[arg(long, short = 'a')]
    pub annotations: PathBuf,
    /// Votes per subject; inferred from the first subject when omitted.
    #[arg(long)]
    pub raters: Option<u32>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training corpus CSV; overrides `[data].train`.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Held-out corpus CSV; overrides `[data].test`.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, value_parser = parse_enum::<Architecture>)]
    pub architecture: Option<Architecture>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub target: ModelData,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub target: ModelData,
    /// Documents to explain; every document when omitted.
    #[arg(long = "doc-id")]
    pub doc_ids: Vec<String>,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    /// Class to explain (name or index); defaults to the predicted class.
    #[arg(long)]
    pub class: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct FaithfulnessArgs {
    #[command(flatten)]
    pub target: ModelData,
    /// Rationale fraction.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    #[arg(long, value_parser = parse_enum::<SufficiencyForm>)]
    pub sufficiency: Option<SufficiencyForm>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, value_parser = parse_enum::<CombineRule>)]
    pub rule: Option<CombineRule>,
    /// Search ensemble weights on a simplex grid instead of F1 proportions.
    #[arg(long)]
    pub grid_search: bool,
    /// Trained model files to choose members from instead of running
    /// cross-validation.
    #[arg(long, num_args = 1..)]
    pub candidates: Vec<PathBuf>,
    /// Validation corpus for candidate selection; defaults to the test data.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct GlobalTermsArgs {
    #[command(flatten)]
    pub target: ModelData,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    /// Terms per class and direction.
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: hatelens::Error| e.to_string())
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|_| format!("unknown value {s:?}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(commands::Failure::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
