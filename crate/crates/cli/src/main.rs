mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::TrainFlags;

#[derive(Parser, Debug)]
#[command(name = "balm", version, about = "Sentence-embedding translation: encoder pretraining, autoencoder, thought translator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic source corpus and its cipher translation
    MakeSynthetic(MakeSyntheticArgs),
    /// Build a vocabulary file from a corpus
    BuildVocab(BuildVocabArgs),
    /// Masked-language-model pretraining of a sentence encoder
    PretrainEncoder(PretrainArgs),
    /// Train an autoencoder (encoder plus GRU decoder) on one language
    TrainAutoencoder(AutoencoderArgs),
    /// Train a translator between two thought spaces
    TrainTranslator(TranslatorArgs),
    /// Score a checkpoint on a corpus and write a per-sentence report
    Evaluate(EvaluateArgs),
    /// Translate (or reconstruct) one sentence
    Translate(TranslateArgs),
}

#[derive(Args, Debug)]
pub struct MakeSyntheticArgs {
    /// Number of distinct words including "."
    #[arg(long)]
    pub vocab_size: usize,
    #[arg(long)]
    pub n_sentences: usize,
    #[arg(long)]
    pub seed: u64,
    /// identity, substitution, or either with "+swap"
    #[arg(long, default_value = "substitution")]
    pub cipher: String,
    /// Output path for the source sentences
    #[arg(long)]
    pub src: PathBuf,
    /// Output path for the target sentences
    #[arg(long)]
    pub tgt: PathBuf,
}

#[derive(Args, Debug)]
pub struct BuildVocabArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub min_freq: usize,
    #[arg(long, default_value_t = 30000)]
    pub max_vocab: usize,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Checkpoint to write
    #[arg(long)]
    pub out: PathBuf,
    /// Learning-curve CSV (default: <out>.history.csv)
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Debug)]
pub struct AutoencoderArgs {
    #[arg(long)]
    pub src: PathBuf,
    /// Pretrained encoder checkpoint; a fresh encoder is used without it
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Vocabulary file (default: the one recorded in the encoder checkpoint)
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Debug)]
pub struct TranslatorArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    /// Source-language encoder (or autoencoder) checkpoint
    #[arg(long)]
    pub src_encoder: Option<PathBuf>,
    /// Target-language autoencoder whose decoder is transferred
    #[arg(long)]
    pub autoencoder: Option<PathBuf>,
    /// Train a freshly initialized decoder instead of transferring one
    #[arg(long)]
    pub fresh_decoder: bool,
    /// Keep the transferred decoder fixed
    #[arg(long)]
    pub freeze_decoder: bool,
    #[arg(long)]
    pub src_vocab: Option<PathBuf>,
    #[arg(long)]
    pub tgt_vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input sentences
    #[arg(long)]
    pub src: PathBuf,
    /// References (default: the inputs, for autoencoders)
    #[arg(long)]
    pub tgt: Option<PathBuf>,
    /// Tab-separated per-sentence report to write
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the vocabulary recorded in an autoencoder checkpoint
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub src_vocab: Option<PathBuf>,
    #[arg(long)]
    pub tgt_vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
}

#[derive(Args, Debug)]
pub struct TranslateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    pub sentence: String,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub src_vocab: Option<PathBuf>,
    #[arg(long)]
    pub tgt_vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
}

/// The error chain joined with ": ", skipping causes already quoted by the
/// message above them.
fn describe(error: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in error.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MakeSynthetic(a) => commands::make_synthetic(&a),
        Command::BuildVocab(a) => commands::build_vocab(&a),
        Command::PretrainEncoder(a) => commands::pretrain_encoder(&a),
        Command::TrainAutoencoder(a) => commands::train_autoencoder(&a),
        Command::TrainTranslator(a) => commands::train_translator(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Translate(a) => commands::translate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", describe(&f.error));
            ExitCode::from(f.code)
        }
    }
}
