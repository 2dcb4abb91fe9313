//! `hkd`: generate corpora, train teachers, distill students, evaluate and
//! run the ablation table.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hkd_core::{HkdError, Precision, Variant};

#[derive(Parser)]
#[command(name = "hkd", version, about = "Hierarchical dialogue labeler with hierarchical knowledge distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic call-scene corpus.
    GenCorpus(GenCorpusArgs),
    /// Train a model on hard targets only.
    TrainTeacher(TrainTeacherArgs),
    /// Train a student against a teacher checkpoint.
    Distill(DistillArgs),
    /// Accuracy of a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Every variant for every student geometry and seed.
    Ablate(AblateArgs),
    /// Finite-difference check of every layer and loss.
    Gradcheck(GradcheckArgs),
    /// Print a checkpoint's sidecar and tensor list as JSON.
    InspectCkpt(InspectArgs),
}

#[derive(Args)]
struct GenCorpusArgs {
    /// Corpus file (JSON lines).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 280)]
    dialogues: usize,
    #[arg(long, default_value_t = 5)]
    scenes: usize,
    #[arg(long, default_value_t = 5)]
    label_count: usize,
    #[arg(long, default_value_t = 20)]
    min_utterances: usize,
    #[arg(long, default_value_t = 40)]
    max_utterances: usize,
    #[arg(long, default_value_t = 2)]
    min_tokens: usize,
    #[arg(long, default_value_t = 6)]
    max_tokens: usize,
    #[arg(long, default_value_t = 60)]
    vocab_size: usize,
    /// Probability of replacing each token with a random one.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Move the last --test-dialogues dialogues to this file.
    #[arg(long, requires = "test_dialogues")]
    test_out: Option<PathBuf>,
    #[arg(long, requires = "test_out")]
    test_dialogues: Option<usize>,
    /// Also write the label set, in index order.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct CorpusArgs {
    /// Training corpus (JSON lines).
    #[arg(long)]
    data: PathBuf,
    /// Test corpus; test accuracy is reported per seed when given.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Label-set file, one label per line.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Vocabulary file, one token per line.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Geometry preset: desk-teacher, desk-s1, desk-s2, large-teacher,
    /// large-s1 or large-s2.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    utterance_layers: Option<usize>,
    #[arg(long)]
    dialogue_layers: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ff_units: Option<usize>,
    #[arg(long)]
    lstm_hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// Comma-separated seeds; one run per seed.
    #[arg(long, alias = "seed", value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,
    /// Maximum number of epochs.
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 5)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    valid_fraction: f64,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value = "f32", value_parser = parse_precision)]
    precision: Precision,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Seed of the train/validation split.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, default_value_t = 5.0)]
    tau: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    beta: f64,
    /// Precompute teacher outputs once instead of per batch.
    #[arg(long)]
    cache_teacher: bool,
}

#[derive(Args)]
struct TrainTeacherArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Checkpoint of the best seed.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Metrics JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DistillArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Teacher checkpoint; required unless the variant is baseline.
    #[arg(long)]
    teacher: Option<PathBuf>,
    #[arg(long, default_value = "full", value_parser = parse_variant)]
    variant: Variant,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "f32", value_parser = parse_precision)]
    precision: Precision,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    teacher: PathBuf,
    /// Comma-separated student presets, one table column each.
    #[arg(long, value_delimiter = ',', default_value = "desk-s1,desk-s2")]
    students: Vec<String>,
    #[arg(long, value_delimiter = ',', value_parser = parse_variant, default_value = "baseline,st,no-uc,no-dc,full")]
    variants: Vec<Variant>,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    ckpt: PathBuf,
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    s.parse().map_err(|e: HkdError| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: HkdError| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(a),
        Command::TrainTeacher(a) => commands::train_teacher(a),
        Command::Distill(a) => commands::distill(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::InspectCkpt(a) => commands::inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.code());
            match e {
                HkdError::MissingTeacher(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
