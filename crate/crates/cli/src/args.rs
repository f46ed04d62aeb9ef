use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "kge",
    version,
    about = "Bag-of-words embeddings for KB completion and question answering"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a knowledge-base completion model.
    Train(TrainArgs),
    /// Evaluate a knowledge-base completion model.
    Eval(EvalArgs),
    /// Question answering by relation prediction.
    #[command(subcommand)]
    Qa(QaCommand),
    /// Grid search over hyperparameters, selected on validation.
    Grid(GridArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Entity,
    Relation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Loss {
    Softmax,
    Ns,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Raw,
    Filtered,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum QaFormat {
    #[value(name = "simplequestions")]
    SimpleQuestions,
    #[value(name = "wikimovies")]
    WikiMovies,
}

/// Optimisation flags shared by every training command.
#[derive(Args, Debug, Clone)]
pub struct Optim {
    /// Embedding dimension.
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
    /// Passes over the training data.
    #[arg(long, default_value_t = 5)]
    pub epoch: usize,
    /// Initial learning rate, decayed linearly to zero.
    #[arg(long, default_value_t = 0.2)]
    pub lr: f32,
    /// Worker threads (default: available parallelism).
    #[arg(long, env = "KGE_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub task: Task,
    #[arg(long)]
    pub train: PathBuf,
    /// Validation split; reported after training unless --include-valid.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Train on train + valid.
    #[arg(long, requires = "valid")]
    pub include_valid: bool,
    #[command(flatten)]
    pub optim: Optim,
    /// Negatives per example (ns loss only; default 5).
    #[arg(long)]
    pub neg: Option<usize>,
    #[arg(long, value_enum, default_value_t = Loss::Ns)]
    pub loss: Loss,
    /// Model file to write; the run manifest goes to <out>.manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Comma-separated triple files whose facts are filtered out.
    #[arg(long, value_delimiter = ',')]
    pub filter: Vec<PathBuf>,
    #[arg(long, default_value_t = 10, conflicts_with = "hit_percent")]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = Mode::Raw, conflicts_with = "hit_percent")]
    pub mode: Mode,
    /// Hit@p% with K = floor(p * classes / 100) (relation models).
    #[arg(long)]
    pub hit_percent: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum QaCommand {
    /// Train a relation classifier on question/answer pairs.
    Train(QaTrainArgs),
    /// Answer one question.
    Answer(QaAnswerArgs),
    /// Evaluate on question/answer pairs.
    Eval(QaEvalArgs),
}

/// The KB and how questions are linked into it.
#[derive(Args, Debug, Clone)]
pub struct KbArgs {
    /// KB triples as TSV.
    #[arg(long)]
    pub kb: PathBuf,
    /// Entity alias TSV (required for simplequestions; adds to entity names
    /// for wikimovies).
    #[arg(long)]
    pub aliases: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = QaFormat::SimpleQuestions)]
    pub format: QaFormat,
}

#[derive(Args, Debug)]
pub struct QaTrainArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[command(flatten)]
    pub kb: KbArgs,
    #[command(flatten)]
    pub optim: Optim,
    /// Add hashed word bigrams to the question features.
    #[arg(long)]
    pub bigrams: bool,
    #[arg(long, default_value_t = kge::qa::DEFAULT_BUCKETS, requires = "bigrams")]
    pub buckets: u32,
    /// Add an inverse of every KB relation.
    #[arg(long)]
    pub inverse: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct QaAnswerArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub kb: KbArgs,
    #[arg(long)]
    pub question: String,
}

#[derive(Args, Debug)]
pub struct QaEvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub kb: KbArgs,
    #[arg(long)]
    pub pairs: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SelectMetric {
    #[value(name = "filtered-hit@10")]
    FilteredHit10,
    #[value(name = "hit@5pct")]
    Hit5Pct,
    #[value(name = "accuracy")]
    Accuracy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GridTask {
    Entity,
    Relation,
    Qa,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[arg(long, value_enum)]
    pub task: GridTask,
    /// Training triples, or question/answer pairs for --task qa.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    /// Test split, evaluated with the retrained winner.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Also retrain the winner on train + valid.
    #[arg(long)]
    pub include_valid: bool,
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid_dim: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid_epoch: Vec<usize>,
    /// Negatives to try (ns loss only).
    #[arg(long, value_delimiter = ',')]
    pub grid_neg: Vec<usize>,
    #[arg(long, default_value_t = 0.2)]
    pub lr: f32,
    #[arg(long, value_enum, default_value_t = Loss::Ns)]
    pub loss: Loss,
    #[arg(long, env = "KGE_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Defaults to the task's metric.
    #[arg(long, value_enum)]
    pub select_metric: Option<SelectMetric>,
    /// KB and linking for --task qa.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    #[arg(long)]
    pub aliases: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = QaFormat::SimpleQuestions)]
    pub format: QaFormat,
    #[arg(long)]
    pub bigrams: bool,
    #[arg(long)]
    pub inverse: bool,
}
