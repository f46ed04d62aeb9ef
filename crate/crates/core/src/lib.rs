//! Linear bag-of-words embeddings for knowledge graphs.
//!
//! Knowledge base completion and question answering are cast as supervised
//! classification: a bag of discrete input tokens is averaged into one
//! hidden vector and fed to a linear classifier, trained with SGD under a
//! softmax or a negative-sampling one-versus-all loss.

pub mod error;
pub mod io;
pub mod kb;
pub mod kbc;
pub mod loss;
pub mod model;
pub mod qa;
pub mod report;
pub mod trainer;

pub use error::{Error, Result};
pub use kb::{Direction, KnownIndex, Triple, TripleStore, Vocab};
pub use kbc::{build_vocab, DirectionalVocab, KbcTask, Query};
pub use loss::{softmax_probs, LossConfig, LossKind};
pub use model::{DenseMatrix, EmbeddingModel, Example, Float, Parameters, SharedModel};
pub use report::{EvalReport, RankMode};
pub use trainer::{learning_rate_at, train, TrainConfig, TrainStats};
