//! Asynchronous multi-worker SGD with a linearly decaying learning rate.
//!
//! Workers share one model and update it without locks. The only
//! synchronized state is the global progress counter, bumped in batches of
//! [`PROGRESS_BATCH`] examples, and an end-of-epoch barrier used for loss
//! reporting.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Barrier, Mutex};
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::{ns_step_sampled, softmax_update, LossConfig, LossKind, StepBuffers};
use crate::model::{EmbeddingModel, Example, Parameters, SharedModel};

pub const PROGRESS_BATCH: u64 = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f32,
    pub loss: LossConfig,
    pub threads: usize,
    pub seed: u64,
    pub dim: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr0.is_finite() || self.lr0 <= 0.0 {
            return Err(Error::invalid("initial learning rate must be positive"));
        }
        if self.threads == 0 {
            return Err(Error::invalid("at least one thread is required"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainStats {
    pub examples_processed: u64,
    /// Average per-example loss of the last epoch (NaN when nothing ran).
    pub final_avg_loss: f64,
    pub wall_time_seconds: f64,
    /// Average per-example loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

/// `lr0 * (1 - progress)` for progress in `[0, 1]`.
pub fn learning_rate_at(progress: f64, lr0: f32) -> Result<f32> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(Error::invalid(format!(
            "progress {progress} outside [0, 1]"
        )));
    }
    Ok(decayed(progress, lr0))
}

#[inline]
fn decayed(progress: f64, lr0: f32) -> f32 {
    (lr0 as f64 * (1.0 - progress.clamp(0.0, 1.0))) as f32
}

/// Trains a fresh model on `dataset`.
pub fn train(
    dataset: &[Example],
    config: &TrainConfig,
    input_vocab_size: usize,
    class_count: usize,
) -> Result<(EmbeddingModel<f32>, TrainStats)> {
    config.validate()?;
    let model = EmbeddingModel::new(input_vocab_size, class_count, config.dim, config.seed)?;
    train_model(model, dataset, config)
}

/// Continues training an existing model.
pub fn train_model(
    model: EmbeddingModel<f32>,
    dataset: &[Example],
    config: &TrainConfig,
) -> Result<(EmbeddingModel<f32>, TrainStats)> {
    config.validate()?;
    if config.epochs == 0 {
        return Ok((
            model,
            TrainStats {
                final_avg_loss: f64::NAN,
                ..TrainStats::default()
            },
        ));
    }
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    config.loss.validate(model.class_count())?;
    for example in dataset {
        example.validate(model.input_vocab_size(), model.class_count())?;
    }

    let threads = config.threads.min(dataset.len());
    let started = Instant::now();
    let (model, epoch_losses, processed) = if threads == 1 {
        let mut model = model;
        let run = Run::new(dataset, config, 1);
        run.worker(&mut model, 0);
        let losses = run.epoch_losses();
        (model, losses, run.counter.load(Ordering::Relaxed))
    } else {
        let shared = SharedModel::new(model);
        let run = Run::new(dataset, config, threads);
        std::thread::scope(|scope| {
            for worker in 0..threads {
                let run = &run;
                let mut view = &shared;
                scope.spawn(move || run.worker(&mut view, worker));
            }
        });
        let losses = run.epoch_losses();
        let processed = run.counter.load(Ordering::Relaxed);
        (shared.into_model(), losses, processed)
    };

    if !model.is_finite() {
        return Err(Error::Internal(
            "training produced non-finite parameters".into(),
        ));
    }
    let stats = TrainStats {
        examples_processed: processed,
        final_avg_loss: epoch_losses.last().copied().unwrap_or(f64::NAN),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        epoch_losses,
    };
    Ok((model, stats))
}

struct Run<'a> {
    dataset: &'a [Example],
    config: &'a TrainConfig,
    threads: usize,
    total: u64,
    counter: AtomicU64,
    barrier: Barrier,
    /// Per epoch: (loss sum, example count).
    epochs: Mutex<Vec<(f64, u64)>>,
    epoch_start: Mutex<Instant>,
}

impl<'a> Run<'a> {
    fn new(dataset: &'a [Example], config: &'a TrainConfig, threads: usize) -> Self {
        Run {
            dataset,
            config,
            threads,
            total: (config.epochs * dataset.len()) as u64,
            counter: AtomicU64::new(0),
            barrier: Barrier::new(threads),
            epochs: Mutex::new(vec![(0.0, 0); config.epochs]),
            epoch_start: Mutex::new(Instant::now()),
        }
    }

    fn worker<P: Parameters<f32>>(&self, params: &mut P, worker: usize) {
        let mut shard: Vec<usize> = (worker..self.dataset.len()).step_by(self.threads).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.config
                .seed
                .wrapping_add((worker as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        let mut buf = StepBuffers::new(params.dim(), params.class_count());
        let mut pending = 0u64;
        let mut seen = 0u64;

        for epoch in 0..self.config.epochs {
            shard.shuffle(&mut rng);
            let mut loss_sum = 0f64;
            let mut lr = self.config.lr0;
            for &index in &shard {
                let example = &self.dataset[index];
                let progress = (seen + pending) as f64 / self.total as f64;
                lr = decayed(progress, self.config.lr0);
                let loss = match self.config.loss.kind {
                    LossKind::Softmax => {
                        softmax_update(params, &example.tokens, example.label, lr, &mut buf)
                    }
                    LossKind::NegativeSampling => ns_step_sampled(
                        params,
                        &example.tokens,
                        example.label,
                        lr,
                        self.config.loss.negatives,
                        &mut rng,
                        &mut buf,
                    ),
                };
                loss_sum += loss as f64;
                pending += 1;
                if pending == PROGRESS_BATCH {
                    seen = self.counter.fetch_add(pending, Ordering::Relaxed) + pending;
                    pending = 0;
                }
            }
            if pending > 0 {
                seen = self.counter.fetch_add(pending, Ordering::Relaxed) + pending;
                pending = 0;
            }
            {
                let mut epochs = self.epochs.lock().unwrap();
                epochs[epoch].0 += loss_sum;
                epochs[epoch].1 += shard.len() as u64;
            }
            if self.barrier.wait().is_leader() {
                let (sum, count) = self.epochs.lock().unwrap()[epoch];
                let mut start = self.epoch_start.lock().unwrap();
                let rate = count as f64 / start.elapsed().as_secs_f64().max(1e-9);
                *start = Instant::now();
                info!(
                    "epoch {} loss {:.6} lr {:.6} examples/sec {:.0}",
                    epoch + 1,
                    sum / count.max(1) as f64,
                    lr,
                    rate
                );
            }
            self.barrier.wait();
        }
    }

    fn epoch_losses(&self) -> Vec<f64> {
        self.epochs
            .lock()
            .unwrap()
            .iter()
            .map(|&(sum, count)| sum / count.max(1) as f64)
            .collect()
    }
}
