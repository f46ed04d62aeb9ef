//! Softmax and one-versus-all (negative sampling) losses with single-example
//! SGD updates.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{average_into, score_into, EmbeddingModel, Example, Float, Parameters};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    Softmax,
    NegativeSampling,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Softmax => f.write_str("softmax"),
            LossKind::NegativeSampling => f.write_str("ns"),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(LossKind::Softmax),
            "ns" | "negative-sampling" | "one-vs-all" => Ok(LossKind::NegativeSampling),
            other => Err(Error::invalid(format!("unknown loss '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Negative classes drawn per example; ignored by the softmax loss.
    pub negatives: usize,
}

impl LossConfig {
    pub fn softmax() -> Self {
        LossConfig {
            kind: LossKind::Softmax,
            negatives: 0,
        }
    }

    pub fn negative_sampling(negatives: usize) -> Self {
        LossConfig {
            kind: LossKind::NegativeSampling,
            negatives,
        }
    }

    pub fn validate(&self, class_count: usize) -> Result<()> {
        if self.kind == LossKind::NegativeSampling {
            if self.negatives == 0 {
                return Err(Error::invalid(
                    "negative sampling needs at least one negative",
                ));
            }
            if self.negatives >= class_count {
                return Err(Error::invalid(format!(
                    "{} negatives requested but only {class_count} classes exist",
                    self.negatives
                )));
            }
        }
        Ok(())
    }
}

/// Numerically stable softmax (max-shifted).
pub fn softmax_probs<F: Float>(scores: &[F]) -> Result<Vec<F>> {
    if scores.is_empty() {
        return Err(Error::invalid("softmax of an empty score vector"));
    }
    let mut probs = scores.to_vec();
    softmax_in_place(&mut probs);
    Ok(probs)
}

pub(crate) fn softmax_in_place<F: Float>(values: &mut [F]) {
    let max = values.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    let inv = F::one() / total;
    values.iter_mut().for_each(|v| *v *= inv);
}

#[inline]
pub(crate) fn sigmoid<F: Float>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `-ln sigmoid(x)`, stable for large |x|.
#[inline]
pub(crate) fn neg_log_sigmoid<F: Float>(x: F) -> F {
    if x >= F::zero() {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Reusable per-worker scratch space.
#[derive(Debug)]
pub struct StepBuffers<F> {
    hidden: Vec<F>,
    grad: Vec<F>,
    scores: Vec<F>,
    negatives: Vec<u32>,
}

impl<F: Float> StepBuffers<F> {
    pub fn new(dim: usize, class_count: usize) -> Self {
        StepBuffers {
            hidden: vec![F::zero(); dim],
            grad: vec![F::zero(); dim],
            scores: vec![F::zero(); class_count],
            negatives: Vec::new(),
        }
    }
}

/// Softmax SGD step on pre-validated input. Returns `-ln p(label)`.
pub(crate) fn softmax_update<F: Float, P: Parameters<F>>(
    params: &mut P,
    tokens: &[u32],
    label: u32,
    lr: F,
    buf: &mut StepBuffers<F>,
) -> F {
    let label = label as usize;
    buf.scores.resize(params.class_count(), F::zero());
    average_into(params, tokens, &mut buf.hidden);
    score_into(params, &buf.hidden, &mut buf.scores);
    softmax_in_place(&mut buf.scores);
    let loss = -buf.scores[label].max(F::min_positive_value()).ln();

    buf.grad.iter_mut().for_each(|g| *g = F::zero());
    for class in 0..params.class_count() {
        let target = if class == label { F::one() } else { F::zero() };
        let alpha = lr * (target - buf.scores[class]);
        params.update_output(class, &buf.hidden, alpha, &mut buf.grad);
    }
    distribute_to_inputs(params, tokens, &mut buf.grad);
    loss
}

/// One-vs-all SGD step against explicit negative classes. Returns the summed
/// logistic loss of the positive and every negative.
pub(crate) fn negative_sampling_update<F: Float, P: Parameters<F>>(
    params: &mut P,
    tokens: &[u32],
    label: u32,
    negatives: &[u32],
    lr: F,
    hidden: &mut [F],
    grad: &mut [F],
) -> F {
    average_into(params, tokens, hidden);
    grad.iter_mut().for_each(|g| *g = F::zero());

    let mut loss = F::zero();
    let mut binary = |class: u32, positive: bool, params: &mut P, grad: &mut [F]| {
        let score = params.output_dot(class as usize, hidden);
        let (target, margin) = if positive {
            (F::one(), score)
        } else {
            (F::zero(), -score)
        };
        loss += neg_log_sigmoid(margin);
        let alpha = lr * (target - sigmoid(score));
        params.update_output(class as usize, hidden, alpha, grad);
    };
    binary(label, true, params, grad);
    for &negative in negatives {
        binary(negative, false, params, grad);
    }
    distribute_to_inputs(params, tokens, grad);
    loss
}

/// Each input row receives `grad / |tokens|`.
fn distribute_to_inputs<F: Float, P: Parameters<F>>(
    params: &mut P,
    tokens: &[u32],
    grad: &mut [F],
) {
    let scale = F::one() / F::from_f64(tokens.len() as f64);
    grad.iter_mut().for_each(|g| *g *= scale);
    for &token in tokens {
        params.add_to_input(token as usize, grad);
    }
}

/// Draws `count` classes uniformly from all classes except `label`, with
/// replacement.
pub fn sample_negatives<R: Rng + ?Sized>(
    rng: &mut R,
    class_count: usize,
    label: u32,
    count: usize,
    out: &mut Vec<u32>,
) {
    debug_assert!(class_count >= 2);
    out.clear();
    let upper = (class_count - 1) as u32;
    for _ in 0..count {
        let draw = rng.random_range(0..upper);
        out.push(if draw >= label { draw + 1 } else { draw });
    }
}

pub(crate) fn ns_step_sampled<F: Float, P: Parameters<F>, R: Rng + ?Sized>(
    params: &mut P,
    tokens: &[u32],
    label: u32,
    lr: F,
    negatives: usize,
    rng: &mut R,
    buf: &mut StepBuffers<F>,
) -> F {
    let mut drawn = std::mem::take(&mut buf.negatives);
    sample_negatives(rng, params.class_count(), label, negatives, &mut drawn);
    let loss = negative_sampling_update(
        params,
        tokens,
        label,
        &drawn,
        lr,
        &mut buf.hidden,
        &mut buf.grad,
    );
    buf.negatives = drawn;
    loss
}

fn check_lr<F: Float>(lr: F) -> Result<()> {
    if !lr.is_finite() || lr <= F::zero() {
        return Err(Error::invalid("learning rate must be positive and finite"));
    }
    Ok(())
}

impl<F: Float> EmbeddingModel<F> {
    /// One softmax SGD step. Returns the loss before the update.
    pub fn softmax_step(&mut self, example: &Example, lr: F) -> Result<F> {
        example.validate(self.input_vocab_size(), self.class_count())?;
        check_lr(lr)?;
        let mut buf = StepBuffers::new(self.dim(), self.class_count());
        Ok(softmax_update(
            self,
            &example.tokens,
            example.label,
            lr,
            &mut buf,
        ))
    }

    /// One negative-sampling SGD step with negatives drawn from `rng`.
    pub fn negative_sampling_step<R: Rng + ?Sized>(
        &mut self,
        example: &Example,
        lr: F,
        config: &LossConfig,
        rng: &mut R,
    ) -> Result<F> {
        if config.kind != LossKind::NegativeSampling {
            return Err(Error::invalid("loss config is not one-vs-all"));
        }
        config.validate(self.class_count())?;
        example.validate(self.input_vocab_size(), self.class_count())?;
        check_lr(lr)?;
        let mut buf = StepBuffers::new(self.dim(), self.class_count());
        Ok(ns_step_sampled(
            self,
            &example.tokens,
            example.label,
            lr,
            config.negatives,
            rng,
            &mut buf,
        ))
    }

    /// Negative-sampling step against a fixed list of negatives.
    pub fn negative_sampling_step_with(
        &mut self,
        example: &Example,
        negatives: &[u32],
        lr: F,
    ) -> Result<F> {
        example.validate(self.input_vocab_size(), self.class_count())?;
        check_lr(lr)?;
        if negatives.is_empty() {
            return Err(Error::invalid("no negatives given"));
        }
        if let Some(&bad) = negatives
            .iter()
            .find(|&&n| n == example.label || n as usize >= self.class_count())
        {
            return Err(Error::invalid(format!("invalid negative class {bad}")));
        }
        let mut hidden = vec![F::zero(); self.dim()];
        let mut grad = vec![F::zero(); self.dim()];
        Ok(negative_sampling_update(
            self,
            &example.tokens,
            example.label,
            negatives,
            lr,
            &mut hidden,
            &mut grad,
        ))
    }
}
