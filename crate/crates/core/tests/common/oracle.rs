//! Loss oracles written directly from the definitions, independent of the
//! library's step code, and a central-difference gradient checker.

use kge::{DenseMatrix, Direction, EmbeddingModel, Triple};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Params<'a> {
    pub input: &'a [f64],
    pub output: &'a [f64],
    pub dim: usize,
}

fn hidden(p: &Params, tokens: &[u32]) -> Vec<f64> {
    let mut h = vec![0.0; p.dim];
    for &t in tokens {
        let row = &p.input[t as usize * p.dim..][..p.dim];
        for (acc, v) in h.iter_mut().zip(row) {
            *acc += v;
        }
    }
    h.iter().map(|v| v / tokens.len() as f64).collect()
}

fn score(p: &Params, h: &[f64], class: u32) -> f64 {
    (0..p.dim)
        .map(|d| p.output[class as usize * p.dim + d] * h[d])
        .sum()
}

pub fn softmax_loss(p: &Params, tokens: &[u32], label: u32, classes: usize) -> f64 {
    let h = hidden(p, tokens);
    let scores: Vec<f64> = (0..classes as u32).map(|c| score(p, &h, c)).collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    log_z - scores[label as usize]
}

pub fn ns_loss(p: &Params, tokens: &[u32], label: u32, negatives: &[u32]) -> f64 {
    let h = hidden(p, tokens);
    let softplus = |x: f64| (1.0 + x.exp()).ln();
    softplus(-score(p, &h, label))
        + negatives
            .iter()
            .map(|&n| softplus(score(p, &h, n)))
            .sum::<f64>()
}

pub fn random_model(
    rng: &mut ChaCha8Rng,
    inputs: usize,
    classes: usize,
    dim: usize,
) -> EmbeddingModel<f64> {
    let mut fill = |n: usize| {
        (0..n)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect::<Vec<f64>>()
    };
    let input = DenseMatrix::from_vec(inputs, dim, fill(inputs * dim)).unwrap();
    let output = DenseMatrix::from_vec(classes, dim, fill(classes * dim)).unwrap();
    EmbeddingModel::from_matrices(input, output, 0).unwrap()
}

pub fn params(model: &EmbeddingModel<f64>) -> (Vec<f64>, Vec<f64>) {
    (
        model.input_matrix().as_slice().to_vec(),
        model.output_matrix().as_slice().to_vec(),
    )
}

/// Max relative error between the gradient implied by one SGD step,
/// `(before - after) / lr`, and central differences of `loss`.
pub fn max_relative_error<L, S>(model: &EmbeddingModel<f64>, loss: L, step: S) -> f64
where
    L: Fn(&Params) -> f64,
    S: FnOnce(&mut EmbeddingModel<f64>, f64),
{
    const LR: f64 = 0.5;
    const EPS: f64 = 1e-6;
    let dim = model.dim();
    let (input, output) = params(model);
    let mut stepped = model.clone();
    step(&mut stepped, LR);
    let (input_after, output_after) = params(&stepped);

    let mut worst: f64 = 0.0;
    let mut check = |analytic: f64, numeric: f64| {
        let scale = analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic - numeric).abs() / scale);
    };
    for i in 0..input.len() {
        let mut plus = input.clone();
        let mut minus = input.clone();
        plus[i] += EPS;
        minus[i] -= EPS;
        let numeric = (loss(&Params {
            input: &plus,
            output: &output,
            dim,
        }) - loss(&Params {
            input: &minus,
            output: &output,
            dim,
        })) / (2.0 * EPS);
        check((input[i] - input_after[i]) / LR, numeric);
    }
    for i in 0..output.len() {
        let mut plus = output.clone();
        let mut minus = output.clone();
        plus[i] += EPS;
        minus[i] -= EPS;
        let numeric = (loss(&Params {
            input: &input,
            output: &plus,
            dim,
        }) - loss(&Params {
            input: &input,
            output: &minus,
            dim,
        })) / (2.0 * EPS);
        check((output[i] - output_after[i]) / LR, numeric);
    }
    worst
}

/// Scores every candidate from the raw definition and counts the ones that
/// strictly beat the target, skipping other known answers when filtering.
pub fn brute_force_rank(
    model: &EmbeddingModel<f64>,
    entity_count: usize,
    all: &[Triple],
    query: Triple,
    direction: Direction,
    filtered: bool,
) -> usize {
    let dim = model.dim();
    let input = model.input_matrix();
    let output = model.output_matrix();
    let (anchor, target, relation_row) = match direction {
        Direction::Object => (
            query.subject,
            query.object,
            entity_count + 2 * query.relation as usize,
        ),
        Direction::Subject => (
            query.object,
            query.subject,
            entity_count + 2 * query.relation as usize + 1,
        ),
    };
    let score = |candidate: usize| -> f64 {
        (0..dim)
            .map(|d| {
                0.5 * (input.row(anchor as usize)[d] + input.row(relation_row)[d])
                    * output.row(candidate)[d]
            })
            .sum()
    };
    let is_known = |candidate: u32| -> bool {
        all.iter().any(|t| match direction {
            Direction::Object => {
                t.subject == query.subject && t.relation == query.relation && t.object == candidate
            }
            Direction::Subject => {
                t.object == query.object && t.relation == query.relation && t.subject == candidate
            }
        })
    };
    let target_score = score(target as usize);
    1 + (0..entity_count as u32)
        .filter(|&c| c != target)
        .filter(|&c| !(filtered && is_known(c)))
        .filter(|&c| score(c as usize) > target_score)
        .count()
}
