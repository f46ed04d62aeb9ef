//! Gradient checks against central finite differences, and invariants of the
//! forward pass and the SGD steps.

mod common;

use common::oracle::{self, max_relative_error, params, random_model};
use kge::loss::sample_negatives;
use kge::{softmax_probs, DenseMatrix, EmbeddingModel, Example};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn softmax_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = random_model(&mut rng, 6, 5, 4);
    let example = Example::new(vec![0, 3, 5], 2);
    let err = max_relative_error(
        &model,
        |p| oracle::softmax_loss(p, &example.tokens, example.label, 5),
        |m, lr| {
            m.softmax_step(&example, lr).unwrap();
        },
    );
    assert!(err < 1e-3, "max relative error {err}");
}

#[test]
fn ns_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model = random_model(&mut rng, 6, 7, 4);
    let example = Example::new(vec![1, 1, 4], 3);
    // Distinct frozen negatives: a repeated negative would be updated twice
    // within one step, which is not a single gradient step on the sum.
    let negatives = [0u32, 5, 6];
    let err = max_relative_error(
        &model,
        |p| oracle::ns_loss(p, &example.tokens, example.label, &negatives),
        |m, lr| {
            m.negative_sampling_step_with(&example, &negatives, lr)
                .unwrap();
        },
    );
    assert!(err < 1e-3, "max relative error {err}");
}

#[test]
fn step_losses_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let model = random_model(&mut rng, 5, 6, 3);
    let (input, output) = params(&model);
    let p = oracle::Params {
        input: &input,
        output: &output,
        dim: 3,
    };
    let example = Example::new(vec![0, 2], 4);
    let loss = model.clone().softmax_step(&example, 0.1).unwrap();
    assert!((loss - oracle::softmax_loss(&p, &example.tokens, 4, 6)).abs() < 1e-12);
    let loss = model
        .clone()
        .negative_sampling_step_with(&example, &[1, 5], 0.1)
        .unwrap();
    assert!((loss - oracle::ns_loss(&p, &example.tokens, 4, &[1, 5])).abs() < 1e-12);
}

#[test]
fn repeated_softmax_steps_decrease_loss() {
    let mut model = EmbeddingModel::<f64>::new(4, 3, 4, 5).unwrap();
    let example = Example::new(vec![0, 2], 1);
    let mut previous = f64::INFINITY;
    for _ in 0..100 {
        let loss = model.softmax_step(&example, 0.1).unwrap();
        assert!(loss < previous, "{loss} !< {previous}");
        previous = loss;
    }
}

fn changed_rows(before: &DenseMatrix<f32>, after: &DenseMatrix<f32>) -> usize {
    (0..before.rows())
        .filter(|&r| before.row(r) != after.row(r))
        .count()
}

#[test]
fn softmax_step_touches_every_output_row() {
    let mut model = EmbeddingModel::<f32>::new(10, 50, 8, 1).unwrap();
    let before = model.output_matrix().clone();
    model
        .softmax_step(&Example::new(vec![1, 2], 7), 0.2)
        .unwrap();
    assert_eq!(changed_rows(&before, model.output_matrix()), 50);
}

#[test]
fn ns_step_touches_label_and_negative_rows() {
    let mut model = EmbeddingModel::<f32>::new(10, 1000, 8, 1).unwrap();
    let config = kge::LossConfig::negative_sampling(5);
    for seed in 0..10 {
        let before = model.output_matrix().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model
            .negative_sampling_step(&Example::new(vec![3], 42), 0.2, &config, &mut rng)
            .unwrap();
        let mut replay = ChaCha8Rng::seed_from_u64(seed);
        let mut drawn = Vec::new();
        sample_negatives(&mut replay, 1000, 42, 5, &mut drawn);
        drawn.sort_unstable();
        drawn.dedup();
        assert_eq!(
            changed_rows(&before, model.output_matrix()),
            drawn.len() + 1
        );
    }
}

proptest! {
    #[test]
    fn random_instances_pass_gradient_check(
        seed in any::<u64>(),
        dim in 1usize..=8,
        classes in 2usize..=10,
        tokens in proptest::collection::vec(0u32..6, 1..5),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, 6, classes, dim);
        let label = rng.random_range(0..classes as u32);
        let example = Example::new(tokens, label);
        let err = max_relative_error(
            &model,
            |p| oracle::softmax_loss(p, &example.tokens, label, classes),
            |m, lr| { m.softmax_step(&example, lr).unwrap(); },
        );
        prop_assert!(err < 1e-3, "softmax: {}", err);

        let negatives: Vec<u32> = (0..classes as u32).filter(|&c| c != label).take(3).collect();
        let err = max_relative_error(
            &model,
            |p| oracle::ns_loss(p, &example.tokens, label, &negatives),
            |m, lr| { m.negative_sampling_step_with(&example, &negatives, lr).unwrap(); },
        );
        prop_assert!(err < 1e-3, "ns: {}", err);
    }

    #[test]
    fn softmax_is_normalized_and_shift_invariant(
        scores in proptest::collection::vec(-50.0f64..50.0, 1..20),
        shift in -100.0f64..100.0,
    ) {
        let p = softmax_probs(&scores).unwrap();
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let q = softmax_probs(&shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-6);
        }
        let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        prop_assert_eq!(argmax(&p), argmax(&scores));
    }

    #[test]
    fn f32_softmax_is_normalized(scores in proptest::collection::vec(-80.0f32..80.0, 1..50)) {
        let p = softmax_probs(&scores).unwrap();
        prop_assert!((p.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn average_is_permutation_invariant(
        seed in any::<u64>(),
        tokens in proptest::collection::vec(0u32..8, 1..10),
    ) {
        let model = EmbeddingModel::<f64>::new(8, 2, 5, seed).unwrap();
        let mut shuffled = tokens.clone();
        shuffled.reverse();
        shuffled.rotate_left(tokens.len() / 2);
        let a = model.average_input(&tokens).unwrap();
        let b = model.average_input(&shuffled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_are_linear(
        seed in any::<u64>(),
        u in proptest::collection::vec(-1.0f64..1.0, 4),
        w in proptest::collection::vec(-1.0f64..1.0, 4),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, 2, 6, 4);
        let mix: Vec<f64> = u.iter().zip(&w).map(|(x, y)| a * x + b * y).collect();
        let lhs = model.score_all(&mix).unwrap();
        let su = model.score_all(&u).unwrap();
        let sw = model.score_all(&w).unwrap();
        for k in 0..6 {
            prop_assert!((lhs[k] - (a * su[k] + b * sw[k])).abs() < 1e-6);
        }
    }

    #[test]
    fn updates_stay_finite(
        seed in any::<u64>(),
        lr in 0.001f32..=1.0,
        steps in 1usize..200,
    ) {
        let mut model = EmbeddingModel::<f32>::new(6, 8, 4, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = kge::LossConfig::negative_sampling(3);
        for i in 0..steps {
            let example = Example::new(vec![(i % 6) as u32, ((i * 7) % 6) as u32], (i % 8) as u32);
            model.softmax_step(&example, lr).unwrap();
            model.negative_sampling_step(&example, lr, &config, &mut rng).unwrap();
        }
        prop_assert!(model.is_finite());
    }
}
