//! Model checks against independent oracles: exhaustive CTC path enumeration
//! and central finite differences.

use fedsim::dataset::Utterance;
use fedsim::model::{
    ctc_loss, forward, joint_loss, joint_loss_gradient, local_train, FeatureSequence,
    FrameAlignment, FramePosteriors, LossConfig, ModelShape, ParameterVector, Transcript,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sums the probability of every length-T path that collapses to `y`.
fn brute_force_ctc(rows: &[Vec<f64>], y: &[usize]) -> f64 {
    let frames = rows.len();
    let vocab = rows[0].len();
    let mut total = 0.0;
    let mut path = vec![0usize; frames];
    loop {
        let mut collapsed = Vec::new();
        let mut prev = None;
        for &l in &path {
            if Some(l) != prev && l != 0 {
                collapsed.push(l);
            }
            prev = Some(l);
        }
        if collapsed == y {
            total += path.iter().enumerate().map(|(t, &l)| rows[t][l]).product::<f64>();
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == frames {
                return -total.ln();
            }
            path[i] += 1;
            if path[i] < vocab {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

fn random_rows(rng: &mut ChaCha8Rng, frames: usize, vocab: usize) -> Vec<Vec<f64>> {
    (0..frames)
        .map(|_| {
            let raw: Vec<f64> = (0..vocab).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

#[test]
fn ctc_matches_enumeration_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 200 {
        let vocab = rng.gen_range(2..=3);
        let frames = rng.gen_range(1..=6);
        let len = rng.gen_range(1..=3);
        let y: Vec<usize> = (0..len).map(|_| rng.gen_range(1..vocab)).collect();
        let rows = random_rows(&mut rng, frames, vocab);
        let post = FramePosteriors::from_rows(&rows).unwrap();
        let transcript = Transcript::new(y.clone()).unwrap();
        match ctc_loss(&post, &transcript) {
            Ok(loss) => {
                let oracle = brute_force_ctc(&rows, &y);
                assert!((loss - oracle).abs() < 1e-9, "{loss} vs {oracle} for y={y:?}");
                checked += 1;
            }
            Err(fedsim::Error::InfeasibleAlignment { .. }) => {
                assert!(brute_force_ctc(&rows, &y).is_infinite());
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}

fn random_utterance(rng: &mut ChaCha8Rng, vocab: usize, dim: usize) -> Utterance {
    // Alignment of 2..=5 frames whose collapse is non-empty.
    loop {
        let frames = rng.gen_range(2..=5);
        let labels: Vec<usize> = (0..frames).map(|_| rng.gen_range(0..vocab)).collect();
        let alignment = FrameAlignment::new(labels);
        let transcript = alignment.collapse();
        if transcript.is_empty() {
            continue;
        }
        let data: Vec<f64> = (0..frames * dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
        return Utterance {
            id: "u".into(),
            speaker: "s".into(),
            features: FeatureSequence::from_flat(data, dim).unwrap(),
            transcript,
            alignment,
        };
    }
}

fn loss_at(w: &ParameterVector, utt: &Utterance, mu: f64) -> f64 {
    let cfg = LossConfig {
        mu,
        ..LossConfig::default()
    };
    let post = forward(w, &utt.features).unwrap();
    joint_loss(&post, &utt.transcript, &utt.alignment, &cfg).unwrap()
}

fn finite_difference(w: &ParameterVector, utt: &Utterance, mu: f64, h: f64) -> Vec<f64> {
    (0..w.len())
        .map(|i| {
            let mut plus = w.clone();
            plus.values_mut()[i] += h;
            let mut minus = w.clone();
            minus.values_mut()[i] -= h;
            (loss_at(&plus, utt, mu) - loss_at(&minus, utt, mu)) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-8);
    diff / scale
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let vocab = rng.gen_range(2..=4);
        let dim = rng.gen_range(1..=4);
        let shape = ModelShape { vocab, dim };
        let utt = random_utterance(&mut rng, vocab, dim);
        let values: Vec<f64> = (0..shape.param_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = ParameterVector::from_values(shape, values).unwrap();
        for mu in [0.0, 0.3, 1.0] {
            let (_, analytic) = joint_loss_gradient(&w, &utt, mu).unwrap();
            let numeric = finite_difference(&w, &utt, mu, 1e-5);
            let err = relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "mu={mu}: relative error {err}");
        }
    }
}

#[test]
fn single_sgd_step_follows_the_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shape = ModelShape { vocab: 3, dim: 2 };
    let utt = random_utterance(&mut rng, 3, 2);
    let w = ParameterVector::random(shape, 0.5, 1);
    let cfg = LossConfig {
        mu: 0.3,
        learning_rate_local: 0.1,
        local_epochs: 1,
        batch_size: 1,
        max_grad_norm: None,
    };
    let (trained, _) = local_train(&w, std::slice::from_ref(&utt), &cfg, 0).unwrap();
    let implied: Vec<f64> = w
        .values()
        .iter()
        .zip(trained.values())
        .map(|(a, b)| (a - b) / cfg.learning_rate_local)
        .collect();
    let numeric = finite_difference(&w, &utt, cfg.mu, 1e-5);
    assert!(relative_error(&implied, &numeric) < 1e-4);
}

#[test]
fn zero_learning_rate_is_a_no_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let shape = ModelShape { vocab: 3, dim: 2 };
    let data: Vec<Utterance> = (0..4).map(|_| random_utterance(&mut rng, 3, 2)).collect();
    let w = ParameterVector::random(shape, 0.5, 3);
    let cfg = LossConfig {
        mu: 0.3,
        learning_rate_local: 0.0,
        local_epochs: 2,
        batch_size: 3,
        max_grad_norm: None,
    };
    let (trained, loss) = local_train(&w, &data, &cfg, 1).unwrap();
    assert_eq!(trained, w);
    let initial: f64 = data.iter().map(|u| loss_at(&w, u, 0.3)).sum::<f64>() / data.len() as f64;
    assert!((loss - initial).abs() < 1e-12);
}

#[test]
fn local_train_is_deterministic_and_rejects_empty_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let shape = ModelShape { vocab: 4, dim: 3 };
    let data: Vec<Utterance> = (0..9).map(|_| random_utterance(&mut rng, 4, 3)).collect();
    let w = ParameterVector::random(shape, 0.3, 2);
    let cfg = LossConfig {
        mu: 0.3,
        learning_rate_local: 0.05,
        local_epochs: 3,
        batch_size: 2,
        max_grad_norm: None,
    };
    let a = local_train(&w, &data, &cfg, 17).unwrap();
    let b = local_train(&w, &data, &cfg, 17).unwrap();
    assert_eq!(a.0.values(), b.0.values());
    assert_eq!(a.1.to_bits(), b.1.to_bits());
    assert!(matches!(
        local_train(&w, &[], &cfg, 0),
        Err(fedsim::Error::Precondition(_))
    ));
}

#[test]
fn forward_is_bit_reproducible() {
    let w = ParameterVector::random(ModelShape { vocab: 5, dim: 3 }, 1.0, 4);
    let x = FeatureSequence::from_flat((0..12).map(|i| (i as f64 * 0.37).sin()).collect(), 3).unwrap();
    let a = forward(&w, &x).unwrap();
    let b = forward(&w, &x).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn forward_rows_are_distributions(
        values in prop::collection::vec(-20.0f64..20.0, 4 * 3 + 4),
        data in prop::collection::vec(-5.0f64..5.0, 3..=18),
    ) {
        let w = ParameterVector::from_values(ModelShape { vocab: 4, dim: 3 }, values).unwrap();
        let len = data.len() / 3 * 3;
        let x = FeatureSequence::from_flat(data[..len].to_vec(), 3).unwrap();
        let post = forward(&w, &x).unwrap();
        for row in post.rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn joint_loss_is_linear_in_mu(seed in any::<u64>(), mu in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let utt = random_utterance(&mut rng, 3, 2);
        let w = ParameterVector::random(ModelShape { vocab: 3, dim: 2 }, 1.0, seed);
        let at0 = loss_at(&w, &utt, 0.0);
        let at1 = loss_at(&w, &utt, 1.0);
        let mid = loss_at(&w, &utt, mu);
        prop_assert!((mid - (mu * at1 + (1.0 - mu) * at0)).abs() < 1e-9 * (1.0 + at0.abs() + at1.abs()));
    }

    #[test]
    fn greedy_decode_is_idempotent_on_clean_paths(tokens in prop::collection::vec(1usize..4, 1..8)) {
        // Drop adjacent repeats so the path is already collapsed.
        let mut clean = tokens.clone();
        clean.dedup();
        let rows: Vec<Vec<f64>> = clean.iter().map(|&k| {
            let mut r = vec![0.0; 4];
            r[k] = 1.0;
            r
        }).collect();
        let post = FramePosteriors::from_rows(&rows).unwrap();
        let decoded = fedsim::model::greedy_decode(&post);
        prop_assert_eq!(decoded.tokens(), &clean[..]);
    }
}
