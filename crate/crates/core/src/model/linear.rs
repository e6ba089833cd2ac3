use rand::seq::SliceRandom;

use super::ctc::{ctc_loss, ctc_loss_and_logit_grad};
use super::{
    collapse_path, FeatureSequence, FrameAlignment, FramePosteriors, LossConfig, ParameterVector,
    Transcript,
};
use crate::dataset::Utterance;
use crate::error::{Error, Result};
use crate::seeding;

/// Per-frame softmax of `W x_t + b`.
pub fn forward(weights: &ParameterVector, x: &FeatureSequence) -> Result<FramePosteriors> {
    let shape = weights.shape();
    if shape.dim != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: shape.dim,
            got: x.dim(),
        });
    }
    let mut probs = Vec::with_capacity(x.len() * shape.vocab);
    for frame in x.frames() {
        let start = probs.len();
        for k in 0..shape.vocab {
            let row = weights.weight_row(k);
            let logit = weights.bias(k) + row.iter().zip(frame).map(|(w, v)| w * v).sum::<f64>();
            probs.push(logit);
        }
        softmax_in_place(&mut probs[start..]);
    }
    Ok(FramePosteriors::from_flat_unchecked(shape.vocab, probs))
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
}

fn check_alignment(post: &FramePosteriors, alignment: &FrameAlignment) -> Result<()> {
    if alignment.len() != post.frames() {
        return Err(Error::Precondition(format!(
            "alignment has {} labels for {} frames",
            alignment.len(),
            post.frames()
        )));
    }
    if let Some(&bad) = alignment.labels().iter().find(|&&l| l >= post.vocab()) {
        return Err(Error::Data(format!(
            "alignment label {bad} outside vocabulary of {}",
            post.vocab()
        )));
    }
    Ok(())
}

/// Mean over frames of `-ln p(label_t)`.
pub fn ce_loss(post: &FramePosteriors, alignment: &FrameAlignment) -> Result<f64> {
    check_alignment(post, alignment)?;
    let total: f64 = alignment
        .labels()
        .iter()
        .enumerate()
        .map(|(t, &l)| -post.row(t)[l].ln())
        .sum();
    Ok(total / post.frames() as f64)
}

/// `mu * CE + (1 - mu) * CTC`. A component with zero weight is not evaluated.
pub fn joint_loss(
    post: &FramePosteriors,
    y: &Transcript,
    alignment: &FrameAlignment,
    cfg: &LossConfig,
) -> Result<f64> {
    let mu = cfg.mu;
    let ce = if mu > 0.0 { ce_loss(post, alignment)? } else { 0.0 };
    let ctc = if mu < 1.0 { ctc_loss(post, y)? } else { 0.0 };
    Ok(mu * ce + (1.0 - mu) * ctc)
}

/// Joint loss of one utterance and its gradient with respect to the flat parameters.
pub fn joint_loss_gradient(
    weights: &ParameterVector,
    utt: &Utterance,
    mu: f64,
) -> Result<(f64, Vec<f64>)> {
    let post = forward(weights, &utt.features)?;
    let frames = post.frames();
    let vocab = post.vocab();
    let mut logit_grad = vec![0.0; frames * vocab];
    let mut loss = 0.0;

    if mu > 0.0 {
        loss += mu * ce_loss(&post, &utt.alignment)?;
        let scale = mu / frames as f64;
        for (t, &label) in utt.alignment.labels().iter().enumerate() {
            let g = &mut logit_grad[t * vocab..(t + 1) * vocab];
            for (gk, &p) in g.iter_mut().zip(post.row(t)) {
                *gk += scale * p;
            }
            g[label] -= scale;
        }
    }
    if mu < 1.0 {
        let (ctc, grad) = ctc_loss_and_logit_grad(&post, &utt.transcript)?;
        loss += (1.0 - mu) * ctc;
        for (g, c) in logit_grad.iter_mut().zip(grad) {
            *g += (1.0 - mu) * c;
        }
    }

    let shape = weights.shape();
    let mut grad = vec![0.0; shape.param_count()];
    let (w_grad, b_grad) = grad.split_at_mut(shape.vocab * shape.dim);
    for (t, x) in utt.features.frames().enumerate() {
        let g = &logit_grad[t * vocab..(t + 1) * vocab];
        for (k, &gk) in g.iter().enumerate() {
            if gk == 0.0 {
                continue;
            }
            b_grad[k] += gk;
            for (w, &xd) in w_grad[k * shape.dim..(k + 1) * shape.dim].iter_mut().zip(x) {
                *w += gk * xd;
            }
        }
    }
    Ok((loss, grad))
}

/// One SGD step on the mean gradient of `batch`. Returns the updated weights
/// and the mean loss at the pre-step weights.
pub fn sgd_step(
    weights: &ParameterVector,
    batch: &[Utterance],
    cfg: &LossConfig,
) -> Result<(ParameterVector, f64)> {
    let refs: Vec<&Utterance> = batch.iter().collect();
    let mut w = weights.clone();
    let loss = step_in_place(&mut w, &refs, cfg)?;
    Ok((w, loss))
}

fn step_in_place(w: &mut ParameterVector, batch: &[&Utterance], cfg: &LossConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let mut sum_grad = vec![0.0; w.len()];
    let mut sum_loss = 0.0;
    for utt in batch {
        let (loss, grad) = joint_loss_gradient(w, utt, cfg.mu)?;
        sum_loss += loss;
        for (a, g) in sum_grad.iter_mut().zip(grad) {
            *a += g;
        }
    }
    let mut step = cfg.learning_rate_local / batch.len() as f64;
    if let Some(max_norm) = cfg.max_grad_norm {
        let norm = sum_grad.iter().map(|g| g * g).sum::<f64>().sqrt() / batch.len() as f64;
        if norm > max_norm {
            step *= max_norm / norm;
        }
    }
    for (v, g) in w.values_mut().iter_mut().zip(&sum_grad) {
        *v -= step * g;
    }
    if !w.is_finite() {
        return Err(Error::Numeric("weights diverged to non-finite values".into()));
    }
    Ok(sum_loss / batch.len() as f64)
}

/// Mini-batch SGD for `cfg.local_epochs` passes over `data`, reshuffled every
/// epoch from `seed`. Returns the final weights and the mean joint loss over
/// the last epoch (each batch's loss taken before its update).
pub fn local_train(
    weights: &ParameterVector,
    data: &[Utterance],
    cfg: &LossConfig,
    seed: u64,
) -> Result<(ParameterVector, f64)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Precondition("local training on an empty dataset".into()));
    }
    let mut w = weights.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut last_epoch_loss = 0.0;
    for epoch in 0..cfg.local_epochs {
        let mut rng = seeding::rng(seed, "local-epoch", &[epoch as u64]);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Utterance> = chunk.iter().map(|&i| &data[i]).collect();
            epoch_loss += step_in_place(&mut w, &batch, cfg)? * batch.len() as f64;
        }
        last_epoch_loss = epoch_loss / data.len() as f64;
    }
    Ok((w, last_epoch_loss))
}

/// Frame-wise argmax (ties to the lowest id), then CTC collapse.
pub fn greedy_decode(post: &FramePosteriors) -> Transcript {
    let path: Vec<usize> = post
        .rows()
        .map(|row| {
            let mut best = 0;
            for (k, &p) in row.iter().enumerate().skip(1) {
                if p > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    collapse_path(&path)
}

pub fn transcribe(weights: &ParameterVector, x: &FeatureSequence) -> Result<Transcript> {
    Ok(greedy_decode(&forward(weights, x)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelShape;

    fn one_hot_rows(path: &[usize], vocab: usize) -> FramePosteriors {
        let rows: Vec<Vec<f64>> = path
            .iter()
            .map(|&k| {
                let mut r = vec![0.0; vocab];
                r[k] = 1.0;
                r
            })
            .collect();
        FramePosteriors::from_rows(&rows).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_rows() {
        let w = ParameterVector::zeros(ModelShape { vocab: 4, dim: 3 });
        let x = FeatureSequence::from_flat(vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0], 3).unwrap();
        let post = forward(&w, &x).unwrap();
        for row in post.rows() {
            assert!(row.iter().all(|&p| (p - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn large_bias_concentrates_mass() {
        let shape = ModelShape { vocab: 3, dim: 2 };
        let mut values = vec![0.0; shape.param_count()];
        values[shape.vocab * shape.dim + 2] = 20.0;
        let w = ParameterVector::from_values(shape, values).unwrap();
        let x = FeatureSequence::from_flat(vec![0.3, -0.7, 1.1, 0.2], 2).unwrap();
        for row in forward(&w, &x).unwrap().rows() {
            assert!(row[2] > 0.99);
        }
    }

    #[test]
    fn forward_rejects_wrong_dim() {
        let w = ParameterVector::zeros(ModelShape { vocab: 2, dim: 3 });
        let x = FeatureSequence::from_flat(vec![1.0, 2.0], 2).unwrap();
        assert!(matches!(forward(&w, &x), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn ce_examples() {
        let uniform = FramePosteriors::from_rows(&[vec![0.25; 4], vec![0.25; 4]]).unwrap();
        let ce = ce_loss(&uniform, &FrameAlignment::new(vec![0, 3])).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-12);

        let onehot = one_hot_rows(&[1, 0, 2], 3);
        assert_eq!(ce_loss(&onehot, &FrameAlignment::new(vec![1, 0, 2])).unwrap(), 0.0);

        let post = FramePosteriors::from_rows(&[vec![0.5, 0.5], vec![0.75, 0.25]]).unwrap();
        let ce = ce_loss(&post, &FrameAlignment::new(vec![1, 1])).unwrap();
        assert!((ce - 1.0397).abs() < 1e-4);

        assert!(matches!(
            ce_loss(&post, &FrameAlignment::new(vec![1, 2])),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn joint_loss_mixes_components() {
        let post = FramePosteriors::from_rows(&[
            vec![0.2, 0.5, 0.3],
            vec![0.6, 0.1, 0.3],
            vec![0.3, 0.3, 0.4],
        ])
        .unwrap();
        let y = Transcript::new(vec![1, 2]).unwrap();
        let a = FrameAlignment::new(vec![1, 0, 2]);
        let ce = ce_loss(&post, &a).unwrap();
        let ctc = ctc_loss(&post, &y).unwrap();
        let cfg = |mu| LossConfig {
            mu,
            ..LossConfig::default()
        };
        assert_eq!(joint_loss(&post, &y, &a, &cfg(0.0)).unwrap(), ctc);
        assert_eq!(joint_loss(&post, &y, &a, &cfg(1.0)).unwrap(), ce);
        let mid = joint_loss(&post, &y, &a, &cfg(0.4)).unwrap();
        assert!((mid - (0.4 * ce + 0.6 * ctc)).abs() < 1e-12);
    }

    #[test]
    fn greedy_examples() {
        assert_eq!(greedy_decode(&one_hot_rows(&[0, 1, 1, 0, 2], 3)).tokens(), &[1, 2]);
        assert!(greedy_decode(&one_hot_rows(&[0, 0, 0], 3)).is_empty());
        assert_eq!(greedy_decode(&one_hot_rows(&[1, 1, 0, 1], 3)).tokens(), &[1, 1]);
    }

    #[test]
    fn greedy_ties_go_to_lowest_id() {
        let post = FramePosteriors::from_rows(&[vec![0.25, 0.375, 0.375]]).unwrap();
        assert_eq!(greedy_decode(&post).tokens(), &[1]);
    }
}
