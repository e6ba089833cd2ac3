//! CTC loss via the forward-backward recursion in log space.

use super::{FramePosteriors, Transcript, BLANK};
use crate::error::{Error, Result};

/// Log of zero probability.
pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[inline]
fn ln_prob(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        LOG_ZERO
    }
}

/// Smallest number of frames that can emit `labels`: one per label plus one
/// separating blank for every adjacent repeat.
pub fn min_frames_for(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Blank-augmented label sequence `∅ y1 ∅ y2 ... ∅`.
fn extend(labels: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(BLANK);
    for &l in labels {
        ext.push(l);
        ext.push(BLANK);
    }
    ext
}

fn check(post: &FramePosteriors, y: &Transcript) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Precondition("CTC target must be non-empty".into()));
    }
    if let Some(&bad) = y.tokens().iter().find(|&&t| t == BLANK || t >= post.vocab()) {
        return Err(Error::Data(format!(
            "CTC target token {bad} is blank or outside vocabulary of {}",
            post.vocab()
        )));
    }
    let required = min_frames_for(y.tokens());
    if post.frames() < required {
        return Err(Error::InfeasibleAlignment {
            frames: post.frames(),
            labels: y.len(),
            required,
        });
    }
    Ok(())
}

/// Log-alpha table, `T x S`, where alpha includes the emission at frame t.
fn forward_table(logp: &[f64], vocab: usize, ext: &[usize], frames: usize) -> Vec<f64> {
    let s_len = ext.len();
    let mut alpha = vec![LOG_ZERO; frames * s_len];
    alpha[0] = logp[ext[0]];
    if s_len > 1 {
        alpha[1] = logp[ext[1]];
    }
    for t in 1..frames {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        let cur = &mut cur[..s_len];
        let lp = &logp[t * vocab..(t + 1) * vocab];
        for s in 0..s_len {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2] {
                acc = log_add(acc, prev[s - 2]);
            }
            cur[s] = if acc == LOG_ZERO { LOG_ZERO } else { acc + lp[ext[s]] };
        }
    }
    alpha
}

/// Log-beta table, `T x S`, where beta excludes the emission at frame t.
fn backward_table(logp: &[f64], vocab: usize, ext: &[usize], frames: usize) -> Vec<f64> {
    let s_len = ext.len();
    let mut beta = vec![LOG_ZERO; frames * s_len];
    let last = (frames - 1) * s_len;
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        let next = &next[..s_len];
        let lp = &logp[(t + 1) * vocab..(t + 2) * vocab];
        let through = |s: usize| {
            if next[s] == LOG_ZERO {
                LOG_ZERO
            } else {
                next[s] + lp[ext[s]]
            }
        };
        for s in 0..s_len {
            let mut acc = through(s);
            if s + 1 < s_len {
                acc = log_add(acc, through(s + 1));
            }
            if s + 2 < s_len && ext[s + 2] != BLANK && ext[s + 2] != ext[s] {
                acc = log_add(acc, through(s + 2));
            }
            cur[s] = acc;
        }
    }
    beta
}

fn log_posteriors(post: &FramePosteriors) -> Vec<f64> {
    post.rows().flatten().map(|&p| ln_prob(p)).collect()
}

fn total_log_prob(alpha: &[f64], s_len: usize, frames: usize) -> f64 {
    let last = &alpha[(frames - 1) * s_len..];
    if s_len > 1 {
        log_add(last[s_len - 1], last[s_len - 2])
    } else {
        last[0]
    }
}

/// `-ln p(y | x)` summed over every CTC alignment of `y`.
pub fn ctc_loss(post: &FramePosteriors, y: &Transcript) -> Result<f64> {
    check(post, y)?;
    let ext = extend(y.tokens());
    let logp = log_posteriors(post);
    let alpha = forward_table(&logp, post.vocab(), &ext, post.frames());
    Ok(-total_log_prob(&alpha, ext.len(), post.frames()))
}

/// CTC loss and its gradient with respect to the pre-softmax logits (`T x V`,
/// row-major), assuming `post` is the softmax of those logits.
pub(crate) fn ctc_loss_and_logit_grad(
    post: &FramePosteriors,
    y: &Transcript,
) -> Result<(f64, Vec<f64>)> {
    check(post, y)?;
    let vocab = post.vocab();
    let frames = post.frames();
    let ext = extend(y.tokens());
    let s_len = ext.len();
    let logp = log_posteriors(post);
    let alpha = forward_table(&logp, vocab, &ext, frames);
    let beta = backward_table(&logp, vocab, &ext, frames);
    let log_total = total_log_prob(&alpha, s_len, frames);
    if log_total == LOG_ZERO {
        return Err(Error::Numeric("CTC path probability underflowed to zero".into()));
    }

    let mut grad = Vec::with_capacity(frames * vocab);
    let mut occupancy = vec![LOG_ZERO; vocab];
    for t in 0..frames {
        occupancy.fill(LOG_ZERO);
        for s in 0..s_len {
            let a = alpha[t * s_len + s];
            let b = beta[t * s_len + s];
            if a != LOG_ZERO && b != LOG_ZERO {
                occupancy[ext[s]] = log_add(occupancy[ext[s]], a + b);
            }
        }
        for (k, &p) in post.row(t).iter().enumerate() {
            let gamma = if occupancy[k] == LOG_ZERO {
                0.0
            } else {
                (occupancy[k] - log_total).exp()
            };
            grad.push(p - gamma);
        }
    }
    Ok((-log_total, grad))
}
