//! Frame-level signal features.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

/// Silence floor for loudness, in dBFS.
pub const LOUDNESS_FLOOR_DB: f64 = -100.0;
pub const HNR_MIN_DB: f64 = -20.0;
pub const HNR_MAX_DB: f64 = 40.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Framing {
    pub frame_ms: f64,
    pub hop_ms: f64,
}

impl Default for Framing {
    fn default() -> Self {
        Self {
            frame_ms: 32.0,
            hop_ms: 10.0,
        }
    }
}

impl Framing {
    pub fn frame_len(&self, sample_rate: u32) -> usize {
        (self.frame_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self, sample_rate: u32) -> usize {
        (self.hop_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    fn check(&self, sample_rate: u32) -> Result<(usize, usize)> {
        let (n, h) = (self.frame_len(sample_rate), self.hop_len(sample_rate));
        if n == 0 || h == 0 {
            return Err(Error::Config(format!(
                "framing {} ms / {} ms is shorter than one sample at {sample_rate} Hz",
                self.frame_ms, self.hop_ms
            )));
        }
        Ok((n, h))
    }

    /// Frame start offsets and the frame length. A signal shorter than one
    /// frame yields a single short frame.
    pub fn frames(&self, w: &Waveform) -> Result<Vec<(usize, usize)>> {
        let (n, h) = self.check(w.sample_rate())?;
        let len = w.len();
        if len < n {
            return Ok(vec![(0, len)]);
        }
        Ok((0..=(len - n)).step_by(h).map(|s| (s, s + n)).collect())
    }
}

/// Per-frame values (None where the frame was not evaluated) and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTrack {
    pub values: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

impl FrameTrack {
    fn from_values(values: Vec<Option<f64>>) -> Self {
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        let mean = crate::metrics::mean(&defined);
        Self { values, mean }
    }

    pub fn defined(&self) -> usize {
        self.values.iter().flatten().count()
    }
}

/// Dot product with four running sums so the loop vectorises.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(p, q)| p * q).sum();
    for (p, q) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += p[i] * q[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn energy(x: &[f64]) -> f64 {
    dot(x, x)
}

/// `20 log10(rms)` per frame, floored. `silent` is set when every frame sits
/// on the floor.
pub fn loudness(w: &Waveform, framing: Framing) -> Result<(FrameTrack, bool)> {
    let values: Vec<Option<f64>> = framing
        .frames(w)?
        .into_iter()
        .map(|(a, b)| {
            let x = &w.samples()[a..b];
            let rms = (energy(x) / x.len() as f64).sqrt();
            let db = if rms > 0.0 { 20.0 * rms.log10() } else { f64::NEG_INFINITY };
            Some(db.max(LOUDNESS_FLOOR_DB))
        })
        .collect();
    let silent = values.iter().all(|v| *v == Some(LOUDNESS_FLOOR_DB));
    Ok((FrameTrack::from_values(values), silent))
}

/// Lag bounds `(min, max)` in samples for a fundamental range in Hz.
pub fn lag_range(sample_rate: u32, f0_range: [f64; 2]) -> Result<(usize, usize)> {
    let [lo, hi] = f0_range;
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::Config(format!("f0 range [{lo}, {hi}] must satisfy 0 < lo < hi")));
    }
    let fs = sample_rate as f64;
    let min = ((fs / hi).floor() as usize).max(1);
    let max = (fs / lo).ceil() as usize;
    Ok((min, max))
}

fn check_lag_fits(framing: Framing, w: &Waveform, max_lag: usize) -> Result<()> {
    let n = framing.frame_len(w.sample_rate());
    if n <= max_lag {
        return Err(Error::Config(format!(
            "frame of {n} samples does not cover the longest lag of {max_lag} samples"
        )));
    }
    Ok(())
}

/// Largest normalised autocorrelation over lags `min..=max`.
fn max_normalized_autocorr(x: &[f64], min: usize, max: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for lag in min..=max.min(x.len().saturating_sub(1)) {
        let (a, b) = (&x[..x.len() - lag], &x[lag..]);
        let num = dot(a, b);
        let den = (energy(a) * energy(b)).sqrt();
        if den > 0.0 {
            best = best.max(num / den);
        }
    }
    best
}

fn hnr_db(r: f64) -> f64 {
    if r >= 1.0 {
        HNR_MAX_DB
    } else if r <= 0.0 {
        HNR_MIN_DB
    } else {
        (10.0 * (r / (1.0 - r)).log10()).clamp(HNR_MIN_DB, HNR_MAX_DB)
    }
}

/// Harmonicity-to-noise ratio per frame, from the peak normalised
/// autocorrelation in the F0 lag range. Frames are evaluated where `voiced`
/// is set, or, without a mask, wherever the frame has any energy.
pub fn log_hnr(w: &Waveform, framing: Framing, f0_range: [f64; 2], voiced: Option<&[bool]>) -> Result<FrameTrack> {
    let (min, max) = lag_range(w.sample_rate(), f0_range)?;
    check_lag_fits(framing, w, max)?;
    let frames = framing.frames(w)?;
    check_mask(voiced, frames.len())?;
    let values = frames
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            let x = &w.samples()[a..b];
            let selected = match voiced {
                Some(mask) => mask[i],
                None => energy(x) > 0.0,
            };
            if !selected {
                return None;
            }
            let r = max_normalized_autocorr(x, min, max);
            r.is_finite().then(|| hnr_db(r))
        })
        .collect();
    Ok(FrameTrack::from_values(values))
}

fn check_mask(mask: Option<&[bool]>, frames: usize) -> Result<()> {
    match mask {
        Some(m) if m.len() != frames => Err(Error::DimensionMismatch {
            expected: frames,
            got: m.len(),
        }),
        _ => Ok(()),
    }
}

/// Minimum of YIN's cumulative mean normalised difference over `min..=max`,
/// using a fixed integration window of `frame - max` samples.
fn yin_aperiodicity(x: &[f64], min: usize, max: usize) -> f64 {
    let window = x.len() - max;
    let head = energy(&x[..window]);
    let mut cumulative = 0.0;
    let mut best = f64::INFINITY;
    for lag in 1..=max {
        let shifted = &x[lag..lag + window];
        let d = (head + energy(shifted) - 2.0 * dot(&x[..window], shifted)).max(0.0);
        cumulative += d;
        let cmnd = if cumulative > 0.0 { d * lag as f64 / cumulative } else { 1.0 };
        if lag >= min {
            best = best.min(cmnd);
        }
    }
    best
}

/// YIN voicing decision per frame: voiced when the normalised difference
/// dips below `threshold` somewhere in the F0 lag range.
pub fn voiced_frames(w: &Waveform, framing: Framing, f0_range: [f64; 2], threshold: f64) -> Result<Vec<bool>> {
    let (min, max) = lag_range(w.sample_rate(), f0_range)?;
    check_lag_fits(framing, w, max)?;
    Ok(framing
        .frames(w)?
        .into_iter()
        .map(|(a, b)| {
            let x = &w.samples()[a..b];
            x.len() > max && yin_aperiodicity(x, min, max) < threshold
        })
        .collect())
}

/// Frames with at least half their samples inside one of `spans`.
pub fn mask_from_spans(w: &Waveform, framing: Framing, spans: &[(usize, usize)]) -> Result<Vec<bool>> {
    Ok(framing
        .frames(w)?
        .into_iter()
        .map(|(a, b)| {
            let covered: usize = spans.iter().map(|&(s, e)| e.min(b).saturating_sub(s.max(a))).sum();
            2 * covered >= b - a
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PermutationEntropy {
    /// Normalised to [0, 1].
    pub value: f64,
    /// Only one ordinal pattern occurred.
    pub degenerate: bool,
}

/// Bandt-Pompe permutation entropy of order `m` and delay `delay`. Equal
/// values rank by position, the earlier one being smaller.
pub fn permutation_entropy(x: &[f64], m: usize, delay: usize) -> Result<PermutationEntropy> {
    if !(2..=7).contains(&m) || delay == 0 {
        return Err(Error::Config(format!("order {m} must be in 2..=7 and delay {delay} positive")));
    }
    let span = (m - 1) * delay;
    if x.len() < span + 2 {
        return Err(Error::Precondition(format!(
            "permutation entropy of order {m}, delay {delay} needs at least {} samples, got {}",
            span + 2,
            x.len()
        )));
    }
    let factorial: usize = (1..=m).product();
    let mut counts = vec![0usize; factorial];
    let mut order: Vec<usize> = Vec::with_capacity(m);
    for start in 0..x.len() - span {
        order.clear();
        order.extend(0..m);
        // Stable sort keeps earlier indices first among equal values.
        order.sort_by(|&i, &j| x[start + i * delay].total_cmp(&x[start + j * delay]));
        counts[lehmer_index(&order)] += 1;
    }
    let total = (x.len() - span) as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    Ok(PermutationEntropy {
        value: (h / (factorial as f64).ln()).clamp(0.0, 1.0),
        degenerate: counts.iter().filter(|&&c| c > 0).count() == 1,
    })
}

/// Rank of a permutation in lexicographic order.
fn lehmer_index(perm: &[usize]) -> usize {
    let n = perm.len();
    let mut index = 0;
    for i in 0..n {
        let smaller_after = perm[i + 1..].iter().filter(|&&p| p < perm[i]).count();
        index = index * (n - i) + smaller_after;
    }
    index
}

/// Per-frame permutation entropy over frames that carry any energy.
pub fn frame_permutation_entropy(w: &Waveform, framing: Framing, m: usize, delay: usize) -> Result<FrameTrack> {
    let values = framing
        .frames(w)?
        .into_iter()
        .map(|(a, b)| {
            let x = &w.samples()[a..b];
            if energy(x) == 0.0 || x.len() < (m - 1) * delay + 2 {
                return Ok(None);
            }
            Ok(Some(permutation_entropy(x, m, delay)?.value))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameTrack::from_values(values))
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Levinson-Durbin recursion on autocorrelations `r[0..=order]`. Returns
/// predictor coefficients `a` with `x[n] ~ sum_k a[k] x[n - 1 - k]`, or None
/// when the autocorrelation is singular.
pub fn levinson_durbin(r: &[f64], order: usize) -> Option<Vec<f64>> {
    if r.len() <= order || !(r[0] > 0.0) {
        return None;
    }
    let mut a = vec![0.0; order];
    let mut err = r[0];
    for i in 0..order {
        let acc = r[i + 1] - (0..i).map(|j| a[j] * r[i - j]).sum::<f64>();
        let k = acc / err;
        let prev = a.clone();
        a[i] = k;
        for j in 0..i {
            a[j] = prev[j] - k * prev[i - 1 - j];
        }
        err *= 1.0 - k * k;
        if !(err > 0.0) || !k.is_finite() {
            return None;
        }
    }
    Some(a)
}

/// LPC coefficients of one frame from its Hann-windowed autocorrelation.
pub fn lpc(x: &[f64], order: usize) -> Option<Vec<f64>> {
    let win: Vec<f64> = x.iter().zip(hann(x.len())).map(|(v, h)| v * h).collect();
    let r: Vec<f64> = (0..=order)
        .map(|lag| win.iter().zip(win.iter().skip(lag)).map(|(p, q)| p * q).sum())
        .collect();
    levinson_durbin(&r, order)
}

/// Signal-to-residual ratio of one frame under its own LPC fit, over the
/// samples that have a full prediction history.
pub fn frame_lpc_snr(x: &[f64], order: usize) -> Option<f64> {
    if x.len() <= order {
        return None;
    }
    let a = lpc(x, order)?;
    let mut signal = 0.0;
    let mut residual = 0.0;
    for n in order..x.len() {
        let pred: f64 = a.iter().enumerate().map(|(k, c)| c * x[n - 1 - k]).sum();
        signal += x[n] * x[n];
        residual += (x[n] - pred).powi(2);
    }
    (residual > 0.0 && signal > 0.0).then(|| 10.0 * (signal / residual).log10())
}

/// Blind SNR per voiced frame from the LPC residual.
pub fn blind_snr(w: &Waveform, framing: Framing, voiced: &[bool], order: usize) -> Result<FrameTrack> {
    if order == 0 {
        return Err(Error::Config("LPC order must be positive".into()));
    }
    let frames = framing.frames(w)?;
    check_mask(Some(voiced), frames.len())?;
    let values = frames
        .into_iter()
        .zip(voiced)
        .map(|((a, b), &v)| if v { frame_lpc_snr(&w.samples()[a..b], order) } else { None })
        .collect();
    Ok(FrameTrack::from_values(values))
}
