//! Harmonic-plus-noise waveform corpora.
//!
//! Each utterance alternates voiced segments (a harmonic series at the
//! speaker's fundamental) with gaps, over continuous white background noise.
//! Gain is the RMS level of the voiced part in dBFS and SNR is measured over
//! the voiced part, so both are ground truth for the analysis pipeline.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::speaker_id;
use crate::error::{Error, Result};
use crate::heterogeneity::Waveform;
use crate::seeding;

fn default_sample_rate() -> u32 {
    16_000
}

fn default_harmonics() -> usize {
    4
}

fn default_noise_scale() -> f64 {
    1.0
}

fn default_voiced_ms() -> [f64; 2] {
    [150.0, 300.0]
}

fn default_gap_ms() -> [f64; 2] {
    [40.0, 120.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioSpec {
    pub speakers: usize,
    pub utterances_per_speaker: [usize; 2],
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
    pub duration_s: [f64; 2],
    /// Per-speaker fundamental range; each utterance moves it by up to 3%.
    pub f0_hz: [f64; 2],
    #[serde(default = "default_harmonics")]
    pub harmonics: usize,
    /// Per-speaker SNR range, plus Gaussian per-utterance jitter.
    pub snr_db: [f64; 2],
    #[serde(default)]
    pub snr_jitter_db: f64,
    /// Per-speaker voiced RMS level in dBFS, plus Gaussian per-utterance jitter.
    pub gain_db: [f64; 2],
    #[serde(default)]
    pub gain_jitter_db: f64,
    /// Multiplies the background noise; 0 gives a pure harmonic signal.
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    #[serde(default = "default_voiced_ms")]
    pub voiced_ms: [f64; 2],
    #[serde(default = "default_gap_ms")]
    pub gap_ms: [f64; 2],
    pub seed: u64,
}

impl AudioSpec {
    /// Wide between-speaker and within-speaker spread of level and noise.
    pub fn cv_like(speakers: usize, seed: u64) -> Self {
        Self {
            speakers,
            utterances_per_speaker: [4, 6],
            sample_rate: default_sample_rate(),
            duration_s: [0.8, 1.2],
            f0_hz: [90.0, 260.0],
            harmonics: default_harmonics(),
            snr_db: [8.0, 40.0],
            snr_jitter_db: 6.0,
            gain_db: [-36.0, -8.0],
            gain_jitter_db: 5.0,
            noise_scale: 1.0,
            voiced_ms: default_voiced_ms(),
            gap_ms: default_gap_ms(),
            seed,
        }
    }

    /// Studio-like: narrow spreads and stable recording conditions.
    pub fn ls_like(speakers: usize, seed: u64) -> Self {
        Self {
            snr_db: [24.0, 30.0],
            snr_jitter_db: 0.3,
            gain_db: [-22.0, -18.0],
            gain_jitter_db: 0.2,
            ..Self::cv_like(speakers, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.speakers == 0 || self.sample_rate == 0 || self.harmonics == 0 {
            return bad("speakers, sample_rate and harmonics must be positive".into());
        }
        let [u_lo, u_hi] = self.utterances_per_speaker;
        if u_lo == 0 || u_lo > u_hi {
            return bad(format!("utterances_per_speaker [{u_lo}, {u_hi}] must satisfy 1 <= lo <= hi"));
        }
        for (name, [a, b]) in [
            ("duration_s", self.duration_s),
            ("f0_hz", self.f0_hz),
            ("snr_db", self.snr_db),
            ("gain_db", self.gain_db),
            ("voiced_ms", self.voiced_ms),
            ("gap_ms", self.gap_ms),
        ] {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return bad(format!("{name} [{a}, {b}] must be finite with lo <= hi"));
            }
        }
        if self.duration_s[0] <= 0.0 || self.f0_hz[0] <= 0.0 || self.voiced_ms[0] <= 0.0 || self.gap_ms[0] < 0.0 {
            return bad("durations and f0 must be positive".into());
        }
        if self.f0_hz[1] * 1.03 >= self.sample_rate as f64 / 2.0 {
            return bad(format!("f0 {} Hz is above Nyquist", self.f0_hz[1]));
        }
        for (name, v) in [
            ("snr_jitter_db", self.snr_jitter_db),
            ("gain_jitter_db", self.gain_jitter_db),
            ("noise_scale", self.noise_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AudioUtterance {
    pub id: String,
    pub speaker: String,
    pub waveform: Waveform,
    /// Half-open sample ranges holding the harmonic signal.
    pub voiced_spans: Vec<(usize, usize)>,
    pub f0_hz: f64,
    pub snr_db: f64,
    pub gain_db: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AudioCorpus {
    pub sample_rate: u32,
    pub utterances: Vec<AudioUtterance>,
}

fn uniform_in<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Synthesises one utterance. Samples are clipped to [-1, 1] and rounded to
/// 16-bit PCM steps so a WAV round trip is exact.
#[allow(clippy::too_many_arguments)]
pub fn synthesize<R: Rng>(
    rng: &mut R,
    sample_rate: u32,
    samples: usize,
    f0_hz: f64,
    harmonics: usize,
    snr_db: f64,
    gain_db: f64,
    noise_scale: f64,
    voiced_spans: &[(usize, usize)],
) -> Vec<f64> {
    let fs = sample_rate as f64;
    let mut out = vec![0.0; samples];
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let top = (1..=harmonics).take_while(|&h| h as f64 * f0_hz < fs / 2.0).count();
    for &(start, end) in voiced_spans {
        for (n, x) in out.iter_mut().enumerate().take(end).skip(start) {
            *x = (1..=top)
                .map(|h| (2.0 * PI * h as f64 * f0_hz * n as f64 / fs + phases[h - 1]).sin() / h as f64)
                .sum();
        }
    }
    let voiced: usize = voiced_spans.iter().map(|(a, b)| b - a).sum();
    let power = out.iter().map(|x| x * x).sum::<f64>() / voiced.max(1) as f64;
    let level = 10f64.powf(gain_db / 20.0);
    if power > 0.0 {
        let scale = level / power.sqrt();
        out.iter_mut().for_each(|x| *x *= scale);
    }
    let noise_std = level * 10f64.powf(-snr_db / 20.0) * noise_scale;
    if noise_std > 0.0 {
        let noise = Normal::new(0.0, noise_std).expect("finite std");
        out.iter_mut().for_each(|x| *x += noise.sample(rng));
    }
    out.into_iter()
        .map(|x| (x.clamp(-1.0, 1.0) * 32767.0).round() / 32767.0)
        .collect()
}

fn voiced_layout<R: Rng>(rng: &mut R, spec: &AudioSpec, samples: usize) -> Vec<(usize, usize)> {
    let ms = |v: f64| (v * spec.sample_rate as f64 / 1000.0).round() as usize;
    let mut spans = Vec::new();
    let mut pos = ms(uniform_in(rng, spec.gap_ms));
    while pos < samples {
        let end = (pos + ms(uniform_in(rng, spec.voiced_ms)).max(1)).min(samples);
        spans.push((pos, end));
        pos = end + ms(uniform_in(rng, spec.gap_ms));
    }
    spans
}

/// Draws an audio corpus; a pure function of the spec.
pub fn generate_audio(spec: &AudioSpec) -> Result<AudioCorpus> {
    spec.validate()?;
    let per_speaker: Vec<Vec<AudioUtterance>> = (0..spec.speakers)
        .into_par_iter()
        .map(|s| {
            let mut rng = seeding::rng(spec.seed, "audio-speaker", &[s as u64]);
            let speaker = speaker_id(s);
            let f0 = uniform_in(&mut rng, spec.f0_hz);
            let snr = uniform_in(&mut rng, spec.snr_db);
            let gain = uniform_in(&mut rng, spec.gain_db);
            let count = rng.gen_range(spec.utterances_per_speaker[0]..=spec.utterances_per_speaker[1]);
            (0..count)
                .map(|u| {
                    let duration = uniform_in(&mut rng, spec.duration_s);
                    let samples = ((duration * spec.sample_rate as f64).round() as usize).max(1);
                    let f0_hz = f0 * (1.0 + rng.gen_range(-0.03..=0.03));
                    let snr_db = snr + spec.snr_jitter_db * rng.sample::<f64, _>(StandardNormal);
                    let gain_db = gain + spec.gain_jitter_db * rng.sample::<f64, _>(StandardNormal);
                    let voiced_spans = voiced_layout(&mut rng, spec, samples);
                    let data = synthesize(
                        &mut rng,
                        spec.sample_rate,
                        samples,
                        f0_hz,
                        spec.harmonics,
                        snr_db,
                        gain_db,
                        spec.noise_scale,
                        &voiced_spans,
                    );
                    AudioUtterance {
                        id: format!("{speaker}-{u:04}"),
                        speaker: speaker.clone(),
                        waveform: Waveform::new(data, spec.sample_rate).expect("non-empty"),
                        voiced_spans,
                        f0_hz,
                        snr_db,
                        gain_db,
                    }
                })
                .collect()
        })
        .collect();
    Ok(AudioCorpus {
        sample_rate: spec.sample_rate,
        utterances: per_speaker.into_iter().flatten().collect(),
    })
}
