//! Seeded synthetic corpora with controllable heterogeneity.
//!
//! Feature corpora pair token sequences with noisy prototype vectors and
//! exact frame alignments; audio corpora (see [`audio`]) synthesise
//! harmonic-plus-noise waveforms per speaker.

pub mod audio;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, Utterance};
use crate::error::{Error, Result};
use crate::model::{FeatureSequence, FrameAlignment, Transcript, BLANK};
use crate::seeding;

pub use audio::{generate_audio, AudioCorpus, AudioSpec, AudioUtterance};

/// Bin edges for per-speaker sample counts; the last bin is open-ended.
pub const SAMPLE_COUNT_BINS: [usize; 10] = [0, 10, 20, 40, 60, 80, 100, 150, 200, 300];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplesLaw {
    Uniform { lo: usize, hi: usize },
    /// Density proportional to `n^-exponent` on `[lo, hi]`.
    Powerlaw { exponent: f64, lo: usize, hi: usize },
}

impl Default for SamplesLaw {
    fn default() -> Self {
        SamplesLaw::Powerlaw {
            exponent: 1.5,
            lo: 3,
            hi: 400,
        }
    }
}

impl SamplesLaw {
    fn bounds(&self) -> (usize, usize) {
        match *self {
            SamplesLaw::Uniform { lo, hi } | SamplesLaw::Powerlaw { lo, hi, .. } => (lo, hi),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        match *self {
            SamplesLaw::Uniform { lo, hi } => rng.gen_range(lo..=hi),
            SamplesLaw::Powerlaw { exponent, lo, hi } => {
                // Inverse CDF of the continuous law on [lo, hi + 1), floored.
                let (a, b) = (lo as f64, (hi + 1) as f64);
                let u: f64 = rng.gen();
                let x = if (exponent - 1.0).abs() < 1e-12 {
                    a * (b / a).powf(u)
                } else {
                    let e = 1.0 - exponent;
                    (a.powf(e) + u * (b.powf(e) - a.powf(e))).powf(1.0 / e)
                };
                (x.floor() as usize).clamp(lo, hi)
            }
        }
    }
}

fn default_tokens_per_utterance() -> [usize; 2] {
    [2, 5]
}

fn default_multiplier() -> f64 {
    1.0
}

/// Generator settings. Ranges are inclusive `[lo, hi]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub speakers: usize,
    #[serde(default)]
    pub samples_law: SamplesLaw,
    /// Includes the blank.
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub frames_per_token: [usize; 2],
    /// Range of each speaker's typical utterance length in tokens; a
    /// speaker's utterances stay within one token of their typical length.
    #[serde(default = "default_tokens_per_utterance")]
    pub tokens_per_utterance: [usize; 2],
    pub per_speaker_noise_std: [f64; 2],
    pub per_speaker_gain_db: [f64; 2],
    /// Inverse Dirichlet concentration of each speaker's token distribution;
    /// 0 gives every speaker the uniform distribution.
    #[serde(default)]
    pub token_skew: f64,
    #[serde(default)]
    pub noisy_client_fraction: f64,
    #[serde(default = "default_multiplier")]
    pub noisy_client_noise_multiplier: f64,
    /// Index of the first speaker. Specs that differ only in offset and
    /// speaker-level settings share token prototypes but not speakers.
    #[serde(default)]
    pub speaker_offset: usize,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.speakers == 0 {
            return bad("speakers must be positive".into());
        }
        let (lo, hi) = self.samples_law.bounds();
        if lo == 0 || lo > hi {
            return bad(format!("samples_law bounds [{lo}, {hi}] must satisfy 1 <= lo <= hi"));
        }
        if let SamplesLaw::Powerlaw { exponent, .. } = self.samples_law {
            if !exponent.is_finite() || exponent < 0.0 {
                return bad(format!("powerlaw exponent {exponent} must be finite and >= 0"));
            }
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2 (blank plus one token)".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        let [f_lo, f_hi] = self.frames_per_token;
        if f_lo < 2 || f_lo > f_hi {
            return bad(format!("frames_per_token [{f_lo}, {f_hi}] must satisfy 2 <= lo <= hi"));
        }
        let [t_lo, t_hi] = self.tokens_per_utterance;
        if t_lo == 0 || t_lo > t_hi {
            return bad(format!("tokens_per_utterance [{t_lo}, {t_hi}] must satisfy 1 <= lo <= hi"));
        }
        for (name, [a, b]) in [
            ("per_speaker_noise_std", self.per_speaker_noise_std),
            ("per_speaker_gain_db", self.per_speaker_gain_db),
        ] {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return bad(format!("{name} [{a}, {b}] must be finite with lo <= hi"));
            }
        }
        if self.per_speaker_noise_std[0] < 0.0 {
            return bad("per_speaker_noise_std must be non-negative".into());
        }
        if !(self.token_skew.is_finite() && self.token_skew >= 0.0) {
            return bad(format!("token_skew {} must be >= 0", self.token_skew));
        }
        if !(0.0..=1.0).contains(&self.noisy_client_fraction) {
            return bad(format!(
                "noisy_client_fraction {} must lie in [0, 1]",
                self.noisy_client_fraction
            ));
        }
        if !(self.noisy_client_noise_multiplier.is_finite() && self.noisy_client_noise_multiplier >= 1.0) {
            return bad(format!(
                "noisy_client_noise_multiplier {} must be >= 1",
                self.noisy_client_noise_multiplier
            ));
        }
        Ok(())
    }

    pub fn noisy_speaker_count(&self) -> usize {
        (self.noisy_client_fraction * self.speakers as f64 + 1e-9).floor() as usize
    }
}

/// Ground truth drawn for one speaker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub id: String,
    pub sample_count: usize,
    /// Typical utterance length in tokens.
    pub typical_length: usize,
    /// Emission probabilities over tokens `1..vocab_size`.
    pub token_probs: Vec<f64>,
    pub noise_std: f64,
    pub gain_db: f64,
    pub noisy: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedCorpus {
    pub corpus: Corpus,
    pub speakers: Vec<SpeakerProfile>,
}

pub fn speaker_id(index: usize) -> String {
    format!("spk{index:04}")
}

fn uniform_in<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

fn token_distribution<R: Rng>(rng: &mut R, tokens: usize, skew: f64) -> Vec<f64> {
    if skew == 0.0 {
        return vec![1.0 / tokens as f64; tokens];
    }
    let gamma = Gamma::new(1.0 / skew, 1.0).expect("positive shape");
    let draws: Vec<f64> = (0..tokens).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.into_iter().map(|g| g / total).collect()
    } else {
        // Every draw underflowed: the limit of vanishing concentration.
        let mut probs = vec![0.0; tokens];
        probs[rng.gen_range(0..tokens)] = 1.0;
        probs
    }
}

fn draw_token<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i + 1;
        }
    }
    // Rounding left u above the final partial sum.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) + 1
}

/// Draws a corpus from `spec`. Output is a pure function of the spec.
pub fn generate(spec: &CorpusSpec) -> Result<GeneratedCorpus> {
    spec.validate()?;
    let dim = spec.feature_dim;
    let tokens = spec.vocab_size - 1;

    let mut proto_rng = seeding::rng(spec.seed, "prototypes", &[]);
    let prototypes: Vec<Vec<f64>> = (0..spec.vocab_size)
        .map(|_| (0..dim).map(|_| proto_rng.sample(StandardNormal)).collect())
        .collect();

    let mut noisy = vec![false; spec.speakers];
    let mut noisy_rng = seeding::rng(spec.seed, "noisy-speakers", &[]);
    for i in index::sample(&mut noisy_rng, spec.speakers, spec.noisy_speaker_count()) {
        noisy[i] = true;
    }

    let per_speaker: Vec<(SpeakerProfile, Vec<Utterance>)> = (0..spec.speakers)
        .into_par_iter()
        .map(|s| {
            let index = spec.speaker_offset + s;
            let mut rng = seeding::rng(spec.seed, "speaker", &[index as u64]);
            let id = speaker_id(index);
            let sample_count = spec.samples_law.sample(&mut rng);
            let token_probs = token_distribution(&mut rng, tokens, spec.token_skew);
            let mut noise_std = uniform_in(&mut rng, spec.per_speaker_noise_std);
            if noisy[s] {
                noise_std *= spec.noisy_client_noise_multiplier;
            }
            let gain_db = uniform_in(&mut rng, spec.per_speaker_gain_db);
            let gain = 10f64.powf(gain_db / 20.0);
            let noise = Normal::new(0.0, noise_std).expect("finite non-negative std");
            let [t_lo, t_hi] = spec.tokens_per_utterance;
            let typical = rng.gen_range(t_lo..=t_hi);
            let lengths = typical.saturating_sub(1).max(t_lo)..=(typical + 1).min(t_hi);

            let utterances = (0..sample_count)
                .map(|u| {
                    let n_tokens = rng.gen_range(lengths.clone());
                    let transcript: Vec<usize> = (0..n_tokens).map(|_| draw_token(&mut rng, &token_probs)).collect();
                    let mut labels = vec![BLANK];
                    for (i, &tok) in transcript.iter().enumerate() {
                        if i > 0 {
                            labels.push(BLANK);
                        }
                        let k = rng.gen_range(spec.frames_per_token[0]..=spec.frames_per_token[1]);
                        labels.extend(std::iter::repeat(tok).take(k));
                    }
                    labels.push(BLANK);
                    let data: Vec<f64> = labels
                        .iter()
                        .flat_map(|&l| prototypes[l].iter())
                        .map(|&p| {
                            let v = gain * p + noise.sample(&mut rng);
                            // Stored on disk as f32; keep in-memory values identical.
                            v as f32 as f64
                        })
                        .collect();
                    Utterance {
                        id: format!("{id}-{u:04}"),
                        speaker: id.clone(),
                        features: FeatureSequence::from_flat(data, dim).expect("finite features"),
                        transcript: Transcript::new(transcript).expect("no blank tokens"),
                        alignment: FrameAlignment::new(labels),
                    }
                })
                .collect();
            let profile = SpeakerProfile {
                id,
                typical_length: typical,
                sample_count,
                token_probs,
                noise_std,
                gain_db,
                noisy: noisy[s],
            };
            (profile, utterances)
        })
        .collect();

    let mut speakers = Vec::with_capacity(spec.speakers);
    let mut utterances = Vec::new();
    for (profile, utts) in per_speaker {
        speakers.push(profile);
        utterances.extend(utts);
    }
    let corpus = Corpus::new(spec.vocab_size, dim, utterances)?;
    Ok(GeneratedCorpus { corpus, speakers })
}

/// Counts speakers by utterance count. Bin `i` covers
/// `[edges[i], edges[i + 1])`; the last bin is open-ended. Counts below the
/// first edge are dropped.
pub fn sample_count_histogram(corpus: &Corpus, bin_edges: &[usize]) -> Result<Vec<usize>> {
    let counts: Vec<usize> = corpus.by_speaker().values().map(Vec::len).collect();
    histogram(&counts, bin_edges)
}

pub fn histogram(values: &[usize], bin_edges: &[usize]) -> Result<Vec<usize>> {
    if bin_edges.is_empty() || bin_edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("histogram edges must be non-empty and strictly increasing".into()));
    }
    let mut bins = vec![0; bin_edges.len()];
    for &v in values {
        if v < bin_edges[0] {
            continue;
        }
        let i = bin_edges.partition_point(|&e| e <= v) - 1;
        bins[i] += 1;
    }
    Ok(bins)
}

/// Mean total-variation distance between all pairs of speaker token
/// distributions.
pub fn mean_token_tv_distance(speakers: &[SpeakerProfile]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (i, a) in speakers.iter().enumerate() {
        for b in &speakers[i + 1..] {
            total += 0.5 * a.token_probs.iter().zip(&b.token_probs).map(|(p, q)| (p - q).abs()).sum::<f64>();
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}
