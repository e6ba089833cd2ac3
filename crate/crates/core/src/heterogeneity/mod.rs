//! Corpus heterogeneity analysis on raw audio.
//!
//! Each utterance is summarised by a handful of low-level measurements
//! (level, harmonicity, ordinal complexity, LPC blind SNR, voicing), and
//! corpora are compared by how those summaries vary between and within
//! speakers, and by how well k-means recovers speakers from them.

mod purity;
mod signal;
mod variation;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use purity::{clustering_purity, kmeans, purity, zscore_columns, KMeans};
pub use signal::{
    blind_snr, frame_lpc_snr, frame_permutation_entropy, lag_range, levinson_durbin, log_hnr, loudness, lpc,
    mask_from_spans, permutation_entropy, voiced_frames, FrameTrack, Framing, PermutationEntropy, HNR_MAX_DB,
    HNR_MIN_DB, LOUDNESS_FLOOR_DB,
};
pub use variation::{client_variation, ClientVariationReport};

/// Mono samples in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("empty waveform".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        if samples.iter().any(|x| !x.is_finite() || x.abs() > 1.0) {
            return Err(Error::Data("waveform samples must be finite and within [-1, 1]".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Multiplies every sample by `gain`; fails if that leaves [-1, 1].
    pub fn scaled(&self, gain: f64) -> Result<Self> {
        Self::new(self.samples.iter().map(|x| x * gain).collect(), self.sample_rate)
    }
}

fn default_f0_range() -> [f64; 2] {
    [75.0, 400.0]
}

fn default_threshold() -> f64 {
    0.15
}

fn default_pe_order() -> usize {
    4
}

fn default_one() -> usize {
    1
}

fn default_lpc_order() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    #[serde(default)]
    pub framing: Framing,
    #[serde(default = "default_f0_range")]
    pub f0_range: [f64; 2],
    #[serde(default = "default_threshold")]
    pub yin_threshold: f64,
    #[serde(default = "default_pe_order")]
    pub pe_order: usize,
    #[serde(default = "default_one")]
    pub pe_delay: usize,
    #[serde(default = "default_lpc_order")]
    pub lpc_order: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            framing: Framing::default(),
            f0_range: default_f0_range(),
            yin_threshold: default_threshold(),
            pe_order: default_pe_order(),
            pe_delay: default_one(),
            lpc_order: default_lpc_order(),
            seed: 0,
        }
    }
}

/// Per-utterance means of the frame features. `None` marks a feature with no
/// frame to average over.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceProfile {
    pub loudness_db: f64,
    pub log_hnr_db: Option<f64>,
    pub perm_entropy: Option<f64>,
    pub blind_snr_db: Option<f64>,
    pub voiced_fraction: f64,
}

impl UtteranceProfile {
    /// The five features as a vector, when all are defined.
    pub fn vector(&self) -> Option<[f64; 5]> {
        Some([
            self.loudness_db,
            self.log_hnr_db?,
            self.perm_entropy?,
            self.blind_snr_db?,
            self.voiced_fraction,
        ])
    }
}

pub fn profile_utterance(w: &Waveform, cfg: &ProfileConfig) -> Result<UtteranceProfile> {
    let (level, _) = loudness(w, cfg.framing)?;
    let voiced = voiced_frames(w, cfg.framing, cfg.f0_range, cfg.yin_threshold)?;
    let hnr = log_hnr(w, cfg.framing, cfg.f0_range, None)?;
    let pe = frame_permutation_entropy(w, cfg.framing, cfg.pe_order, cfg.pe_delay)?;
    let snr = blind_snr(w, cfg.framing, &voiced, cfg.lpc_order)?;
    Ok(UtteranceProfile {
        loudness_db: level.mean.expect("at least one frame"),
        log_hnr_db: hnr.mean,
        perm_entropy: pe.mean,
        blind_snr_db: snr.mean,
        voiced_fraction: voiced.iter().filter(|&&v| v).count() as f64 / voiced.len() as f64,
    })
}

/// One utterance to analyse, labelled with its client (speaker).
#[derive(Clone, Copy, Debug)]
pub struct Recording<'a> {
    pub id: &'a str,
    pub client: &'a str,
    pub waveform: &'a Waveform,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileRow {
    pub utterance_id: String,
    pub client_id: String,
    pub profile: UtteranceProfile,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusAnalysis {
    pub profiles: Vec<ProfileRow>,
    pub loudness: Option<ClientVariationReport>,
    pub log_hnr: Option<ClientVariationReport>,
    pub perm_entropy: Option<ClientVariationReport>,
    pub blind_snr: Option<ClientVariationReport>,
    /// k-means purity over z-scored profiles with every feature defined,
    /// with one centroid per client present.
    pub purity: Option<f64>,
    pub purity_points: usize,
}

/// Groups defined values by client, in client-id order.
fn grouped(rows: &[ProfileRow], pick: impl Fn(&UtteranceProfile) -> Option<f64>) -> Vec<Vec<f64>> {
    let mut by_client: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in rows {
        if let Some(v) = pick(&r.profile) {
            by_client.entry(&r.client_id).or_default().push(v);
        }
    }
    by_client.into_values().collect()
}

fn variation(rows: &[ProfileRow], pick: impl Fn(&UtteranceProfile) -> Option<f64>) -> Option<ClientVariationReport> {
    let groups = grouped(rows, pick);
    client_variation(&groups).ok()
}

/// Purity of k-means over labelled points, one centroid per distinct label.
pub fn labelled_purity(points: &[Vec<f64>], clients: &[&str], seed: u64) -> Result<f64> {
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    for c in clients {
        let next = ids.len();
        ids.entry(c).or_insert(next);
    }
    let labels: Vec<usize> = clients.iter().map(|c| ids[c]).collect();
    clustering_purity(points, &labels, ids.len(), seed)
}

/// Profiles every recording in parallel and summarises the corpus.
pub fn analyze_corpus(recordings: &[Recording<'_>], cfg: &ProfileConfig) -> Result<CorpusAnalysis> {
    if recordings.is_empty() {
        return Err(Error::Precondition("no recordings to analyse".into()));
    }
    let profiles = recordings
        .par_iter()
        .map(|r| {
            Ok(ProfileRow {
                utterance_id: r.id.to_string(),
                client_id: r.client.to_string(),
                profile: profile_utterance(r.waveform, cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let complete: Vec<(&str, [f64; 5])> = profiles
        .iter()
        .filter_map(|r| Some((r.client_id.as_str(), r.profile.vector()?)))
        .collect();
    let points = zscore_columns(&complete.iter().map(|(_, v)| v.to_vec()).collect::<Vec<_>>());
    let clients: Vec<&str> = complete.iter().map(|(c, _)| *c).collect();
    let purity = if points.is_empty() {
        None
    } else {
        Some(labelled_purity(&points, &clients, cfg.seed)?)
    };

    Ok(CorpusAnalysis {
        loudness: variation(&profiles, |p| Some(p.loudness_db)),
        log_hnr: variation(&profiles, |p| p.log_hnr_db),
        perm_entropy: variation(&profiles, |p| p.perm_entropy),
        blind_snr: variation(&profiles, |p| p.blind_snr_db),
        purity,
        purity_points: points.len(),
        profiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthcorpus::audio::synthesize;
    use crate::seeding;

    fn construction(snr_db: f64, seed: u64) -> (Waveform, Vec<(usize, usize)>) {
        let spans = vec![(800, 7200), (8800, 15200)];
        let mut rng = seeding::rng(seed, "construction", &[]);
        let x = synthesize(&mut rng, 16_000, 16_000, 150.0, 4, snr_db, -12.0, 1.0, &spans);
        (Waveform::new(x, 16_000).unwrap(), spans)
    }

    #[test]
    fn waveform_rejects_bad_input() {
        assert!(Waveform::new(vec![], 16_000).is_err());
        assert!(Waveform::new(vec![1.5], 16_000).is_err());
        assert!(Waveform::new(vec![0.1], 0).is_err());
    }

    #[test]
    fn loudness_follows_gain_exactly() {
        let (w, _) = construction(20.0, 1);
        let cfg = Framing::default();
        let (base, _) = loudness(&w, cfg).unwrap();
        let (half, _) = loudness(&w.scaled(0.5).unwrap(), cfg).unwrap();
        for (a, b) in base.values.iter().zip(&half.values) {
            let (a, b) = (a.unwrap(), b.unwrap());
            assert!((a - b - 20.0 * 2f64.log10()).abs() < 1e-9);
        }
    }

    #[test]
    fn blind_snr_is_gain_invariant() {
        let (w, spans) = construction(15.0, 2);
        let mask = mask_from_spans(&w, Framing::default(), &spans).unwrap();
        let a = blind_snr(&w, Framing::default(), &mask, 10).unwrap();
        let b = blind_snr(&w.scaled(0.3).unwrap(), Framing::default(), &mask, 10).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            match (x, y) {
                (Some(x), Some(y)) => assert!((x - y).abs() < 1e-6),
                (x, y) => assert_eq!(x, y),
            }
        }
    }

    #[test]
    fn blind_snr_tracks_construction() {
        let mut estimates = Vec::new();
        for seed in 0..10 {
            let (w, spans) = construction(20.0, seed);
            let mask = mask_from_spans(&w, Framing::default(), &spans).unwrap();
            estimates.push(blind_snr(&w, Framing::default(), &mask, 10).unwrap().mean.unwrap());
        }
        let m = crate::metrics::mean(&estimates).unwrap();
        assert!((m - 20.0).abs() <= 5.0, "mean estimate {m}");
    }

    #[test]
    fn profile_of_a_clean_construction() {
        let (w, _) = construction(30.0, 3);
        let p = profile_utterance(&w, &ProfileConfig::default()).unwrap();
        assert!(p.voiced_fraction > 0.5 && p.voiced_fraction <= 1.0);
        assert!(p.log_hnr_db.unwrap() > 0.0);
        let pe = p.perm_entropy.unwrap();
        assert!((0.0..=1.0).contains(&pe));
        assert!(p.vector().is_some());
    }

    #[test]
    fn silent_utterance_has_undefined_features() {
        let w = Waveform::new(vec![0.0; 8000], 16_000).unwrap();
        let p = profile_utterance(&w, &ProfileConfig::default()).unwrap();
        assert_eq!(p.loudness_db, LOUDNESS_FLOOR_DB);
        assert_eq!((p.log_hnr_db, p.perm_entropy, p.blind_snr_db), (None, None, None));
        assert_eq!(p.voiced_fraction, 0.0);
    }

    #[test]
    fn single_utterance_corpus() {
        let (w, _) = construction(25.0, 4);
        let rec = [Recording {
            id: "u0",
            client: "s0",
            waveform: &w,
        }];
        let a = analyze_corpus(&rec, &ProfileConfig::default()).unwrap();
        let l = a.loudness.unwrap();
        assert_eq!((l.std_of_means, l.mean_of_stds), (0.0, None));
        assert_eq!(a.purity, Some(1.0));
    }
}
