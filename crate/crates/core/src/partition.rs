//! Client topologies built from a speaker-labelled corpus.
//!
//! All schemes split by whole speakers, so no speaker ever appears in two
//! clients. Plans hold utterance ids only and serialise to JSON; use
//! [`PartitionPlan::materialize`] to turn one into per-client datasets.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClientDataset, Corpus};
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    CrossSilo,
    PerSpeaker,
    SpeakerPairs,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_silo" => Ok(Scheme::CrossSilo),
            "per_speaker" => Ok(Scheme::PerSpeaker),
            "speaker_pairs" => Ok(Scheme::SpeakerPairs),
            other => Err(Error::Config(format!(
                "unknown scheme `{other}` (expected cross_silo, per_speaker or speaker_pairs)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientAssignment {
    pub client_id: usize,
    pub speakers: Vec<String>,
    pub train: Vec<String>,
    pub test: Vec<String>,
    /// Too small for a local test split; everything stays in `train`.
    #[serde(default)]
    pub no_local_test: bool,
}

impl ClientAssignment {
    pub fn sample_count(&self) -> usize {
        self.train.len() + self.test.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub scheme: Scheme,
    pub clients: Vec<ClientAssignment>,
    /// Set once [`make_local_holdout`] has run.
    #[serde(default)]
    pub holdout_fraction: Option<f64>,
    #[serde(default)]
    pub holdout_min: Option<usize>,
}

impl PartitionPlan {
    fn from_groups(scheme: Scheme, corpus: &Corpus, groups: Vec<Vec<&str>>) -> Self {
        let by_speaker = corpus.by_speaker();
        let clients = groups
            .into_iter()
            .enumerate()
            .map(|(client_id, speakers)| {
                let train = speakers
                    .iter()
                    .flat_map(|s| by_speaker[s].iter().map(|&i| corpus.utterances[i].id.clone()))
                    .collect();
                ClientAssignment {
                    client_id,
                    speakers: speakers.iter().map(|s| s.to_string()).collect(),
                    train,
                    test: Vec::new(),
                    no_local_test: false,
                }
            })
            .collect();
        Self {
            scheme,
            clients,
            holdout_fraction: None,
            holdout_min: None,
        }
    }

    /// Checks the plan partitions `corpus`: every utterance in exactly one
    /// client, and no speaker shared between clients.
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        let speaker_of: HashMap<&str, &str> = corpus
            .utterances
            .iter()
            .map(|u| (u.id.as_str(), u.speaker.as_str()))
            .collect();
        let mut seen_utts = HashSet::new();
        let mut owner: HashMap<&str, usize> = HashMap::new();
        for c in &self.clients {
            for id in c.train.iter().chain(&c.test) {
                let spk = speaker_of
                    .get(id.as_str())
                    .ok_or_else(|| Error::Data(format!("plan references unknown utterance {id}")))?;
                if !seen_utts.insert(id.as_str()) {
                    return Err(Error::Data(format!("utterance {id} assigned twice")));
                }
                if *owner.entry(spk).or_insert(c.client_id) != c.client_id {
                    return Err(Error::Data(format!("speaker {spk} split across clients")));
                }
            }
        }
        if seen_utts.len() != corpus.len() {
            return Err(Error::Data(format!(
                "plan covers {} of {} utterances",
                seen_utts.len(),
                corpus.len()
            )));
        }
        Ok(())
    }

    /// Per-client datasets in client-id order.
    pub fn materialize(&self, corpus: &Corpus) -> Result<Vec<ClientDataset>> {
        let index: HashMap<&str, usize> = corpus
            .utterances
            .iter()
            .enumerate()
            .map(|(i, u)| (u.id.as_str(), i))
            .collect();
        let pick = |ids: &[String]| -> Result<Vec<_>> {
            ids.iter()
                .map(|id| {
                    index
                        .get(id.as_str())
                        .map(|&i| corpus.utterances[i].clone())
                        .ok_or_else(|| Error::Data(format!("plan references unknown utterance {id}")))
                })
                .collect()
        };
        self.clients
            .iter()
            .map(|c| Ok(ClientDataset::new(c.client_id, pick(&c.train)?, pick(&c.test)?)))
            .collect()
    }
}

/// Speakers in a seeded random order.
fn shuffled_speakers<'a>(corpus: &'a Corpus, seed: u64, tag: &str) -> Vec<(&'a str, usize)> {
    let mut speakers: Vec<(&str, usize)> = corpus
        .by_speaker()
        .into_iter()
        .map(|(s, idx)| (s, idx.len()))
        .collect();
    speakers.shuffle(&mut seeding::rng(seed, tag, &[]));
    speakers
}

/// Moves whole speakers, largest first, into a warm-up corpus until it holds at
/// least `target_fraction` of all samples, always leaving one speaker for the
/// federated pool. Ties in speaker size are broken by a seeded shuffle.
pub fn split_warmup(corpus: &Corpus, target_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(target_fraction > 0.0 && target_fraction < 1.0) {
        return Err(Error::Config(format!(
            "warm-up fraction {target_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut speakers = shuffled_speakers(corpus, seed, "warmup");
    if speakers.len() < 2 {
        return Err(Error::Config("warm-up split needs at least two speakers".into()));
    }
    speakers.sort_by(|a, b| b.1.cmp(&a.1));
    let target = target_fraction * corpus.len() as f64;
    let mut warm = HashSet::new();
    let mut count = 0;
    for &(spk, n) in &speakers[..speakers.len() - 1] {
        if count as f64 >= target {
            break;
        }
        warm.insert(spk);
        count += n;
    }
    let rest: HashSet<&str> = speakers
        .iter()
        .map(|&(s, _)| s)
        .filter(|s| !warm.contains(s))
        .collect();
    Ok((corpus.select_speakers(&warm), corpus.select_speakers(&rest)))
}

/// Balanced silos: speakers in seeded order, largest first, each assigned to
/// the silo with the fewest samples so far (lowest index on ties).
pub fn make_cross_silo(corpus: &Corpus, silos: usize, seed: u64) -> Result<PartitionPlan> {
    let mut speakers = shuffled_speakers(corpus, seed, "cross-silo");
    if silos == 0 || silos > speakers.len() {
        return Err(Error::Config(format!(
            "cannot build {silos} silos from {} speakers",
            speakers.len()
        )));
    }
    speakers.sort_by(|a, b| b.1.cmp(&a.1));
    let mut groups: Vec<Vec<&str>> = vec![Vec::new(); silos];
    let mut sizes = vec![0usize; silos];
    for (spk, n) in speakers {
        let target = (0..silos).min_by_key(|&i| (sizes[i], i)).expect("silos > 0");
        groups[target].push(spk);
        sizes[target] += n;
    }
    Ok(PartitionPlan::from_groups(Scheme::CrossSilo, corpus, groups))
}

/// One client per speaker, in speaker-id order.
pub fn make_per_speaker(corpus: &Corpus) -> PartitionPlan {
    let groups = corpus.by_speaker().into_keys().map(|s| vec![s]).collect();
    PartitionPlan::from_groups(Scheme::PerSpeaker, corpus, groups)
}

/// Two speakers per client after a seeded shuffle; an odd speaker out gets a
/// client of its own.
pub fn make_speaker_pairs(corpus: &Corpus, seed: u64) -> Result<PartitionPlan> {
    let speakers = shuffled_speakers(corpus, seed, "speaker-pairs");
    if speakers.len() < 2 {
        return Err(Error::Config("speaker pairing needs at least two speakers".into()));
    }
    let groups = speakers
        .chunks(2)
        .map(|pair| pair.iter().map(|&(s, _)| s).collect())
        .collect();
    Ok(PartitionPlan::from_groups(Scheme::SpeakerPairs, corpus, groups))
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Local test size for a client of `n` samples, or `None` when the client is
/// too small (`n <= 2 * min_samples`) and keeps everything for training.
pub fn local_test_size(n: usize, fraction: f64, min_samples: usize) -> Option<usize> {
    if n <= 2 * min_samples {
        None
    } else {
        Some(round_half_up(fraction * n as f64).max(min_samples))
    }
}

/// Splits each client's utterances into train and local test parts.
pub fn make_local_holdout(
    plan: &PartitionPlan,
    fraction: f64,
    min_samples: usize,
    seed: u64,
) -> Result<PartitionPlan> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("holdout fraction {fraction} must lie in (0, 1)")));
    }
    if min_samples == 0 {
        return Err(Error::Config("holdout minimum must be at least 1".into()));
    }
    let clients = plan
        .clients
        .iter()
        .map(|c| {
            let mut all: Vec<String> = c.train.iter().chain(&c.test).cloned().collect();
            all.sort();
            match local_test_size(all.len(), fraction, min_samples) {
                None => ClientAssignment {
                    train: all,
                    test: Vec::new(),
                    no_local_test: true,
                    ..c.clone()
                },
                Some(k) => {
                    all.shuffle(&mut seeding::rng(seed, "holdout", &[c.client_id as u64]));
                    let train = all.split_off(k);
                    ClientAssignment {
                        train,
                        test: all,
                        no_local_test: false,
                        ..c.clone()
                    }
                }
            }
        })
        .collect();
    Ok(PartitionPlan {
        scheme: plan.scheme,
        clients,
        holdout_fraction: Some(fraction),
        holdout_min: Some(min_samples),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Utterance;
    use crate::model::{FeatureSequence, FrameAlignment, Transcript};

    fn corpus_with_counts(counts: &[usize]) -> Corpus {
        let mut utterances = Vec::new();
        for (s, &n) in counts.iter().enumerate() {
            for u in 0..n {
                utterances.push(Utterance {
                    id: format!("s{s:03}_u{u:03}"),
                    speaker: format!("s{s:03}"),
                    features: FeatureSequence::from_flat(vec![0.0; 3], 1).unwrap(),
                    transcript: Transcript::new(vec![1]).unwrap(),
                    alignment: FrameAlignment::new(vec![0, 1, 0]),
                });
            }
        }
        Corpus::new(2, 1, utterances).unwrap()
    }

    fn speakers_of(c: &Corpus) -> HashSet<String> {
        c.utterances.iter().map(|u| u.speaker.clone()).collect()
    }

    #[test]
    fn warmup_takes_the_big_speaker() {
        let corpus = corpus_with_counts(&[10, 90]);
        let (warm, fed) = split_warmup(&corpus, 0.5, 0).unwrap();
        assert_eq!(warm.len(), 90);
        assert_eq!(fed.len(), 10);
    }

    #[test]
    fn warmup_equal_counts_takes_half_rounded_up() {
        for s in 2..9 {
            let corpus = corpus_with_counts(&vec![10; s]);
            let (warm, _) = split_warmup(&corpus, 0.5, 3).unwrap();
            assert_eq!(speakers_of(&warm).len(), s.div_ceil(2));
        }
    }

    #[test]
    fn warmup_leaves_one_speaker() {
        let corpus = corpus_with_counts(&[5, 6, 7]);
        let (warm, fed) = split_warmup(&corpus, 0.999, 1).unwrap();
        assert_eq!(speakers_of(&warm).len(), 2);
        assert_eq!(speakers_of(&fed).len(), 1);
        assert!(split_warmup(&corpus_with_counts(&[9]), 0.5, 0).is_err());
        assert!(split_warmup(&corpus, 1.0, 0).is_err());
    }

    #[test]
    fn warmup_sets_partition_speakers() {
        let corpus = corpus_with_counts(&[3, 8, 1, 4, 4, 12, 2]);
        let (warm, fed) = split_warmup(&corpus, 0.4, 9).unwrap();
        let (w, f) = (speakers_of(&warm), speakers_of(&fed));
        assert!(w.is_disjoint(&f));
        assert_eq!(w.union(&f).count(), 7);
    }

    #[test]
    fn cross_silo_balances_equal_speakers() {
        let corpus = corpus_with_counts(&[10; 20]);
        let plan = make_cross_silo(&corpus, 10, 4).unwrap();
        plan.validate(&corpus).unwrap();
        for c in &plan.clients {
            assert_eq!(c.speakers.len(), 2);
            assert_eq!(c.sample_count(), 20);
        }
        let one_each = make_cross_silo(&corpus_with_counts(&[3; 10]), 10, 0).unwrap();
        assert!(one_each.clients.iter().all(|c| c.speakers.len() == 1));
        assert_eq!(plan, make_cross_silo(&corpus, 10, 4).unwrap());
        assert!(matches!(make_cross_silo(&corpus, 21, 0), Err(Error::Config(_))));
    }

    #[test]
    fn cross_silo_within_ten_percent() {
        let corpus = corpus_with_counts(&[7; 137]);
        let plan = make_cross_silo(&corpus, 10, 2).unwrap();
        let mean = corpus.len() as f64 / 10.0;
        for c in &plan.clients {
            assert!((c.sample_count() as f64 - mean).abs() <= 0.1 * mean);
        }
    }

    #[test]
    fn per_speaker_is_a_bijection() {
        let corpus = corpus_with_counts(&[4, 1, 6]);
        let plan = make_per_speaker(&corpus);
        plan.validate(&corpus).unwrap();
        let mut counts: Vec<usize> = plan.clients.iter().map(|c| c.sample_count()).collect();
        counts.sort();
        assert_eq!(counts, vec![1, 4, 6]);
    }

    #[test]
    fn pairs_and_singleton() {
        let six = corpus_with_counts(&[1, 2, 3, 4, 5, 6]);
        let plan = make_speaker_pairs(&six, 0).unwrap();
        assert_eq!(plan.clients.len(), 3);
        for c in &plan.clients {
            assert_eq!(c.speakers.len(), 2);
            let expect: usize = c.speakers.iter().map(|s| s[1..].parse::<usize>().unwrap() + 1).sum();
            assert_eq!(c.sample_count(), expect);
        }
        let seven = corpus_with_counts(&[2; 7]);
        let plan = make_speaker_pairs(&seven, 0).unwrap();
        assert_eq!(plan.clients.len(), 4);
        assert_eq!(plan.clients.iter().filter(|c| c.speakers.len() == 1).count(), 1);
        plan.validate(&seven).unwrap();
    }

    #[test]
    fn holdout_sizes() {
        assert_eq!(local_test_size(25, 0.1, 2), Some(3));
        assert_eq!(local_test_size(5, 0.1, 2), Some(2));
        assert_eq!(local_test_size(3, 0.1, 2), None);
        assert_eq!(local_test_size(4, 0.1, 2), None);
        assert_eq!(local_test_size(100, 0.1, 2), Some(10));
    }

    #[test]
    fn holdout_splits_clients() {
        let corpus = corpus_with_counts(&[25, 5, 3]);
        let plan = make_local_holdout(&make_per_speaker(&corpus), 0.1, 2, 7).unwrap();
        plan.validate(&corpus).unwrap();
        let sizes: Vec<(usize, usize, bool)> = plan
            .clients
            .iter()
            .map(|c| (c.train.len(), c.test.len(), c.no_local_test))
            .collect();
        assert_eq!(sizes, vec![(22, 3, false), (3, 2, false), (3, 0, true)]);
        let datasets = plan.materialize(&corpus).unwrap();
        assert_eq!(datasets[0].train.len(), 22);
        assert_eq!(datasets[2].test.len(), 0);
    }

    proptest::proptest! {
        #[test]
        fn every_scheme_partitions_by_speaker(
            counts in proptest::collection::vec(1usize..12, 2..30),
            silos in 1usize..5,
            seed in 0u64..1000,
        ) {
            let corpus = corpus_with_counts(&counts);
            let plans = [
                make_cross_silo(&corpus, silos.min(counts.len()), seed).unwrap(),
                make_per_speaker(&corpus),
                make_speaker_pairs(&corpus, seed).unwrap(),
            ];
            for plan in plans {
                plan.validate(&corpus).unwrap();
                let held = make_local_holdout(&plan, 0.1, 2, seed).unwrap();
                held.validate(&corpus).unwrap();
            }
        }
    }

    #[test]
    fn plan_json_round_trip() {
        let corpus = corpus_with_counts(&[4, 6]);
        let plan = make_local_holdout(&make_speaker_pairs(&corpus, 1).unwrap(), 0.1, 1, 0).unwrap();
        let text = serde_json::to_string(&plan).unwrap();
        assert_eq!(serde_json::from_str::<PartitionPlan>(&text).unwrap(), plan);
    }
}
