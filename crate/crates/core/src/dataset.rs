//! Utterances, corpora and per-client datasets.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureSequence, FrameAlignment, Transcript};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub speaker: String,
    pub features: FeatureSequence,
    pub transcript: Transcript,
    pub alignment: FrameAlignment,
}

/// A speaker-labelled collection of utterances sharing one vocabulary and
/// feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn new(vocab_size: usize, feature_dim: usize, utterances: Vec<Utterance>) -> Result<Self> {
        let corpus = Self {
            vocab_size,
            feature_dim,
            utterances,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    /// Checks id uniqueness, feature dimension, label ranges and that each
    /// alignment collapses to its transcript.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for u in &self.utterances {
            if !seen.insert(u.id.as_str()) {
                return Err(Error::Data(format!("duplicate utterance id {}", u.id)));
            }
            if u.features.dim() != self.feature_dim {
                return Err(Error::Data(format!(
                    "utterance {}: feature dim {} != corpus dim {}",
                    u.id,
                    u.features.dim(),
                    self.feature_dim
                )));
            }
            if u.alignment.len() != u.features.len() {
                return Err(Error::Data(format!(
                    "utterance {}: alignment length {} != frame count {}",
                    u.id,
                    u.alignment.len(),
                    u.features.len()
                )));
            }
            if u.transcript.is_empty() {
                return Err(Error::Data(format!("utterance {}: empty transcript", u.id)));
            }
            if let Some(&bad) = u
                .alignment
                .labels()
                .iter()
                .chain(u.transcript.tokens())
                .find(|&&t| t >= self.vocab_size)
            {
                return Err(Error::Data(format!(
                    "utterance {}: token {bad} outside vocabulary of {}",
                    u.id, self.vocab_size
                )));
            }
            if u.alignment.collapse() != u.transcript {
                return Err(Error::Data(format!(
                    "utterance {}: alignment does not collapse to transcript",
                    u.id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Utterance indices grouped by speaker, speakers in lexicographic order.
    pub fn by_speaker(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, u) in self.utterances.iter().enumerate() {
            map.entry(u.speaker.as_str()).or_default().push(i);
        }
        map
    }

    pub fn speaker_count(&self) -> usize {
        self.by_speaker().len()
    }

    /// Sub-corpus containing the given speakers, in original utterance order.
    pub fn select_speakers(&self, speakers: &HashSet<&str>) -> Corpus {
        Corpus {
            vocab_size: self.vocab_size,
            feature_dim: self.feature_dim,
            utterances: self
                .utterances
                .iter()
                .filter(|u| speakers.contains(u.speaker.as_str()))
                .cloned()
                .collect(),
        }
    }
}

/// One client's utterances split into local train and local test parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

impl ClientDataset {
    pub fn new(client_id: usize, train: Vec<Utterance>, test: Vec<Utterance>) -> Self {
        Self {
            client_id,
            train,
            test,
        }
    }

    /// Number of training samples, `n_k` in the FedAvg weighting.
    pub fn sample_count(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty() && self.test.is_empty()
    }
}
