//! Frame-synchronous reference acoustic model.
//!
//! A linear softmax classifier over per-frame features, trained with the joint
//! objective `mu * CE + (1 - mu) * CTC`. The CE term uses frame alignments
//! supplied with the data; the CTC term marginalises over all alignments.
//! Token id 0 is the CTC blank; corpus tokens start at 1.

mod ctc;
mod linear;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ctc::{ctc_loss, min_frames_for, LOG_ZERO};
pub use linear::{
    ce_loss, forward, greedy_decode, joint_loss, joint_loss_gradient, local_train, sgd_step,
    transcribe,
};
pub use trainer::{LinearCtcTrainer, Trainer};

pub const BLANK: usize = 0;

/// `T x D` matrix of frame features, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    dim: usize,
    data: Vec<f64>,
}

impl FeatureSequence {
    pub fn from_flat(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(Error::Data(format!(
                "feature buffer of {} values is not a non-empty multiple of dim {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature value".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn from_frames(frames: &[Vec<f64>]) -> Result<Self> {
        let dim = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != dim) {
            return Err(Error::Data("ragged feature frames".into()));
        }
        Self::from_flat(frames.concat(), dim)
    }

    /// Number of frames, `T_x`.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }
}

/// Token ids of a label sequence. Never contains the blank.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript(Vec<usize>);

impl Transcript {
    pub fn new(tokens: Vec<usize>) -> Result<Self> {
        if tokens.contains(&BLANK) {
            return Err(Error::Data("transcript contains the blank token".into()));
        }
        Ok(Self(tokens))
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One label per frame; collapsing repeats and dropping blanks yields the transcript.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrameAlignment(Vec<usize>);

impl FrameAlignment {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// CTC collapse: merge consecutive repeats, then remove blanks.
    pub fn collapse(&self) -> Transcript {
        collapse_path(&self.0)
    }
}

pub(crate) fn collapse_path(path: &[usize]) -> Transcript {
    let mut out = Vec::new();
    let mut prev = None;
    for &label in path {
        if Some(label) != prev && label != BLANK {
            out.push(label);
        }
        prev = Some(label);
    }
    Transcript(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    /// Output classes including the blank.
    pub vocab: usize,
    pub dim: usize,
}

impl ModelShape {
    pub fn param_count(&self) -> usize {
        self.vocab * self.dim + self.vocab
    }
}

/// Flat model weights: the `V x D` matrix row-major, then `V` biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    shape: ModelShape,
    values: Vec<f64>,
}

impl ParameterVector {
    pub fn zeros(shape: ModelShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.param_count()],
        }
    }

    pub fn from_values(shape: ModelShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.param_count() {
            return Err(Error::DimensionMismatch {
                expected: shape.param_count(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(Self { shape, values })
    }

    /// Gaussian initialisation with the given standard deviation.
    pub fn random(shape: ModelShape, std: f64, seed: u64) -> Self {
        use rand_distr::{Distribution, Normal};
        let mut rng = crate::seeding::rng(seed, "init", &[]);
        let normal = Normal::new(0.0, std.max(0.0)).expect("std is non-negative");
        let values = (0..shape.param_count())
            .map(|_| normal.sample(&mut rng))
            .collect();
        Self { shape, values }
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn weight_row(&self, class: usize) -> &[f64] {
        let d = self.shape.dim;
        &self.values[class * d..(class + 1) * d]
    }

    pub fn bias(&self, class: usize) -> f64 {
        self.values[self.shape.vocab * self.shape.dim + class]
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Per-frame token probabilities, `T x V`, rows summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePosteriors {
    vocab: usize,
    probs: Vec<f64>,
}

impl FramePosteriors {
    /// Wraps a row-major probability matrix after checking each row is a distribution.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let vocab = rows.first().map_or(0, Vec::len);
        if vocab == 0 || rows.iter().any(|r| r.len() != vocab) {
            return Err(Error::Data("posteriors must be a non-empty rectangular matrix".into()));
        }
        for row in rows {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Data("posterior row is not a probability vector".into()));
            }
        }
        Ok(Self {
            vocab,
            probs: rows.concat(),
        })
    }

    pub(crate) fn from_flat_unchecked(vocab: usize, probs: Vec<f64>) -> Self {
        Self { vocab, probs }
    }

    pub fn frames(&self) -> usize {
        self.probs.len() / self.vocab
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.probs[t * self.vocab..(t + 1) * self.vocab]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks_exact(self.vocab)
    }
}

/// Joint-loss and local optimiser settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the CE term; `1 - mu` weights CTC.
    #[serde(default = "LossConfig::default_mu")]
    pub mu: f64,
    pub learning_rate_local: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Rescales each batch gradient to at most this L2 norm.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

impl LossConfig {
    fn default_mu() -> f64 {
        0.3
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::Config(format!("mu = {} outside [0, 1]", self.mu)));
        }
        // A zero rate is accepted as a degenerate no-op configuration.
        if !(self.learning_rate_local >= 0.0 && self.learning_rate_local.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate_local = {} must be finite and non-negative",
                self.learning_rate_local
            )));
        }
        if self.local_epochs == 0 {
            return Err(Error::Config("local_epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("max_grad_norm = {c} must be positive")));
            }
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mu: Self::default_mu(),
            learning_rate_local: 0.05,
            local_epochs: 5,
            batch_size: 8,
            max_grad_norm: None,
        }
    }
}
