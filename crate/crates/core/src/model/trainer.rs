use super::{linear, FeatureSequence, LossConfig, ParameterVector, Transcript};
use crate::dataset::Utterance;
use crate::error::Result;

/// What the federation engine needs from a model: local training, a single
/// server-side step, and decoding for WER.
pub trait Trainer: Sync {
    /// Trains from `init` on `data`; returns new weights and the mean training
    /// loss of the final local epoch.
    fn local_train(
        &self,
        init: &ParameterVector,
        data: &[Utterance],
        seed: u64,
    ) -> Result<(ParameterVector, f64)>;

    /// Exactly one optimisation step on `batch`.
    fn server_step(&self, weights: &ParameterVector, batch: &[Utterance]) -> Result<ParameterVector>;

    fn transcribe(&self, weights: &ParameterVector, x: &FeatureSequence) -> Result<Transcript>;
}

/// The linear softmax frame classifier trained on the joint CTC + CE objective.
#[derive(Clone, Copy, Debug)]
pub struct LinearCtcTrainer {
    pub loss: LossConfig,
}

impl LinearCtcTrainer {
    pub fn new(loss: LossConfig) -> Self {
        Self { loss }
    }
}

impl Trainer for LinearCtcTrainer {
    fn local_train(
        &self,
        init: &ParameterVector,
        data: &[Utterance],
        seed: u64,
    ) -> Result<(ParameterVector, f64)> {
        linear::local_train(init, data, &self.loss, seed)
    }

    fn server_step(&self, weights: &ParameterVector, batch: &[Utterance]) -> Result<ParameterVector> {
        linear::sgd_step(weights, batch, &self.loss).map(|(w, _)| w)
    }

    fn transcribe(&self, weights: &ParameterVector, x: &FeatureSequence) -> Result<Transcript> {
        linear::transcribe(weights, x)
    }
}
