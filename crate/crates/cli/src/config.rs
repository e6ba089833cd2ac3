//! JSON configuration documents, one per subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use fedsim::federation::Strategy;
use fedsim::heterogeneity::ProfileConfig;
use fedsim::model::LossConfig;
use fedsim::partition::Scheme;
use fedsim::synthcorpus::{AudioSpec, CorpusSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::config_error;

/// Reads and parses a config file. Parse errors name the offending field.
pub fn load<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn one_or_many<'de, D, T>(d: D) -> Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GenerateConfig {
    Features(CorpusSpec),
    Audio(AudioSpec),
}

impl GenerateConfig {
    pub fn set_seed(&mut self, seed: u64) {
        match self {
            GenerateConfig::Features(s) => s.seed = seed,
            GenerateConfig::Audio(s) => s.seed = seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldoutConfig {
    pub fraction: f64,
    pub min: usize,
}

impl Default for HoldoutConfig {
    fn default() -> Self {
        Self { fraction: 0.1, min: 2 }
    }
}

fn default_silos() -> usize {
    10
}

fn default_server_holdout() -> usize {
    32
}

fn default_server_lr() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSettings {
    pub scheme: Scheme,
    /// Used by `cross_silo` only.
    #[serde(default = "default_silos")]
    pub silos: usize,
    #[serde(default)]
    pub local_holdout: HoldoutConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub corpus: PathBuf,
    pub partition: PartitionSettings,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Zeros,
    Random { std: f64 },
    File(PathBuf),
    /// Centralised training on the warm-up data.
    Warmup,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::Zeros
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    Path(PathBuf),
    Generate(CorpusSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ValidationSource {
    /// Sets aside this many federated speakers.
    Speakers(usize),
    Path(PathBuf),
    Generate(CorpusSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum WarmupSource {
    /// Moves the largest speakers, up to this share of samples, out of the corpus.
    Split(f64),
    Path(PathBuf),
    Generate(CorpusSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmupPlan {
    pub source: WarmupSource,
    pub local: LossConfig,
    /// Warm-up utterances kept out of training; they score the warm-up model
    /// and serve as the server's held-out batch.
    #[serde(default = "default_server_holdout")]
    pub holdout_utterances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSettings {
    pub rounds: usize,
    #[serde(deserialize_with = "one_or_many")]
    pub clients_per_round: Vec<usize>,
    #[serde(alias = "strategy", deserialize_with = "one_or_many")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_server_lr")]
    pub server_lr: f64,
    pub local: LossConfig,
    #[serde(default)]
    pub server_finetune: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    pub validation: ValidationSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<WarmupPlan>,
    #[serde(default)]
    pub init: InitSpec,
    pub partition: PartitionSettings,
    pub federation: FederationSettings,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmupConfig {
    pub corpus: PathBuf,
    pub fraction: f64,
    pub local: LossConfig,
    #[serde(default = "default_server_holdout")]
    pub holdout_utterances: usize,
    #[serde(default)]
    pub init: InitSpec,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub corpus_a: PathBuf,
    pub corpus_b: PathBuf,
    #[serde(default)]
    pub profile: ProfileConfig,
    /// JSONL vectors whose purity is reported next to the profile purity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings_a: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings_b: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_field_is_named() {
        let err = serde_json::from_str::<PartitionConfig>(r#"{"corpus": "c", "partition": {"silos": 3}, "seed": 1}"#).unwrap_err();
        assert!(err.to_string().contains("scheme"), "{err}");
    }

    #[test]
    fn single_values_widen_to_lists() {
        let f: FederationSettings = serde_json::from_str(
            r#"{"rounds": 2, "clients_per_round": 5, "strategy": "wer",
                "local": {"learning_rate_local": 0.1, "local_epochs": 1, "batch_size": 4}}"#,
        )
        .unwrap();
        assert_eq!(f.clients_per_round, vec![5]);
        assert_eq!(f.strategies, vec![Strategy::WerSoftmax]);
        assert_eq!(f.server_lr, 1.0);
    }

    #[test]
    fn init_forms() {
        let parse = |s: &str| serde_json::from_str::<InitSpec>(s).unwrap();
        assert_eq!(parse(r#""zeros""#), InitSpec::Zeros);
        assert_eq!(parse(r#"{"random": {"std": 0.1}}"#), InitSpec::Random { std: 0.1 });
        assert_eq!(parse(r#"{"file": "w.f32"}"#), InitSpec::File("w.f32".into()));
    }
}
