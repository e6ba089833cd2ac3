//! Builds the federated experiment described by an [`ExperimentConfig`],
//! runs it and records the outcome as a replayable manifest.

use std::collections::HashSet;
use std::path::Path;

use anyhow::Context;
use fedsim::corpus_io;
use fedsim::dataset::{ClientDataset, Corpus, Utterance};
use fedsim::federation::{self, evaluate_wer, ExperimentRun, FederationConfig, Strategy};
use fedsim::model::{local_train, LinearCtcTrainer, LossConfig, ModelShape, ParameterVector};
use fedsim::partition::{self, PartitionPlan, Scheme};
use fedsim::seeding;
use fedsim::synthcorpus::generate;
use log::info;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{
    CorpusSource, ExperimentConfig, InitSpec, PartitionSettings, ValidationSource, WarmupPlan, WarmupSource,
};
use crate::error::config_error;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupSummary {
    pub speakers: usize,
    pub train_utterances: usize,
    pub holdout_utterances: usize,
    /// WER of the initial weights on the held-out slice.
    pub untrained_wer: Option<f64>,
    pub warmup_wer: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub clients: usize,
    pub federated_utterances: usize,
    pub validation_utterances: usize,
    pub server_holdout_utterances: usize,
    pub warmup: Option<WarmupSummary>,
}

pub struct ExperimentData {
    pub shape: ModelShape,
    pub clients: Vec<ClientDataset>,
    pub validation: Vec<Utterance>,
    pub server_holdout: Vec<Utterance>,
    pub init: ParameterVector,
    pub summary: DataSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub centralized_wer: f64,
    pub mean_client_loss: Option<f64>,
    pub mean_client_wer: Option<f64>,
    pub delta_norm: f64,
    pub used_clients: Vec<usize>,
    pub alphas: Vec<f64>,
    pub empty_round: bool,
}

/// Final global model scored on one client's data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientRow {
    pub client_id: usize,
    pub samples: usize,
    /// `test`, or `train` for clients without a local test split.
    pub eval_split: String,
    pub wer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub strategy: Strategy,
    pub clients_per_round: usize,
    pub initial_wer: f64,
    pub final_wer: f64,
    pub rounds: Vec<RoundRow>,
    /// Sorted by WER, then client id.
    pub clients: Vec<ClientRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub tool_version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub data: DataSummary,
    pub runs: Vec<RunRecord>,
}

pub struct RunOutput {
    pub record: RunRecord,
    pub final_weights: ParameterVector,
}

pub fn load_source(src: &CorpusSource) -> anyhow::Result<Corpus> {
    match src {
        CorpusSource::Path(p) => corpus_io::read_corpus(p).with_context(|| format!("reading corpus {}", p.display())),
        CorpusSource::Generate(spec) => Ok(generate(spec)?.corpus),
    }
}

fn check_compatible(base: &Corpus, other: &Corpus, role: &str) -> anyhow::Result<()> {
    if (base.vocab_size, base.feature_dim) != (other.vocab_size, other.feature_dim) {
        return Err(config_error(format!(
            "{role} corpus has vocab {} dim {}, federated corpus has vocab {} dim {}",
            other.vocab_size, other.feature_dim, base.vocab_size, base.feature_dim
        )));
    }
    Ok(())
}

fn shape_of(corpus: &Corpus) -> ModelShape {
    ModelShape {
        vocab: corpus.vocab_size,
        dim: corpus.feature_dim,
    }
}

/// Splits off `n` utterances, chosen by seeded shuffle, always leaving one
/// for training. Both parts keep corpus order.
pub fn split_holdout(utterances: &[Utterance], n: usize, seed: u64) -> (Vec<Utterance>, Vec<Utterance>) {
    let take = n.min(utterances.len().saturating_sub(1));
    let mut idx: Vec<usize> = (0..utterances.len()).collect();
    idx.shuffle(&mut seeding::rng(seed, "server-holdout", &[]));
    let held: HashSet<usize> = idx[..take].iter().copied().collect();
    let (mut train, mut holdout) = (Vec::new(), Vec::new());
    for (i, u) in utterances.iter().enumerate() {
        if held.contains(&i) {
            holdout.push(u.clone());
        } else {
            train.push(u.clone());
        }
    }
    (train, holdout)
}

pub fn initial_weights(init: &InitSpec, shape: ModelShape, seed: u64) -> anyhow::Result<ParameterVector> {
    match init {
        InitSpec::Zeros => Ok(ParameterVector::zeros(shape)),
        InitSpec::Random { std } => {
            if !(*std >= 0.0 && std.is_finite()) {
                return Err(config_error(format!("random init std {std} must be finite and non-negative")));
            }
            Ok(ParameterVector::random(shape, *std, seed))
        }
        InitSpec::File(path) => {
            let w = corpus_io::read_weights(path).with_context(|| format!("reading weights {}", path.display()))?;
            if w.shape() != shape {
                return Err(fedsim::Error::Protocol(format!(
                    "weights in {} are {}x{}, the corpus needs {}x{}",
                    path.display(),
                    w.shape().vocab,
                    w.shape().dim,
                    shape.vocab,
                    shape.dim
                ))
                .into());
            }
            Ok(w)
        }
        InitSpec::Warmup => Err(config_error("warm-up initialisation needs a `warmup` section")),
    }
}

/// Centralised training on `train` from `init`. Zero epochs return `init`.
pub fn warmup_train(
    init: &ParameterVector,
    train: &[Utterance],
    holdout: &[Utterance],
    local: &LossConfig,
    seed: u64,
) -> anyhow::Result<(ParameterVector, Option<f64>, Option<f64>)> {
    let weights = if local.local_epochs == 0 || train.is_empty() {
        init.clone()
    } else {
        local_train(init, train, local, seed)?.0
    };
    let trainer = LinearCtcTrainer::new(*local);
    let score = |w: &ParameterVector| -> anyhow::Result<Option<f64>> {
        if holdout.is_empty() {
            Ok(None)
        } else {
            Ok(Some(evaluate_wer(&trainer, w, holdout)?.wer))
        }
    };
    let untrained = score(init)?;
    let trained = score(&weights)?;
    Ok((weights, untrained, trained))
}

pub fn make_plan(corpus: &Corpus, settings: &PartitionSettings, seed: u64) -> anyhow::Result<PartitionPlan> {
    let plan = match settings.scheme {
        Scheme::CrossSilo => partition::make_cross_silo(corpus, settings.silos, seed)?,
        Scheme::PerSpeaker => partition::make_per_speaker(corpus),
        Scheme::SpeakerPairs => partition::make_speaker_pairs(corpus, seed)?,
    };
    let h = settings.local_holdout;
    Ok(partition::make_local_holdout(&plan, h.fraction, h.min, seed)?)
}

fn take_validation_speakers(corpus: &Corpus, n: usize, seed: u64) -> anyhow::Result<(Corpus, Corpus)> {
    let mut speakers: Vec<&str> = corpus.by_speaker().into_keys().collect();
    if n == 0 || n >= speakers.len() {
        return Err(config_error(format!(
            "cannot set aside {n} validation speakers from {} federated speakers",
            speakers.len()
        )));
    }
    speakers.shuffle(&mut seeding::rng(seed, "validation-speakers", &[]));
    let val: HashSet<&str> = speakers[..n].iter().copied().collect();
    let rest: HashSet<&str> = speakers[n..].iter().copied().collect();
    Ok((corpus.select_speakers(&val), corpus.select_speakers(&rest)))
}

fn check_config(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let f = &cfg.federation;
    if f.strategies.is_empty() {
        return Err(config_error("federation.strategies is empty"));
    }
    if f.clients_per_round.is_empty() {
        return Err(config_error("federation.clients_per_round is empty"));
    }
    if cfg.init == InitSpec::Warmup && cfg.warmup.is_none() {
        return Err(config_error("init `warmup` needs a `warmup` section"));
    }
    if f.server_finetune && cfg.warmup.as_ref().is_none_or(|w| w.holdout_utterances == 0) {
        return Err(config_error("server_finetune needs warm-up held-out utterances"));
    }
    f.local.validate()?;
    Ok(())
}

/// Loads or generates every corpus, splits off warm-up and validation data,
/// partitions the rest into clients and resolves the initial weights.
pub fn prepare(cfg: &ExperimentConfig) -> anyhow::Result<ExperimentData> {
    check_config(cfg)?;
    let seed = cfg.seed;
    let corpus = load_source(&cfg.corpus)?;
    let shape = shape_of(&corpus);

    let (warm, pool) = match cfg.warmup.as_ref().map(|w| &w.source) {
        None => (None, corpus),
        Some(WarmupSource::Split(fraction)) => {
            let (warm, rest) = partition::split_warmup(&corpus, *fraction, seed)?;
            (Some(warm), rest)
        }
        Some(WarmupSource::Path(p)) => (Some(load_source(&CorpusSource::Path(p.clone()))?), corpus),
        Some(WarmupSource::Generate(spec)) => (Some(generate(spec)?.corpus), corpus),
    };
    if let Some(w) = &warm {
        check_compatible(&pool, w, "warm-up")?;
    }

    let (validation, pool) = match &cfg.validation {
        ValidationSource::Speakers(n) => take_validation_speakers(&pool, *n, seed)?,
        ValidationSource::Path(p) => (load_source(&CorpusSource::Path(p.clone()))?, pool),
        ValidationSource::Generate(spec) => (generate(spec)?.corpus, pool),
    };
    check_compatible(&pool, &validation, "validation")?;
    if validation.is_empty() {
        return Err(config_error("validation corpus is empty"));
    }

    let mut init = match &cfg.init {
        InitSpec::Warmup => ParameterVector::zeros(shape),
        other => initial_weights(other, shape, seed)?,
    };
    let mut server_holdout = Vec::new();
    let mut warm_summary = None;
    if let (Some(warm), Some(plan)) = (&warm, &cfg.warmup) {
        let (train, holdout) = split_holdout(&warm.utterances, plan.holdout_utterances, seed);
        let mut summary = WarmupSummary {
            speakers: warm.speaker_count(),
            train_utterances: train.len(),
            holdout_utterances: holdout.len(),
            untrained_wer: None,
            warmup_wer: None,
        };
        if cfg.init == InitSpec::Warmup {
            let WarmupPlan { local, .. } = plan;
            let (w, untrained, trained) = warmup_train(&init, &train, &holdout, local, seed)?;
            info!("warm-up: held-out WER {untrained:?} -> {trained:?}");
            (summary.untrained_wer, summary.warmup_wer) = (untrained, trained);
            init = w;
        }
        server_holdout = holdout;
        warm_summary = Some(summary);
    }

    let plan = make_plan(&pool, &cfg.partition, seed)?;
    let clients = plan.materialize(&pool)?;
    let summary = DataSummary {
        clients: clients.len(),
        federated_utterances: pool.len(),
        validation_utterances: validation.len(),
        server_holdout_utterances: server_holdout.len(),
        warmup: warm_summary,
    };
    Ok(ExperimentData {
        shape,
        clients,
        validation: validation.utterances,
        server_holdout,
        init,
        summary,
    })
}

/// Scores `weights` on every client, falling back to training data for
/// clients without a local test split.
pub fn client_table(weights: &ParameterVector, clients: &[ClientDataset], local: &LossConfig) -> anyhow::Result<Vec<ClientRow>> {
    let trainer = LinearCtcTrainer::new(*local);
    let mut rows = clients
        .par_iter()
        .map(|c| {
            let (split, data) = if c.test.is_empty() { ("train", &c.train) } else { ("test", &c.test) };
            Ok(ClientRow {
                client_id: c.client_id,
                samples: c.sample_count(),
                eval_split: split.to_string(),
                wer: evaluate_wer(&trainer, weights, data)?.wer,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.wer.total_cmp(&b.wer).then(a.client_id.cmp(&b.client_id)));
    Ok(rows)
}

fn round_rows(run: &ExperimentRun) -> Vec<RoundRow> {
    run.rounds
        .iter()
        .map(|r| RoundRow {
            round: r.round,
            centralized_wer: r.centralized_val_wer,
            mean_client_loss: r.mean_client_loss,
            mean_client_wer: r.mean_client_wer,
            delta_norm: r.delta_norm,
            used_clients: r.used_ids.clone(),
            alphas: r.alphas.clone(),
            empty_round: r.empty_round,
        })
        .collect()
}

pub fn run_one(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    strategy: Strategy,
    clients_per_round: usize,
) -> anyhow::Result<RunOutput> {
    let f = &cfg.federation;
    let fed = FederationConfig {
        rounds: f.rounds,
        clients_per_round,
        total_clients: data.clients.len(),
        server_lr: f.server_lr,
        local: f.local,
        strategy,
        server_finetune: f.server_finetune,
        seed: cfg.seed,
    };
    info!("running {strategy} with K={clients_per_round} over {} clients", data.clients.len());
    let run = federation::run_experiment(&fed, &data.clients, &data.server_holdout, &data.validation, &data.init)?;
    let final_wer = run.rounds.last().map_or(run.initial_val_wer, |r| r.centralized_val_wer);
    Ok(RunOutput {
        record: RunRecord {
            strategy,
            clients_per_round,
            initial_wer: run.initial_val_wer,
            final_wer,
            rounds: round_rows(&run),
            clients: client_table(&run.final_weights, &data.clients, &f.local)?,
        },
        final_weights: run.final_weights,
    })
}

/// Runs every strategy for every `K`, strategies outermost.
pub fn execute(cfg: &ExperimentConfig) -> anyhow::Result<(ExperimentManifest, Vec<RunOutput>)> {
    let data = prepare(cfg)?;
    let mut outputs = Vec::new();
    for &strategy in &cfg.federation.strategies {
        for &k in &cfg.federation.clients_per_round {
            outputs.push(run_one(cfg, &data, strategy, k)?);
        }
    }
    let manifest = ExperimentManifest {
        tool_version: TOOL_VERSION.to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        data: data.summary,
        runs: outputs.iter().map(|o| o.record.clone()).collect(),
    };
    Ok((manifest, outputs))
}

pub fn read_manifest(path: &Path) -> anyhow::Result<ExperimentManifest> {
    crate::config::load(path)
}
