//! Synchronous federated training server.
//!
//! Each round samples `K` of `M` clients, trains them locally from the current
//! global weights, turns their results into a pseudo-gradient
//! `delta = sum_k alpha_k (w_prev - w_k)`, and steps `w = w_prev - server_lr * delta`.
//! With `server_lr = 1` and sample-count weights this is plain FedAvg.

mod weighting;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClientDataset, Utterance};
use crate::error::{Error, Result};
use crate::metrics::{self, WerScore};
use crate::model::{LinearCtcTrainer, LossConfig, ParameterVector, Trainer};
use crate::seeding;

pub use weighting::{weights_fedavg, weights_loss_softmax, weights_wer_softmax, Strategy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    /// Number of rounds, `T`.
    pub rounds: usize,
    /// Clients sampled per round, `K`.
    pub clients_per_round: usize,
    /// Size of the client pool, `M`.
    pub total_clients: usize,
    pub server_lr: f64,
    pub local: LossConfig,
    pub strategy: Strategy,
    pub server_finetune: bool,
    pub seed: u64,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be positive".into()));
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.total_clients {
            return Err(Error::Config(format!(
                "clients_per_round = {} must be in 1..={}",
                self.clients_per_round, self.total_clients
            )));
        }
        if !(self.server_lr > 0.0 && self.server_lr.is_finite()) {
            return Err(Error::Config(format!("server_lr = {} must be positive", self.server_lr)));
        }
        self.local.validate()
    }
}

/// What a client reports back after local training.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub new_weights: ParameterVector,
    /// Local training samples, `n_k`.
    pub samples: usize,
    /// Mean joint loss of the final local epoch, `L_k`.
    pub train_loss: f64,
    /// WER of the locally trained model on the client's validation split.
    pub val_wer: f64,
}

impl ClientUpdate {
    fn is_usable(&self) -> bool {
        self.samples > 0 && self.train_loss.is_finite() && self.val_wer.is_finite() && self.val_wer >= 0.0
    }
}

/// Result of combining one round's updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregation {
    pub weights: ParameterVector,
    /// Client ids in ascending order, aligned with `alphas`.
    pub client_ids: Vec<usize>,
    pub alphas: Vec<f64>,
    pub delta_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    pub sampled_ids: Vec<usize>,
    /// Clients whose updates were aggregated, ascending.
    pub used_ids: Vec<usize>,
    pub alphas: Vec<f64>,
    pub delta_norm: f64,
    pub mean_client_loss: Option<f64>,
    pub mean_client_wer: Option<f64>,
    pub centralized_val_wer: f64,
    /// Set when no client survived and the global model was left unchanged.
    pub empty_round: bool,
    #[serde(skip)]
    pub global_weights_after: ParameterVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRun {
    pub initial_val_wer: f64,
    pub rounds: Vec<RoundRecord>,
    pub final_weights: ParameterVector,
}

/// `K` distinct client indices from `0..M`, sorted, drawn uniformly without
/// replacement from a stream keyed on `(seed, round)`.
pub fn sample_clients(total: usize, k: usize, round: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > total {
        return Err(Error::Config(format!("cannot sample {k} of {total} clients")));
    }
    let mut rng = seeding::rng(seed, "sample-clients", &[round as u64]);
    let mut ids = rand::seq::index::sample(&mut rng, total, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Computes the round's weights and applies the server step. Updates are
/// ordered by client id first, so the result does not depend on arrival order.
pub fn aggregate(
    prev_global: &ParameterVector,
    updates: &[ClientUpdate],
    strategy: Strategy,
    server_lr: f64,
) -> Result<Aggregation> {
    if updates.is_empty() {
        return Err(Error::EmptyRound { round: 0 });
    }
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    if sorted.windows(2).any(|w| w[0].client_id == w[1].client_id) {
        return Err(Error::Protocol("duplicate client id in one round".into()));
    }
    for u in &sorted {
        if u.new_weights.len() != prev_global.len() {
            return Err(Error::Protocol(format!(
                "client {} sent {} weights, expected {}",
                u.client_id,
                u.new_weights.len(),
                prev_global.len()
            )));
        }
    }

    let alphas = match strategy {
        Strategy::Fedavg => weights_fedavg(&sorted.iter().map(|u| u.samples).collect::<Vec<_>>())?,
        Strategy::LossSoftmax => {
            weights_loss_softmax(&sorted.iter().map(|u| u.train_loss).collect::<Vec<_>>())?
        }
        Strategy::WerSoftmax => {
            weights_wer_softmax(&sorted.iter().map(|u| u.val_wer).collect::<Vec<_>>())?
        }
    };

    let mut averaged = vec![0.0; prev_global.len()];
    for (u, &a) in sorted.iter().zip(&alphas) {
        for (acc, w) in averaged.iter_mut().zip(u.new_weights.values()) {
            *acc += a * w;
        }
    }
    // delta = sum_k a_k (prev - w_k) = prev - sum_k a_k w_k since the alphas sum to one;
    // prev - lr * delta is then evaluated as (1 - lr) prev + lr * avg, which is exact
    // at lr = 1 and lr = 0.
    let mut delta_sq = 0.0;
    let mut next = Vec::with_capacity(prev_global.len());
    for (&p, &avg) in prev_global.values().iter().zip(&averaged) {
        delta_sq += (p - avg) * (p - avg);
        next.push((1.0 - server_lr) * p + server_lr * avg);
    }
    Ok(Aggregation {
        weights: ParameterVector::from_values(prev_global.shape(), next)?,
        client_ids: sorted.iter().map(|u| u.client_id).collect(),
        alphas,
        delta_norm: delta_sq.sqrt(),
    })
}

/// One extra optimisation step on the server's held-out batch.
pub fn server_finetune<T: Trainer + ?Sized>(
    trainer: &T,
    weights: &ParameterVector,
    held_out: &[Utterance],
) -> Result<ParameterVector> {
    if held_out.is_empty() {
        return Err(Error::Config("server fine-tuning enabled with an empty held-out batch".into()));
    }
    trainer.server_step(weights, held_out)
}

/// Pooled WER of greedy transcriptions over `data`.
pub fn evaluate_wer<T: Trainer + ?Sized>(
    trainer: &T,
    weights: &ParameterVector,
    data: &[Utterance],
) -> Result<WerScore> {
    let scores = data
        .iter()
        .map(|u| metrics::wer(&u.transcript, &trainer.transcribe(weights, &u.features)?))
        .collect::<Result<Vec<_>>>()?;
    WerScore::pooled(scores)
}

/// WER of `weights` on each client's local test split; `None` for clients
/// without one.
pub fn evaluate_clients<T: Trainer + ?Sized>(
    trainer: &T,
    weights: &ParameterVector,
    clients: &[ClientDataset],
) -> Result<Vec<(usize, Option<WerScore>)>> {
    clients
        .par_iter()
        .map(|c| {
            let score = if c.test.is_empty() {
                None
            } else {
                Some(evaluate_wer(trainer, weights, &c.test)?)
            };
            Ok((c.client_id, score))
        })
        .collect()
}

fn train_client<T: Trainer + ?Sized>(
    trainer: &T,
    global: &ParameterVector,
    client: &ClientDataset,
    seed: u64,
) -> Result<ClientUpdate> {
    if client.train.is_empty() {
        return Err(Error::Precondition(format!("client {} has no training data", client.client_id)));
    }
    let (new_weights, train_loss) = trainer.local_train(global, &client.train, seed)?;
    // Clients too small for a local test split validate on their training data.
    let val = if client.test.is_empty() { &client.train } else { &client.test };
    let val_wer = evaluate_wer(trainer, &new_weights, val)?.wer;
    Ok(ClientUpdate {
        client_id: client.client_id,
        new_weights,
        samples: client.train.len(),
        train_loss,
        val_wer,
    })
}

/// Runs the round loop with the reference linear trainer built from `cfg.local`.
pub fn run_experiment(
    cfg: &FederationConfig,
    clients: &[ClientDataset],
    server_holdout: &[Utterance],
    central_val: &[Utterance],
    init: &ParameterVector,
) -> Result<ExperimentRun> {
    let trainer = LinearCtcTrainer::new(cfg.local);
    run_experiment_with(&trainer, cfg, clients, server_holdout, central_val, init)
}

/// Runs `cfg.rounds` synchronous rounds with any trainer.
///
/// Client training within a round runs on the ambient rayon pool; results are
/// collected in sampled order and aggregated only after every client finished.
/// Clients that fail (bad data, divergence, non-finite metrics) are skipped
/// for that round.
pub fn run_experiment_with<T: Trainer + ?Sized>(
    trainer: &T,
    cfg: &FederationConfig,
    clients: &[ClientDataset],
    server_holdout: &[Utterance],
    central_val: &[Utterance],
    init: &ParameterVector,
) -> Result<ExperimentRun> {
    cfg.validate()?;
    if clients.is_empty() {
        return Err(Error::Precondition("no clients".into()));
    }
    if clients.len() != cfg.total_clients {
        return Err(Error::Config(format!(
            "total_clients = {} but {} client datasets were given",
            cfg.total_clients,
            clients.len()
        )));
    }
    if central_val.is_empty() {
        return Err(Error::Precondition("centralized validation set is empty".into()));
    }
    if cfg.server_finetune && server_holdout.is_empty() {
        return Err(Error::Config("server_finetune requires a non-empty server held-out set".into()));
    }

    let initial_val_wer = evaluate_wer(trainer, init, central_val)?.wer;
    let mut global = init.clone();
    let mut rounds = Vec::with_capacity(cfg.rounds);

    for round in 1..=cfg.rounds {
        let sampled = sample_clients(cfg.total_clients, cfg.clients_per_round, round, cfg.seed)?;
        // The server broadcasts one seed per round alongside the weights.
        let round_seed = seeding::derive(cfg.seed, "round", &[round as u64]);

        let results: Vec<(usize, Result<ClientUpdate>)> = sampled
            .par_iter()
            .map(|&idx| (idx, train_client(trainer, &global, &clients[idx], round_seed)))
            .collect();

        let mut updates = Vec::with_capacity(results.len());
        for (idx, result) in results {
            match result {
                Ok(u) if u.is_usable() => updates.push(u),
                Ok(u) => warn!(
                    "round {round}: excluding client {} (loss {}, wer {})",
                    u.client_id, u.train_loss, u.val_wer
                ),
                Err(e) => warn!("round {round}: skipping client {}: {e}", clients[idx].client_id),
            }
        }

        let record = if updates.is_empty() {
            warn!("round {round}: no surviving clients, global model unchanged");
            RoundRecord {
                round,
                sampled_ids: sampled.iter().map(|&i| clients[i].client_id).collect(),
                used_ids: Vec::new(),
                alphas: Vec::new(),
                delta_norm: 0.0,
                mean_client_loss: None,
                mean_client_wer: None,
                centralized_val_wer: evaluate_wer(trainer, &global, central_val)?.wer,
                empty_round: true,
                global_weights_after: global.clone(),
            }
        } else {
            let losses: Vec<f64> = updates.iter().map(|u| u.train_loss).collect();
            let wers: Vec<f64> = updates.iter().map(|u| u.val_wer).collect();
            let agg = aggregate(&global, &updates, cfg.strategy, cfg.server_lr)?;
            global = agg.weights;
            if cfg.server_finetune {
                global = server_finetune(trainer, &global, server_holdout)?;
            }
            let centralized_val_wer = evaluate_wer(trainer, &global, central_val)?.wer;
            RoundRecord {
                round,
                sampled_ids: sampled.iter().map(|&i| clients[i].client_id).collect(),
                used_ids: agg.client_ids,
                alphas: agg.alphas,
                delta_norm: agg.delta_norm,
                mean_client_loss: metrics::mean(&losses),
                mean_client_wer: metrics::mean(&wers),
                centralized_val_wer,
                empty_round: false,
                global_weights_after: global.clone(),
            }
        };
        debug!(
            "round {round}: {} clients aggregated, |delta| = {:.4e}, val WER = {:.4}",
            record.used_ids.len(),
            record.delta_norm,
            record.centralized_val_wer
        );
        rounds.push(record);
    }

    Ok(ExperimentRun {
        initial_val_wer,
        rounds,
        final_weights: global,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelShape;
    use proptest::prelude::*;
    use super::Strategy;

    fn pv(values: &[f64]) -> ParameterVector {
        // vocab 1, dim len-1 gives len parameters.
        let shape = ModelShape {
            vocab: 1,
            dim: values.len() - 1,
        };
        ParameterVector::from_values(shape, values.to_vec()).unwrap()
    }

    fn update(id: usize, w: &[f64], n: usize, loss: f64, wer: f64) -> ClientUpdate {
        ClientUpdate {
            client_id: id,
            new_weights: pv(w),
            samples: n,
            train_loss: loss,
            val_wer: wer,
        }
    }

    #[test]
    fn sampling_examples() {
        assert_eq!(sample_clients(5, 5, 3, 1).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(sample_clients(100, 10, 4, 9).unwrap(), sample_clients(100, 10, 4, 9).unwrap());
        assert_ne!(sample_clients(100, 10, 4, 9).unwrap(), sample_clients(100, 10, 5, 9).unwrap());
        assert!(matches!(sample_clients(3, 4, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn sampling_is_uniform() {
        // 10^4 single draws from 10 ids: each count ~ Binomial(10^4, 0.1), sigma = 30.
        let mut counts = [0usize; 10];
        for round in 0..10_000 {
            counts[sample_clients(10, 1, round, 77).unwrap()[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 - 1000.0).abs() <= 90.0, "count {c}");
        }
    }

    #[test]
    fn single_update_recovers_client_weights() {
        let prev = pv(&[0.1, -3.7, 2.2]);
        let client = [0.7, 1.3, -0.9];
        let agg = aggregate(&prev, &[update(4, &client, 3, 1.0, 0.2)], Strategy::Fedavg, 1.0).unwrap();
        assert_eq!(agg.weights.values(), &client);
        assert_eq!(agg.alphas, vec![1.0]);
    }

    #[test]
    fn zero_server_lr_keeps_previous() {
        let prev = pv(&[0.1, -3.7]);
        let agg = aggregate(&prev, &[update(0, &[5.0, 5.0], 3, 1.0, 0.2)], Strategy::Fedavg, 0.0).unwrap();
        assert_eq!(agg.weights.values(), prev.values());
    }

    #[test]
    fn two_clients_average() {
        let prev = pv(&[0.0, 0.0]);
        let ups = [update(0, &[2.0, 2.0], 5, 1.0, 0.1), update(1, &[4.0, 4.0], 5, 1.0, 0.1)];
        let agg = aggregate(&prev, &ups, Strategy::Fedavg, 1.0).unwrap();
        assert_eq!(agg.weights.values(), &[3.0, 3.0]);
        assert!((agg.delta_norm - (2.0f64 * 9.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn aggregate_errors() {
        let prev = pv(&[0.0, 0.0]);
        assert!(matches!(aggregate(&prev, &[], Strategy::Fedavg, 1.0), Err(Error::EmptyRound { .. })));
        let bad = update(0, &[1.0, 2.0, 3.0], 1, 0.0, 0.0);
        assert!(matches!(aggregate(&prev, &[bad], Strategy::Fedavg, 1.0), Err(Error::Protocol(_))));
    }

    #[test]
    fn strategies_pick_their_own_inputs() {
        let prev = pv(&[0.0, 0.0]);
        let ups = [update(0, &[1.0, 0.0], 1, 0.0, 1.0), update(1, &[0.0, 1.0], 3, 3f64.ln(), 0.0)];
        let fedavg = aggregate(&prev, &ups, Strategy::Fedavg, 1.0).unwrap();
        assert_eq!(fedavg.alphas, vec![0.25, 0.75]);
        let loss = aggregate(&prev, &ups, Strategy::LossSoftmax, 1.0).unwrap();
        assert!((loss.alphas[0] - 0.75).abs() < 1e-15);
        let wer = aggregate(&prev, &ups, Strategy::WerSoftmax, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((wer.alphas[1] - e / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn finetune_needs_data() {
        let trainer = LinearCtcTrainer::new(LossConfig::default());
        let w = ParameterVector::zeros(ModelShape { vocab: 2, dim: 1 });
        assert!(matches!(server_finetune(&trainer, &w, &[]), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn aggregate_is_order_independent(
            ws in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..8),
            seed in any::<u64>(),
            lr in 0.1f64..2.0,
        ) {
            use rand::seq::SliceRandom;
            let prev = pv(&[0.3, -0.2, 0.1, 1.0]);
            let ups: Vec<ClientUpdate> = ws.iter().enumerate()
                .map(|(i, w)| update(i * 3, w, i + 1, i as f64 * 0.7, i as f64 * 0.1))
                .collect();
            let mut shuffled = ups.clone();
            shuffled.shuffle(&mut seeding::rng(seed, "test", &[]));
            for s in Strategy::ALL {
                let a = aggregate(&prev, &ups, s, lr).unwrap();
                let b = aggregate(&prev, &shuffled, s, lr).unwrap();
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn fedavg_unit_lr_is_weighted_average(
            ws in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..8),
            ns in prop::collection::vec(1usize..50, 8),
        ) {
            let prev = pv(&[1.0, 2.0, 3.0]);
            let ups: Vec<ClientUpdate> = ws.iter().enumerate()
                .map(|(i, w)| update(i, w, ns[i], 0.0, 0.0)).collect();
            let agg = aggregate(&prev, &ups, Strategy::Fedavg, 1.0).unwrap();
            let total: usize = ns[..ws.len()].iter().sum();
            for j in 0..3 {
                let expect: f64 = ws.iter().enumerate()
                    .map(|(i, w)| ns[i] as f64 / total as f64 * w[j]).sum();
                prop_assert!((agg.weights.values()[j] - expect).abs() < 1e-12);
            }
        }
    }
}
