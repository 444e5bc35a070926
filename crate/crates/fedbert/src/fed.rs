//! Federated training rounds: partition the training set across clients,
//! broadcast global weights, train locally, average the results.
//!
//! The whole loop is deterministic. Every source of randomness is a
//! `ChaCha8Rng` seeded through [`derive_seed`], clients are always visited in
//! ascending `client_id` order, and aggregation sums in that same order, so a
//! `(config, seed)` pair fully determines the final weights.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabeledText;
use crate::model::{
    init_params, train_epochs, AdamHyper, EncoderConfig, ModelError, ParameterSet,
};
use crate::tokenizer::{encode, TokenSequence, Vocabulary};

#[derive(Debug, Error)]
pub enum FedError {
    #[error("invalid federation config: {0}")]
    InvalidConfig(String),
    #[error("{clients} clients but only {examples} training examples")]
    TooManyClients { clients: usize, examples: usize },
    #[error("client {client} received an empty shard")]
    EmptyShard { client: u32 },
    #[error("cannot aggregate an empty update list")]
    NoUpdates,
    #[error("updates from mixed rounds: {first} and {other}")]
    MixedRounds { first: u32, other: u32 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How the training set is split across clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionStrategy {
    /// Seeded shuffle, then contiguous shards whose sizes differ by at most 1.
    Iid,
    /// Per-class Dirichlet(alpha) proportions; small alpha concentrates each
    /// class on few clients.
    LabelSkew { alpha: f64 },
}

/// How client weights are combined each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Plain elementwise mean over clients.
    Mean,
    /// Elementwise sum weighted by each client's share of the examples.
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FederationConfig {
    pub n_clients: usize,
    pub rounds: u32,
    pub local_epochs: u32,
    pub batch_size: usize,
    pub partition: PartitionStrategy,
    pub aggregation: Aggregation,
    pub seed: u64,
    /// When set to `k`, the global weights are re-initialized from scratch
    /// every `k` rounds instead of carrying over, discarding progress. Off by
    /// default; exists to measure how destructive a hard reset is.
    pub reinit_every: Option<u32>,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            n_clients: 4,
            rounds: 10,
            local_epochs: 1,
            batch_size: 32,
            partition: PartitionStrategy::Iid,
            aggregation: Aggregation::Mean,
            seed: 0,
            reinit_every: None,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<(), FedError> {
        if self.n_clients < 1 {
            return Err(FedError::InvalidConfig("n_clients must be at least 1".into()));
        }
        if self.local_epochs < 1 {
            return Err(FedError::InvalidConfig("local_epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(FedError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if let PartitionStrategy::LabelSkew { alpha } = self.partition {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(FedError::InvalidConfig(format!(
                    "label-skew alpha must be a positive finite number, got {alpha}"
                )));
            }
        }
        if let Some(k) = self.reinit_every {
            if k == 0 {
                return Err(FedError::InvalidConfig("reinit_every must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One participant. The shard is fixed for the federation's lifetime; the
/// encoded form is cached here so each round only runs the numeric training.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: u32,
    pub shard: Vec<LabeledText>,
    pub params: ParameterSet,
    sequences: Vec<TokenSequence>,
    targets: Vec<usize>,
}

impl ClientState {
    pub fn new(
        client_id: u32,
        shard: Vec<LabeledText>,
        vocab: &Vocabulary,
        max_len: usize,
        params: ParameterSet,
    ) -> Self {
        let sequences = shard.iter().map(|ex| encode(vocab, &ex.text, max_len)).collect();
        let targets = shard.iter().map(|ex| ex.class_index).collect();
        ClientState { client_id, shard, params, sequences, targets }
    }

    pub fn n_examples(&self) -> usize {
        self.shard.len()
    }
}

/// What a client sends back after local training. Carries weights and
/// counts only; the raw shard never leaves the client.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client_id: u32,
    pub round: u32,
    pub params: ParameterSet,
    pub n_examples: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundLog {
    pub round: u32,
    /// Mean local epoch loss per client, in ascending client_id order.
    pub client_losses: Vec<f64>,
    pub agg_mode: Aggregation,
    pub wall_ms: u64,
}

/// Writes one JSON object per round, newline-delimited.
pub fn write_round_logs<W: Write>(logs: &[RoundLog], mut out: W) -> std::io::Result<()> {
    for log in logs {
        serde_json::to_writer(&mut out, log)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable per-(round, client) seed derivation. Pure integer mixing, so the
/// same inputs give the same seed on every platform. Distinct (round, client)
/// lanes land on distinct seeds except for engineered collisions.
pub fn derive_seed(base: u64, round: u32, client_id: u32) -> u64 {
    let lane = ((round as u64) << 32) | client_id as u64;
    splitmix64(base.wrapping_add(splitmix64(lane)))
}

/// Splits the training set into `config.n_clients` disjoint shards whose
/// union is the input. Seeded by `config.seed` on a lane no training round
/// uses. A single client receives the input unchanged, in input order.
pub fn partition(
    train: &[LabeledText],
    config: &FederationConfig,
) -> Result<Vec<Vec<LabeledText>>, FedError> {
    config.validate()?;
    let k = config.n_clients;
    if k > train.len() {
        return Err(FedError::TooManyClients { clients: k, examples: train.len() });
    }
    if k == 1 {
        return Ok(vec![train.to_vec()]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u32::MAX, u32::MAX));
    match config.partition {
        PartitionStrategy::Iid => {
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut rng);
            let base = train.len() / k;
            let extra = train.len() % k;
            let mut shards = Vec::with_capacity(k);
            let mut cursor = 0;
            for i in 0..k {
                let size = base + usize::from(i < extra);
                let shard = order[cursor..cursor + size]
                    .iter()
                    .map(|&idx| train[idx].clone())
                    .collect();
                shards.push(shard);
                cursor += size;
            }
            Ok(shards)
        }
        PartitionStrategy::LabelSkew { alpha } => {
            let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (idx, ex) in train.iter().enumerate() {
                by_class.entry(ex.class_index).or_default().push(idx);
            }
            let gamma = Gamma::new(alpha, 1.0)
                .map_err(|e| FedError::InvalidConfig(format!("bad alpha: {e}")))?;
            let mut shards: Vec<Vec<LabeledText>> = vec![Vec::new(); k];
            // Classes in ascending order, then one categorical draw per
            // example; this fixes the rng consumption order.
            for indices in by_class.values() {
                let weights: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
                let assign = WeightedIndex::new(&weights).map_err(|e| {
                    FedError::InvalidConfig(format!("degenerate class proportions: {e}"))
                })?;
                for &idx in indices {
                    shards[assign.sample(&mut rng)].push(train[idx].clone());
                }
            }
            Ok(shards)
        }
    }
}

/// One round of local work: reset the client's weights to the broadcast
/// global ones, train `local_epochs` epochs of seeded mini-batch Adam from
/// fresh optimizer state, and report the trained weights, the shard size,
/// and the mean epoch loss.
pub fn local_train(
    client: &mut ClientState,
    global: &ParameterSet,
    enc_cfg: &EncoderConfig,
    round: u32,
    local_epochs: u32,
    batch_size: usize,
    hyper: AdamHyper,
    seed: u64,
) -> Result<ClientUpdate, FedError> {
    if client.shard.is_empty() {
        return Err(FedError::EmptyShard { client: client.client_id });
    }
    let outcome = train_epochs(
        global.clone(),
        enc_cfg,
        &client.sequences,
        &client.targets,
        local_epochs as usize,
        batch_size,
        hyper,
        seed,
    )?;
    let loss = outcome.epoch_losses.iter().sum::<f64>() / outcome.epoch_losses.len() as f64;
    client.params = outcome.params;
    Ok(ClientUpdate {
        client_id: client.client_id,
        round,
        params: client.params.clone(),
        n_examples: client.shard.len() as u64,
        loss,
    })
}

/// Combines client updates into new global weights. Updates are summed in
/// ascending client_id order regardless of the order they arrive in, so the
/// result is bitwise reproducible.
pub fn aggregate(updates: &[ClientUpdate], mode: Aggregation) -> Result<ParameterSet, FedError> {
    if updates.is_empty() {
        return Err(FedError::NoUpdates);
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| updates[i].client_id);
    let round = updates[order[0]].round;
    for &i in &order {
        if updates[i].round != round {
            return Err(FedError::MixedRounds { first: round, other: updates[i].round });
        }
        updates[i].params.check_layout(&updates[order[0]].params)?;
    }

    let mut acc = updates[order[0]].params.zeros_like();
    match mode {
        Aggregation::Mean => {
            for &i in &order {
                for (dst, src) in acc.tensors_mut().iter_mut().zip(updates[i].params.tensors()) {
                    for (a, b) in dst.values.iter_mut().zip(&src.values) {
                        *a += b;
                    }
                }
            }
            let inv = 1.0 / updates.len() as f64;
            for tensor in acc.tensors_mut() {
                for v in &mut tensor.values {
                    *v *= inv;
                }
            }
        }
        Aggregation::Weighted => {
            let total: u64 = updates.iter().map(|u| u.n_examples).sum();
            if total == 0 {
                return Err(FedError::InvalidConfig(
                    "example-weighted aggregation needs a nonzero example count".into(),
                ));
            }
            for &i in &order {
                let w = updates[i].n_examples as f64 / total as f64;
                for (dst, src) in acc.tensors_mut().iter_mut().zip(updates[i].params.tensors()) {
                    for (a, b) in dst.values.iter_mut().zip(&src.values) {
                        *a += w * b;
                    }
                }
            }
        }
    }
    Ok(acc)
}

/// Runs the full federation in-process: initialize global weights from
/// `seed`, then for each round broadcast, train every client, and install the
/// aggregate as the new global. `rounds = 0` returns the initial weights.
pub fn run_federation(
    config: &FederationConfig,
    enc_cfg: &EncoderConfig,
    vocab: &Vocabulary,
    train: &[LabeledText],
    seed: u64,
) -> Result<(ParameterSet, Vec<RoundLog>), FedError> {
    config.validate()?;
    if vocab.size() != enc_cfg.vocab_size {
        return Err(FedError::InvalidConfig(format!(
            "vocabulary has {} tokens but the encoder expects {}",
            vocab.size(),
            enc_cfg.vocab_size
        )));
    }

    let mut global = init_params(enc_cfg, seed);
    let shards = partition(train, config)?;
    let mut clients: Vec<ClientState> = shards
        .into_iter()
        .enumerate()
        .map(|(i, shard)| {
            ClientState::new(i as u32, shard, vocab, enc_cfg.max_len, global.clone())
        })
        .collect();

    let mut logs = Vec::with_capacity(config.rounds as usize);
    for round in 0..config.rounds {
        if let Some(k) = config.reinit_every {
            if round > 0 && round % k == 0 {
                global = init_params(enc_cfg, derive_seed(seed, round, u32::MAX));
            }
        }
        let started = Instant::now();
        let mut updates = Vec::with_capacity(clients.len());
        for client in &mut clients {
            let update = local_train(
                client,
                &global,
                enc_cfg,
                round,
                config.local_epochs,
                config.batch_size,
                AdamHyper::default(),
                derive_seed(seed, round, client.client_id),
            )?;
            updates.push(update);
        }
        global = aggregate(&updates, config.aggregation)?;
        logs.push(RoundLog {
            round,
            client_losses: updates.iter().map(|u| u.loss).collect(),
            agg_mode: config.aggregation,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    Ok((global, logs))
}
