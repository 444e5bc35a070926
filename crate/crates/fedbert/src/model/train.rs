//! Mini-batch training driver.
//!
//! The traversal contract is frozen because federated equivalence checks
//! depend on it: one ChaCha8 stream (seeded once) drives every epoch's
//! shuffle in sequence, batches are consecutive chunks of the shuffled order
//! including the final partial chunk, and the reported epoch loss is the
//! example-weighted mean of batch losses.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tokenizer::TokenSequence;

use super::adam::{AdamHyper, AdamState};
use super::encoder::loss_and_grad;
use super::params::ParameterSet;
use super::{EncoderConfig, ModelError};

/// Owns parameters and optimizer state across epochs.
pub struct Trainer {
    pub params: ParameterSet,
    pub adam: AdamState,
    config: EncoderConfig,
}

impl Trainer {
    pub fn new(params: ParameterSet, config: EncoderConfig, hyper: AdamHyper) -> Self {
        let adam = AdamState::new(&params, hyper);
        Trainer { params, adam, config }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// One pass over the data in a freshly shuffled order drawn from `rng`;
    /// returns the mean loss per example.
    pub fn run_epoch(
        &mut self,
        sequences: &[TokenSequence],
        targets: &[usize],
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, ModelError> {
        assert!(batch_size >= 1, "batch_size must be at least 1");
        if sequences.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        if sequences.len() != targets.len() {
            return Err(ModelError::TargetCountMismatch {
                inputs: sequences.len(),
                targets: targets.len(),
            });
        }
        let mut order: Vec<usize> = (0..sequences.len()).collect();
        order.shuffle(rng);
        let mut weighted_loss = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<TokenSequence> = chunk.iter().map(|&i| sequences[i].clone()).collect();
            let batch_targets: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            let (loss, grads) = loss_and_grad(&self.params, &self.config, &batch, &batch_targets)?;
            self.adam.step(&mut self.params, &grads)?;
            weighted_loss += loss * chunk.len() as f64;
        }
        Ok(weighted_loss / sequences.len() as f64)
    }
}

pub struct TrainOutcome {
    pub params: ParameterSet,
    pub epoch_losses: Vec<f64>,
}

/// Runs `epochs` epochs from fresh optimizer state, consuming and returning
/// the parameters.
pub fn train_epochs(
    params: ParameterSet,
    config: &EncoderConfig,
    sequences: &[TokenSequence],
    targets: &[usize],
    epochs: usize,
    batch_size: usize,
    hyper: AdamHyper,
    seed: u64,
) -> Result<TrainOutcome, ModelError> {
    let mut trainer = Trainer::new(params, *config, hyper);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut epoch_losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        epoch_losses.push(trainer.run_epoch(sequences, targets, batch_size, &mut rng)?);
    }
    Ok(TrainOutcome { params: trainer.params, epoch_losses })
}
