//! SGD fine-tuning with dropout active: seeded shuffles, fresh per-batch
//! masks, and divergence detection.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;

use super::model::DropoutMask;
use super::{ToyError, ToyModel};

/// One training pair, already rendered to a prompt string. Soft-vote
/// training passes several weighted items per example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub prompt: String,
    pub target: String,
    pub weight: f64,
}

impl TrainItem {
    pub fn new(prompt: impl Into<String>, target: impl Into<String>, weight: f64) -> Self {
        TrainItem { prompt: prompt.into(), target: target.into(), weight }
    }
}

/// Loss bookkeeping returned by [`ToyModel::train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    /// Mean per-item weighted loss of each epoch, measured under the
    /// training-time (masked) forward pass.
    pub epoch_mean_loss: Vec<f64>,
}

impl ToyModel {
    /// Mini-batch SGD for `cfg.epochs` passes in a seeded shuffle order.
    /// Dropout stays active with a fresh mask per batch; the update is the
    /// batch-mean gradient scaled by the learning rate.
    pub fn train(&mut self, items: &[TrainItem], cfg: &TrainConfig) -> Result<TrainTrace, ToyError> {
        cfg.validate().map_err(|e| ToyError::BadConfig(alloc::string::ToString::to_string(&e)))?;
        if items.is_empty() {
            return Err(ToyError::EmptyDataset);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..items.len()).collect();
        let mut epoch_mean_loss = Vec::with_capacity(cfg.epochs as usize);

        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for (batch_index, batch) in order.chunks(cfg.batch_size as usize).enumerate() {
                let mask_seed: u64 = rng.gen();
                let mask =
                    DropoutMask::sample(self.mask_len(), self.cfg.dropout_rate, mask_seed);

                let mut grads = self.params.zeros_like();
                let mut batch_loss = 0.0;
                for &item_index in batch {
                    let item = &items[item_index];
                    let (loss, item_grads) = self.loss_and_gradients_masked(
                        &item.prompt,
                        &item.target,
                        item.weight,
                        Some(&mask),
                    )?;
                    batch_loss += loss;
                    grads.add_scaled(&item_grads, 1.0);
                }
                if !batch_loss.is_finite() {
                    return Err(ToyError::Diverged { epoch, batch: batch_index as u32 });
                }
                epoch_loss += batch_loss;

                let step = -cfg.learning_rate / batch.len() as f64;
                self.params.add_scaled(&grads, step);
                if !self.params.all_finite() {
                    return Err(ToyError::Diverged { epoch, batch: batch_index as u32 });
                }
            }
            epoch_mean_loss.push(epoch_loss / items.len() as f64);
        }
        Ok(TrainTrace { epoch_mean_loss })
    }
}
