//! Model assembly, focal loss, the training loop with best-validation-loss
//! checkpointing, and dataset scoring.
//!
//! The network family is a small residual CNN: stem convolution → residual
//! stages → global average pooling → fully-connected stack → one logit.
//! Training is plain seeded-shuffle minibatch Adam; after every epoch the
//! full validation set is evaluated in eval mode (batch-norm running stats)
//! and a checkpoint is taken exactly when that loss strictly improves.

mod data;
mod loss;
mod model;
mod score;
mod train;

pub use data::{SliceSet, TrainSample};
pub use loss::{focal_loss, focal_loss_batch, focal_loss_from_logit};
pub use model::{build_model, Model};
pub use score::{
    predict, read_scores_csv, score_dataset, write_scores_csv, ScoreRow,
};
pub use train::{train, write_training_log, Checkpoint, EpochLog};

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Architecture description. `stage_widths[i]` residual channels for stage
/// `i`, which holds `blocks_per_stage[i]` blocks; every stage after the
/// first opens with a stride-2 block. `fc_widths` are the fully-connected
/// layer sizes after global pooling and must end in 1 (the logit).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_size: (usize, usize),
    pub in_channels: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub fc_widths: Vec<usize>,
}

impl Default for ModelConfig {
    /// Desk-scale default: trains in minutes on one core while keeping the
    /// residual architecture family.
    fn default() -> Self {
        ModelConfig {
            input_size: (64, 64),
            in_channels: 3,
            stage_widths: vec![16, 32, 64],
            blocks_per_stage: vec![2, 2, 2],
            fc_widths: vec![64, 1],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 3 {
            return Err(Error::invalid(format!(
                "the input stack is 3 channels by construction, config says {}",
                self.in_channels
            )));
        }
        if self.stage_widths.is_empty() || self.stage_widths.len() != self.blocks_per_stage.len()
        {
            return Err(Error::invalid(format!(
                "stage_widths ({}) and blocks_per_stage ({}) must be equal-length and non-empty",
                self.stage_widths.len(),
                self.blocks_per_stage.len()
            )));
        }
        if self.stage_widths.iter().chain(&self.blocks_per_stage).any(|&v| v == 0) {
            return Err(Error::invalid(
                "stage widths and block counts must all be at least 1",
            ));
        }
        if self.fc_widths.last() != Some(&1) {
            return Err(Error::invalid(format!(
                "fc_widths must end in a single-logit layer, got {:?}",
                self.fc_widths
            )));
        }
        if self.fc_widths.iter().any(|&v| v == 0) {
            return Err(Error::invalid("fc widths must all be at least 1"));
        }
        let (h, w) = self.input_size;
        // each stage beyond the first halves the spatial extent (ceil), so
        // this only guards against degenerate inputs
        if h < 4 || w < 4 {
            return Err(Error::invalid(format!(
                "input size {h}x{w} is too small; need at least 4x4"
            )));
        }
        Ok(())
    }
}

/// Optimization hyperparameters. Defaults: lr 1e-3, focal α=0.25 γ=2,
/// decision threshold 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return Err(Error::invalid(format!(
                "focal_alpha must lie in (0,1), got {}",
                self.focal_alpha
            )));
        }
        if !(self.focal_gamma >= 0.0) || !self.focal_gamma.is_finite() {
            return Err(Error::invalid(format!(
                "focal_gamma must be finite and non-negative, got {}",
                self.focal_gamma
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be at least 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid(format!(
                "threshold must lie in (0,1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}
