//! The training loop: seeded-shuffle minibatch Adam with eval-mode
//! validation after every epoch and best-validation checkpointing.

use super::{focal_loss_batch, Model, SliceSet, TrainConfig};
use crate::nn::{adam_step, AdamHyper, AdamState, BnMode};
use crate::seed::{derive_seed_indexed, rng_from};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// One epoch's row in the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub checkpoint_saved: bool,
}

/// A restorable snapshot of the model at its best validation loss so far:
/// architecture, flattened parameters, and batch-norm running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: super::ModelConfig,
    pub epoch: usize,
    pub val_loss: f64,
    pub params: Vec<f32>,
    pub running_stats: Vec<f32>,
}

impl Checkpoint {
    pub fn capture(model: &mut Model<f32>, epoch: usize, val_loss: f64) -> Self {
        Checkpoint {
            config: model.config().clone(),
            epoch,
            val_loss,
            params: model.flat_params(),
            running_stats: model.flat_running_stats(),
        }
    }

    /// Rebuilds a model in eval-ready state from the snapshot.
    pub fn restore(&self) -> Result<Model<f32>> {
        let mut model = super::build_model(&self.config, 0)?;
        model.set_flat_params(&self.params)?;
        model.set_flat_running_stats(&self.running_stats)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            fs::read(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Mean focal loss over a whole set in eval mode (running batch-norm
/// statistics), accumulated in double precision.
pub(super) fn eval_loss(model: &mut Model<f32>, set: &SliceSet, cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0f64;
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(cfg.batch_size) {
        let (x, labels) = set.batch(chunk)?;
        let logits = model.forward(&x, BnMode::Eval)?;
        for (&z, &y) in logits.iter().zip(&labels) {
            let (loss, _) =
                super::focal_loss_from_logit(z as f64, y, cfg.focal_alpha, cfg.focal_gamma);
            total += loss;
        }
    }
    Ok(total / set.len() as f64)
}

/// Trains in place and returns the best checkpoint (strictly lowest
/// validation loss) plus the per-epoch log. Each epoch reshuffles, then
/// walks the set in `batch_size` chunks; a trailing chunk of one sample is
/// dropped because batch statistics are undefined for it. Aborts with a
/// diagnostic the moment any batch loss or validation loss goes non-finite.
pub fn train(
    model: &mut Model<f32>,
    train_set: &SliceSet,
    val_set: &SliceSet,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    cfg.validate()?;
    train_set.validate()?;
    val_set.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training requires non-empty train and val sets"));
    }
    for set in [train_set, val_set] {
        if (set.height, set.width) != model.config().input_size {
            return Err(Error::shape(format!(
                "set is {}x{}, model expects {}x{}",
                set.height,
                set.width,
                model.config().input_size.0,
                model.config().input_size.1
            )));
        }
    }

    let hyper = AdamHyper::with_lr(cfg.lr as f32);
    let mut states: Vec<AdamState<f32>> = model
        .param_groups()
        .iter()
        .map(|g| AdamState::new(g.params.len()))
        .collect();

    let mut best: Option<Checkpoint> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng_from(derive_seed_indexed(
            cfg.seed,
            "epoch-shuffle",
            epoch as u64,
        )));

        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            // A trailing remainder of one sample has no defined batch
            // statistics; drop it (the shuffle rotates which sample sits
            // there, so nothing is starved across epochs).
            if chunk.len() == 1 && cfg.batch_size > 1 && order.len() > 1 {
                continue;
            }
            seen += chunk.len();
            let (x, labels) = train_set.batch(chunk)?;
            let logits = model.forward(&x, BnMode::Train)?;
            let logits64: Vec<f64> = logits.iter().map(|&z| z as f64).collect();
            let (mean_loss, grads64) =
                focal_loss_batch(&logits64, &labels, cfg.focal_alpha, cfg.focal_gamma)?;
            if !mean_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss became {mean_loss} at epoch {epoch}, batch {batch}"
                )));
            }
            loss_sum += mean_loss * chunk.len() as f64;
            let grads: Vec<f32> = grads64.iter().map(|&g| g as f32).collect();
            model.zero_grads();
            model.backward(&grads)?;
            for (group, state) in model.param_groups().into_iter().zip(&mut states) {
                adam_step(group.params, group.grads, state, &hyper)
                    .map_err(|e| e.in_stage(&format!("epoch {epoch} batch {batch}")))?;
            }
        }
        let train_loss = loss_sum / seen as f64;

        let val_loss = eval_loss(model, val_set, cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "validation loss became {val_loss} after epoch {epoch}"
            )));
        }
        let improved = best.as_ref().is_none_or(|b| val_loss < b.val_loss);
        if improved {
            best = Some(Checkpoint::capture(model, epoch, val_loss));
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            checkpoint_saved: improved,
        });
    }
    Ok((best.expect("at least one epoch ran"), log))
}

/// Writes the per-epoch log as CSV: epoch, train_loss, val_loss,
/// checkpoint_saved.
pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = String::from("epoch,train_loss,val_loss,checkpoint_saved\n");
    for row in log {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.train_loss, row.val_loss, row.checkpoint_saved
        ));
    }
    fs::write(path, out)?;
    Ok(())
}
