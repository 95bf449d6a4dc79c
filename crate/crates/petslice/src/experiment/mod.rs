//! Config-driven orchestration: the generate → preprocess → split → train →
//! score → evaluate pipeline for one experiment, a multi-seed grid runner,
//! and report comparison.
//!
//! Identity and location are kept apart. Everything that determines the
//! numbers — profiles, preprocessing, split, model, training, master seed —
//! is hashed into a 16-hex config hash that artifacts embed; output and
//! cache directories are invocation parameters that never enter the hash,
//! so the same experiment lands byte-identically wherever it is run.
//!
//! The master seed pins all downstream randomness through the documented
//! derivation `derive_seed(master_seed, stage_label)` with the stage labels
//! `"generate:internal"`, `"generate:external"`, `"split"`, `"model-init"`,
//! and `"train"`.
//!
//! Expensive stages are cached under a content-addressed directory per
//! stage (see [`stages`]); a grid shares one cache across its cells, so the
//! cohorts and packed datasets are generated once per master seed no matter
//! how many regimes train on them.

mod compare;
mod grid;
mod run;
mod stages;

pub use compare::{compare_reports, Comparison, ComparisonRow};
pub use grid::{
    default_cells, run_grid, CellSpec, GridConfig, GridOptions, GridSummary, MeanRow, SummaryRow,
};
pub use run::{run_experiment, RunOptions, RunSummary, Stage};

use crate::classifier::{ModelConfig, TrainConfig};
use crate::datasplit::{CenterPair, Regime, SplitKind, SplitSpec};
use crate::phantom::CenterProfile;
use crate::preprocess::InputMode;
use crate::seed::fnv1a64;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// The two imaging centers of one experiment. `internal` is the training
/// center under CAW and the first pooled center under CAG; `external` is
/// the other center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePair {
    pub internal: CenterProfile,
    pub external: CenterProfile,
}

impl ProfilePair {
    pub fn validate(&self) -> Result<()> {
        self.internal.validate()?;
        self.external.validate()?;
        if self.internal.name == self.external.name {
            return Err(Error::Config(format!(
                "the two centers must have distinct names, both are '{}'",
                self.internal.name
            )));
        }
        Ok(())
    }
}

/// Preprocessing surface: the channel stacking mode and the in-plane size
/// every slice is resized to, which is also the network input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessSettings {
    pub input_mode: InputMode,
    pub target: (usize, usize),
}

impl Default for PreprocessSettings {
    fn default() -> Self {
        PreprocessSettings {
            input_mode: InputMode::Ppp,
            target: (64, 64),
        }
    }
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_val_fraction() -> f64 {
    0.2
}

/// Split surface: granularity and regime plus the two split fractions
/// (defaults give the standard 80:20 split with an 80:20 train/val
/// sub-split). The split seed is derived, not configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSettings {
    pub split_kind: SplitKind,
    pub regime: Regime,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction_of_train: f64,
}

impl SplitSettings {
    /// The full spec for a given derived seed and center pair.
    pub fn to_spec(self, seed: u64, centers: CenterPair) -> SplitSpec {
        SplitSpec {
            split_kind: self.split_kind,
            regime: self.regime,
            train_fraction: self.train_fraction,
            val_fraction_of_train: self.val_fraction_of_train,
            seed,
            centers,
        }
    }
}

/// Training surface: [`TrainConfig`] minus the seed, which is derived from
/// the master seed instead of configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub lr: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub threshold: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let base = TrainConfig::default();
        TrainSettings {
            lr: base.lr,
            focal_alpha: base.focal_alpha,
            focal_gamma: base.focal_gamma,
            batch_size: base.batch_size,
            epochs: base.epochs,
            threshold: base.threshold,
        }
    }
}

impl TrainSettings {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            focal_alpha: self.focal_alpha,
            focal_gamma: self.focal_gamma,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            threshold: self.threshold,
        }
    }
}

/// Everything that determines one experiment, plus where to put it.
///
/// `out_dir` and `cache_dir` are locations, not identity: they are excluded
/// from both the config hash and the serialized echo, and are usually set
/// from the command line or by the grid runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub profiles: ProfilePair,
    #[serde(default)]
    pub preprocess: PreprocessSettings,
    pub split: SplitSettings,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
    /// Stage cache directory; defaults to `<out_dir>/cache`.
    #[serde(default, skip_serializing)]
    pub cache_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.profiles.validate()?;
        let (th, tw) = self.preprocess.target;
        if th < 8 || tw < 8 {
            return Err(Error::Config(format!(
                "preprocess target {th}x{tw} is below the 8x8 minimum"
            )));
        }
        if self.model.input_size != self.preprocess.target {
            return Err(Error::Config(format!(
                "model input size {:?} must equal the preprocess target {:?} \
                 (the network consumes the preprocessed slices)",
                self.model.input_size, self.preprocess.target
            )));
        }
        self.model.validate()?;
        // seed values are irrelevant to validity; zero stands in
        self.split
            .to_spec(0, self.center_pair())
            .validate()
            .map_err(|e| Error::Config(format!("split: {e}")))?;
        self.train
            .to_train_config(0)
            .validate()
            .map_err(|e| Error::Config(format!("train: {e}")))?;
        Ok(())
    }

    /// Center names in split order (internal, external).
    pub fn center_pair(&self) -> CenterPair {
        CenterPair {
            internal: self.profiles.internal.name.clone(),
            external: self.profiles.external.name.clone(),
        }
    }

    /// 16-hex FNV-1a hash of the canonical JSON form. Locations are
    /// skip-serialized, so two configs that differ only in where they write
    /// hash identically.
    pub fn config_hash(&self) -> Result<String> {
        Ok(hash_of_json(&serde_json::to_string(self)?))
    }
}

/// 16-hex FNV-1a of a canonical JSON string.
pub(crate) fn hash_of_json(json: &str) -> String {
    format!("{:016x}", fnv1a64(json.as_bytes()))
}
