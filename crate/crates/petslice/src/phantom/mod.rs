//! Synthetic multi-center PET/CT cohorts with planted tumors, simulated
//! raters, and STAPLE fusion.
//!
//! Each patient is a parametric phantom: an elliptical body with lung-like
//! low-HU regions and hot brain/bladder analogs, plus a patient-unique
//! low-frequency texture that recurs on every axial slice. Tumors are
//! flat-top ellipsoids with a Gaussian shoulder, planted to hit per-center
//! targets for positive-slice fraction and total metabolic tumor volume.

mod generate;
mod grid;
mod io;
mod staple;

pub use generate::{
    generate_cohort, mask_dilation_mm, plant_tumor, slice_ground_truth, tmtv, SliceTruth,
    MASK_THRESHOLD_FRACTION,
};
pub use grid::Grid3;
pub use io::{
    load_manifest, load_patient, save_cohort, save_manifest, save_patient, PatientFiles,
    PatientRecord, VolumeHeader,
};
pub use staple::{simulate_raters, staple_fuse, StapleResult};

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

fn default_dims() -> (usize, usize, usize) {
    (64, 64, 96)
}

fn default_spacing() -> (f64, f64, f64) {
    (4.0, 4.0, 4.0)
}

/// Generation parameters for one imaging center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterProfile {
    pub name: String,
    pub n_patients: usize,
    /// Mean and hard maximum of the per-patient tumor count (minimum is 1:
    /// every patient carries at least one tumor).
    pub tumor_count_mean: f64,
    pub tumor_count_max: usize,
    /// Mean and full range (max minus min) of the per-patient TMTV draw, ml.
    pub tmtv_mean_ml: f64,
    pub tmtv_range_ml: f64,
    /// Log-normal parameters (mu, sigma of ln SUV) for tumor SUVmax.
    pub suvmax_ln_mu: f64,
    pub suvmax_ln_sigma: f64,
    /// Seed for the per-patient anatomy signatures and the center-wide
    /// appearance style (scanner look).
    pub background_organ_pattern: u64,
    /// Target fraction of positive axial slices over the whole cohort.
    pub target_positive_fraction: f64,
    #[serde(default = "default_dims")]
    pub dims: (usize, usize, usize),
    #[serde(default = "default_spacing")]
    pub spacing_mm: (f64, f64, f64),
}

impl CenterProfile {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::InvalidProfile("center name is empty".into()));
        }
        if self.n_patients == 0 {
            return Err(Error::InvalidProfile(format!(
                "{}: n_patients must be >= 1",
                self.name
            )));
        }
        if !(self.target_positive_fraction > 0.0 && self.target_positive_fraction < 1.0) {
            return Err(Error::InvalidProfile(format!(
                "{}: target_positive_fraction {} outside (0,1)",
                self.name, self.target_positive_fraction
            )));
        }
        if self.tumor_count_max < 1 || self.tumor_count_mean < 1.0 {
            return Err(Error::InvalidProfile(format!(
                "{}: every patient has at least one tumor; count mean {} max {} would \
                 allow zero",
                self.name, self.tumor_count_mean, self.tumor_count_max
            )));
        }
        if self.tmtv_mean_ml <= 0.0 || self.tmtv_range_ml <= 0.0 {
            return Err(Error::InvalidProfile(format!(
                "{}: TMTV mean {} and range {} must be positive",
                self.name, self.tmtv_mean_ml, self.tmtv_range_ml
            )));
        }
        if self.suvmax_ln_sigma < 0.0 {
            return Err(Error::InvalidProfile(format!(
                "{}: suvmax_ln_sigma {} must be >= 0",
                self.name, self.suvmax_ln_sigma
            )));
        }
        let (nx, ny, nz) = self.dims;
        if nx < 16 || ny < 16 || nz < 16 {
            return Err(Error::InvalidProfile(format!(
                "{}: volume dims {:?} too small (need >= 16 per axis)",
                self.name, self.dims
            )));
        }
        let (sx, sy, sz) = self.spacing_mm;
        if sx <= 0.0 || sy <= 0.0 || sz <= 0.0 {
            return Err(Error::InvalidProfile(format!(
                "{}: spacing {:?} must be positive",
                self.name, self.spacing_mm
            )));
        }
        Ok(())
    }

    /// Small-hospital style cohort: ~8% positive slices, mean 3 tumors,
    /// mean TMTV 119.25 ml.
    pub fn center_a(n_patients: usize) -> Self {
        CenterProfile {
            name: "center_a".into(),
            n_patients,
            tumor_count_mean: 3.0,
            tumor_count_max: 10,
            tmtv_mean_ml: 119.25,
            tmtv_range_ml: 90.0,
            suvmax_ln_mu: 1.9459, // median ~7 SUV
            suvmax_ln_sigma: 0.45,
            background_organ_pattern: 11,
            target_positive_fraction: 0.08,
            dims: default_dims(),
            spacing_mm: default_spacing(),
        }
    }

    /// Larger-hospital style cohort: ~21% positive slices, mean 11 tumors,
    /// mean TMTV 488.43 ml.
    pub fn center_b(n_patients: usize) -> Self {
        CenterProfile {
            name: "center_b".into(),
            n_patients,
            tumor_count_mean: 11.0,
            tumor_count_max: 128,
            tmtv_mean_ml: 488.43,
            tmtv_range_ml: 300.0,
            suvmax_ln_mu: 2.1972, // median ~9 SUV
            suvmax_ln_sigma: 0.5,
            background_organ_pattern: 47,
            target_positive_fraction: 0.21,
            dims: default_dims(),
            spacing_mm: default_spacing(),
        }
    }
}

/// One synthetic patient: PET in SUV_bw, CT in HU, and the tumor mask, all
/// on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientVolume {
    pub patient_id: String,
    pub center_id: String,
    pub pet: Grid3<f32>,
    pub ct: Grid3<f32>,
    pub spacing_mm: (f64, f64, f64),
    pub tumor_mask: Grid3<u8>,
}

impl PatientVolume {
    /// Checks the cross-field invariants: aligned dims, PET >= 0, binary mask.
    pub fn validate(&self) -> Result<()> {
        if self.pet.dims() != self.ct.dims() || self.pet.dims() != self.tumor_mask.dims() {
            return Err(Error::shape(format!(
                "{}: pet {:?}, ct {:?}, mask {:?} dims differ",
                self.patient_id,
                self.pet.dims(),
                self.ct.dims(),
                self.tumor_mask.dims()
            )));
        }
        if self.pet.data().iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::invalid(format!(
                "{}: PET contains negative or non-finite values",
                self.patient_id
            )));
        }
        if self.tumor_mask.data().iter().any(|&v| v > 1) {
            return Err(Error::invalid(format!(
                "{}: tumor mask is not binary",
                self.patient_id
            )));
        }
        Ok(())
    }
}

/// One planted tumor: flat-top ellipsoid of the given semi-axes peaking at
/// `suv_max`, with a Gaussian shoulder of width `falloff_mm` outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct TumorSpec {
    pub center_voxel: (usize, usize, usize),
    pub radii_mm: (f64, f64, f64),
    pub suv_max: f64,
    pub falloff_mm: f64,
}

/// Per-rater corruption parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaterNoise {
    pub boundary_jitter_mm: f64,
    pub flip_rate: f64,
}

/// Simulated annotations from several raters over one ground-truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RaterMaskSet {
    pub masks: Vec<Grid3<u8>>,
    pub rater_noise: Vec<RaterNoise>,
}

impl RaterMaskSet {
    pub fn validate(&self) -> Result<()> {
        if self.masks.is_empty() {
            return Err(Error::invalid("rater mask set has no raters"));
        }
        let dims = self.masks[0].dims();
        if self.masks.iter().any(|m| m.dims() != dims) {
            return Err(Error::shape("rater masks have differing dims"));
        }
        Ok(())
    }
}
