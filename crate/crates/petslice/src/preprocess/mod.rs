//! Slice preprocessing: CT resampling, 3D median filtering, clipping and
//! normalization, resizing, channel stacking, and packed dataset assembly.
//!
//! Fixed order per volume: resample CT onto the PET geometry, median-filter
//! the CT, then per axial slice clip+normalize, resize, and stack channels.
//! Clipping happens before resizing so interpolation cannot dilute the clip
//! bounds.

mod dataset;
mod ops;

pub use dataset::{
    build_slice_dataset, CenterCount, DatasetManifest, PackedDataset, PatientRange, SampleRecord,
};
pub use ops::{
    assemble_input, median_filter_3d, normalize_ct_slice, normalize_pet_slice,
    resample_ct_to_pet, resize_slice,
};

use crate::nn::Matrix;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Channel stacking mode: three PET copies, or two PET plus the CT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum InputMode {
    Ppp,
    Ppc,
}

impl InputMode {
    /// Lowercase tag for file and directory names.
    pub fn tag(self) -> &'static str {
        match self {
            InputMode::Ppp => "ppp",
            InputMode::Ppc => "ppc",
        }
    }
}

impl std::str::FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ppp" => Ok(InputMode::Ppp),
            "ppc" => Ok(InputMode::Ppc),
            other => Err(Error::Config(format!(
                "unknown input mode {other:?} (expected PPP or PPC)"
            ))),
        }
    }
}

impl std::fmt::Display for InputMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InputMode::Ppp => "PPP",
            InputMode::Ppc => "PPC",
        })
    }
}

/// One network-ready axial slice: a 3-channel image in [0,1] plus its label
/// and bookkeeping identity.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSample {
    pub patient_id: String,
    pub center_id: String,
    pub slice_index: usize,
    /// Channel-major 3 x height x width values.
    pub input: Vec<f32>,
    pub height: usize,
    pub width: usize,
    pub label: u8,
    pub tumor_suvmax: Option<f32>,
    pub input_mode: InputMode,
}

impl SliceSample {
    pub fn validate(&self) -> Result<()> {
        let plane = self.height * self.width;
        if self.input.len() != 3 * plane {
            return Err(Error::shape(format!(
                "{} slice {}: input holds {} values, 3x{}x{} needs {}",
                self.patient_id,
                self.slice_index,
                self.input.len(),
                self.height,
                self.width,
                3 * plane
            )));
        }
        if self.input.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!(
                "{} slice {}: channel values escape [0,1]",
                self.patient_id, self.slice_index
            )));
        }
        if self.input_mode == InputMode::Ppp
            && (self.input[..plane] != self.input[plane..2 * plane]
                || self.input[..plane] != self.input[2 * plane..])
        {
            return Err(Error::invalid(format!(
                "{} slice {}: PPP channels differ",
                self.patient_id, self.slice_index
            )));
        }
        if self.label > 1 {
            return Err(Error::invalid(format!(
                "{} slice {}: label {} is not binary",
                self.patient_id, self.slice_index, self.label
            )));
        }
        Ok(())
    }
}

/// Lifts one axial plane of a grid into a Matrix (rows = y, cols = x).
pub(crate) fn plane_matrix(data: &[f32], nx: usize, ny: usize) -> Matrix<f32> {
    Matrix::from_vec(ny, nx, data.to_vec()).expect("plane length fixed by grid dims")
}

/// Preprocesses every axial slice of one patient volume.
pub fn preprocess_patient(
    vol: &crate::phantom::PatientVolume,
    mode: InputMode,
    target: (usize, usize),
) -> Result<Vec<SliceSample>> {
    vol.validate()?;
    let (nx, ny, nz) = vol.pet.dims();
    let ct = resample_ct_to_pet(&vol.ct, vol.spacing_mm, vol.pet.dims(), vol.spacing_mm)?;
    let ct = median_filter_3d(&ct, 5)?;
    let truth = crate::phantom::slice_ground_truth(vol);

    let mut samples = Vec::with_capacity(nz);
    for (k, t) in truth.iter().enumerate() {
        let pet_slice = normalize_pet_slice(&plane_matrix(vol.pet.slice_xy(k), nx, ny))?;
        let ct_slice = normalize_ct_slice(&plane_matrix(ct.slice_xy(k), nx, ny));
        let pet_slice = resize_slice(&pet_slice, target)?;
        let ct_slice = resize_slice(&ct_slice, target)?;
        let input = assemble_input(&pet_slice, &ct_slice, mode)?;
        let sample = SliceSample {
            patient_id: vol.patient_id.clone(),
            center_id: vol.center_id.clone(),
            slice_index: k,
            input,
            height: target.0,
            width: target.1,
            label: t.label,
            tumor_suvmax: t.tumor_suvmax,
            input_mode: mode,
        };
        sample.validate()?;
        samples.push(sample);
    }
    Ok(samples)
}
