//! In-memory slice sets: the material the training loop and scorer consume.

use crate::datasplit::SampleId;
use crate::nn::Tensor4;
use crate::{Error, Result};

/// One labeled slice with its flattened channel-major input tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub sample_id: SampleId,
    pub center_id: String,
    pub label: u8,
    pub tumor_suvmax: Option<f32>,
    pub input: Vec<f32>,
}

/// A uniformly-shaped collection of samples (3 channels, `height`×`width`).
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSet {
    pub samples: Vec<TrainSample>,
    pub height: usize,
    pub width: usize,
}

impl SliceSet {
    pub fn new(samples: Vec<TrainSample>, height: usize, width: usize) -> Result<Self> {
        let set = SliceSet {
            samples,
            height,
            width,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let want = 3 * self.height * self.width;
        for s in &self.samples {
            if s.input.len() != want {
                return Err(Error::shape(format!(
                    "sample ({}, {}): input holds {} values, expected {want}",
                    s.sample_id.patient_id(),
                    s.sample_id.slice_index(),
                    s.input.len()
                )));
            }
            if s.label > 1 {
                return Err(Error::invalid(format!(
                    "sample ({}, {}): label {} is not binary",
                    s.sample_id.patient_id(),
                    s.sample_id.slice_index(),
                    s.label
                )));
            }
            if s.tumor_suvmax.is_some() != (s.label == 1) {
                return Err(Error::invalid(format!(
                    "sample ({}, {}): tumor_suvmax must be present exactly for positives",
                    s.sample_id.patient_id(),
                    s.sample_id.slice_index()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stacks the samples at `indices` into an (N, 3, H, W) batch tensor
    /// with their labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor4<f32>, Vec<u8>)> {
        let mut data = Vec::with_capacity(indices.len() * 3 * self.height * self.width);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self
                .samples
                .get(i)
                .ok_or_else(|| Error::invalid(format!("batch index {i} out of range")))?;
            data.extend_from_slice(&s.input);
            labels.push(s.label);
        }
        let x = Tensor4::from_vec(indices.len(), 3, self.height, self.width, data)?;
        Ok((x, labels))
    }
}
