//! Eval-mode prediction and dataset scoring, plus the scores CSV format.

use super::{Model, SliceSet};
use crate::datasplit::SampleId;
use crate::nn::{BnMode, Tensor4};
use crate::{Error, Result};
use std::fs;
use std::path::Path;

const SCORE_BATCH: usize = 64;
const SCORES_HEADER: &str = "sample_id,patient_id,center_id,p,pred,label,tumor_suvmax";

/// One scored sample: predicted probability and label alongside the ground
/// truth the evaluation suite needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub sample_id: SampleId,
    pub center_id: String,
    pub p: f64,
    pub pred: u8,
    pub label: u8,
    pub tumor_suvmax: Option<f32>,
}

impl ScoreRow {
    pub fn patient_id(&self) -> &str {
        self.sample_id.patient_id()
    }
}

/// The decision rule: positive exactly when p reaches the threshold
/// (boundary inclusive on the positive side).
pub(super) fn decide(p: f64, threshold: f64) -> u8 {
    u8::from(p >= threshold)
}

/// Stable probability from a logit, computed in double precision.
fn probability(z: f32) -> f64 {
    crate::nn::sigmoid(z as f64)
}

/// Scores a single sample in eval mode: probability and thresholded label.
pub fn predict(model: &mut Model<f32>, input: &[f32], threshold: f64) -> Result<(f64, u8)> {
    let (h, w) = model.config().input_size;
    if input.len() != 3 * h * w {
        return Err(Error::shape(format!(
            "predict: input holds {} values, model expects {}",
            input.len(),
            3 * h * w
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!(
            "threshold must lie in (0,1), got {threshold}"
        )));
    }
    let x = Tensor4::from_vec(1, 3, h, w, input.to_vec())?;
    let z = model.forward(&x, BnMode::Eval)?[0];
    let p = probability(z);
    Ok((p, decide(p, threshold)))
}

/// Scores every sample of a set in eval mode. Output rows are ordered by
/// sample id and rescoring is bit-identical (eval mode is pure).
pub fn score_dataset(
    model: &mut Model<f32>,
    set: &SliceSet,
    threshold: f64,
) -> Result<Vec<ScoreRow>> {
    set.validate()?;
    if (set.height, set.width) != model.config().input_size {
        return Err(Error::shape(format!(
            "set is {}x{}, model expects {}x{}",
            set.height,
            set.width,
            model.config().input_size.0,
            model.config().input_size.1
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!(
            "threshold must lie in (0,1), got {threshold}"
        )));
    }
    let mut rows = Vec::with_capacity(set.len());
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(SCORE_BATCH) {
        let (x, _) = set.batch(chunk)?;
        let logits = model.forward(&x, BnMode::Eval)?;
        for (&i, &z) in chunk.iter().zip(&logits) {
            let s = &set.samples[i];
            let p = probability(z);
            rows.push(ScoreRow {
                sample_id: s.sample_id.clone(),
                center_id: s.center_id.clone(),
                p,
                pred: decide(p, threshold),
                label: s.label,
                tumor_suvmax: s.tumor_suvmax,
            });
        }
    }
    rows.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(rows)
}

/// Writes scores as CSV: sample_id, patient_id, center_id, p, pred, label,
/// tumor_suvmax (empty for negatives). Probabilities use the shortest
/// round-trip decimal form, so nothing is lost.
pub fn write_scores_csv(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = String::from(SCORES_HEADER);
    out.push('\n');
    for r in rows {
        let suvmax = r.tumor_suvmax.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{}:{},{},{},{},{},{},{}\n",
            r.sample_id.patient_id(),
            r.sample_id.slice_index(),
            r.sample_id.patient_id(),
            r.center_id,
            r.p,
            r.pred,
            r.label,
            suvmax
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a scores CSV back into rows. Lines starting with `#` (provenance
/// comments prepended by the experiment harness) are skipped.
pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#'));
    let header = lines.next().map(|(_, l)| l).unwrap_or_default();
    if header != SCORES_HEADER {
        return Err(Error::Format(format!(
            "{}: unexpected header '{header}'",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| {
            Error::Format(format!(
                "{} line {}: {what} in '{line}'",
                path.display(),
                lineno + 1
            ))
        };
        if fields.len() != 7 {
            return Err(bad("expected 7 fields"));
        }
        let (patient, idx) = fields[0]
            .rsplit_once(':')
            .ok_or_else(|| bad("malformed sample id"))?;
        if patient != fields[1] {
            return Err(bad("sample id and patient_id disagree"));
        }
        let slice_index: usize = idx.parse().map_err(|_| bad("bad slice index"))?;
        let p: f64 = fields[3].parse().map_err(|_| bad("bad probability"))?;
        let pred: u8 = fields[4].parse().map_err(|_| bad("bad pred"))?;
        let label: u8 = fields[5].parse().map_err(|_| bad("bad label"))?;
        let tumor_suvmax = if fields[6].is_empty() {
            None
        } else {
            Some(fields[6].parse().map_err(|_| bad("bad tumor_suvmax"))?)
        };
        rows.push(ScoreRow {
            sample_id: SampleId(patient.to_string(), slice_index),
            center_id: fields[2].to_string(),
            p,
            pred,
            label,
            tumor_suvmax,
        });
    }
    Ok(rows)
}
