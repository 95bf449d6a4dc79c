//! Evaluation suite: ROC/AUROC, PR/AUPRC, confusion matrices, the seven
//! binary metrics at set and patient level, SUVmax histograms, and the
//! sensitivity-vs-SUVmax sweep.
//!
//! Everything here is a pure function over an immutable [`ScoredSet`];
//! zero-denominator metrics are reported as explicit `None` ("undefined")
//! and excluded from macro-averages rather than silently substituted.

mod curves;
mod patient;
mod report;
mod suvmax;

pub use curves::{pr_auprc, roc_auroc, CurvePoint};
pub use patient::{per_patient_metrics, MacroAverage, PatientEval, PerPatientReport};
pub use report::{
    evaluate, write_curve_csv, write_sweep_csv, EvalOptions, EvalReport, SCHEMA_VERSION,
};
pub use suvmax::{
    sensitivity_suvmax_sweep, tp_fn_suvmax_histogram, SuvmaxBin, SuvmaxHistogram, SweepPoint,
};

use crate::classifier::ScoreRow;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// A validated collection of scored samples together with the decision
/// threshold that produced the recorded predictions.
///
/// Construction enforces the data-integrity invariants every metric relies
/// on: probabilities in [0,1], labels and predictions binary, predictions
/// consistent with `p >= threshold`, and a tumor SUVmax present exactly on
/// the positive rows.
#[derive(Debug, Clone)]
pub struct ScoredSet {
    rows: Vec<ScoreRow>,
    threshold: f64,
}

impl ScoredSet {
    pub fn new(rows: Vec<ScoreRow>, threshold: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("scored set holds no rows"));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::invalid(format!(
                "threshold must lie in (0,1), got {threshold}"
            )));
        }
        for r in &rows {
            let id = &r.sample_id;
            if r.patient_id().is_empty() {
                return Err(Error::invalid(format!("row {id:?} has an empty patient id")));
            }
            if !r.p.is_finite() || !(0.0..=1.0).contains(&r.p) {
                return Err(Error::invalid(format!(
                    "row {id:?} has probability {} outside [0,1]",
                    r.p
                )));
            }
            if r.label > 1 {
                return Err(Error::invalid(format!("row {id:?} has label {}", r.label)));
            }
            if r.pred != u8::from(r.p >= threshold) {
                return Err(Error::invalid(format!(
                    "row {id:?}: pred {} disagrees with p {} at threshold {threshold}",
                    r.pred, r.p
                )));
            }
            match (r.label, r.tumor_suvmax) {
                (1, None) => {
                    return Err(Error::invalid(format!(
                        "positive row {id:?} is missing its tumor SUVmax"
                    )));
                }
                (0, Some(_)) => {
                    return Err(Error::invalid(format!(
                        "negative row {id:?} carries a tumor SUVmax"
                    )));
                }
                _ => {}
            }
            if let Some(s) = r.tumor_suvmax {
                if !s.is_finite() || s <= 0.0 {
                    return Err(Error::invalid(format!(
                        "row {id:?} has a non-positive tumor SUVmax {s}"
                    )));
                }
            }
        }
        Ok(Self { rows, threshold })
    }

    pub fn rows(&self) -> &[ScoreRow] {
        &self.rows
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.rows.iter().filter(|r| r.label == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }
}

/// Binary confusion counts. `fn_` is the false-negative count (`fn` is a
/// reserved word).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn count(&mut self, pred: u8, label: u8) {
        match (pred, label) {
            (1, 1) => self.tp += 1,
            (1, 0) => self.fp += 1,
            (0, 0) => self.tn += 1,
            _ => self.fn_ += 1,
        }
    }

    #[cfg(test)]
    fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

/// Tallies (pred, label) pairs over the whole set.
pub fn confusion_matrix(scored: &ScoredSet) -> Confusion {
    let mut c = Confusion::default();
    for r in scored.rows() {
        c.count(r.pred, r.label);
    }
    c
}

/// The seven threshold-dependent metrics. A `None` marks a metric whose
/// denominator is zero for the given confusion counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub npv: Option<f64>,
    pub accuracy: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub f1: Option<f64>,
}

impl BinaryMetrics {
    pub const NAMES: [&'static str; 7] = [
        "sensitivity",
        "specificity",
        "precision",
        "npv",
        "accuracy",
        "balanced_accuracy",
        "f1",
    ];

    /// Values in the same order as [`Self::NAMES`].
    pub fn values(&self) -> [Option<f64>; 7] {
        [
            self.sensitivity,
            self.specificity,
            self.precision,
            self.npv,
            self.accuracy,
            self.balanced_accuracy,
            self.f1,
        ]
    }
}

/// Evaluates the metric formulas over confusion counts; zero-denominator
/// metrics come back as `None` rather than a substituted value.
pub fn binary_metrics(c: &Confusion) -> BinaryMetrics {
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let specificity = ratio(c.tn, c.tn + c.fp);
    BinaryMetrics {
        sensitivity,
        specificity,
        precision: ratio(c.tp, c.tp + c.fp),
        npv: ratio(c.tn, c.tn + c.fn_),
        accuracy: ratio(c.tp + c.tn, c.total()),
        balanced_accuracy: sensitivity.zip(specificity).map(|(se, sp)| (se + sp) / 2.0),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    }
}
