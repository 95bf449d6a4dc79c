//! Patient-level metrics: each patient's slices scored as their own little
//! confusion matrix, then macro-averaged over the patients for whom a
//! metric is defined.

use super::{binary_metrics, BinaryMetrics, Confusion, ScoredSet};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One patient's confusion counts and metrics over their slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientEval {
    pub confusion: Confusion,
    pub metrics: BinaryMetrics,
}

/// Mean of a metric over the patients where it is defined, plus the
/// bookkeeping that says how many were averaged and how many were excluded
/// for a zero denominator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroAverage {
    pub mean: Option<f64>,
    pub defined: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerPatientReport {
    pub patients: BTreeMap<String, PatientEval>,
    /// Keyed by metric name; exclusion counts make the undefined cases
    /// visible instead of silently shrinking the average.
    pub macro_averages: BTreeMap<String, MacroAverage>,
}

/// Groups the set by patient id, evaluates each patient separately, and
/// macro-averages every metric over the patients where it is defined.
pub fn per_patient_metrics(scored: &ScoredSet) -> PerPatientReport {
    let mut confusions: BTreeMap<String, Confusion> = BTreeMap::new();
    for r in scored.rows() {
        confusions
            .entry(r.patient_id().to_string())
            .or_default()
            .count(r.pred, r.label);
    }
    let patients: BTreeMap<String, PatientEval> = confusions
        .into_iter()
        .map(|(id, confusion)| {
            let metrics = binary_metrics(&confusion);
            (id, PatientEval { confusion, metrics })
        })
        .collect();

    let n = patients.len();
    let mut macro_averages = BTreeMap::new();
    for (i, name) in BinaryMetrics::NAMES.iter().enumerate() {
        let values: Vec<f64> =
            patients.values().filter_map(|p| p.metrics.values()[i]).collect();
        let mean = (!values.is_empty())
            .then(|| values.iter().sum::<f64>() / values.len() as f64);
        macro_averages.insert(
            name.to_string(),
            MacroAverage { mean, defined: values.len(), excluded: n - values.len() },
        );
    }
    PerPatientReport { patients, macro_averages }
}

#[cfg(test)]
mod tests {
    use super::super::tests::{random_set, row};
    use super::super::{confusion_matrix, ScoredSet};
    use super::*;

    #[test]
    fn single_patient_set_reduces_to_set_level_metrics() {
        let rows = vec![
            row("solo", 0, 0.9, 1),
            row("solo", 1, 0.3, 1),
            row("solo", 2, 0.7, 0),
            row("solo", 3, 0.1, 0),
        ];
        let set = ScoredSet::new(rows, 0.5).unwrap();
        let report = per_patient_metrics(&set);
        assert_eq!(report.patients.len(), 1);
        let solo = &report.patients["solo"];
        assert_eq!(solo.confusion, confusion_matrix(&set));
        assert_eq!(solo.metrics, binary_metrics(&confusion_matrix(&set)));
        for avg in report.macro_averages.values() {
            assert_eq!(avg.defined + avg.excluded, 1);
        }
        assert_eq!(
            report.macro_averages["sensitivity"].mean,
            solo.metrics.sensitivity
        );
    }

    #[test]
    fn all_negative_patients_are_excluded_from_the_sensitivity_average() {
        let rows = vec![
            // Patient with positives: sensitivity 1.0.
            row("has_tumor", 0, 0.9, 1),
            row("has_tumor", 1, 0.2, 0),
            // Patient without positives: sensitivity undefined.
            row("clean", 0, 0.1, 0),
            row("clean", 1, 0.6, 0),
        ];
        let report = per_patient_metrics(&ScoredSet::new(rows, 0.5).unwrap());
        assert_eq!(report.patients["clean"].metrics.sensitivity, None);
        let avg = &report.macro_averages["sensitivity"];
        assert_eq!(avg.mean, Some(1.0), "only the tumor patient contributes");
        assert_eq!((avg.defined, avg.excluded), (1, 1));
        // Specificity is defined for both patients here.
        let spec = &report.macro_averages["specificity"];
        assert_eq!((spec.defined, spec.excluded), (2, 0));
    }

    #[test]
    fn two_patient_set_matches_evaluating_each_patient_separately() {
        let set = random_set(31, 40); // random_set spreads rows over 7 patients
        let report = per_patient_metrics(&set);
        for (id, eval) in &report.patients {
            let own: Vec<_> = set
                .rows()
                .iter()
                .filter(|r| r.patient_id() == id)
                .cloned()
                .collect();
            let own_set = ScoredSet::new(own, set.threshold()).unwrap();
            assert_eq!(eval.confusion, confusion_matrix(&own_set), "patient {id}");
            assert_eq!(eval.metrics, binary_metrics(&confusion_matrix(&own_set)));
        }
    }

    #[test]
    fn per_patient_confusions_sum_to_the_set_confusion() {
        for seed in 600..630 {
            let set = random_set(seed, 90);
            let report = per_patient_metrics(&set);
            let mut total = Confusion::default();
            for eval in report.patients.values() {
                total.add(&eval.confusion);
            }
            assert_eq!(total, confusion_matrix(&set));
        }
    }

    #[test]
    fn macro_average_is_the_plain_mean_of_defined_values() {
        let set = random_set(64, 70);
        let report = per_patient_metrics(&set);
        for (i, name) in BinaryMetrics::NAMES.iter().enumerate() {
            let values: Vec<f64> = report
                .patients
                .values()
                .filter_map(|p| p.metrics.values()[i])
                .collect();
            let avg = &report.macro_averages[*name];
            assert_eq!(avg.defined, values.len());
            assert_eq!(avg.defined + avg.excluded, report.patients.len());
            match avg.mean {
                Some(mean) => {
                    let expected = values.iter().sum::<f64>() / values.len() as f64;
                    assert_eq!(mean, expected, "{name}");
                }
                None => assert!(values.is_empty(), "{name}"),
            }
        }
    }
}
