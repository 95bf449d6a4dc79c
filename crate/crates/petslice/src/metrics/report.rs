//! The full evaluation report: every metric the suite computes, bundled
//! with the provenance fields downstream comparison tooling checks.

use super::{
    binary_metrics, confusion_matrix, per_patient_metrics, pr_auprc, roc_auroc,
    sensitivity_suvmax_sweep, tp_fn_suvmax_histogram, BinaryMetrics, Confusion, CurvePoint,
    PerPatientReport, ScoredSet, SuvmaxHistogram, SweepPoint,
};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Bumped whenever the report layout changes; comparisons refuse to mix
/// versions.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// SUVmax histogram bucket width.
    pub bin_width: f64,
    /// Hash of the configuration that produced the scores, echoed into the
    /// report so artifacts from different configs cannot be confused.
    pub config_hash: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { bin_width: 1.0, config_hash: String::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub threshold: f64,
    pub n_rows: usize,
    pub n_positives: usize,
    pub n_negatives: usize,
    pub auroc: f64,
    pub auprc: f64,
    pub confusion: Confusion,
    pub metrics: BinaryMetrics,
    pub per_patient: PerPatientReport,
    pub suvmax_hist: SuvmaxHistogram,
    pub sensitivity_sweep: Vec<SweepPoint>,
    pub roc_points: Vec<CurvePoint>,
    pub pr_points: Vec<CurvePoint>,
}

/// Runs the whole evaluation suite over one scored set.
///
/// Inherits the preconditions of its parts: both classes present (ROC) and
/// at least two positives (sensitivity sweep).
pub fn evaluate(scored: &ScoredSet, options: &EvalOptions) -> Result<EvalReport> {
    let (roc_points, auroc) = roc_auroc(scored)?;
    let (pr_points, auprc) = pr_auprc(scored)?;
    let confusion = confusion_matrix(scored);
    Ok(EvalReport {
        schema_version: SCHEMA_VERSION,
        config_hash: options.config_hash.clone(),
        threshold: scored.threshold(),
        n_rows: scored.len(),
        n_positives: scored.positives(),
        n_negatives: scored.negatives(),
        auroc,
        auprc,
        metrics: binary_metrics(&confusion),
        confusion,
        per_patient: per_patient_metrics(scored),
        suvmax_hist: tp_fn_suvmax_histogram(scored, options.bin_width)?,
        sensitivity_sweep: sensitivity_suvmax_sweep(scored)?,
        roc_points,
        pr_points,
    })
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Format(format!("cannot read report {}: {e}", path.display())))?;
        let report: EvalReport = serde_json::from_str(&text)?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "report {} has schema version {}, this build reads {SCHEMA_VERSION}",
                path.display(),
                report.schema_version
            )));
        }
        Ok(report)
    }
}

/// Writes a curve as `threshold,x,y` rows for external plotting.
pub fn write_curve_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = String::from("threshold,x,y\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.x, p.y));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes the sensitivity sweep as `u,subset_size,sensitivity` rows.
pub fn write_sweep_csv(path: &Path, sweep: &[SweepPoint]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = String::from("u,subset_size,sensitivity\n");
    for p in sweep {
        out.push_str(&format!("{},{},{}\n", p.u, p.subset_size, p.sensitivity));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::tests::random_set;
    use super::*;

    fn options() -> EvalOptions {
        EvalOptions { bin_width: 1.0, config_hash: "deadbeef".to_string() }
    }

    #[test]
    fn report_agrees_with_its_component_computations() {
        let set = random_set(42, 150);
        let report = evaluate(&set, &options()).unwrap();
        assert_eq!(report.schema_version, SCHEMA_VERSION);
        assert_eq!(report.config_hash, "deadbeef");
        assert_eq!(report.threshold, 0.5);
        assert_eq!(report.n_rows, set.len());
        assert_eq!(report.n_positives + report.n_negatives, set.len());
        assert_eq!(report.confusion.total(), set.len());
        assert_eq!(report.auroc, roc_auroc(&set).unwrap().1);
        assert_eq!(report.auprc, pr_auprc(&set).unwrap().1);
        assert_eq!(report.confusion, confusion_matrix(&set));
        assert_eq!(report.metrics, binary_metrics(&report.confusion));
        assert_eq!(report.per_patient, per_patient_metrics(&set));
        assert!((0.0..=1.0).contains(&report.auroc));
        assert!((0.0..=1.0).contains(&report.auprc));
        for v in report.metrics.values().into_iter().flatten() {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn report_round_trips_through_json_byte_identically() {
        let dir = tempdir("roundtrip");
        let set = random_set(43, 120);
        let report = evaluate(&set, &options()).unwrap();
        let path = dir.join("report.json");
        report.save(&path).unwrap();
        let loaded = EvalReport::load(&path).unwrap();
        assert_eq!(loaded, report);
        let first = fs::read(&path).unwrap();
        loaded.save(&path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first, "resaving is byte-identical");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn mismatched_schema_versions_are_refused() {
        let dir = tempdir("schema");
        let set = random_set(44, 60);
        let mut report = evaluate(&set, &options()).unwrap();
        report.schema_version = SCHEMA_VERSION + 1;
        let path = dir.join("future.json");
        report.save(&path).unwrap();
        let err = EvalReport::load(&path).unwrap_err().to_string();
        assert!(err.contains("schema version"), "{err}");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn curve_and_sweep_csvs_have_headers_and_one_row_per_point() {
        let dir = tempdir("csv");
        let set = random_set(45, 100);
        let report = evaluate(&set, &options()).unwrap();

        let roc = dir.join("roc.csv");
        write_curve_csv(&roc, &report.roc_points).unwrap();
        let text = fs::read_to_string(&roc).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "threshold,x,y");
        assert_eq!(lines.len(), 1 + report.roc_points.len());
        // Every value round-trips through its textual form.
        let fields: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(fields[0], report.roc_points[0].threshold);
        assert_eq!(fields[1], report.roc_points[0].x);
        assert_eq!(fields[2], report.roc_points[0].y);

        let sweep = dir.join("sweep.csv");
        write_sweep_csv(&sweep, &report.sensitivity_sweep).unwrap();
        let text = fs::read_to_string(&sweep).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "u,subset_size,sensitivity");
        assert_eq!(lines.len(), 1 + report.sensitivity_sweep.len());
        fs::remove_dir_all(&dir).unwrap();
    }

    fn tempdir(tag: &str) -> std::path::PathBuf {
        let dir =
            std::env::temp_dir().join(format!("petslice_report_{tag}_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }
}
