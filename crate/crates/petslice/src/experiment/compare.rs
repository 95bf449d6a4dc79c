//! Side-by-side comparison of evaluation reports.
//!
//! Loads two or more `report.json` files, refuses to mix reports produced
//! under different configurations (unless forced), and tabulates every
//! scalar metric with deltas against the first report.

use crate::metrics::{BinaryMetrics, EvalReport};
use crate::{Error, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};

/// One report's column in the comparison: its label (the path, shortened by
/// the directory prefix shared with the other reports), configuration hash,
/// metric values, and deltas against the first report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub config_hash: String,
    /// One entry per metric in [`Comparison::metrics`] order; `None` where
    /// the metric is undefined for that report.
    pub values: Vec<Option<f64>>,
    /// `value - first_report_value` per metric; `None` unless both sides
    /// are defined. The first row's deltas are zero where defined.
    pub deltas: Vec<Option<f64>>,
}

/// A finished comparison: metric names plus one row per report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub metrics: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Loads and compares evaluation reports. The first path is the baseline
/// for deltas. Reports whose configuration hashes differ are rejected
/// unless `force` is set.
pub fn compare_reports(paths: &[PathBuf], force: bool) -> Result<Comparison> {
    if paths.len() < 2 {
        return Err(Error::InvalidArg(
            "comparing reports takes at least two report paths".into(),
        ));
    }
    let reports: Vec<EvalReport> = paths
        .iter()
        .map(|p| EvalReport::load(p))
        .collect::<Result<_>>()?;

    let mut hashes: Vec<&str> = reports.iter().map(|r| r.config_hash.as_str()).collect();
    hashes.sort_unstable();
    hashes.dedup();
    if hashes.len() > 1 && !force {
        return Err(Error::InvalidArg(format!(
            "reports come from different configurations ({}); \
             pass --force to compare anyway",
            hashes.join(", ")
        )));
    }

    let metrics: Vec<String> = ["auroc", "auprc"]
        .into_iter()
        .chain(BinaryMetrics::NAMES.iter().copied())
        .map(str::to_string)
        .collect();
    let baseline = values_of(&reports[0]);
    let labels = short_labels(paths);
    let rows = reports
        .iter()
        .zip(labels)
        .map(|(report, label)| {
            let values = values_of(report);
            let deltas = values
                .iter()
                .zip(&baseline)
                .map(|(v, b)| Some(v.as_ref()? - b.as_ref()?))
                .collect();
            ComparisonRow {
                label,
                config_hash: report.config_hash.clone(),
                values,
                deltas,
            }
        })
        .collect();
    Ok(Comparison { metrics, rows })
}

/// Metric values in [`Comparison::metrics`] order. AUROC and AUPRC are
/// always defined; the thresholded metrics may not be.
fn values_of(report: &EvalReport) -> Vec<Option<f64>> {
    [Some(report.auroc), Some(report.auprc)]
        .into_iter()
        .chain(report.metrics.values())
        .collect()
}

/// Shortens paths by their longest common directory prefix, so reports from
/// sibling experiment directories come out as e.g. `slice_caw/.../report.json`
/// vs `patient_cag/.../report.json`.
fn short_labels(paths: &[PathBuf]) -> Vec<String> {
    let mut prefix: Option<&Path> = paths[0].parent();
    for path in &paths[1..] {
        while let Some(p) = prefix {
            if path.starts_with(p) {
                break;
            }
            prefix = p.parent();
        }
    }
    paths
        .iter()
        .map(|path| {
            let short = prefix.and_then(|p| path.strip_prefix(p).ok()).unwrap_or(path);
            short.display().to_string()
        })
        .collect()
}

fn fmt_value(v: &Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "-".to_string(),
    }
}

fn fmt_delta(v: &Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:+.4}"),
        None => "-".to_string(),
    }
}

impl Comparison {
    /// Two fixed-width tables: metric values per report, then deltas
    /// against the first report.
    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .max()
            .unwrap_or(0)
            .max("report".len());
        let mut text = format!("{:<width$}", "report");
        for m in &self.metrics {
            text.push_str(&format!(" {m:>17}"));
        }
        text.push('\n');
        for row in &self.rows {
            text.push_str(&format!("{:<width$}", row.label));
            for v in &row.values {
                text.push_str(&format!(" {:>17}", fmt_value(v)));
            }
            text.push('\n');
        }
        text.push_str(&format!("\ndeltas vs {}:\n", self.rows[0].label));
        for row in &self.rows[1..] {
            text.push_str(&format!("{:<width$}", row.label));
            for d in &row.deltas {
                text.push_str(&format!(" {:>17}", fmt_delta(d)));
            }
            text.push('\n');
        }
        text
    }

    /// Long-format CSV: one line per (report, metric). Undefined values
    /// are left empty.
    pub fn to_csv(&self) -> String {
        let mut csv = String::from("label,config_hash,metric,value,delta_vs_first\n");
        for row in &self.rows {
            for ((metric, value), delta) in
                self.metrics.iter().zip(&row.values).zip(&row.deltas)
            {
                let value = value.map(|v| v.to_string()).unwrap_or_default();
                let delta = delta.map(|d| d.to_string()).unwrap_or_default();
                csv.push_str(&format!(
                    "{},{},{metric},{value},{delta}\n",
                    row.label, row.config_hash
                ));
            }
        }
        csv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ScoreRow;
    use crate::datasplit::SampleId;
    use crate::metrics::{evaluate, EvalOptions, ScoredSet};
    use std::fs;

    fn tempdir(tag: &str) -> PathBuf {
        let dir =
            std::env::temp_dir().join(format!("petslice_compare_{tag}_{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir).unwrap();
        }
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn sample_report(shift: f64, hash: &str) -> EvalReport {
        let rows: Vec<ScoreRow> = (0..40)
            .map(|i| {
                let label = u8::from(i % 3 == 0);
                let p = (0.1 + 0.02 * f64::from(i) + shift * f64::from(label)).min(0.99);
                ScoreRow {
                    sample_id: SampleId(format!("p{i:02}"), 0),
                    center_id: "c".into(),
                    p,
                    pred: u8::from(p >= 0.5),
                    label,
                    tumor_suvmax: (label == 1).then_some(6.0),
                }
            })
            .collect();
        let set = ScoredSet::new(rows, 0.5).unwrap();
        evaluate(&set, &EvalOptions { bin_width: 1.0, config_hash: hash.to_string() }).unwrap()
    }

    fn save(dir: &Path, name: &str, report: &EvalReport) -> PathBuf {
        let path = dir.join(name).join("report.json");
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        report.save(&path).unwrap();
        path
    }

    #[test]
    fn fewer_than_two_paths_is_an_error() {
        let err = compare_reports(&[PathBuf::from("one")], false).unwrap_err();
        assert!(err.to_string().contains("at least two"), "{err}");
    }

    #[test]
    fn self_comparison_has_zero_deltas_everywhere() {
        let root = tempdir("self");
        let report = sample_report(0.3, "aaaa");
        let a = save(&root, "a", &report);
        let b = save(&root, "b", &report);
        let cmp = compare_reports(&[a, b], false).unwrap();
        assert_eq!(cmp.rows.len(), 2);
        assert_eq!(cmp.metrics.len(), 2 + BinaryMetrics::NAMES.len());
        for row in &cmp.rows {
            for (v, d) in row.values.iter().zip(&row.deltas) {
                assert_eq!(v.is_some(), d.is_some());
                if let Some(d) = d {
                    assert_eq!(*d, 0.0);
                }
            }
        }
        fs::remove_dir_all(&root).unwrap();
    }

    #[test]
    fn deltas_match_direct_recomputation_and_labels_drop_the_common_prefix() {
        let root = tempdir("delta");
        let base = sample_report(0.2, "aaaa");
        let better = sample_report(0.6, "aaaa");
        let a = save(&root, "base", &base);
        let b = save(&root, "better", &better);
        let cmp = compare_reports(&[a, b], false).unwrap();
        assert_eq!(cmp.rows[0].label, "base/report.json");
        assert_eq!(cmp.rows[1].label, "better/report.json");
        assert_eq!(cmp.rows[1].values[0], Some(better.auroc));
        assert_eq!(cmp.rows[1].deltas[0], Some(better.auroc - base.auroc));
        assert_eq!(cmp.rows[1].deltas[1], Some(better.auprc - base.auprc));
        let text = cmp.to_text();
        assert!(text.contains("auroc"), "{text}");
        let csv = cmp.to_csv();
        assert_eq!(
            csv.lines().count(),
            1 + 2 * cmp.metrics.len(),
            "header plus one line per report-metric pair"
        );
        assert!(csv.contains("better/report.json,aaaa,auroc,"), "{csv}");
        fs::remove_dir_all(&root).unwrap();
    }

    #[test]
    fn mixed_hashes_are_rejected_unless_forced() {
        let root = tempdir("mixed");
        let a = save(&root, "a", &sample_report(0.2, "aaaa"));
        let b = save(&root, "b", &sample_report(0.2, "bbbb"));
        let err = compare_reports(&[a.clone(), b.clone()], false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("aaaa") && msg.contains("bbbb"), "{msg}");
        assert!(msg.contains("--force"), "{msg}");
        let cmp = compare_reports(&[a, b], true).unwrap();
        assert_eq!(cmp.rows[1].config_hash, "bbbb");
        fs::remove_dir_all(&root).unwrap();
    }
}
