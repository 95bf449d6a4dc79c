//! ROC and precision-recall curves with exact areas.
//!
//! Both curves share one rank sweep: rows sorted by probability descending,
//! one point per distinct threshold, with ties always entering together.
//! AUROC is trapezoidal (equivalently, tie-corrected pairwise concordance,
//! which the integer accumulation below reproduces exactly); AUPRC is the
//! right-continuous step sum Σ (R_k − R_{k−1})·P_k, not a trapezoid, because
//! linear PR interpolation is known to flatter the curve.

use super::ScoredSet;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// One curve sample: the decision threshold and the (x, y) coordinate it
/// produces (FPR/TPR for ROC, recall/precision for PR).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

/// Cumulative (threshold, tp, fp) at every distinct probability, sweeping
/// descending. Ties share one entry, so predictions at a threshold are
/// exactly the rows at or above it.
fn threshold_counts(scored: &ScoredSet) -> Vec<(f64, usize, usize)> {
    let mut ranked: Vec<(f64, u8)> = scored.rows().iter().map(|r| (r.p, r.label)).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < ranked.len() {
        let t = ranked[i].0;
        while i < ranked.len() && ranked[i].0 == t {
            if ranked[i].1 == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((t, tp, fp));
    }
    out
}

/// ROC curve and its area.
///
/// Points run from the highest threshold to the lowest; the final point is
/// always (1, 1) and the implicit (0, 0) anchor enters the integral only.
/// The area accumulates the trapezoid numerator in integers, so it equals
/// the tie-corrected concordance statistic up to one final division.
pub fn roc_auroc(scored: &ScoredSet) -> Result<(Vec<CurvePoint>, f64)> {
    let pos = scored.positives();
    let neg = scored.negatives();
    if pos == 0 || neg == 0 {
        return Err(Error::invalid(format!(
            "AUROC needs both classes; set has {pos} positives and {neg} negatives"
        )));
    }
    let mut points = Vec::new();
    let (mut prev_tp, mut prev_fp) = (0usize, 0usize);
    let mut twice_area = 0u64;
    for (t, tp, fp) in threshold_counts(scored) {
        twice_area += ((fp - prev_fp) as u64) * ((tp + prev_tp) as u64);
        points.push(CurvePoint {
            threshold: t,
            x: fp as f64 / neg as f64,
            y: tp as f64 / pos as f64,
        });
        (prev_tp, prev_fp) = (tp, fp);
    }
    let auroc = twice_area as f64 / (2.0 * pos as f64 * neg as f64);
    Ok((points, auroc))
}

/// Precision-recall curve and its step-rule area.
///
/// Points run from the highest threshold (lowest recall) to the lowest
/// (recall 1); every distinct threshold predicts at least one row positive,
/// so precision is always defined on the curve.
pub fn pr_auprc(scored: &ScoredSet) -> Result<(Vec<CurvePoint>, f64)> {
    let pos = scored.positives();
    if pos == 0 {
        return Err(Error::invalid("AUPRC needs at least one positive row"));
    }
    let mut points = Vec::new();
    let mut prev_tp = 0usize;
    let mut weighted = 0.0f64;
    for (t, tp, fp) in threshold_counts(scored) {
        let precision = tp as f64 / (tp + fp) as f64;
        weighted += (tp - prev_tp) as f64 * precision;
        points.push(CurvePoint {
            threshold: t,
            x: tp as f64 / pos as f64,
            y: precision,
        });
        prev_tp = tp;
    }
    Ok((points, weighted / pos as f64))
}

#[cfg(test)]
mod tests {
    use super::super::tests::{random_set, row};
    use super::*;
    use crate::classifier::ScoreRow;
    use crate::seed::rng_from;
    use rand::Rng;

    /// Tie-corrected pairwise concordance: the probability a random
    /// positive outranks a random negative, ties counted half.
    fn concordance_oracle(set: &ScoredSet) -> f64 {
        let mut sum = 0.0;
        let mut pairs = 0u64;
        for a in set.rows().iter().filter(|r| r.label == 1) {
            for b in set.rows().iter().filter(|r| r.label == 0) {
                pairs += 1;
                if a.p > b.p {
                    sum += 1.0;
                } else if a.p == b.p {
                    sum += 0.5;
                }
            }
        }
        sum / pairs as f64
    }

    /// Exhaustive-threshold AUPRC: enumerate every distinct probability as
    /// a threshold (descending), recount the confusion from scratch each
    /// time, and apply the step rule to the resulting (recall, precision)
    /// sequence.
    fn step_auprc_oracle(set: &ScoredSet) -> f64 {
        let mut thresholds: Vec<f64> = set.rows().iter().map(|r| r.p).collect();
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        thresholds.reverse();
        let pos = set.rows().iter().filter(|r| r.label == 1).count() as f64;
        let mut area = 0.0;
        let mut prev_recall = 0.0;
        for t in thresholds {
            let tp = set.rows().iter().filter(|r| r.p >= t && r.label == 1).count() as f64;
            let called = set.rows().iter().filter(|r| r.p >= t).count() as f64;
            let recall = tp / pos;
            area += (recall - prev_recall) * (tp / called);
            prev_recall = recall;
        }
        area
    }

    #[test]
    fn perfect_separation_scores_one_on_both_areas() {
        let rows = vec![
            row("a", 0, 0.9, 1),
            row("a", 1, 0.9, 1),
            row("b", 0, 0.1, 0),
            row("b", 1, 0.1, 0),
            row("c", 0, 0.1, 0),
        ];
        let set = ScoredSet::new(rows, 0.5).unwrap();
        let (roc, auroc) = roc_auroc(&set).unwrap();
        let (_, auprc) = pr_auprc(&set).unwrap();
        assert_eq!(auroc, 1.0);
        assert_eq!(auprc, 1.0);
        // Two distinct thresholds, ending at (1,1).
        assert_eq!(roc.len(), 2);
        assert_eq!((roc[0].x, roc[0].y), (0.0, 1.0));
        assert_eq!((roc[1].x, roc[1].y), (1.0, 1.0));
    }

    #[test]
    fn all_tied_scores_give_half_auroc_and_prevalence_auprc() {
        let rows: Vec<ScoreRow> =
            (0..40).map(|i| row("p", i, 0.5, u8::from(i % 5 == 0))).collect();
        let set = ScoredSet::new(rows, 0.5).unwrap();
        let (roc, auroc) = roc_auroc(&set).unwrap();
        let (pr, auprc) = pr_auprc(&set).unwrap();
        assert_eq!(auroc, 0.5);
        assert_eq!(auprc, 0.2, "prevalence of 8/40");
        assert_eq!(roc.len(), 1);
        assert_eq!(pr.len(), 1);
    }

    #[test]
    fn single_class_sets_are_rejected() {
        let all_pos = vec![row("a", 0, 0.9, 1), row("a", 1, 0.4, 1)];
        let all_neg = vec![row("a", 0, 0.9, 0), row("a", 1, 0.4, 0)];
        assert!(roc_auroc(&ScoredSet::new(all_pos.clone(), 0.5).unwrap()).is_err());
        assert!(roc_auroc(&ScoredSet::new(all_neg.clone(), 0.5).unwrap()).is_err());
        assert!(pr_auprc(&ScoredSet::new(all_pos, 0.5).unwrap()).is_ok());
        assert!(pr_auprc(&ScoredSet::new(all_neg, 0.5).unwrap()).is_err());
    }

    #[test]
    fn auroc_matches_the_concordance_oracle_on_random_sets() {
        for seed in 0..200 {
            let set = random_set(seed, 2 + (seed as usize * 7) % 60);
            let (_, auroc) = roc_auroc(&set).unwrap();
            let oracle = concordance_oracle(&set);
            assert!(
                (auroc - oracle).abs() < 1e-12,
                "seed {seed}: trapezoid {auroc} vs concordance {oracle}"
            );
        }
    }

    #[test]
    fn auprc_matches_the_exhaustive_threshold_oracle_on_random_sets() {
        for seed in 200..400 {
            let set = random_set(seed, 2 + (seed as usize * 11) % 60);
            let (_, auprc) = pr_auprc(&set).unwrap();
            let oracle = step_auprc_oracle(&set);
            assert!(
                (auprc - oracle).abs() < 1e-12,
                "seed {seed}: sweep {auprc} vs exhaustive {oracle}"
            );
        }
    }

    #[test]
    fn twenty_random_rows_match_brute_force_pair_counting() {
        // The pairwise statistic spelled out longhand: concordant pairs
        // count 1, tied pairs count half, over all positive x negative
        // pairs.
        let set = random_set(999, 20);
        let (_, auroc) = roc_auroc(&set).unwrap();
        let (mut concordant, mut tied, mut pairs) = (0u32, 0u32, 0u32);
        for a in set.rows().iter().filter(|r| r.label == 1) {
            for b in set.rows().iter().filter(|r| r.label == 0) {
                pairs += 1;
                if a.p > b.p {
                    concordant += 1;
                } else if a.p == b.p {
                    tied += 1;
                }
            }
        }
        let oracle = (f64::from(concordant) + 0.5 * f64::from(tied)) / f64::from(pairs);
        assert!((auroc - oracle).abs() < 1e-12);
    }

    #[test]
    fn curves_are_monotone_and_bounded() {
        for seed in 500..530 {
            let set = random_set(seed, 50);
            let (roc, auroc) = roc_auroc(&set).unwrap();
            let (pr, auprc) = pr_auprc(&set).unwrap();
            assert!((0.0..=1.0).contains(&auroc));
            assert!((0.0..=1.0).contains(&auprc));
            let last = roc.last().unwrap();
            assert_eq!((last.x, last.y), (1.0, 1.0));
            assert_eq!(pr.last().unwrap().x, 1.0);
            for w in roc.windows(2) {
                assert!(w[0].threshold > w[1].threshold, "thresholds strictly descend");
                assert!(w[0].x <= w[1].x && w[0].y <= w[1].y, "ROC is monotone");
            }
            for w in pr.windows(2) {
                assert!(w[0].x <= w[1].x, "recall is monotone");
            }
            for p in roc.iter().chain(&pr) {
                assert!((0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y));
            }
        }
    }

    #[test]
    fn auprc_is_at_least_prevalence_when_ranking_beats_random() {
        // Positives all at or above every negative (with ties across the
        // boundary): at least as good as random, so AUPRC must not fall
        // below the prevalence baseline.
        let mut rows = Vec::new();
        for i in 0..6 {
            rows.push(row("a", i, if i < 3 { 0.8 } else { 0.6 }, 1));
        }
        for i in 0..14 {
            rows.push(row("b", i, if i < 4 { 0.6 } else { 0.2 }, 0));
        }
        let set = ScoredSet::new(rows, 0.5).unwrap();
        let prevalence = 6.0 / 20.0;
        let (_, auprc) = pr_auprc(&set).unwrap();
        assert!(auprc >= prevalence, "{auprc} < baseline {prevalence}");
    }

    #[test]
    fn monotone_probability_shifts_leave_both_curves_invariant() {
        // Push every probability through a strictly increasing map (a
        // constant added in logit space). Ranks are unchanged, so curve
        // coordinates and both areas must be identical.
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let sigmoid = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mut rng = rng_from(4242);
        for trial in 0..20 {
            let rows: Vec<ScoreRow> = (0..50)
                .map(|i| {
                    // A coarse grid keeps ties; staying away from 0 and 1
                    // keeps the logit finite.
                    let p = f64::from(rng.random_range(1..=19u8)) / 20.0;
                    row("p", i, p, u8::from(rng.random::<f64>() < 0.4))
                })
                .collect();
            let rows = if rows.iter().any(|r| r.label == 1) && rows.iter().any(|r| r.label == 0)
            {
                rows
            } else {
                continue;
            };
            let set = ScoredSet::new(rows, 0.5).unwrap();
            let shifted: Vec<ScoreRow> = set
                .rows()
                .iter()
                .map(|r| {
                    let p = sigmoid(logit(r.p) + 0.8);
                    ScoreRow { p, pred: u8::from(p >= 0.5), ..r.clone() }
                })
                .collect();
            let shifted = ScoredSet::new(shifted, 0.5).unwrap();
            let (roc_a, auroc_a) = roc_auroc(&set).unwrap();
            let (roc_b, auroc_b) = roc_auroc(&shifted).unwrap();
            let (pr_a, auprc_a) = pr_auprc(&set).unwrap();
            let (pr_b, auprc_b) = pr_auprc(&shifted).unwrap();
            assert_eq!(auroc_a, auroc_b, "trial {trial}");
            assert_eq!(auprc_a, auprc_b, "trial {trial}");
            let coords = |c: &[CurvePoint]| c.iter().map(|p| (p.x, p.y)).collect::<Vec<_>>();
            assert_eq!(coords(&roc_a), coords(&roc_b));
            assert_eq!(coords(&pr_a), coords(&pr_b));
        }
    }
}
