//! SUVmax-conditioned analyses over the positive rows: the TP/FN histogram
//! and the nested-subset sensitivity sweep.

use super::ScoredSet;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// One histogram bucket covering SUVmax in [lo, hi).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuvmaxBin {
    pub lo: f64,
    pub hi: f64,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Histogram of true-positive and false-negative counts per SUVmax bucket,
/// with edges anchored at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuvmaxHistogram {
    pub bin_width: f64,
    pub bins: Vec<SuvmaxBin>,
}

/// Buckets every positive row by its tumor SUVmax. Bins run contiguously
/// from 0 up to the largest observed value, so plotting tools see the empty
/// buckets too; a value exactly on an edge belongs to the bucket above it.
pub fn tp_fn_suvmax_histogram(scored: &ScoredSet, bin_width: f64) -> Result<SuvmaxHistogram> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::invalid(format!(
            "histogram bin width must be positive, got {bin_width}"
        )));
    }
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for r in scored.rows().iter().filter(|r| r.label == 1) {
        let suv = f64::from(r.tumor_suvmax.ok_or_else(|| {
            Error::invalid(format!(
                "positive row {:?} is missing its tumor SUVmax",
                r.sample_id
            ))
        })?);
        let bin = (suv / bin_width).floor() as usize;
        if counts.len() <= bin {
            counts.resize(bin + 1, (0, 0));
        }
        if r.pred == 1 {
            counts[bin].0 += 1;
        } else {
            counts[bin].1 += 1;
        }
    }
    let bins = counts
        .into_iter()
        .enumerate()
        .map(|(i, (tp, fn_))| SuvmaxBin {
            lo: i as f64 * bin_width,
            hi: (i + 1) as f64 * bin_width,
            tp,
            fn_,
        })
        .collect();
    Ok(SuvmaxHistogram { bin_width, bins })
}

/// One point of the sensitivity sweep: over the positives with SUVmax of at
/// least `u`, the fraction predicted positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub u: f64,
    pub subset_size: usize,
    pub sensitivity: f64,
}

/// Sensitivity over nested positive subsets.
///
/// The m positive rows are sorted by SUVmax ascending (u_1 <= ... <= u_m);
/// point i takes every row with SUVmax >= u_i, so tied values always stay
/// together and subset sizes never increase. The sweep stops at
/// i = floor(0.95 m) to keep the smallest subsets from dominating the tail;
/// duplicate u_i values get one point per index, not per distinct value.
pub fn sensitivity_suvmax_sweep(scored: &ScoredSet) -> Result<Vec<SweepPoint>> {
    let mut positives: Vec<(f64, bool)> = scored
        .rows()
        .iter()
        .filter(|r| r.label == 1)
        .map(|r| (f64::from(r.tumor_suvmax.unwrap_or(f32::NAN)), r.pred == 1))
        .collect();
    if positives.iter().any(|(u, _)| u.is_nan()) {
        return Err(Error::invalid("a positive row is missing its tumor SUVmax"));
    }
    let m = positives.len();
    if m < 2 {
        return Err(Error::invalid(format!(
            "sensitivity sweep needs at least 2 positive rows, got {m}"
        )));
    }
    positives.sort_by(|a, b| a.0.total_cmp(&b.0));
    // suffix_tp[j] = true positives among positives[j..].
    let mut suffix_tp = vec![0usize; m + 1];
    for j in (0..m).rev() {
        suffix_tp[j] = suffix_tp[j + 1] + usize::from(positives[j].1);
    }
    let sweep = (1..=(m * 95) / 100)
        .map(|i| {
            let u = positives[i - 1].0;
            let j = positives.partition_point(|&(v, _)| v < u);
            let subset_size = m - j;
            SweepPoint {
                u,
                subset_size,
                sensitivity: suffix_tp[j] as f64 / subset_size as f64,
            }
        })
        .collect();
    Ok(sweep)
}
