//! Multi-rater mask simulation and STAPLE fusion.

use super::{Grid3, RaterMaskSet, RaterNoise};
use crate::seed::{derive_seed_indexed, rng_from};
use crate::{Error, Result};
use rand::Rng;

/// Result of a STAPLE run: the fused mask, the per-voxel posterior it was
/// thresholded from, per-rater performance estimates, and the EM trace.
#[derive(Debug, Clone)]
pub struct StapleResult {
    pub fused: Grid3<u8>,
    /// P(true label = 1) per voxel, same layout as the input masks.
    pub posterior: Vec<f64>,
    pub sensitivities: Vec<f64>,
    pub specificities: Vec<f64>,
    pub iterations: usize,
    /// Observed-data log-likelihood after each E-step; non-decreasing.
    pub log_likelihoods: Vec<f64>,
    pub warnings: Vec<String>,
}

const PARAM_FLOOR: f64 = 0.01;
const PARAM_CEIL: f64 = 0.99;

/// Corrupts a ground-truth mask into `n_raters` simulated annotations:
/// each rater applies a morphological dilation or erosion (chosen at random)
/// of its boundary-jitter magnitude, then independent voxel flips.
pub fn simulate_raters(
    mask: &Grid3<u8>,
    noise: &[RaterNoise],
    n_raters: usize,
    spacing_mm: (f64, f64, f64),
    seed: u64,
) -> Result<RaterMaskSet> {
    if n_raters == 0 {
        return Err(Error::invalid("need at least one rater"));
    }
    if noise.len() != n_raters {
        return Err(Error::invalid(format!(
            "{} noise parameter sets for {n_raters} raters",
            noise.len()
        )));
    }
    for (j, n) in noise.iter().enumerate() {
        if !(0.0..0.5).contains(&n.flip_rate) {
            return Err(Error::invalid(format!(
                "rater {j}: flip_rate {} outside [0, 0.5)",
                n.flip_rate
            )));
        }
        if n.boundary_jitter_mm < 0.0 {
            return Err(Error::invalid(format!(
                "rater {j}: boundary jitter {} mm is negative",
                n.boundary_jitter_mm
            )));
        }
    }

    let masks = noise
        .iter()
        .enumerate()
        .map(|(j, n)| {
            let mut rng = rng_from(derive_seed_indexed(seed, "rater", j as u64));
            let mut m = if n.boundary_jitter_mm > 0.0 {
                let dilate = rng.random::<bool>();
                morph(mask, n.boundary_jitter_mm, spacing_mm, dilate)
            } else {
                mask.clone()
            };
            if n.flip_rate > 0.0 {
                for v in m.data_mut() {
                    if rng.random_range(0.0..1.0) < n.flip_rate {
                        *v = 1 - *v;
                    }
                }
            }
            m
        })
        .collect();

    let set = RaterMaskSet {
        masks,
        rater_noise: noise.to_vec(),
    };
    set.validate()?;
    Ok(set)
}

/// Morphological dilation or erosion with an ellipsoidal structuring element
/// of the given physical radius.
fn morph(mask: &Grid3<u8>, radius_mm: f64, spacing_mm: (f64, f64, f64), dilate: bool) -> Grid3<u8> {
    let (nx, ny, nz) = mask.dims();
    let r = |s: f64| (radius_mm / s).round() as isize;
    let (rx, ry, rz) = (r(spacing_mm.0), r(spacing_mm.1), r(spacing_mm.2));
    if rx == 0 && ry == 0 && rz == 0 {
        return mask.clone();
    }
    let mut offsets = Vec::new();
    for dk in -rz..=rz {
        for dj in -ry..=ry {
            for di in -rx..=rx {
                let e = |d: isize, r: isize| {
                    if r == 0 {
                        0.0
                    } else {
                        (d as f64 / r as f64).powi(2)
                    }
                };
                if e(di, rx) + e(dj, ry) + e(dk, rz) <= 1.0 {
                    offsets.push((di, dj, dk));
                }
            }
        }
    }

    let mut out = Grid3::<u8>::new(nx, ny, nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let probe = |(di, dj, dk): &(isize, isize, isize)| -> bool {
                    let (pi, pj, pk) = (i as isize + di, j as isize + dj, k as isize + dk);
                    if pi < 0
                        || pj < 0
                        || pk < 0
                        || pi >= nx as isize
                        || pj >= ny as isize
                        || pk >= nz as isize
                    {
                        // pad so the grid border is never the reason a voxel
                        // changes: background for dilation, foreground for
                        // erosion
                        return !dilate;
                    }
                    mask.at(pi as usize, pj as usize, pk as usize) != 0
                };
                let hit = if dilate {
                    offsets.iter().any(|o| probe(o))
                } else {
                    offsets.iter().all(|o| probe(o))
                };
                if hit {
                    *out.at_mut(i, j, k) = 1;
                }
            }
        }
    }
    out
}

/// STAPLE fusion: EM over per-rater sensitivity/specificity with a spatially
/// uniform prior equal to the mean rater positive fraction. Parameters are
/// clamped to [0.01, 0.99] each M-step; degenerate raters (all-positive or
/// all-negative) are reported in `warnings`.
pub fn staple_fuse(raters: &RaterMaskSet, max_iters: usize, tol: f64) -> Result<StapleResult> {
    raters.validate()?;
    if max_iters == 0 {
        return Err(Error::invalid("max_iters must be >= 1"));
    }
    let n_raters = raters.masks.len();
    let n_vox = raters.masks[0].len();
    let dims = raters.masks[0].dims();

    let mut warnings = Vec::new();
    for (j, m) in raters.masks.iter().enumerate() {
        let ones = m.count_ones();
        if ones == 0 || ones == n_vox {
            warnings.push(format!(
                "rater {j} is degenerate ({}); performance estimates clamped",
                if ones == 0 { "all-negative" } else { "all-positive" }
            ));
        }
    }

    // A single rater is degenerate for EM: the uniform prior (the rater's own
    // positive fraction, typically small) would override the only available
    // evidence and empty the fused mask. The rater's mask IS the best guess.
    if n_raters == 1 {
        let fused = raters.masks[0].clone();
        let posterior = fused.data().iter().map(|&v| f64::from(v)).collect();
        return Ok(StapleResult {
            fused,
            posterior,
            sensitivities: vec![PARAM_CEIL],
            specificities: vec![PARAM_CEIL],
            iterations: 1,
            log_likelihoods: Vec::new(),
            warnings,
        });
    }

    let total_ones: usize = raters.masks.iter().map(Grid3::count_ones).sum();
    let prior = (total_ones as f64 / (n_raters * n_vox) as f64).clamp(1e-9, 1.0 - 1e-9);

    let mut p = vec![0.9f64; n_raters];
    let mut q = vec![0.9f64; n_raters];
    let mut w = vec![0.0f64; n_vox];
    let mut log_likelihoods = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iters {
        // E-step: posterior of true label 1 per voxel, and the observed-data
        // log-likelihood under the current parameters
        let mut ll = 0.0;
        for (v, wv) in w.iter_mut().enumerate() {
            let mut a = prior;
            let mut b = 1.0 - prior;
            for (j, m) in raters.masks.iter().enumerate() {
                if m.data()[v] != 0 {
                    a *= p[j];
                    b *= 1.0 - q[j];
                } else {
                    a *= 1.0 - p[j];
                    b *= q[j];
                }
            }
            *wv = a / (a + b);
            ll += (a + b).ln();
        }
        log_likelihoods.push(ll);

        // M-step: re-estimate sensitivity/specificity per rater
        let sum_w: f64 = w.iter().sum();
        let sum_not: f64 = n_vox as f64 - sum_w;
        let mut max_change = 0.0f64;
        for (j, m) in raters.masks.iter().enumerate() {
            let mut pos_w = 0.0;
            let mut neg_not = 0.0;
            for (v, &d) in m.data().iter().enumerate() {
                if d != 0 {
                    pos_w += w[v];
                } else {
                    neg_not += 1.0 - w[v];
                }
            }
            let new_p = (pos_w / sum_w.max(1e-300)).clamp(PARAM_FLOOR, PARAM_CEIL);
            let new_q = (neg_not / sum_not.max(1e-300)).clamp(PARAM_FLOOR, PARAM_CEIL);
            max_change = max_change.max((new_p - p[j]).abs()).max((new_q - q[j]).abs());
            p[j] = new_p;
            q[j] = new_q;
        }
        iterations += 1;
        if max_change < tol {
            break;
        }
    }

    let mut fused = Grid3::<u8>::new(dims.0, dims.1, dims.2);
    for (o, &wv) in fused.data_mut().iter_mut().zip(&w) {
        *o = u8::from(wv >= 0.5);
    }
    Ok(StapleResult {
        fused,
        posterior: w,
        sensitivities: p,
        specificities: q,
        iterations,
        log_likelihoods,
        warnings,
    })
}
