//! Focal loss computed in logit space.
//!
//! loss = −α·y·(1−p)^γ·ln p − (1−α)·(1−y)·p^γ·ln(1−p) with p = σ(z).
//! Everything is expressed through softplus(±z), so p saturating to 0 or 1
//! in floating point never produces a log of zero; α weights the positive
//! class and the gradient is taken with respect to the logit.

use crate::nn::{sigmoid, Scalar};
use crate::{Error, Result};

/// ln(1 + e^t) without overflow for large |t|.
fn softplus<S: Scalar>(t: S) -> S {
    if t > S::zero() {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Loss and d(loss)/d(logit) for one sample, from the raw logit.
pub fn focal_loss_from_logit<S: Scalar>(z: S, y: u8, alpha: S, gamma: S) -> (S, S) {
    let p = sigmoid(z);
    let one = S::one();
    if y == 1 {
        // ln p = −softplus(−z), (1−p)^γ = exp(−γ·softplus(z))
        let ln_p = -softplus(-z);
        let focus = (-gamma * softplus(z)).exp();
        let loss = -alpha * focus * ln_p;
        let grad = alpha * focus * (gamma * p * ln_p - (one - p));
        (loss, grad)
    } else {
        let ln_q = -softplus(z);
        let focus = (-gamma * softplus(-z)).exp();
        let loss = -(one - alpha) * focus * ln_q;
        let grad = (one - alpha) * focus * (p - gamma * (one - p) * ln_q);
        (loss, grad)
    }
}

/// Loss and logit-gradient from a probability. `p` must lie strictly inside
/// (0,1) so the logit exists; upstream sigmoid outputs should instead go
/// through [`focal_loss_from_logit`], which never forms p explicitly.
pub fn focal_loss<S: Scalar>(p: S, y: u8, alpha: S, gamma: S) -> Result<(S, S)> {
    let one = S::one();
    if !(p > S::zero() && p < one) {
        return Err(Error::invalid(format!(
            "focal loss needs p strictly inside (0,1), got {p}"
        )));
    }
    if y > 1 {
        return Err(Error::invalid(format!("label must be 0 or 1, got {y}")));
    }
    if !(alpha > S::zero() && alpha < one) || gamma < S::zero() {
        return Err(Error::invalid(format!(
            "focal loss needs alpha in (0,1) and gamma >= 0, got alpha={alpha} gamma={gamma}"
        )));
    }
    let z = (p / (one - p)).ln();
    Ok(focal_loss_from_logit(z, y, alpha, gamma))
}

/// Mean loss over a batch and the per-logit gradients of that mean.
pub fn focal_loss_batch<S: Scalar>(
    logits: &[S],
    labels: &[u8],
    alpha: S,
    gamma: S,
) -> Result<(f64, Vec<S>)> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::shape(format!(
            "focal batch: {} logits vs {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let scale = S::from_usize(logits.len());
    let mut total = 0.0f64;
    let mut grads = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        let (loss, grad) = focal_loss_from_logit(z, y, alpha, gamma);
        total += loss.to_f64();
        grads.push(grad / scale);
    }
    Ok((total / logits.len() as f64, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::central_diff_grad;
    use crate::seed::rng_from;
    use rand::Rng;

    #[test]
    fn positive_sample_at_half_probability_matches_closed_form() {
        // α·(1−p)^γ·(−ln p) at p=1/2, α=1/4, γ=2 is 0.25·0.25·ln 2
        let (loss, _) = focal_loss(0.5f64, 1, 0.25, 2.0).unwrap();
        let want = 0.25 * 0.25 * std::f64::consts::LN_2;
        assert!((loss - want).abs() < 1e-9, "loss {loss} vs {want}");

        // same through the logit entry point: p=1/2 means z=0
        let (loss_z, _) = focal_loss_from_logit(0.0f64, 1, 0.25, 2.0);
        assert!((loss_z - want).abs() < 1e-12);
    }

    #[test]
    fn alpha_half_gamma_zero_is_half_bce_on_a_grid() {
        for i in 1..100 {
            let p = i as f64 / 100.0;
            for y in [0u8, 1] {
                let (loss, _) = focal_loss(p, y, 0.5, 0.0).unwrap();
                let bce = if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
                assert!(
                    (loss - 0.5 * bce).abs() < 1e-12,
                    "p={p} y={y}: {loss} vs {}",
                    0.5 * bce
                );
            }
        }
    }

    #[test]
    fn loss_is_nonnegative_and_vanishes_only_as_p_approaches_label() {
        for i in 1..50 {
            let p = i as f64 / 50.0;
            let (l1, _) = focal_loss(p, 1, 0.25, 2.0).unwrap();
            let (l0, _) = focal_loss(p, 0, 0.25, 2.0).unwrap();
            assert!(l1 > 0.0 && l0 > 0.0, "p={p}");
        }
        // limits: confident and correct drives the loss to zero
        let (l, _) = focal_loss_from_logit(40.0f64, 1, 0.25, 2.0);
        assert!(l.abs() < 1e-15, "p→1, y=1 loss {l}");
        let (l, _) = focal_loss_from_logit(-40.0f64, 0, 0.25, 2.0);
        assert!(l.abs() < 1e-15);
    }

    #[test]
    fn extreme_logits_stay_finite_in_f32() {
        for z in [-1e4f32, -80.0, 80.0, 1e4] {
            for y in [0u8, 1] {
                let (loss, grad) = focal_loss_from_logit(z, y, 0.25, 2.0);
                assert!(loss.is_finite() && grad.is_finite(), "z={z} y={y}");
                assert!(loss >= 0.0);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences_over_random_settings() {
        let mut rng = rng_from(77);
        for _ in 0..200 {
            let z: f64 = rng.random_range(-6.0..6.0);
            let y = u8::from(rng.random::<bool>());
            let alpha: f64 = rng.random_range(0.05..0.95);
            let gamma: f64 = rng.random_range(0.0..4.0);
            let (_, grad) = focal_loss_from_logit(z, y, alpha, gamma);
            let fd = central_diff_grad(&[z], |params| {
                Ok(focal_loss_from_logit(params[0], y, alpha, gamma).0)
            })
            .unwrap()[0];
            let rel = (grad - fd).abs() / grad.abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-6, "z={z} y={y} α={alpha} γ={gamma}: {grad} vs {fd}");
        }
    }

    #[test]
    fn batch_loss_is_the_mean_and_grads_carry_the_batch_scale() {
        let logits = [0.3f64, -1.2, 2.0, 0.0];
        let labels = [1u8, 0, 1, 0];
        let (mean, grads) = focal_loss_batch(&logits, &labels, 0.25, 2.0).unwrap();
        let mut want = 0.0;
        for (&z, &y) in logits.iter().zip(&labels) {
            let (l, g) = focal_loss_from_logit(z, y, 0.25, 2.0);
            want += l;
            let i = logits.iter().position(|&v| v == z).unwrap();
            assert!((grads[i] - g / 4.0).abs() < 1e-15);
        }
        assert!((mean - want / 4.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(focal_loss(0.0f64, 1, 0.25, 2.0).is_err());
        assert!(focal_loss(1.0f64, 1, 0.25, 2.0).is_err());
        assert!(focal_loss(0.5f64, 2, 0.25, 2.0).is_err());
        assert!(focal_loss(0.5f64, 1, 0.0, 2.0).is_err());
        assert!(focal_loss(0.5f64, 1, 0.25, -1.0).is_err());
        assert!(focal_loss_batch::<f64>(&[], &[], 0.25, 2.0).is_err());
        assert!(focal_loss_batch(&[0.0f64], &[1, 0], 0.25, 2.0).is_err());
    }
}
