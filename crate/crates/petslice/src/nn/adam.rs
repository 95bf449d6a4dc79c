//! Bias-corrected Adam update over flat parameter slices.

use super::Scalar;
use crate::{Error, Result};

/// Optimizer hyperparameters. `default()` gives lr=1e-3, beta1=0.9,
/// beta2=0.999, eps=1e-8.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
}

impl<S: Scalar> Default for AdamHyper<S> {
    fn default() -> Self {
        AdamHyper {
            lr: S::from_f64(1e-3),
            beta1: S::from_f64(0.9),
            beta2: S::from_f64(0.999),
            eps: S::from_f64(1e-8),
        }
    }
}

impl<S: Scalar> AdamHyper<S> {
    pub fn with_lr(lr: S) -> Self {
        AdamHyper {
            lr,
            ..Self::default()
        }
    }
}

/// First/second moment buffers and the step counter for one parameter group.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![S::zero(); len],
            v: vec![S::zero(); len],
            t: 0,
        }
    }
}

/// One Adam step in place. Rejects non-finite gradients so a diverging run
/// aborts at the first bad update instead of training on garbage.
pub fn adam_step<S: Scalar>(
    params: &mut [S],
    grads: &[S],
    state: &mut AdamState<S>,
    hyper: &AdamHyper<S>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len()
    {
        return Err(Error::shape(format!(
            "adam: {} params, {} grads, {}/{} moment entries",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "adam: non-finite gradient {} at flat index {i} (step {})",
            grads[i],
            state.t + 1
        )));
    }

    state.t += 1;
    let one = S::one();
    let bc1 = one - hyper.beta1.powi(state.t as i32);
    let bc2 = one - hyper.beta2.powi(state.t as i32);

    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hyper.beta1 * state.m[i] + (one - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (one - hyper.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] = params[i] - hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}
