//! Elementwise activations.

use super::{Scalar, Tensor4};
use crate::{Error, Result};

/// max(x, 0), elementwise.
pub fn relu_forward<S: Scalar>(x: &Tensor4<S>) -> Tensor4<S> {
    x.map(|v| if v > S::zero() { v } else { S::zero() })
}

/// Routes the upstream gradient through positive inputs; the subgradient at
/// exactly zero is taken as zero.
pub fn relu_backward<S: Scalar>(x: &Tensor4<S>, gout: &Tensor4<S>) -> Result<Tensor4<S>> {
    if x.shape() != gout.shape() {
        return Err(Error::shape(format!(
            "relu backward: input {:?} vs upstream gradient {:?}",
            x.shape(),
            gout.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(gout.data())
        .map(|(&v, &g)| if v > S::zero() { g } else { S::zero() })
        .collect();
    let (n, c, h, w) = x.shape();
    Tensor4::from_vec(n, c, h, w, data)
}

/// Numerically stable logistic: never exponentiates a positive argument, so
/// it stays finite for |z| well past 500.
pub fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// Applies [`sigmoid`] to a slice of logits.
pub fn sigmoid_slice<S: Scalar>(z: &[S]) -> Vec<S> {
    z.iter().map(|&v| sigmoid(v)).collect()
}
