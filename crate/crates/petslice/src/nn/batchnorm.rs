//! Per-channel batch normalization over (N, H, W).

use super::{Scalar, Tensor4};
use crate::{Error, Result};

/// Whether a forward pass uses batch statistics (and updates the running
/// averages) or the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct BnCache<S> {
    x_hat: Tensor4<S>,
    inv_std: Vec<S>,
}

/// Batch-norm layer. The biased (population) variance is used both for
/// normalization and for the running-average update, so train and eval
/// statistics agree in the large-batch limit.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<S> {
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    pub grad_gamma: Vec<S>,
    pub grad_beta: Vec<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    pub momentum: S,
    pub eps: S,
    cache: Option<BnCache<S>>,
}

impl<S: Scalar> BatchNorm2d<S> {
    /// gamma=1, beta=0, running mean 0, running variance 1.
    pub fn new(channels: usize, momentum: S, eps: S) -> Self {
        BatchNorm2d {
            gamma: vec![S::one(); channels],
            beta: vec![S::zero(); channels],
            grad_gamma: vec![S::zero(); channels],
            grad_beta: vec![S::zero(); channels],
            running_mean: vec![S::zero(); channels],
            running_var: vec![S::one(); channels],
            momentum,
            eps,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: &Tensor4<S>, mode: BnMode) -> Result<Tensor4<S>> {
        let (n, c, h, w) = x.shape();
        if c != self.channels() {
            return Err(Error::shape(format!(
                "batchnorm2d: input has {c} channels, layer has {}",
                self.channels()
            )));
        }
        match mode {
            BnMode::Train => {
                if n < 2 {
                    return Err(Error::invalid(
                        "batchnorm2d: train mode requires batch size >= 2 \
                         (variance of a single sample is undefined)",
                    ));
                }
                self.forward_train(x, n, c, h, w)
            }
            BnMode::Eval => self.forward_eval(x, n, c, h, w),
        }
    }

    fn forward_train(
        &mut self,
        x: &Tensor4<S>,
        n: usize,
        c: usize,
        h: usize,
        w: usize,
    ) -> Result<Tensor4<S>> {
        let m = S::from_usize(n * h * w);
        let mut out = Tensor4::zeros(n, c, h, w);
        let mut x_hat = Tensor4::zeros(n, c, h, w);
        let mut inv_std = vec![S::zero(); c];

        for ch in 0..c {
            let mut sum = S::zero();
            for bn in 0..n {
                for &v in x.plane(bn, ch) {
                    sum = sum + v;
                }
            }
            let mean = sum / m;
            let mut var_sum = S::zero();
            for bn in 0..n {
                for &v in x.plane(bn, ch) {
                    let d = v - mean;
                    var_sum = var_sum + d * d;
                }
            }
            let var = var_sum / m;
            let istd = S::one() / (var + self.eps).sqrt();
            inv_std[ch] = istd;

            let (g, b) = (self.gamma[ch], self.beta[ch]);
            for bn in 0..n {
                let xp = x.plane(bn, ch);
                let hp = x_hat.plane_mut(bn, ch);
                for (dst, &v) in hp.iter_mut().zip(xp) {
                    *dst = (v - mean) * istd;
                }
                let hp = x_hat.plane(bn, ch);
                let op = out.plane_mut(bn, ch);
                for (dst, &xh) in op.iter_mut().zip(hp) {
                    *dst = g * xh + b;
                }
            }

            let keep = S::one() - self.momentum;
            self.running_mean[ch] = keep * self.running_mean[ch] + self.momentum * mean;
            self.running_var[ch] = keep * self.running_var[ch] + self.momentum * var;
        }

        self.cache = Some(BnCache { x_hat, inv_std });
        Ok(out)
    }

    fn forward_eval(
        &self,
        x: &Tensor4<S>,
        n: usize,
        c: usize,
        h: usize,
        w: usize,
    ) -> Result<Tensor4<S>> {
        let mut out = Tensor4::zeros(n, c, h, w);
        for ch in 0..c {
            let istd = S::one() / (self.running_var[ch] + self.eps).sqrt();
            let (mean, g, b) = (self.running_mean[ch], self.gamma[ch], self.beta[ch]);
            for bn in 0..n {
                let xp = x.plane(bn, ch);
                let op = out.plane_mut(bn, ch);
                for (dst, &v) in op.iter_mut().zip(xp) {
                    *dst = g * (v - mean) * istd + b;
                }
            }
        }
        Ok(out)
    }

    /// Backward through a cached train-mode forward; accumulates gamma/beta
    /// gradients and returns the input gradient.
    pub fn backward(&mut self, gout: &Tensor4<S>) -> Result<Tensor4<S>> {
        let BnCache { x_hat, inv_std } = self
            .cache
            .take()
            .ok_or_else(|| Error::invalid("batchnorm2d backward called without a cached train forward"))?;
        if gout.shape() != x_hat.shape() {
            return Err(Error::shape(format!(
                "batchnorm2d backward: upstream gradient {:?} vs cached activation {:?}",
                gout.shape(),
                x_hat.shape()
            )));
        }
        let (n, c, h, w) = x_hat.shape();
        let m = S::from_usize(n * h * w);
        let mut gx = Tensor4::zeros(n, c, h, w);

        for ch in 0..c {
            let mut sum_g = S::zero();
            let mut sum_gx = S::zero();
            for bn in 0..n {
                let gp = gout.plane(bn, ch);
                let hp = x_hat.plane(bn, ch);
                for (&g, &xh) in gp.iter().zip(hp) {
                    sum_g = sum_g + g;
                    sum_gx = sum_gx + g * xh;
                }
            }
            self.grad_beta[ch] = self.grad_beta[ch] + sum_g;
            self.grad_gamma[ch] = self.grad_gamma[ch] + sum_gx;

            // dx = gamma*inv_std/m * (m*g - sum(g) - x_hat*sum(g*x_hat))
            let scale = self.gamma[ch] * inv_std[ch] / m;
            for bn in 0..n {
                let gp = gout.plane(bn, ch);
                let hp = x_hat.plane(bn, ch);
                let op = gx.plane_mut(bn, ch);
                for ((dst, &g), &xh) in op.iter_mut().zip(gp).zip(hp) {
                    *dst = scale * (m * g - sum_g - xh * sum_gx);
                }
            }
        }
        Ok(gx)
    }

    pub fn zero_grads(&mut self) {
        self.grad_gamma.fill(S::zero());
        self.grad_beta.fill(S::zero());
    }
}
