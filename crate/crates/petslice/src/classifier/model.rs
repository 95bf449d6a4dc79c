//! The residual classifier: construction, forward/backward, and parameter
//! traversal.
//!
//! Parameter order is fixed by `param_groups` (stem, stages in order, FC
//! stack); the optimizer, checkpoints, and gradient checks all rely on that
//! single traversal so they can never disagree about which value is which.

use super::ModelConfig;
use crate::nn::{
    global_avg_pool_backward, global_avg_pool_forward, relu_backward, relu_forward, BatchNorm2d,
    BnMode, Conv2d, Linear, Matrix, ResidualBlock, Scalar, Tensor4,
};
use crate::seed::{derive_seed, rng_from};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

/// One named slice of trainable parameters with its gradient buffer.
pub(super) struct ParamGroup<'a, S> {
    pub params: &'a mut [S],
    pub grads: &'a mut [S],
}

#[derive(Debug, Clone)]
pub struct Model<S> {
    config: ModelConfig,
    stem: Conv2d<S>,
    stem_bn: BatchNorm2d<S>,
    stages: Vec<Vec<ResidualBlock<S>>>,
    fc: Vec<Linear<S>>,
    // forward caches for the pieces not owned by a layer struct
    stem_pre: Option<Tensor4<S>>,
    gap_shape: Option<(usize, usize, usize, usize)>,
    fc_pre: Vec<Matrix<S>>,
}

fn he_conv<S: Scalar>(
    rng: &mut impl Rng,
    c_out: usize,
    c_in: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Conv2d<S> {
    let std = (2.0 / (c_in * k * k) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("std is positive");
    let data = (0..c_out * c_in * k * k)
        .map(|_| S::from_f64(dist.sample(rng)))
        .collect();
    let weight = Tensor4::from_vec(c_out, c_in, k, k, data).expect("sized buffer");
    Conv2d::new(weight, None, stride, padding)
}

fn he_linear<S: Scalar>(rng: &mut impl Rng, out: usize, inp: usize) -> Linear<S> {
    let std = (2.0 / inp as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("std is positive");
    let data = (0..out * inp).map(|_| S::from_f64(dist.sample(rng))).collect();
    let weight = Matrix::from_vec(out, inp, data).expect("sized buffer");
    Linear::new(weight, vec![S::zero(); out])
}

fn bn<S: Scalar>(channels: usize) -> BatchNorm2d<S> {
    BatchNorm2d::new(channels, S::from_f64(BN_MOMENTUM), S::from_f64(BN_EPS))
}

/// Builds the network with He-style seeded initialization: convolution and
/// FC weights ~ N(0, 2/fan_in) drawn from one ChaCha stream in traversal
/// order, biases and batch-norm at their identity defaults.
pub fn build_model<S: Scalar>(config: &ModelConfig, seed: u64) -> Result<Model<S>> {
    config.validate()?;
    let mut rng = rng_from(derive_seed(seed, "model-init"));

    let mut c_in = config.stage_widths[0];
    let stem = he_conv(&mut rng, c_in, config.in_channels, 3, 1, 1);
    let stem_bn = bn(c_in);

    let mut stages = Vec::with_capacity(config.stage_widths.len());
    for (s, (&width, &blocks)) in config
        .stage_widths
        .iter()
        .zip(&config.blocks_per_stage)
        .enumerate()
    {
        let mut stage = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            let shortcut = (stride > 1 || c_in != width)
                .then(|| (he_conv(&mut rng, width, c_in, 1, stride, 0), bn(width)));
            stage.push(ResidualBlock::new(
                he_conv(&mut rng, width, c_in, 3, stride, 1),
                bn(width),
                he_conv(&mut rng, width, width, 3, 1, 1),
                bn(width),
                shortcut,
                stride,
            )?);
            c_in = width;
        }
        stages.push(stage);
    }

    let mut fc = Vec::with_capacity(config.fc_widths.len());
    let mut features = c_in;
    for &width in &config.fc_widths {
        fc.push(he_linear(&mut rng, width, features));
        features = width;
    }

    Ok(Model {
        config: config.clone(),
        stem,
        stem_bn,
        stages,
        fc,
        stem_pre: None,
        gap_shape: None,
        fc_pre: Vec::new(),
    })
}

fn relu_matrix<S: Scalar>(m: &Matrix<S>) -> Matrix<S> {
    let data = m.data().iter().map(|&v| v.max(S::zero())).collect();
    Matrix::from_vec(m.rows(), m.cols(), data).expect("same shape")
}

fn relu_matrix_backward<S: Scalar>(pre: &Matrix<S>, gout: &Matrix<S>) -> Result<Matrix<S>> {
    if (pre.rows(), pre.cols()) != (gout.rows(), gout.cols()) {
        return Err(Error::shape("fc relu backward: shape mismatch"));
    }
    let data = pre
        .data()
        .iter()
        .zip(gout.data())
        .map(|(&v, &g)| if v > S::zero() { g } else { S::zero() })
        .collect();
    Matrix::from_vec(pre.rows(), pre.cols(), data)
}

impl<S: Scalar> Model<S> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Forward pass; returns one logit per batch row. Train mode caches
    /// activations for [`Model::backward`] and updates batch-norm running
    /// statistics; eval mode is pure.
    pub fn forward(&mut self, x: &Tensor4<S>, mode: BnMode) -> Result<Vec<S>> {
        let (_, c, h, w) = x.shape();
        if c != self.config.in_channels || (h, w) != self.config.input_size {
            return Err(Error::shape(format!(
                "model expects {}x{}x{} inputs, got {c}x{h}x{w}",
                self.config.in_channels, self.config.input_size.0, self.config.input_size.1
            )));
        }
        let train = mode == BnMode::Train;

        let pre = self.stem_bn.forward(&self.stem.forward(x, train)?, mode)?;
        let mut cur = relu_forward(&pre);
        if train {
            self.stem_pre = Some(pre);
        }
        for stage in &mut self.stages {
            for block in stage {
                cur = block.forward(&cur, mode)?;
            }
        }
        if train {
            self.gap_shape = Some(cur.shape());
            self.fc_pre.clear();
        }
        let mut m = global_avg_pool_forward(&cur).to_matrix();
        let last = self.fc.len() - 1;
        for (i, layer) in self.fc.iter_mut().enumerate() {
            m = layer.forward(&m, train)?;
            if i < last {
                let r = relu_matrix(&m);
                if train {
                    self.fc_pre.push(m);
                }
                m = r;
            }
        }
        Ok(m.data().to_vec())
    }

    /// Backward pass from per-sample logit gradients; accumulates parameter
    /// gradients. Requires a preceding train-mode forward.
    pub fn backward(&mut self, grad_logits: &[S]) -> Result<()> {
        let gap_shape = self
            .gap_shape
            .take()
            .ok_or_else(|| Error::invalid("model backward called without a train-mode forward"))?;
        let mut g = Matrix::from_vec(grad_logits.len(), 1, grad_logits.to_vec())?;
        let last = self.fc.len() - 1;
        for (i, layer) in self.fc.iter_mut().enumerate().rev() {
            if i < last {
                let pre = self
                    .fc_pre
                    .pop()
                    .ok_or_else(|| Error::invalid("model backward: missing fc relu cache"))?;
                g = relu_matrix_backward(&pre, &g)?;
            }
            g = layer.backward(&g)?;
        }
        let (n, c, h, w) = gap_shape;
        let g_pool = Tensor4::from_vec(n, c, 1, 1, g.data().to_vec())?;
        let mut gt = global_avg_pool_backward((n, c, h, w), &g_pool)?;
        for stage in self.stages.iter_mut().rev() {
            for block in stage.iter_mut().rev() {
                gt = block.backward(&gt)?;
            }
        }
        let pre = self
            .stem_pre
            .take()
            .ok_or_else(|| Error::invalid("model backward: missing stem cache"))?;
        let g_pre = relu_backward(&pre, &gt)?;
        self.stem.backward(&self.stem_bn.backward(&g_pre)?)?;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.stem.zero_grads();
        self.stem_bn.zero_grads();
        for stage in &mut self.stages {
            for block in stage {
                block.zero_grads();
            }
        }
        for layer in &mut self.fc {
            layer.zero_grads();
        }
    }

    /// All trainable parameter slices with their gradient buffers, in the
    /// canonical traversal order.
    pub(super) fn param_groups(&mut self) -> Vec<ParamGroup<'_, S>> {
        fn conv<'a, S: Scalar>(out: &mut Vec<ParamGroup<'a, S>>, c: &'a mut Conv2d<S>) {
            // ownership: weight and grad_weight are disjoint fields
            let p = c.weight.data_mut();
            let g = c.grad_weight.data_mut();
            out.push(ParamGroup { params: p, grads: g });
        }
        fn norm<'a, S>(out: &mut Vec<ParamGroup<'a, S>>, b: &'a mut BatchNorm2d<S>) {
            out.push(ParamGroup {
                params: &mut b.gamma,
                grads: &mut b.grad_gamma,
            });
            out.push(ParamGroup {
                params: &mut b.beta,
                grads: &mut b.grad_beta,
            });
        }
        let mut out = Vec::new();
        conv(&mut out, &mut self.stem);
        norm(&mut out, &mut self.stem_bn);
        for stage in &mut self.stages {
            for block in stage {
                conv(&mut out, &mut block.conv1);
                norm(&mut out, &mut block.bn1);
                conv(&mut out, &mut block.conv2);
                norm(&mut out, &mut block.bn2);
                if let Some((pc, pb)) = &mut block.shortcut {
                    conv(&mut out, pc);
                    norm(&mut out, pb);
                }
            }
        }
        for layer in &mut self.fc {
            out.push(ParamGroup {
                params: layer.weight.data_mut(),
                grads: layer.grad_weight.data_mut(),
            });
            out.push(ParamGroup {
                params: &mut layer.bias,
                grads: &mut layer.grad_bias,
            });
        }
        out
    }

    fn bn_layers(&mut self) -> Vec<&mut BatchNorm2d<S>> {
        let mut out = vec![&mut self.stem_bn];
        for stage in &mut self.stages {
            for block in stage {
                out.push(&mut block.bn1);
                out.push(&mut block.bn2);
                if let Some((_, pb)) = &mut block.shortcut {
                    out.push(pb);
                }
            }
        }
        out
    }

    /// Trainable parameters flattened in traversal order.
    pub fn flat_params(&mut self) -> Vec<S> {
        self.param_groups()
            .iter()
            .flat_map(|g| g.params.iter().copied())
            .collect()
    }

    /// Overwrites all trainable parameters from a flat vector.
    pub fn set_flat_params(&mut self, flat: &[S]) -> Result<()> {
        let total: usize = self.param_groups().iter().map(|g| g.params.len()).sum();
        if flat.len() != total {
            return Err(Error::shape(format!(
                "model has {total} parameters, vector holds {}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for group in self.param_groups() {
            let next = offset + group.params.len();
            group.params.copy_from_slice(&flat[offset..next]);
            offset = next;
        }
        Ok(())
    }

    /// Batch-norm running statistics (mean then variance per layer),
    /// flattened in traversal order.
    pub fn flat_running_stats(&mut self) -> Vec<S> {
        self.bn_layers()
            .iter()
            .flat_map(|b| b.running_mean.iter().chain(&b.running_var).copied())
            .collect()
    }

    pub fn set_flat_running_stats(&mut self, flat: &[S]) -> Result<()> {
        let total: usize = self.bn_layers().iter().map(|b| 2 * b.channels()).sum();
        if flat.len() != total {
            return Err(Error::shape(format!(
                "model has {total} running-stat entries, vector holds {}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for layer in self.bn_layers() {
            let c = layer.channels();
            layer.running_mean.copy_from_slice(&flat[offset..offset + c]);
            layer.running_var.copy_from_slice(&flat[offset + c..offset + 2 * c]);
            offset += 2 * c;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::focal_loss_batch;
    use crate::nn::{central_diff_grad, max_rel_err, sigmoid_slice};
    use crate::seed::rng_from;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_size: (8, 8),
            in_channels: 3,
            stage_widths: vec![2, 3],
            blocks_per_stage: vec![1, 1],
            fc_widths: vec![4, 1],
        }
    }

    fn rand_input<S: Scalar>(n: usize, seed: u64) -> Tensor4<S> {
        let mut rng = rng_from(seed);
        let data = (0..n * 3 * 8 * 8)
            .map(|_| S::from_f64(rng.random_range(0.0..1.0)))
            .collect();
        Tensor4::from_vec(n, 3, 8, 8, data).unwrap()
    }

    #[test]
    fn forward_gives_probabilities_in_the_open_interval() {
        let mut model = build_model::<f32>(&tiny_config(), 5).unwrap();
        let logits = model.forward(&rand_input(2, 6), BnMode::Eval).unwrap();
        assert_eq!(logits.len(), 2);
        for p in sigmoid_slice(&logits) {
            assert!(p > 0.0 && p < 1.0, "p={p}");
        }
    }

    #[test]
    fn same_seed_builds_bit_identical_parameters() {
        let mut a = build_model::<f32>(&tiny_config(), 9).unwrap();
        let mut b = build_model::<f32>(&tiny_config(), 9).unwrap();
        let mut c = build_model::<f32>(&tiny_config(), 10).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_ne!(a.flat_params(), c.flat_params());
    }

    #[test]
    fn flat_params_round_trip_through_set() {
        let mut model = build_model::<f32>(&tiny_config(), 11).unwrap();
        let mut params = model.flat_params();
        params.iter_mut().for_each(|p| *p *= 2.0);
        model.set_flat_params(&params).unwrap();
        assert_eq!(model.flat_params(), params);
        assert!(model.set_flat_params(&params[1..]).is_err());
    }

    #[test]
    fn eval_forward_is_pure_and_train_forward_moves_running_stats() {
        let mut model = build_model::<f32>(&tiny_config(), 12).unwrap();
        let x = rand_input(3, 13);
        let a = model.forward(&x, BnMode::Eval).unwrap();
        let b = model.forward(&x, BnMode::Eval).unwrap();
        assert_eq!(a, b);
        let stats_before = model.flat_running_stats();
        model.forward(&x, BnMode::Train).unwrap();
        assert_ne!(model.flat_running_stats(), stats_before);
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let mut model = build_model::<f32>(&tiny_config(), 14).unwrap();
        let x = Tensor4::<f32>::zeros(1, 3, 9, 8);
        assert!(model.forward(&x, BnMode::Eval).is_err());
        let x = Tensor4::<f32>::zeros(1, 1, 8, 8);
        assert!(model.forward(&x, BnMode::Eval).is_err());
    }

    #[test]
    fn full_model_gradient_check_in_double_precision() {
        let config = tiny_config();
        let x = rand_input::<f64>(2, 21);
        let labels = [1u8, 0];

        let mut model = build_model::<f64>(&config, 20).unwrap();
        let base = model.flat_params();

        // analytic gradient of the mean focal loss
        model.zero_grads();
        let logits = model.forward(&x, BnMode::Train).unwrap();
        let (_, grads) = focal_loss_batch(&logits, &labels, 0.25, 2.0).unwrap();
        model.backward(&grads).unwrap();
        let analytic: Vec<f64> = model
            .param_groups()
            .iter()
            .flat_map(|g| g.grads.iter().copied())
            .collect();

        // finite differences over every parameter; batch-norm running-stat
        // updates do not affect the train-mode loss, so the closure may
        // mutate the model freely
        let numeric = central_diff_grad(&base, |params| {
            model.set_flat_params(params)?;
            let logits = model.forward(&x, BnMode::Train)?;
            Ok(focal_loss_batch(&logits, &labels, 0.25, 2.0)?.0)
        })
        .unwrap();

        let err = max_rel_err(&analytic, &numeric);
        assert!(err < 1e-3, "max relative error {err}");
    }
}
