//! Basic residual block: conv-bn-relu-conv-bn plus shortcut, final relu.

use super::{relu_backward, relu_forward, BatchNorm2d, BnMode, Conv2d, Scalar, Tensor4};
use crate::{Error, Result};

/// Two 3x3 convolutions with batch norm and a shortcut. The shortcut is a
/// 1x1 projection (conv + bn) exactly when the block strides or changes the
/// channel count, identity otherwise.
#[derive(Debug, Clone)]
pub struct ResidualBlock<S> {
    pub conv1: Conv2d<S>,
    pub bn1: BatchNorm2d<S>,
    pub conv2: Conv2d<S>,
    pub bn2: BatchNorm2d<S>,
    pub shortcut: Option<(Conv2d<S>, BatchNorm2d<S>)>,
    stride: usize,
    pre_relu1: Option<Tensor4<S>>,
    pre_relu2: Option<Tensor4<S>>,
}

impl<S: Scalar> ResidualBlock<S> {
    pub fn new(
        conv1: Conv2d<S>,
        bn1: BatchNorm2d<S>,
        conv2: Conv2d<S>,
        bn2: BatchNorm2d<S>,
        shortcut: Option<(Conv2d<S>, BatchNorm2d<S>)>,
        stride: usize,
    ) -> Result<Self> {
        let (c_out, c_in, _, _) = conv1.weight.shape();
        let (c2_out, c2_in, _, _) = conv2.weight.shape();
        if c2_in != c_out || c2_out != c_out {
            return Err(Error::shape(format!(
                "residual block: conv2 weight {:?} inconsistent with conv1 output {c_out}",
                conv2.weight.shape()
            )));
        }
        let needs_projection = stride > 1 || c_in != c_out;
        match (&shortcut, needs_projection) {
            (None, true) => {
                return Err(Error::invalid(format!(
                    "residual block: stride {stride}, {c_in}->{c_out} channels requires a \
                     projection shortcut but none was given"
                )))
            }
            (Some(_), false) => {
                return Err(Error::invalid(
                    "residual block: projection shortcut given but stride is 1 and \
                     channel count is unchanged",
                ))
            }
            (Some((pc, _)), true) => {
                let (pco, pci, kh, kw) = pc.weight.shape();
                if pco != c_out || pci != c_in || kh != 1 || kw != 1 || pc.stride != stride {
                    return Err(Error::shape(format!(
                        "residual block: projection weight {:?} stride {} does not match \
                         {c_in}->{c_out} stride {stride}",
                        pc.weight.shape(),
                        pc.stride
                    )));
                }
            }
            (None, false) => {}
        }
        if conv1.stride != stride || conv2.stride != 1 {
            return Err(Error::invalid(format!(
                "residual block: conv strides ({}, {}) must be ({stride}, 1)",
                conv1.stride, conv2.stride
            )));
        }
        Ok(ResidualBlock {
            conv1,
            bn1,
            conv2,
            bn2,
            shortcut,
            stride,
            pre_relu1: None,
            pre_relu2: None,
        })
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn forward(&mut self, x: &Tensor4<S>, mode: BnMode) -> Result<Tensor4<S>> {
        let train = mode == BnMode::Train;
        let a1 = self.bn1.forward(&self.conv1.forward(x, train)?, mode)?;
        let r1 = relu_forward(&a1);
        if train {
            self.pre_relu1 = Some(a1);
        }
        let a2 = self.bn2.forward(&self.conv2.forward(&r1, train)?, mode)?;
        let sc = match &mut self.shortcut {
            None => x.clone(),
            Some((pc, pb)) => pb.forward(&pc.forward(x, train)?, mode)?,
        };
        if sc.shape() != a2.shape() {
            return Err(Error::shape(format!(
                "residual block: main branch {:?} vs shortcut {:?}",
                a2.shape(),
                sc.shape()
            )));
        }
        let mut pre = a2;
        for (a, b) in pre.data_mut().iter_mut().zip(sc.data()) {
            *a = *a + *b;
        }
        let out = relu_forward(&pre);
        if train {
            self.pre_relu2 = Some(pre);
        }
        Ok(out)
    }

    pub fn backward(&mut self, gout: &Tensor4<S>) -> Result<Tensor4<S>> {
        let pre2 = self
            .pre_relu2
            .take()
            .ok_or_else(|| Error::invalid("residual backward called without a cached forward"))?;
        let g_sum = relu_backward(&pre2, gout)?;

        // main branch
        let g_a2 = self.bn2.backward(&g_sum)?;
        let g_r1 = self.conv2.backward(&g_a2)?;
        let pre1 = self
            .pre_relu1
            .take()
            .ok_or_else(|| Error::invalid("residual backward: missing first-relu cache"))?;
        let g_a1 = relu_backward(&pre1, &g_r1)?;
        let mut gx = self.conv1.backward(&self.bn1.backward(&g_a1)?)?;

        // shortcut branch
        let g_sc = match &mut self.shortcut {
            None => g_sum,
            Some((pc, pb)) => pc.backward(&pb.backward(&g_sum)?)?,
        };
        for (a, b) in gx.data_mut().iter_mut().zip(g_sc.data()) {
            *a = *a + *b;
        }
        Ok(gx)
    }

    pub fn zero_grads(&mut self) {
        self.conv1.zero_grads();
        self.bn1.zero_grads();
        self.conv2.zero_grads();
        self.bn2.zero_grads();
        if let Some((pc, pb)) = &mut self.shortcut {
            pc.zero_grads();
            pb.zero_grads();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use rand::Rng;

    fn rand_tensor(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor4<f64> {
        let mut rng = rng_from(seed);
        let data = (0..n * c * h * w)
            .map(|_| rng.random_range(-1.0f64..1.0))
            .collect();
        Tensor4::from_vec(n, c, h, w, data).unwrap()
    }

    fn conv3(c_out: usize, c_in: usize, stride: usize, seed: u64) -> Conv2d<f64> {
        let mut rng = rng_from(seed);
        let data = (0..c_out * c_in * 9)
            .map(|_| rng.random_range(-0.3f64..0.3))
            .collect();
        Conv2d::new(Tensor4::from_vec(c_out, c_in, 3, 3, data).unwrap(), None, stride, 1)
    }

    fn plain_block(channels: usize, seed: u64) -> ResidualBlock<f64> {
        ResidualBlock::new(
            conv3(channels, channels, 1, seed),
            BatchNorm2d::new(channels, 0.1, 1e-5),
            conv3(channels, channels, 1, seed + 1),
            BatchNorm2d::new(channels, 0.1, 1e-5),
            None,
            1,
        )
        .unwrap()
    }

    #[test]
    fn zeroed_second_branch_reduces_to_relu_of_input() {
        let mut block = plain_block(2, 31);
        block.conv2.weight.data_mut().fill(0.0);
        let x = rand_tensor(2, 2, 5, 5, 32);
        let y = block.forward(&x, BnMode::Eval).unwrap();
        assert_eq!(y, relu_forward(&x));
    }

    #[test]
    fn stride_two_halves_spatial_dims_with_projection() {
        let mut rng = rng_from(33);
        let proj_data = (0..8 * 4).map(|_| rng.random_range(-0.5f64..0.5)).collect();
        let proj = Conv2d::new(Tensor4::from_vec(8, 4, 1, 1, proj_data).unwrap(), None, 2, 0);
        let mut block = ResidualBlock::new(
            conv3(8, 4, 2, 34),
            BatchNorm2d::new(8, 0.1, 1e-5),
            conv3(8, 8, 1, 35),
            BatchNorm2d::new(8, 0.1, 1e-5),
            Some((proj, BatchNorm2d::new(8, 0.1, 1e-5))),
            2,
        )
        .unwrap();
        let x = rand_tensor(2, 4, 8, 8, 36);
        let y = block.forward(&x, BnMode::Train).unwrap();
        assert_eq!(y.shape(), (2, 8, 4, 4));
    }

    #[test]
    fn missing_projection_is_rejected() {
        let err = ResidualBlock::new(
            conv3(8, 4, 2, 37),
            BatchNorm2d::new(8, 0.1, 1e-5),
            conv3(8, 8, 1, 38),
            BatchNorm2d::new(8, 0.1, 1e-5),
            None,
            2,
        )
        .unwrap_err();
        assert!(err.to_string().contains("projection"));
    }

    #[test]
    fn spurious_projection_is_rejected() {
        let mut rng = rng_from(39);
        let proj_data = (0..4 * 4).map(|_| rng.random_range(-0.5f64..0.5)).collect();
        let proj = Conv2d::new(Tensor4::from_vec(4, 4, 1, 1, proj_data).unwrap(), None, 1, 0);
        assert!(ResidualBlock::new(
            conv3(4, 4, 1, 40),
            BatchNorm2d::new(4, 0.1, 1e-5),
            conv3(4, 4, 1, 41),
            BatchNorm2d::new(4, 0.1, 1e-5),
            Some((proj, BatchNorm2d::new(4, 0.1, 1e-5))),
            1,
        )
        .is_err());
    }

    #[test]
    fn forward_backward_round_trip_produces_input_shaped_gradient() {
        let mut block = plain_block(3, 42);
        let x = rand_tensor(2, 3, 6, 6, 43);
        let y = block.forward(&x, BnMode::Train).unwrap();
        let g = rand_tensor(2, 3, 6, 6, 44);
        let gx = block.backward(&g).unwrap();
        assert_eq!(gx.shape(), x.shape());
        assert!(y.all_finite() && gx.all_finite());
    }
}
