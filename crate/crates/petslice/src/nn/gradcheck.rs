//! Finite-difference verification harness for layer backward passes.
//!
//! Every check runs in double precision: central differences with step 1e-5
//! against the analytic gradients, reported as a guarded relative error per
//! parameter group.

use super::{
    conv2d_backward, conv2d_forward, global_avg_pool_backward, global_avg_pool_forward,
    max_pool_backward, max_pool_forward, relu_backward, relu_forward, BatchNorm2d, BnMode, Conv2d,
    Matrix, ResidualBlock, Tensor4,
};
use crate::seed::rng_from;
use crate::Result;
use rand::Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Numeric gradient of `loss` at `params` by central differences.
pub fn central_diff_grad<F>(params: &[f64], mut loss: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut work = params.to_vec();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let p0 = work[i];
        work[i] = p0 + FD_STEP;
        let up = loss(&work)?;
        work[i] = p0 - FD_STEP;
        let down = loss(&work)?;
        work[i] = p0;
        grad[i] = (up - down) / (2.0 * FD_STEP);
    }
    Ok(grad)
}

/// Max over elements of |a−n| / max(|a|, |n|, 0.01). The floor keeps
/// finite-difference noise on near-zero gradients from dominating the report
/// while still catching errors at any practically relevant magnitude.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-2))
        .fold(0.0, f64::max)
}

/// Per-group comparison of analytic vs finite-difference gradients.
#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub max_rel_err: f64,
    pub len: usize,
}

/// Collection of group reports for one layer or model check.
#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn add_group(&mut self, name: &str, analytic: &[f64], numeric: &[f64]) {
        self.groups.push(GroupReport {
            name: name.to_string(),
            max_rel_err: max_rel_err(analytic, numeric),
            len: analytic.len(),
        });
    }

    /// Worst error across all groups (0 when empty).
    pub fn worst(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    /// Groups exceeding the tolerance.
    pub fn flagged(&self, tolerance: f64) -> Vec<&GroupReport> {
        self.groups
            .iter()
            .filter(|g| !(g.max_rel_err < tolerance))
            .collect()
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.flagged(tolerance).is_empty()
    }
}

fn rand_vec(rng: &mut impl Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

fn weighted_sum(y: &[f64], r: &[f64]) -> f64 {
    y.iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Linear layer check: weight, bias, and input gradients.
pub fn check_linear(seed: u64) -> Result<GradCheckReport> {
    let mut rng = rng_from(seed);
    let (n, f, g) = (4, 8, 3);
    let w = rand_vec(&mut rng, g * f, -0.5, 0.5);
    let b = rand_vec(&mut rng, g, -0.5, 0.5);
    let x = rand_vec(&mut rng, n * f, -1.0, 1.0);
    let r = rand_vec(&mut rng, n * g, -1.0, 1.0);

    let loss = |p: &[f64]| -> Result<f64> {
        let (wp, rest) = p.split_at(g * f);
        let (bp, xp) = rest.split_at(g);
        let wm = Matrix::from_vec(g, f, wp.to_vec())?;
        let xm = Matrix::from_vec(n, f, xp.to_vec())?;
        let y = super::linear_forward(&xm, &wm, Some(bp))?;
        Ok(weighted_sum(y.data(), &r))
    };
    let params: Vec<f64> = w.iter().chain(&b).chain(&x).copied().collect();
    let numeric = central_diff_grad(&params, loss)?;

    let wm = Matrix::from_vec(g, f, w)?;
    let xm = Matrix::from_vec(n, f, x)?;
    let rm = Matrix::from_vec(n, g, r)?;
    let (gx, gw, gb) = super::linear_backward(&xm, &wm, &rm)?;

    let mut report = GradCheckReport::default();
    report.add_group("linear.weight", gw.data(), &numeric[..g * f]);
    report.add_group("linear.bias", &gb, &numeric[g * f..g * f + g]);
    report.add_group("linear.input", gx.data(), &numeric[g * f + g..]);
    Ok(report)
}

/// Convolution check; alternates stride 1 and 2 across seeds.
pub fn check_conv2d(seed: u64) -> Result<GradCheckReport> {
    let mut rng = rng_from(seed);
    let (n, ci, co, h, wd, k) = (2, 2, 3, 5, 5, 3);
    let stride = 1 + (seed % 2) as usize;
    let padding = 1;
    let w = rand_vec(&mut rng, co * ci * k * k, -0.5, 0.5);
    let b = rand_vec(&mut rng, co, -0.5, 0.5);
    let x = rand_vec(&mut rng, n * ci * h * wd, -1.0, 1.0);
    let oh = super::conv_output_dim(h, k, stride, padding);
    let ow = super::conv_output_dim(wd, k, stride, padding);
    let r = rand_vec(&mut rng, n * co * oh * ow, -1.0, 1.0);

    let loss = |p: &[f64]| -> Result<f64> {
        let (wp, rest) = p.split_at(co * ci * k * k);
        let (bp, xp) = rest.split_at(co);
        let wt = Tensor4::from_vec(co, ci, k, k, wp.to_vec())?;
        let xt = Tensor4::from_vec(n, ci, h, wd, xp.to_vec())?;
        let y = conv2d_forward(&xt, &wt, Some(bp), stride, padding)?;
        Ok(weighted_sum(y.data(), &r))
    };
    let params: Vec<f64> = w.iter().chain(&b).chain(&x).copied().collect();
    let numeric = central_diff_grad(&params, loss)?;

    let wt = Tensor4::from_vec(co, ci, k, k, w)?;
    let xt = Tensor4::from_vec(n, ci, h, wd, x)?;
    let rt = Tensor4::from_vec(n, co, oh, ow, r)?;
    let (gx, gw, gb) = conv2d_backward(&xt, &wt, &rt, stride, padding)?;

    let nw = co * ci * k * k;
    let mut report = GradCheckReport::default();
    report.add_group("conv.weight", gw.data(), &numeric[..nw]);
    report.add_group("conv.bias", &gb, &numeric[nw..nw + co]);
    report.add_group("conv.input", gx.data(), &numeric[nw + co..]);
    Ok(report)
}

/// Batch-norm check in train mode: gamma, beta, and input gradients.
pub fn check_batchnorm(seed: u64) -> Result<GradCheckReport> {
    let mut rng = rng_from(seed);
    let (n, c, h, w) = (3, 2, 4, 4);
    let gamma = rand_vec(&mut rng, c, 0.5, 1.5);
    let beta = rand_vec(&mut rng, c, -0.5, 0.5);
    let x = rand_vec(&mut rng, n * c * h * w, -1.0, 1.0);
    let r = rand_vec(&mut rng, n * c * h * w, -1.0, 1.0);

    let loss = |p: &[f64]| -> Result<f64> {
        let (gp, rest) = p.split_at(c);
        let (bp, xp) = rest.split_at(c);
        let mut bn = BatchNorm2d::new(c, 0.1, 1e-5);
        bn.gamma = gp.to_vec();
        bn.beta = bp.to_vec();
        let xt = Tensor4::from_vec(n, c, h, w, xp.to_vec())?;
        let y = bn.forward(&xt, BnMode::Train)?;
        Ok(weighted_sum(y.data(), &r))
    };
    let params: Vec<f64> = gamma.iter().chain(&beta).chain(&x).copied().collect();
    let numeric = central_diff_grad(&params, loss)?;

    let mut bn = BatchNorm2d::new(c, 0.1, 1e-5);
    bn.gamma = gamma;
    bn.beta = beta;
    let xt = Tensor4::from_vec(n, c, h, w, x)?;
    bn.forward(&xt, BnMode::Train)?;
    let rt = Tensor4::from_vec(n, c, h, w, r)?;
    let gx = bn.backward(&rt)?;

    let mut report = GradCheckReport::default();
    report.add_group("bn.gamma", &bn.grad_gamma, &numeric[..c]);
    report.add_group("bn.beta", &bn.grad_beta, &numeric[c..2 * c]);
    report.add_group("bn.input", gx.data(), &numeric[2 * c..]);
    Ok(report)
}

/// ReLU check on inputs bounded away from the kink at zero.
pub fn check_relu(seed: u64) -> Result<GradCheckReport> {
    let mut rng = rng_from(seed);
    let (n, c, h, w) = (2, 3, 4, 4);
    let x: Vec<f64> = (0..n * c * h * w)
        .map(|_| {
            let mag = rng.random_range(0.1f64..1.0);
            if rng.random_range(0..2) == 0 {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let r = rand_vec(&mut rng, n * c * h * w, -1.0, 1.0);

    let loss = |p: &[f64]| -> Result<f64> {
        let xt = Tensor4::from_vec(n, c, h, w, p.to_vec())?;
        Ok(weighted_sum(relu_forward(&xt).data(), &r))
    };
    let numeric = central_diff_grad(&x, loss)?;

    let xt = Tensor4::from_vec(n, c, h, w, x)?;
    let rt = Tensor4::from_vec(n, c, h, w, r)?;
    let gx = relu_backward(&xt, &rt)?;

    let mut report = GradCheckReport::default();
    report.add_group("relu.input", gx.data(), &numeric);
    Ok(report)
}

/// Pooling check: max pool on values with pairwise gaps far above the
/// finite-difference step (so the argmax is stable), plus global average.
pub fn check_pool(seed: u64) -> Result<GradCheckReport> {
    let mut rng = rng_from(seed);
    let (n, c, h, w) = (2, 2, 6, 6);
    let len = n * c * h * w;
    let mut order: Vec<usize> = (0..len).collect();
    rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
    let x: Vec<f64> = order.iter().map(|&i| i as f64 * 0.037 - 1.3).collect();
    let r_max = rand_vec(&mut rng, n * c * 3 * 3, -1.0, 1.0);
    let r_avg = rand_vec(&mut rng, n * c, -1.0, 1.0);

    let loss_max = |p: &[f64]| -> Result<f64> {
        let xt = Tensor4::from_vec(n, c, h, w, p.to_vec())?;
        let (y, _) = max_pool_forward(&xt, 2, 2)?;
        Ok(weighted_sum(y.data(), &r_max))
    };
    let numeric_max = central_diff_grad(&x, loss_max)?;

    let loss_avg = |p: &[f64]| -> Result<f64> {
        let xt = Tensor4::from_vec(n, c, h, w, p.to_vec())?;
        Ok(weighted_sum(global_avg_pool_forward(&xt).data(), &r_avg))
    };
    let numeric_avg = central_diff_grad(&x, loss_avg)?;

    let xt = Tensor4::from_vec(n, c, h, w, x)?;
    let (ym, argmax) = max_pool_forward(&xt, 2, 2)?;
    let rt = Tensor4::from_vec(n, c, ym.height(), ym.width(), r_max.clone())?;
    let gx_max = max_pool_backward(xt.shape(), &argmax, &rt)?;
    let ra = Tensor4::from_vec(n, c, 1, 1, r_avg.clone())?;
    let gx_avg = global_avg_pool_backward(xt.shape(), &ra)?;

    let mut report = GradCheckReport::default();
    report.add_group("max_pool.input", gx_max.data(), &numeric_max);
    report.add_group("global_avg.input", gx_avg.data(), &numeric_avg);
    Ok(report)
}

fn block_from_params(
    p: &[f64],
    c_in: usize,
    c_out: usize,
    stride: usize,
) -> Result<(ResidualBlock<f64>, Vec<usize>)> {
    // layout: conv1.w, bn1.gamma, bn1.beta, conv2.w, bn2.gamma, bn2.beta,
    // [proj.w, pbn.gamma, pbn.beta]
    let mut sizes = vec![c_out * c_in * 9, c_out, c_out, c_out * c_out * 9, c_out, c_out];
    let needs_proj = stride > 1 || c_in != c_out;
    if needs_proj {
        sizes.extend([c_out * c_in, c_out, c_out]);
    }
    let mut parts = Vec::new();
    let mut off = 0;
    for &s in &sizes {
        parts.push(p[off..off + s].to_vec());
        off += s;
    }
    let conv1 = Conv2d::new(
        Tensor4::from_vec(c_out, c_in, 3, 3, parts[0].clone())?,
        None,
        stride,
        1,
    );
    let mut bn1 = BatchNorm2d::new(c_out, 0.1, 1e-5);
    bn1.gamma = parts[1].clone();
    bn1.beta = parts[2].clone();
    let conv2 = Conv2d::new(
        Tensor4::from_vec(c_out, c_out, 3, 3, parts[3].clone())?,
        None,
        1,
        1,
    );
    let mut bn2 = BatchNorm2d::new(c_out, 0.1, 1e-5);
    bn2.gamma = parts[4].clone();
    bn2.beta = parts[5].clone();
    let shortcut = if needs_proj {
        let pc = Conv2d::new(
            Tensor4::from_vec(c_out, c_in, 1, 1, parts[6].clone())?,
            None,
            stride,
            0,
        );
        let mut pb = BatchNorm2d::new(c_out, 0.1, 1e-5);
        pb.gamma = parts[7].clone();
        pb.beta = parts[8].clone();
        Some((pc, pb))
    } else {
        None
    };
    let block = ResidualBlock::new(conv1, bn1, conv2, bn2, shortcut, stride)?;
    Ok((block, sizes))
}

/// Full residual-block check in train mode; odd seeds use a strided block
/// with a projection shortcut.
pub fn check_residual_block(seed: u64) -> Result<GradCheckReport> {
    let mut rng = rng_from(seed);
    let (c_in, h, w) = (2, 4, 4);
    let (c_out, stride) = if seed % 2 == 0 { (2, 1) } else { (3, 2) };
    let n = 2;
    let needs_proj = stride > 1 || c_in != c_out;

    let mut param_len = c_out * c_in * 9 + 2 * c_out + c_out * c_out * 9 + 2 * c_out;
    if needs_proj {
        param_len += c_out * c_in + 2 * c_out;
    }
    let mut params = Vec::with_capacity(param_len + n * c_in * h * w);
    // conv weights small, bn affine near identity
    let mut sizes = vec![c_out * c_in * 9, c_out, c_out, c_out * c_out * 9, c_out, c_out];
    if needs_proj {
        sizes.extend([c_out * c_in, c_out, c_out]);
    }
    for (i, &s) in sizes.iter().enumerate() {
        let affine_gamma = i == 1 || i == 4 || i == 7;
        for _ in 0..s {
            params.push(if affine_gamma {
                rng.random_range(0.7f64..1.3)
            } else {
                rng.random_range(-0.4f64..0.4)
            });
        }
    }
    let x = rand_vec(&mut rng, n * c_in * h * w, -1.0, 1.0);
    params.extend(&x);
    let oh = if stride == 2 { h / 2 } else { h };
    let r = rand_vec(&mut rng, n * c_out * oh * oh, -1.0, 1.0);

    let loss = |p: &[f64]| -> Result<f64> {
        let (bp, xp) = p.split_at(param_len);
        let (mut block, _) = block_from_params(bp, c_in, c_out, stride)?;
        let xt = Tensor4::from_vec(n, c_in, h, w, xp.to_vec())?;
        let y = block.forward(&xt, BnMode::Train)?;
        Ok(weighted_sum(y.data(), &r))
    };
    let numeric = central_diff_grad(&params, loss)?;

    let (mut block, sizes) = block_from_params(&params[..param_len], c_in, c_out, stride)?;
    let xt = Tensor4::from_vec(n, c_in, h, w, x)?;
    block.forward(&xt, BnMode::Train)?;
    let rt = Tensor4::from_vec(n, c_out, oh, oh, r)?;
    let gx = block.backward(&rt)?;

    let mut analytic: Vec<&[f64]> = vec![
        block.conv1.grad_weight.data(),
        &block.bn1.grad_gamma,
        &block.bn1.grad_beta,
        block.conv2.grad_weight.data(),
        &block.bn2.grad_gamma,
        &block.bn2.grad_beta,
    ];
    if let Some((pc, pb)) = &block.shortcut {
        analytic.push(pc.grad_weight.data());
        analytic.push(&pb.grad_gamma);
        analytic.push(&pb.grad_beta);
    }
    let names = [
        "block.conv1.weight",
        "block.bn1.gamma",
        "block.bn1.beta",
        "block.conv2.weight",
        "block.bn2.gamma",
        "block.bn2.beta",
        "block.proj.weight",
        "block.proj_bn.gamma",
        "block.proj_bn.beta",
    ];
    let mut report = GradCheckReport::default();
    let mut off = 0;
    for (i, (a, &s)) in analytic.iter().zip(&sizes).enumerate() {
        report.add_group(names[i], a, &numeric[off..off + s]);
        off += s;
    }
    report.add_group("block.input", gx.data(), &numeric[param_len..]);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let report = check_linear(seed).unwrap();
            assert!(
                report.passes(1e-6),
                "seed {seed}: worst {}",
                report.worst()
            );
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let report = check_conv2d(seed).unwrap();
            assert!(
                report.passes(1e-5),
                "seed {seed}: worst {}",
                report.worst()
            );
        }
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let report = check_batchnorm(seed).unwrap();
            assert!(
                report.passes(1e-4),
                "seed {seed}: worst {}",
                report.worst()
            );
        }
    }

    #[test]
    fn relu_gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let report = check_relu(seed).unwrap();
            assert!(
                report.passes(1e-4),
                "seed {seed}: worst {}",
                report.worst()
            );
        }
    }

    #[test]
    fn pool_gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let report = check_pool(seed).unwrap();
            assert!(
                report.passes(1e-5),
                "seed {seed}: worst {}",
                report.worst()
            );
        }
    }

    #[test]
    fn residual_block_gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let report = check_residual_block(seed).unwrap();
            assert!(
                report.passes(1e-3),
                "seed {seed}: worst {}",
                report.worst()
            );
        }
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let report = check_linear(0).unwrap();
        let mut bad = GradCheckReport::default();
        let doubled: Vec<f64> = vec![2.0; 8];
        let truth: Vec<f64> = vec![1.0; 8];
        bad.add_group("sabotaged", &doubled, &truth);
        assert!(!bad.passes(1e-3));
        assert_eq!(bad.flagged(1e-3).len(), 1);
        // sanity: the genuine report has no flagged groups at the same tolerance
        assert!(report.flagged(1e-3).is_empty());
    }

    #[test]
    fn max_rel_err_uses_guarded_denominator() {
        // tiny values: absolute difference 1e-9 against the 1e-2 floor
        assert!(max_rel_err(&[1e-9], &[2e-9]) < 1e-6);
        // large values: plain relative error
        let e = max_rel_err(&[100.0], &[101.0]);
        assert!((e - 1.0 / 101.0).abs() < 1e-12);
    }
}
