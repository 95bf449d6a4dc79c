//! Max pooling and global average pooling.

use super::{conv_output_dim, Scalar, Tensor4};
use crate::{Error, Result};

/// Windowed max pool. Returns the pooled tensor and, per output element, the
/// flat index into the input buffer of the selected maximum (argmax). Ties
/// resolve to the first index in row-major window order.
pub fn max_pool_forward<S: Scalar>(
    x: &Tensor4<S>,
    window: usize,
    stride: usize,
) -> Result<(Tensor4<S>, Vec<usize>)> {
    let (n, c, h, w) = x.shape();
    if window == 0 || stride == 0 {
        return Err(Error::invalid("max pool: window and stride must be >= 1"));
    }
    if window > h || window > w {
        return Err(Error::shape(format!(
            "max pool: window {window} larger than input {h}x{w}"
        )));
    }
    let oh = conv_output_dim(h, window, stride, 0);
    let ow = conv_output_dim(w, window, stride, 0);
    let mut out = Tensor4::zeros(n, c, oh, ow);
    let mut argmax = vec![0usize; n * c * oh * ow];

    let mut oi = 0;
    for bn in 0..n {
        for ch in 0..c {
            let base = (bn * c + ch) * h * w;
            let xp = x.plane(bn, ch);
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y0, x0) = (oy * stride, ox * stride);
                    let mut best = xp[y0 * w + x0];
                    let mut best_at = y0 * w + x0;
                    for ky in 0..window {
                        for kx in 0..window {
                            let idx = (y0 + ky) * w + (x0 + kx);
                            if xp[idx] > best {
                                best = xp[idx];
                                best_at = idx;
                            }
                        }
                    }
                    *out.at_mut(bn, ch, oy, ox) = best;
                    argmax[oi] = base + best_at;
                    oi += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Scatters the upstream gradient back to the recorded argmax positions.
pub fn max_pool_backward<S: Scalar>(
    input_shape: (usize, usize, usize, usize),
    argmax: &[usize],
    gout: &Tensor4<S>,
) -> Result<Tensor4<S>> {
    if argmax.len() != gout.len() {
        return Err(Error::shape(format!(
            "max pool backward: {} argmax entries vs {} gradient elements",
            argmax.len(),
            gout.len()
        )));
    }
    let (n, c, h, w) = input_shape;
    let mut gx = Tensor4::zeros(n, c, h, w);
    let buf = gx.data_mut();
    for (&idx, &g) in argmax.iter().zip(gout.data()) {
        if idx >= buf.len() {
            return Err(Error::shape(format!(
                "max pool backward: argmax index {idx} outside input of {} elements",
                buf.len()
            )));
        }
        buf[idx] = buf[idx] + g;
    }
    Ok(gx)
}

/// Per-channel spatial mean; output is (N, C, 1, 1).
pub fn global_avg_pool_forward<S: Scalar>(x: &Tensor4<S>) -> Tensor4<S> {
    let (n, c, h, w) = x.shape();
    let m = S::from_usize(h * w);
    let mut out = Tensor4::zeros(n, c, 1, 1);
    for bn in 0..n {
        for ch in 0..c {
            let mut sum = S::zero();
            for &v in x.plane(bn, ch) {
                sum = sum + v;
            }
            *out.at_mut(bn, ch, 0, 0) = sum / m;
        }
    }
    out
}

/// Spreads each (N, C) gradient uniformly over the original H×W plane.
pub fn global_avg_pool_backward<S: Scalar>(
    input_shape: (usize, usize, usize, usize),
    gout: &Tensor4<S>,
) -> Result<Tensor4<S>> {
    let (n, c, h, w) = input_shape;
    if gout.shape() != (n, c, 1, 1) {
        return Err(Error::shape(format!(
            "global avg pool backward: upstream gradient {:?}, expected ({n},{c},1,1)",
            gout.shape()
        )));
    }
    let m = S::from_usize(h * w);
    let mut gx = Tensor4::zeros(n, c, h, w);
    for bn in 0..n {
        for ch in 0..c {
            let g = gout.at(bn, ch, 0, 0) / m;
            gx.plane_mut(bn, ch).fill(g);
        }
    }
    Ok(gx)
}
