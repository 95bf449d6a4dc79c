//! 2D convolution with hand-derived backward pass.

use super::{Scalar, Tensor4};
use crate::{Error, Result};

/// floor((input + 2*padding - kernel)/stride) + 1
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

fn check_geometry<S: Scalar>(
    x: &Tensor4<S>,
    w: &Tensor4<S>,
    bias: Option<&[S]>,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    let (_, ci_x, h, wd) = x.shape();
    let (co, ci_w, kh, kw) = w.shape();
    if stride == 0 {
        return Err(Error::invalid("conv2d: stride must be >= 1"));
    }
    if ci_x != ci_w {
        return Err(Error::shape(format!(
            "conv2d: input has {ci_x} channels but kernel expects {ci_w} \
             (input {:?}, kernel {:?})",
            x.shape(),
            w.shape()
        )));
    }
    if kh > h + 2 * padding || kw > wd + 2 * padding {
        return Err(Error::shape(format!(
            "conv2d: kernel {kh}x{kw} larger than padded input {}x{} \
             (input {:?}, padding {padding})",
            h + 2 * padding,
            wd + 2 * padding,
            x.shape()
        )));
    }
    if let Some(b) = bias {
        if b.len() != co {
            return Err(Error::shape(format!(
                "conv2d: bias length {} does not match {co} output channels",
                b.len()
            )));
        }
    }
    Ok((
        conv_output_dim(h, kh, stride, padding),
        conv_output_dim(wd, kw, stride, padding),
    ))
}

/// Forward convolution. `w` has shape (out_channels, in_channels, kh, kw).
pub fn conv2d_forward<S: Scalar>(
    x: &Tensor4<S>,
    w: &Tensor4<S>,
    bias: Option<&[S]>,
    stride: usize,
    padding: usize,
) -> Result<Tensor4<S>> {
    let (oh, ow) = check_geometry(x, w, bias, stride, padding)?;
    let (n, ci, h, wd) = x.shape();
    let (co, _, kh, kw) = w.shape();
    let mut out = Tensor4::zeros(n, co, oh, ow);

    let fused3 = kh == 3 && kw == 3 && stride == 1 && padding == 1 && wd >= 2;
    let mut buf = vec![S::zero(); if fused3 { ow } else { 0 }];
    for bn in 0..n {
        for oc in 0..co {
            let oplane = out.plane_mut(bn, oc);
            if let Some(b) = bias {
                oplane.fill(b[oc]);
            }
            if fused3 {
                // Row-buffered stencil: every input channel's nine taps land
                // in an L1-resident row before one write-back, instead of a
                // read-modify-write pass over the output per kernel row.
                for oy in 0..oh {
                    let orow = &mut oplane[oy * ow..(oy + 1) * ow];
                    buf.copy_from_slice(orow);
                    for icn in 0..ci {
                        forward_3x3_row(x.plane(bn, icn), w.plane(oc, icn), &mut buf, oy, h, wd);
                    }
                    orow.copy_from_slice(&buf);
                }
                continue;
            }
            for icn in 0..ci {
                let xp = x.plane(bn, icn);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = w.at(oc, icn, ky, kx);
                        // ox range with in-bounds input column ix = ox*stride - padding + kx
                        let (ox_lo, ox_hi) = valid_range(ow, wd, stride, padding, kx);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let off = kx as isize - padding as isize;
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = &xp[iy as usize * wd..(iy as usize + 1) * wd];
                            let orow = &mut oplane[oy * ow..(oy + 1) * ow];
                            if stride == 1 {
                                // Unit stride reads a contiguous input segment;
                                // exact-length zips keep the loop free of bounds
                                // checks so it vectorizes.
                                let xs = (ox_lo as isize + off) as usize;
                                let xseg = &xrow[xs..xs + (ox_hi - ox_lo)];
                                for (o, &xv) in orow[ox_lo..ox_hi].iter_mut().zip(xseg) {
                                    *o = *o + wv * xv;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = (ox * stride) as isize + off;
                                    orow[ox] = orow[ox] + wv * xrow[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One input channel's contribution to one buffered output row for the
/// dominant 3x3 / stride 1 / padding 1 case, horizontal taps fused.
///
/// Taps stay ascending in (ky, kx), so the accumulation order — and
/// therefore every output bit — matches the generic tap-by-tap path.
fn forward_3x3_row<S: Scalar>(xp: &[S], k: &[S], buf: &mut [S], oy: usize, h: usize, w: usize) {
    for ky in 0..3 {
        let Some(iy) = (oy + ky).checked_sub(1).filter(|&iy| iy < h) else {
            continue;
        };
        let xrow = &xp[iy * w..(iy + 1) * w];
        let (w0, w1, w2) = (k[ky * 3], k[ky * 3 + 1], k[ky * 3 + 2]);
        buf[0] = buf[0] + w1 * xrow[0] + w2 * xrow[1];
        let inner = buf[1..w - 1]
            .iter_mut()
            .zip(&xrow[..w - 2])
            .zip(&xrow[1..w - 1])
            .zip(&xrow[2..]);
        for (((o, &a), &b), &c) in inner {
            *o = *o + w0 * a + w1 * b + w2 * c;
        }
        buf[w - 1] = buf[w - 1] + w0 * xrow[w - 2] + w1 * xrow[w - 1];
    }
}

/// The backward counterpart of [`forward_3x3_plane`]: one (input, output)
/// plane pair's contribution to the input gradient and the nine weight
/// gradients, horizontal taps fused.
fn backward_3x3_plane<S: Scalar>(
    xp: &[S],
    gp: &[S],
    k: &[S],
    gxp: &mut [S],
    gwp: &mut [S],
    h: usize,
    w: usize,
) {
    for oy in 0..h {
        let grow = &gp[oy * w..(oy + 1) * w];
        for ky in 0..3 {
            let Some(iy) = (oy + ky).checked_sub(1).filter(|&iy| iy < h) else {
                continue;
            };
            let xrow = &xp[iy * w..(iy + 1) * w];
            let gxrow = &mut gxp[iy * w..(iy + 1) * w];
            let (w0, w1, w2) = (k[ky * 3], k[ky * 3 + 1], k[ky * 3 + 2]);
            // Input gradient: gx[j] collects w0*g[j+1] + w1*g[j] + w2*g[j-1].
            gxrow[0] = gxrow[0] + w0 * grow[1] + w1 * grow[0];
            let inner = gxrow[1..w - 1]
                .iter_mut()
                .zip(&grow[2..])
                .zip(&grow[1..w - 1])
                .zip(&grow[..w - 2]);
            for (((g, &a), &b), &c) in inner {
                *g = *g + w0 * a + w1 * b + w2 * c;
            }
            gxrow[w - 1] = gxrow[w - 1] + w1 * grow[w - 1] + w2 * grow[w - 2];
            // Weight gradients: each tap is a dot of the gradient row with
            // the input row at that tap's horizontal shift.
            gwp[ky * 3] = gwp[ky * 3] + dot_lanes(&grow[1..], &xrow[..w - 1]);
            gwp[ky * 3 + 1] = gwp[ky * 3 + 1] + dot_lanes(grow, xrow);
            gwp[ky * 3 + 2] = gwp[ky * 3 + 2] + dot_lanes(&grow[..w - 1], &xrow[1..]);
        }
    }
}

/// Dot product with eight independent accumulator lanes folded in a fixed
/// order: deterministic, and the lanes let the compiler vectorize what a
/// single sequential f32 accumulator would forbid.
#[inline]
fn dot_lanes<S: Scalar>(a: &[S], b: &[S]) -> S {
    const LANES: usize = 8;
    let mut acc = [S::zero(); LANES];
    let whole = a.len() / LANES * LANES;
    for (ac, bc) in a[..whole].chunks_exact(LANES).zip(b[..whole].chunks_exact(LANES)) {
        for l in 0..LANES {
            acc[l] = acc[l] + ac[l] * bc[l];
        }
    }
    let mut sum = S::zero();
    for l in 0..LANES {
        sum = sum + acc[l];
    }
    for (&av, &bv) in a[whole..].iter().zip(&b[whole..]) {
        sum = sum + av * bv;
    }
    sum
}

#[inline]
fn valid_range(ow: usize, in_w: usize, stride: usize, padding: usize, kx: usize) -> (usize, usize) {
    // smallest ox with ox*stride + kx - padding >= 0
    let lo = if kx >= padding {
        0
    } else {
        (padding - kx).div_ceil(stride)
    };
    // largest ox with ox*stride + kx - padding <= in_w - 1
    let hi_num = in_w as isize - 1 + padding as isize - kx as isize;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num as usize) / stride + 1;
    (lo.min(ow), hi.min(ow))
}

/// Backward convolution: upstream gradient -> (input grad, weight grad, bias grad).
pub fn conv2d_backward<S: Scalar>(
    x: &Tensor4<S>,
    w: &Tensor4<S>,
    gout: &Tensor4<S>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor4<S>, Tensor4<S>, Vec<S>)> {
    let (oh, ow) = check_geometry(x, w, None, stride, padding)?;
    let (n, ci, h, wd) = x.shape();
    let (co, _, kh, kw) = w.shape();
    if gout.shape() != (n, co, oh, ow) {
        return Err(Error::shape(format!(
            "conv2d backward: upstream gradient {:?} does not match output shape ({n},{co},{oh},{ow})",
            gout.shape()
        )));
    }

    let mut gx = Tensor4::zeros(n, ci, h, wd);
    let mut gw = Tensor4::zeros(co, ci, kh, kw);
    let mut gb = vec![S::zero(); co];

    let fused3 = kh == 3 && kw == 3 && stride == 1 && padding == 1 && wd >= 2;
    for bn in 0..n {
        for oc in 0..co {
            let gp = gout.plane(bn, oc);
            let mut bsum = S::zero();
            for &g in gp {
                bsum = bsum + g;
            }
            gb[oc] = gb[oc] + bsum;

            for icn in 0..ci {
                let xp = x.plane(bn, icn);
                let gxp = gx.plane_mut(bn, icn);
                if fused3 {
                    backward_3x3_plane(xp, gp, w.plane(oc, icn), gxp, gw.plane_mut(oc, icn), h, wd);
                    continue;
                }
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = w.at(oc, icn, ky, kx);
                        let (ox_lo, ox_hi) = valid_range(ow, wd, stride, padding, kx);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let off = kx as isize - padding as isize;
                        let mut wsum = S::zero();
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let grow = &gp[oy * ow..(oy + 1) * ow];
                            let xrow = &xp[iy as usize * wd..(iy as usize + 1) * wd];
                            let gxrow = &mut gxp[iy as usize * wd..(iy as usize + 1) * wd];
                            if stride == 1 {
                                let xs = (ox_lo as isize + off) as usize;
                                let span = ox_hi - ox_lo;
                                let gseg = &grow[ox_lo..ox_hi];
                                for (gxv, &g) in
                                    gxrow[xs..xs + span].iter_mut().zip(gseg)
                                {
                                    *gxv = *gxv + wv * g;
                                }
                                wsum = wsum + dot_lanes(gseg, &xrow[xs..xs + span]);
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = ((ox * stride) as isize + off) as usize;
                                    gxrow[ix] = gxrow[ix] + wv * grow[ox];
                                    wsum = wsum + grow[ox] * xrow[ix];
                                }
                            }
                        }
                        *gw.at_mut(oc, icn, ky, kx) = gw.at(oc, icn, ky, kx) + wsum;
                    }
                }
            }
        }
    }
    Ok((gx, gw, gb))
}

/// Convolution layer: owns parameters, gradient buffers, and the forward cache.
#[derive(Debug, Clone)]
pub struct Conv2d<S> {
    pub weight: Tensor4<S>,
    pub bias: Option<Vec<S>>,
    pub grad_weight: Tensor4<S>,
    pub grad_bias: Option<Vec<S>>,
    pub stride: usize,
    pub padding: usize,
    cache: Option<Tensor4<S>>,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(weight: Tensor4<S>, bias: Option<Vec<S>>, stride: usize, padding: usize) -> Self {
        let (co, ci, kh, kw) = weight.shape();
        Conv2d {
            grad_weight: Tensor4::zeros(co, ci, kh, kw),
            grad_bias: bias.as_ref().map(|b| vec![S::zero(); b.len()]),
            weight,
            bias,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor4<S>, train: bool) -> Result<Tensor4<S>> {
        let y = conv2d_forward(x, &self.weight, self.bias.as_deref(), self.stride, self.padding)?;
        if train {
            self.cache = Some(x.clone());
        }
        Ok(y)
    }

    /// Consumes the cached input; accumulates parameter gradients.
    pub fn backward(&mut self, gout: &Tensor4<S>) -> Result<Tensor4<S>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::invalid("conv2d backward called without a cached forward"))?;
        let (gx, gw, gb) = conv2d_backward(&x, &self.weight, gout, self.stride, self.padding)?;
        for (a, b) in self.grad_weight.data_mut().iter_mut().zip(gw.data()) {
            *a = *a + *b;
        }
        if let Some(gbias) = &mut self.grad_bias {
            for (a, b) in gbias.iter_mut().zip(gb.iter()) {
                *a = *a + *b;
            }
        }
        Ok(gx)
    }

    pub fn zero_grads(&mut self) {
        self.grad_weight.data_mut().fill(S::zero());
        if let Some(gb) = &mut self.grad_bias {
            gb.fill(S::zero());
        }
    }
}
