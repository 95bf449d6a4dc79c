//! Fully-connected layer on row-major matrices.

use super::{Matrix, Scalar};
use crate::{Error, Result};

/// output = input · Wᵀ + bias, with `w` shaped (out_features, in_features).
pub fn linear_forward<S: Scalar>(
    x: &Matrix<S>,
    w: &Matrix<S>,
    bias: Option<&[S]>,
) -> Result<Matrix<S>> {
    let (n, f) = (x.rows(), x.cols());
    let (g, fw) = (w.rows(), w.cols());
    if f != fw {
        return Err(Error::shape(format!(
            "linear: input has {f} features, weight expects {fw} (weight {g}x{fw})"
        )));
    }
    if let Some(b) = bias {
        if b.len() != g {
            return Err(Error::shape(format!(
                "linear: bias length {} vs {g} output features",
                b.len()
            )));
        }
    }
    let mut out = Matrix::zeros(n, g);
    for r in 0..n {
        let xr = x.row(r);
        for o in 0..g {
            let wr = w.row(o);
            let mut acc = bias.map(|b| b[o]).unwrap_or_else(S::zero);
            for (&xv, &wv) in xr.iter().zip(wr) {
                acc = acc + xv * wv;
            }
            *out.at_mut(r, o) = acc;
        }
    }
    Ok(out)
}

/// Upstream gradient (N × G) -> input gradient (N × F), weight gradient
/// (G × F), bias gradient (G).
pub fn linear_backward<S: Scalar>(
    x: &Matrix<S>,
    w: &Matrix<S>,
    gout: &Matrix<S>,
) -> Result<(Matrix<S>, Matrix<S>, Vec<S>)> {
    let (n, f) = (x.rows(), x.cols());
    let (g, fw) = (w.rows(), w.cols());
    if f != fw {
        return Err(Error::shape(format!(
            "linear backward: input has {f} features, weight expects {fw}"
        )));
    }
    if gout.rows() != n || gout.cols() != g {
        return Err(Error::shape(format!(
            "linear backward: upstream gradient {}x{}, expected {n}x{g}",
            gout.rows(),
            gout.cols()
        )));
    }
    let mut gx = Matrix::zeros(n, f);
    let mut gw = Matrix::zeros(g, f);
    let mut gb = vec![S::zero(); g];

    for r in 0..n {
        let gr = gout.row(r);
        let xr = x.row(r);
        for o in 0..g {
            let gv = gr[o];
            gb[o] = gb[o] + gv;
            let wr = w.row(o);
            let gxr = gx.row_mut(r);
            for (c, &wv) in wr.iter().enumerate() {
                gxr[c] = gxr[c] + gv * wv;
            }
            let gwr = gw.row_mut(o);
            for (c, &xv) in xr.iter().enumerate() {
                gwr[c] = gwr[c] + gv * xv;
            }
        }
    }
    Ok((gx, gw, gb))
}

/// Fully-connected layer owning parameters, gradients, and the forward cache.
#[derive(Debug, Clone)]
pub struct Linear<S> {
    pub weight: Matrix<S>,
    pub bias: Vec<S>,
    pub grad_weight: Matrix<S>,
    pub grad_bias: Vec<S>,
    cache: Option<Matrix<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(weight: Matrix<S>, bias: Vec<S>) -> Self {
        let (g, f) = (weight.rows(), weight.cols());
        Linear {
            grad_weight: Matrix::zeros(g, f),
            grad_bias: vec![S::zero(); bias.len()],
            weight,
            bias,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Matrix<S>, train: bool) -> Result<Matrix<S>> {
        let y = linear_forward(x, &self.weight, Some(&self.bias))?;
        if train {
            self.cache = Some(x.clone());
        }
        Ok(y)
    }

    pub fn backward(&mut self, gout: &Matrix<S>) -> Result<Matrix<S>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::invalid("linear backward called without a cached forward"))?;
        let (gx, gw, gb) = linear_backward(&x, &self.weight, gout)?;
        for (a, b) in self.grad_weight.data_mut().iter_mut().zip(gw.data()) {
            *a = *a + *b;
        }
        for (a, b) in self.grad_bias.iter_mut().zip(gb.iter()) {
            *a = *a + *b;
        }
        Ok(gx)
    }

    pub fn zero_grads(&mut self) {
        self.grad_weight.data_mut().fill(S::zero());
        self.grad_bias.fill(S::zero());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use rand::Rng;

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Matrix<f32> {
        let mut rng = rng_from(seed);
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn linear_oracle(x: &Matrix<f32>, w: &Matrix<f32>, b: Option<&[f32]>) -> Matrix<f32> {
        let mut out = Matrix::zeros(x.rows(), w.rows());
        for r in 0..x.rows() {
            for o in 0..w.rows() {
                let mut acc = b.map(|b| b[o]).unwrap_or(0.0);
                for c in 0..x.cols() {
                    acc += x.at(r, c) * w.at(o, c);
                }
                *out.at_mut(r, o) = acc;
            }
        }
        out
    }

    #[test]
    fn identity_weight_passes_input_through() {
        let x = rand_matrix(3, 4, 21);
        let mut w = Matrix::zeros(4, 4);
        for i in 0..4 {
            *w.at_mut(i, i) = 1.0;
        }
        let y = linear_forward(&x, &w, None).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn hand_sum_example() {
        let x = Matrix::from_vec(1, 2, vec![1.0f64, 2.0]).unwrap();
        let w = Matrix::from_vec(1, 2, vec![1.0f64, 1.0]).unwrap();
        let y = linear_forward(&x, &w, Some(&[0.5])).unwrap();
        assert_eq!(y.data(), &[3.5]);
    }

    #[test]
    fn random_case_matches_loop_oracle() {
        let x = rand_matrix(4, 8, 22);
        let w = rand_matrix(3, 8, 23);
        let b: Vec<f32> = (0..3).map(|i| 0.1 * i as f32).collect();
        let y = linear_forward(&x, &w, Some(&b)).unwrap();
        let o = linear_oracle(&x, &w, Some(&b));
        for (a, e) in y.data().iter().zip(o.data()) {
            assert!((a - e).abs() / e.abs().max(1e-6) < 1e-6);
        }
    }

    #[test]
    fn forward_is_bit_identical_to_oracle_on_small_dims() {
        for seed in 0..10u64 {
            let mut rng = rng_from(600 + seed);
            let n = rng.random_range(1..=8usize);
            let f = rng.random_range(1..=8usize);
            let g = rng.random_range(1..=8usize);
            let x = rand_matrix(n, f, 700 + seed);
            let w = rand_matrix(g, f, 800 + seed);
            let y = linear_forward(&x, &w, None).unwrap();
            assert_eq!(y, linear_oracle(&x, &w, None), "seed {seed}");
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let x = rand_matrix(2, 5, 24);
        let w = rand_matrix(3, 4, 25);
        assert!(linear_forward(&x, &w, None).is_err());
        let g = rand_matrix(2, 4, 26);
        assert!(linear_backward(&x, &w, &g).is_err());
    }

    #[test]
    fn backward_shapes_and_bias_gradient() {
        let x = rand_matrix(4, 8, 27);
        let w = rand_matrix(3, 8, 28);
        let g = rand_matrix(4, 3, 29);
        let (gx, gw, gb) = linear_backward(&x, &w, &g).unwrap();
        assert_eq!((gx.rows(), gx.cols()), (4, 8));
        assert_eq!((gw.rows(), gw.cols()), (3, 8));
        // bias gradient is the column sum of the upstream gradient
        for o in 0..3 {
            let want: f32 = (0..4).map(|r| g.at(r, o)).sum();
            assert!((gb[o] - want).abs() < 1e-6);
        }
    }
}
