//! Forward kernels on plain tensors.
//!
//! These are the value-level definitions of every differentiable operation;
//! [`crate::graph::Graph`] records them on a tape and supplies the backward pass.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise activation. `relu` has derivative 0 at the origin.
pub fn activation(kind: Activation, x: &Tensor) -> Tensor {
    let data = match kind {
        Activation::Relu => x.data().iter().map(|&v| v.max(0.0)).collect(),
        Activation::Sigmoid => x.data().iter().map(|&v| sigmoid_scalar(v)).collect(),
    };
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

/// `x · Wᵀ + b` for `x: [n × d_in]`, `W: [d_out × d_in]`, `b: [d_out]`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    check_linear(x.shape(), w.shape(), b.map(Tensor::shape))?;
    let (n, d_in) = (x.rows(), x.cols());
    let d_out = w.shape()[0];
    let mut out = vec![0.0; n * d_out];
    for i in 0..n {
        let xi = &x.data()[i * d_in..(i + 1) * d_in];
        for o in 0..d_out {
            let wo = &w.data()[o * d_in..(o + 1) * d_in];
            let mut acc = b.map_or(0.0, |b| b.data()[o]);
            for (a, c) in xi.iter().zip(wo) {
                acc += a * c;
            }
            out[i * d_out + o] = acc;
        }
    }
    Tensor::new(vec![n, d_out], out)
}

pub(crate) fn check_linear(x: &[usize], w: &[usize], b: Option<&[usize]>) -> Result<()> {
    if x.len() != 2 || w.len() != 2 || x[1] != w[1] {
        return Err(Error::Dimension(format!(
            "linear: input {x:?} incompatible with weight {w:?}"
        )));
    }
    if let Some(b) = b {
        if b != [w[0]] {
            return Err(Error::Dimension(format!(
                "linear: bias {b:?} incompatible with weight {w:?}"
            )));
        }
    }
    Ok(())
}

/// Max-subtracted softmax over `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::Dimension(format!(
            "softmax axis {axis} out of range for shape {shape:?}"
        )));
    }
    let n = shape[axis];
    if n == 0 {
        return Err(Error::Dimension(format!(
            "softmax over empty axis {axis} of shape {shape:?}"
        )));
    }
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * n * inner + k * inner + i;
            let m = (0..n).map(|k| src[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for k in 0..n {
                let e = (src[at(k)] - m).exp();
                out[at(k)] = e;
                sum += e;
            }
            for k in 0..n {
                out[at(k)] /= sum;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Stable softmax of a single slice.
pub fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub const DEFAULT_LN_EPS: f64 = 1e-9;

/// Row-wise layer normalization with affine `gain`/`bias` of width `d`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let d = x.cols();
    if x.shape().len() != 2 || gain.shape() != [d] || bias.shape() != [d] {
        return Err(Error::Dimension(format!(
            "layer_norm: input {:?}, gain {:?}, bias {:?}",
            x.shape(),
            gain.shape(),
            bias.shape()
        )));
    }
    let mut out = vec![0.0; x.len()];
    for r in 0..x.rows() {
        let (xhat, _) = normalize_row(x.row(r), eps);
        for c in 0..d {
            out[r * d + c] = gain.data()[c] * xhat[c] + bias.data()[c];
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Returns the standardized row and `1/sqrt(var + eps)`.
pub(crate) fn normalize_row(row: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv_std = 1.0 / (var + eps).sqrt();
    (row.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_identity_and_hand_example() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let y = linear(&x, &Tensor::identity(2), Some(&Tensor::zeros(&[2]))).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);

        let x = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let w = Tensor::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let b = Tensor::vector(&[0.0, 1.0]);
        assert_eq!(linear(&x, &w, Some(&b)).unwrap().data(), &[2.0, 5.0]);
    }

    #[test]
    fn linear_shape_error_names_both_shapes() {
        let x = Tensor::zeros(&[1, 3]);
        let w = Tensor::zeros(&[2, 2]);
        let msg = linear(&x, &w, None).unwrap_err().to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&Tensor::vector(&[0.0, 0.0, 0.0]), 0).unwrap();
        for v in u.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(softmax(&Tensor::vector(&[7.5]), 0).unwrap().data(), &[1.0]);

        let s = softmax(&Tensor::vector(&[1.0, 2.0, 3.0]), 0).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        let oracle: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp() / z).collect();
        for (a, b) in s.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in s.data().iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn softmax_inner_axis() {
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 1.0, 5.0, 3.0]).unwrap();
        let s = softmax(&x, 0).unwrap();
        for c in 0..3 {
            assert!((s.at2(0, c) + s.at2(1, c) - 1.0).abs() < 1e-12);
        }
        assert!((s.at2(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_empty_axis_is_error() {
        let x = Tensor::zeros(&[2, 0]);
        assert!(matches!(softmax(&x, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn activation_examples() {
        let r = activation(Activation::Relu, &Tensor::vector(&[-1.0, 0.0, 2.0]));
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
        let s = activation(Activation::Sigmoid, &Tensor::vector(&[0.0, 2.0, -800.0, 800.0]));
        assert_eq!(s.data()[0], 0.5);
        assert!((s.data()[1] - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
        assert!((s.data()[1] - 0.880797).abs() < 1e-6);
        assert!(s.all_finite());
    }

    #[test]
    fn layer_norm_examples() {
        let one = Tensor::filled(&[3], 1.0);
        let zero = Tensor::zeros(&[3]);
        let c = Tensor::from_rows(&[vec![5.0, 5.0, 5.0]]).unwrap();
        assert_eq!(layer_norm(&c, &one, &zero, DEFAULT_LN_EPS).unwrap().data(), &[0.0; 3]);

        let x = Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let y = layer_norm(&x, &Tensor::filled(&[2], 1.0), &Tensor::zeros(&[2]), DEFAULT_LN_EPS)
            .unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-8 && (y.data()[1] + 1.0).abs() < 1e-8);
    }
}
