//! Complex linear layer, part-wise LayerNorm, part-wise ReLU and
//! magnitude softmax, expressed on top of the autodiff graph.

use num_complex::Complex;
use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Real-pair complex linear map `x · (W_real + i·W_imag) + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexLinearLayer<T> {
    /// Din×Dout, real-typed.
    pub w_real: Tensor<T>,
    /// Din×Dout, real-typed.
    pub w_imag: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundComplexLinear {
    pub w_real: Var,
    pub w_imag: Var,
    pub bias: Option<Var>,
}

/// Uniform `±1/√fan_in` samples.
pub fn uniform_fan_in<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let re = (0..n).map(|_| T::of(rng.gen_range(-bound..=bound))).collect();
    Tensor::from_real(shape, re).expect("sized from shape")
}

impl<T: Scalar> ComplexLinearLayer<T> {
    pub fn zeros(din: usize, dout: usize, bias: bool) -> Self {
        ComplexLinearLayer {
            w_real: Tensor::zeros(&[din, dout]),
            w_imag: Tensor::zeros(&[din, dout]),
            bias: bias.then(|| Tensor::zeros(&[dout])),
        }
    }

    pub fn random<R: Rng>(rng: &mut R, din: usize, dout: usize, bias: bool) -> Self {
        ComplexLinearLayer {
            w_real: uniform_fan_in(rng, &[din, dout], din),
            w_imag: uniform_fan_in(rng, &[din, dout], din),
            bias: bias.then(|| Tensor::zeros(&[dout])),
        }
    }

    pub fn din(&self) -> usize {
        self.w_real.shape()[0]
    }

    pub fn dout(&self) -> usize {
        self.w_real.shape()[1]
    }

    /// Trainable scalars; complex bias entries count twice.
    pub fn param_count(&self) -> usize {
        self.w_real.len() + self.w_imag.len() + self.bias.as_ref().map_or(0, |b| 2 * b.len())
    }

    pub fn bind(&self, g: &mut Graph<T>) -> BoundComplexLinear {
        BoundComplexLinear {
            w_real: g.param(self.w_real.clone()),
            w_imag: g.param(self.w_imag.clone()),
            bias: self.bias.as_ref().map(|b| g.param(b.clone())),
        }
    }
}

/// Applies the layer over the last axis of `x`.
pub fn clinear_apply<T: Scalar>(g: &mut Graph<T>, layer: &BoundComplexLinear, x: Var) -> Result<Var> {
    let din = g.shape(layer.w_real)[0];
    let dout = g.shape(layer.w_real)[1];
    let shape = g.shape(x).to_vec();
    if shape.last() != Some(&din) {
        return Err(Error::dim(format!(
            "complex linear expects last axis {din}, got shape {shape:?}"
        )));
    }
    let rows = shape[..shape.len() - 1].iter().product::<usize>();
    let w = g.from_parts(layer.w_real, layer.w_imag)?;
    let flat = g.reshape(x, &[rows, din])?;
    let mut y = g.matmul(flat, w)?;
    if let Some(b) = layer.bias {
        y = g.add(y, b)?;
    }
    let mut out_shape = shape;
    *out_shape.last_mut().expect("rank ≥ 1") = dout;
    g.reshape(y, &out_shape)
}

/// Learnable gain and bias for [`clayernorm`]. The gain's real part scales
/// the normalized real part and its imaginary part scales the normalized
/// imaginary part.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexLayerNorm<T> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLayerNorm {
    pub gain: Var,
    pub bias: Var,
}

impl<T: Scalar> ComplexLayerNorm<T> {
    pub fn new(width: usize) -> Self {
        ComplexLayerNorm {
            gain: Tensor::full(&[width], Complex::new(T::one(), T::one())),
            bias: Tensor::zeros(&[width]),
        }
    }

    pub fn param_count(&self) -> usize {
        2 * (self.gain.len() + self.bias.len())
    }

    pub fn bind(&self, g: &mut Graph<T>) -> BoundLayerNorm {
        BoundLayerNorm {
            gain: g.param(self.gain.clone()),
            bias: g.param(self.bias.clone()),
        }
    }
}

/// Normalizes Re and Im independently along `axis`, then applies the
/// optional per-part gain and bias (shaped to broadcast from `axis`).
pub fn clayernorm<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    axis: usize,
    eps: T,
    affine: Option<&BoundLayerNorm>,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if axis >= shape.len() || shape[axis] < 2 {
        return Err(Error::contract(format!(
            "layer norm axis {axis} of shape {shape:?} must have length ≥ 2"
        )));
    }
    let normed = g.part_standardize(x, axis, eps)?;
    let Some(affine) = affine else { return Ok(normed) };
    let mut pshape = vec![shape[axis]];
    pshape.extend(std::iter::repeat_n(1, shape.len() - axis - 1));
    let gain = g.reshape(affine.gain, &pshape)?;
    let bias = g.reshape(affine.bias, &pshape)?;
    let scaled = g.part_mul(normed, gain)?;
    g.add(scaled, bias)
}

pub fn crelu<T: Scalar>(g: &mut Graph<T>, x: Var) -> Var {
    g.crelu(x)
}

pub fn csoftmax<T: Scalar>(g: &mut Graph<T>, x: Var, axis: usize) -> Result<Var> {
    g.csoftmax(x, axis)
}

/// `csoftmax(crelu(x))` along `axis`: the sparse aggregation weights used by
/// both filter modules.
pub fn sparse_weights<T: Scalar>(g: &mut Graph<T>, x: Var, axis: usize) -> Result<Var> {
    let r = g.crelu(x);
    g.csoftmax(r, axis)
}
