//! Time-to-frequency embedding: per-window instance normalization followed by
//! a zero-padded transform truncated or extended to the model width.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::FftPlan;
use crate::tensor::Tensor;

/// Per-row statistics of a lookback window, kept for exact inversion.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceStats<T> {
    /// Leading shape of the normalized tensor (everything but the time axis).
    pub shape: Vec<usize>,
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
    pub eps: T,
}

impl<T: Scalar> InstanceStats<T> {
    /// `sigma + eps` per row.
    pub fn scale(&self) -> impl Iterator<Item = T> + '_ {
        self.sigma.iter().map(move |&s| s + self.eps)
    }
}

/// Normalizes every row along the last (time) axis: `(x - μ) / (σ + eps)`
/// with the population standard deviation.
pub fn instance_normalize<T: Scalar>(x: &Tensor<T>, eps: T) -> Result<(Tensor<T>, InstanceStats<T>)> {
    let len = *x.shape().last().ok_or_else(|| Error::dim("instance norm of a rank-0 tensor"))?;
    if len < 2 {
        return Err(Error::contract(format!("instance norm needs at least 2 steps, got {len}")));
    }
    let rows = x.len() / len;
    let n = T::of_usize(len);
    let mut out = vec![T::zero(); x.len()];
    let mut mu = Vec::with_capacity(rows);
    let mut sigma = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x.re()[r * len..(r + 1) * len];
        // Shifted by the first sample so constant rows centre to exact zeros.
        let m = row[0] + row.iter().map(|&v| v - row[0]).sum::<T>() / n;
        let var = row.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / n;
        let s = var.sqrt();
        let denom = s + eps;
        for (o, &v) in out[r * len..(r + 1) * len].iter_mut().zip(row) {
            *o = (v - m) / denom;
        }
        mu.push(m);
        sigma.push(s);
    }
    let stats = InstanceStats {
        shape: x.shape()[..x.rank() - 1].to_vec(),
        mu,
        sigma,
        eps,
    };
    Ok((Tensor::from_real(x.shape(), out)?, stats))
}

/// Inverse of [`instance_normalize`] applied to rows of any length.
pub fn instance_denormalize<T: Scalar>(y: &Tensor<T>, stats: &InstanceStats<T>) -> Result<Tensor<T>> {
    let len = *y.shape().last().ok_or_else(|| Error::dim("denormalize of a rank-0 tensor"))?;
    let rows = y.len() / len.max(1);
    if rows != stats.mu.len() {
        return Err(Error::dim(format!(
            "{} rows cannot be denormalized with {} row statistics",
            rows,
            stats.mu.len()
        )));
    }
    let mut out = y.re().to_vec();
    for (r, scale) in stats.scale().enumerate() {
        for v in &mut out[r * len..(r + 1) * len] {
            *v = *v * scale + stats.mu[r];
        }
    }
    Tensor::from_real(y.shape(), out)
}

/// Frequency representation of a batch of windows, shaped `[.., N, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FreqRepr<T> {
    pub values: Tensor<T>,
    pub source_window_len: usize,
}

impl<T: Scalar> FreqRepr<T> {
    /// Bins carrying information from the source window: `0..=L`, capped at D.
    pub fn informative_bins(&self) -> usize {
        informative_bins(self.source_window_len, *self.values.shape().last().unwrap_or(&0))
    }
}

pub fn informative_bins(window_len: usize, width: usize) -> usize {
    (window_len + 1).min(width)
}

/// Reusable embedder for windows of length L into width D.
#[derive(Clone, Debug)]
pub struct T2FEmbed<T> {
    window_len: usize,
    width: usize,
    plan: FftPlan<T>,
}

impl<T: Scalar> T2FEmbed<T> {
    pub fn new(window_len: usize, width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::contract("embedding width must be at least 1"));
        }
        if window_len == 0 {
            return Err(Error::contract("window length must be at least 1"));
        }
        Ok(T2FEmbed {
            window_len,
            width,
            plan: FftPlan::new(2 * window_len)?,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Embeds every row of `x` (`[.., L]`, real) into `[.., D]`.
    pub fn embed(&self, x: &Tensor<T>) -> Result<FreqRepr<T>> {
        let l = self.window_len;
        if x.shape().last() != Some(&l) {
            return Err(Error::dim(format!(
                "embedding expects windows of length {l}, got shape {:?}",
                x.shape()
            )));
        }
        let rows = x.len() / l;
        let d = self.width;
        let keep = informative_bins(l, d);
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("rank ≥ 1") = d;
        let mut out = Tensor::zeros(&shape);
        let zero = Complex::new(T::zero(), T::zero());
        let mut buf = vec![zero; 2 * l];
        for r in 0..rows {
            for (b, &v) in buf.iter_mut().zip(&x.re()[r * l..(r + 1) * l]) {
                *b = Complex::new(v, T::zero());
            }
            buf[l..].iter_mut().for_each(|b| *b = zero);
            let spec = self.plan.forward(&buf)?;
            for (j, &z) in spec.iter().take(keep).enumerate() {
                out.set(r * d + j, z);
            }
        }
        Ok(FreqRepr {
            values: out,
            source_window_len: l,
        })
    }
}

/// One-shot embedding of already normalized windows.
pub fn t2f_embed<T: Scalar>(x_norm: &Tensor<T>, width: usize) -> Result<FreqRepr<T>> {
    let l = *x_norm.shape().last().ok_or_else(|| Error::dim("embedding of a rank-0 tensor"))?;
    T2FEmbed::new(l, width)?.embed(x_norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::fft_real;

    #[test]
    fn constant_row_normalizes_to_zero() {
        let x = Tensor::from_real(&[1, 4], vec![5.0; 4]).unwrap();
        let (y, stats) = instance_normalize(&x, 1e-5).unwrap();
        assert!(y.re().iter().all(|&v| v == 0.0));
        assert_eq!(stats.mu, vec![5.0]);
        assert_eq!(stats.sigma, vec![0.0]);
    }

    #[test]
    fn unit_row() {
        let eps = 1e-5_f64;
        let x = Tensor::from_real(&[1, 2], vec![-1.0, 1.0]).unwrap();
        let (y, _) = instance_normalize(&x, eps).unwrap();
        assert!((y.re()[0] + 1.0 / (1.0 + eps)).abs() < 1e-15);
        assert!((y.re()[1] - 1.0 / (1.0 + eps)).abs() < 1e-15);
    }

    #[test]
    fn short_window_is_rejected() {
        let x = Tensor::from_real(&[3, 1], vec![1.0; 3]).unwrap();
        assert!(instance_normalize(&x, 1e-5).is_err());
    }

    #[test]
    fn impulse_embeds_to_ones() {
        let x = Tensor::from_real(&[1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let f = t2f_embed(&x, 5).unwrap();
        for j in 0..5 {
            assert!((f.values.get(j) - Complex::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn width_l_plus_one_is_exact_prefix() {
        let row = [0.3, -1.2, 2.5, 0.1, -0.7, 0.9];
        let x = Tensor::from_real(&[1, 6], row.to_vec()).unwrap();
        let f = t2f_embed(&x, 7).unwrap();
        let mut padded = row.to_vec();
        padded.extend([0.0; 6]);
        let full = fft_real(&padded).unwrap();
        for j in 0..7 {
            assert_eq!(f.values.get(j), full[j]);
        }
    }

    #[test]
    fn narrow_width_truncates() {
        let x = Tensor::from_real(&[2, 6], (0..12).map(|v| v as f64).collect()).unwrap();
        let wide = t2f_embed(&x, 7).unwrap();
        let narrow = t2f_embed(&x, 3).unwrap();
        assert_eq!(narrow.values.shape(), &[2, 3]);
        for r in 0..2 {
            for j in 0..3 {
                assert_eq!(narrow.values.get(r * 3 + j), wide.values.get(r * 7 + j));
            }
        }
        assert_eq!(narrow.informative_bins(), 3);
    }

    #[test]
    fn denormalize_round_trip() {
        let x = Tensor::from_real(&[2, 5], vec![1., 4., -2., 8., 3., 10., 10., 11., 9., 10.]).unwrap();
        let (y, stats) = instance_normalize(&x, 1e-5).unwrap();
        let back = instance_denormalize(&y, &stats).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-10);
    }
}
