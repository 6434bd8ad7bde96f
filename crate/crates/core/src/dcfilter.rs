//! Dynamic cross-variable filtering.
//!
//! Each variable's window spectrum, thresholded at its own amplitude
//! quantile, becomes a filter applied (conjugated) to every variable's
//! rescaled spectrum. The filtered copies are then mixed per target variable
//! with sparse complex weights:
//!
//! `O_i = (X_i ⊙ A_i) ⊙ Σ_k W*_{i,k} · conj(H_k)`, `W* = csoftmax(crelu(W))`.
//!
//! Filters are window constants: no gradient flows into them.

use num_complex::Complex;

use crate::autodiff::{Graph, Var};
use crate::complex_nn::sparse_weights;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Linear-interpolation quantile of the sorted sample (the "type 7"
/// estimator): position `(n - 1)·alpha` between order statistics.
pub fn quantile<T: Scalar>(values: &[T], alpha: T) -> T {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("quantile of NaN"));
    let pos = T::of_usize(sorted.len() - 1) * alpha;
    let lo = pos.floor();
    let frac = pos - lo;
    let lo = lo.to_usize().unwrap_or(0).min(sorted.len() - 1);
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Thresholded window spectra, one filter per (window, variable) row.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicFilterSet<T> {
    /// Same shape as the source spectrum, `[.., N, D]`.
    pub h: Tensor<T>,
    /// Threshold per row.
    pub tau: Vec<T>,
}

/// Keeps bins whose magnitude strictly exceeds the row's `alpha`-quantile.
///
/// The quantile is taken over the first `informative` bins of each row
/// (the bins that carry window content); the threshold is then applied to
/// the whole row.
pub fn build_dynamic_filters<T: Scalar>(spectrum: &Tensor<T>, informative: usize, alpha: T) -> Result<DynamicFilterSet<T>> {
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(Error::contract(format!("quantile level must lie in (0, 1), got {alpha}")));
    }
    let d = *spectrum.shape().last().ok_or_else(|| Error::dim("filters of a rank-0 tensor"))?;
    if informative == 0 || informative > d {
        return Err(Error::contract(format!("informative bin count {informative} outside 1..={d}")));
    }
    let rows = spectrum.len() / d;
    let mut h = Tensor::zeros(spectrum.shape());
    let mut tau = Vec::with_capacity(rows);
    for r in 0..rows {
        let mags: Vec<T> = (0..d).map(|f| spectrum.get(r * d + f).norm()).collect();
        let t = quantile(&mags[..informative], alpha);
        for (f, &m) in mags.iter().enumerate() {
            if m > t {
                h.set(r * d + f, spectrum.get(r * d + f));
            }
        }
        tau.push(t);
    }
    Ok(DynamicFilterSet { h, tau })
}

/// Learnable pieces of the module.
#[derive(Clone, Debug, PartialEq)]
pub struct DcFilterParams<T> {
    /// Elementwise complex scaling, `[N, D]`.
    pub a_o: Tensor<T>,
    /// Aggregation weights, `[N, N]`, indexed (target, source).
    pub w: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundDcFilter {
    pub a_o: Var,
    pub w: Var,
}

impl<T: Scalar> DcFilterParams<T> {
    /// Identity scaling and uniform `1/N` mixing.
    pub fn new(n: usize, d: usize) -> Self {
        DcFilterParams {
            a_o: Tensor::full(&[n, d], Complex::new(T::one(), T::zero())),
            w: Tensor::full(&[n, n], Complex::new(T::one() / T::of_usize(n), T::zero())),
        }
    }

    pub fn param_count(&self) -> usize {
        2 * (self.a_o.len() + self.w.len())
    }

    pub fn bind(&self, g: &mut Graph<T>) -> BoundDcFilter {
        BoundDcFilter {
            a_o: g.param(self.a_o.clone()),
            w: g.param(self.w.clone()),
        }
    }
}

/// Module output for `x` (`[B, N, D]` or `[N, D]`).
pub fn dc_filter_forward<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    params: &BoundDcFilter,
    filters: &DynamicFilterSet<T>,
) -> Result<Var> {
    if g.shape(x) != filters.h.shape() {
        return Err(Error::dim(format!(
            "spectrum {:?} and filters {:?} differ",
            g.shape(x),
            filters.h.shape()
        )));
    }
    let scaled = g.mul(x, params.a_o)?;
    let weights = sparse_weights(g, params.w, 1)?;
    let conj_filters = g.constant(filters.h.conj());
    let mixed = g.matmul(weights, conj_filters)?;
    g.mul(scaled, mixed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((quantile(&v, 0.9) - 9.1).abs() < 1e-12);
        assert_eq!(quantile(&[4.0], 0.3), 4.0);
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
    }

    #[test]
    fn equal_magnitudes_zero_everything() {
        let s = Tensor::from_parts(&[1, 4], vec![1., 0., -1., 0.], vec![0., 1., 0., -1.]).unwrap();
        let f = build_dynamic_filters(&s, 4, 0.9).unwrap();
        assert!(f.h.re().iter().chain(f.h.im()).all(|&v| v == 0.0));
    }

    #[test]
    fn only_largest_of_ten_survives() {
        let re: Vec<f64> = (1..=10).map(f64::from).collect();
        let s = Tensor::from_real(&[1, 10], re).unwrap();
        let f = build_dynamic_filters(&s, 10, 0.9).unwrap();
        assert!((f.tau[0] - 9.1).abs() < 1e-12);
        let kept: Vec<usize> = (0..10).filter(|&j| f.h.re()[j] != 0.0).collect();
        assert_eq!(kept, vec![9]);
    }

    #[test]
    fn quantile_level_out_of_range() {
        let s = Tensor::<f64>::zeros(&[1, 4]);
        assert!(build_dynamic_filters(&s, 4, 1.0).is_err());
        assert!(build_dynamic_filters(&s, 4, 0.0).is_err());
    }

    #[test]
    fn zero_filters_give_zero_output() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[2, 3], Complex::new(1.0, 2.0)));
        let params = DcFilterParams::<f64>::new(2, 3).bind(&mut g);
        let filters = DynamicFilterSet {
            h: Tensor::zeros(&[2, 3]),
            tau: vec![0.0; 2],
        };
        let y = dc_filter_forward(&mut g, x, &params, &filters).unwrap();
        assert!(g.value(y).re().iter().chain(g.value(y).im()).all(|&v| v == 0.0));
    }

    #[test]
    fn single_variable_filters_itself() {
        let mut g = Graph::<f64>::new();
        let xs = Tensor::from_parts(&[1, 3], vec![1., 2., 3.], vec![-1., 0.5, 2.]).unwrap();
        let x = g.constant(xs.clone());
        let params = DcFilterParams::<f64>::new(1, 3).bind(&mut g);
        let filters = build_dynamic_filters(&xs, 3, 0.5).unwrap();
        let y = dc_filter_forward(&mut g, x, &params, &filters).unwrap();
        for f in 0..3 {
            let expected = xs.get(f) * filters.h.get(f).conj();
            assert!((g.value(y).get(f) - expected).norm() < 1e-14);
        }
    }
}
