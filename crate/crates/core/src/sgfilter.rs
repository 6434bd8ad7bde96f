//! Static global filtering: band-pass masks centred on each variable's
//! dominant training-set frequencies, applied to every window and mixed
//! with sparse complex weights.

use std::path::Path;

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Var};
use crate::complex_nn::sparse_weights;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::{fft_real, magnitude};
use crate::tensor::Tensor;

pub const BANK_FORMAT_VERSION: u32 = 1;

/// Identity of the training split a bank was built from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFingerprint {
    pub len: usize,
    pub variables: usize,
    /// Hex SHA-256 of the row-major little-endian `f64` values.
    pub sha256: String,
}

impl SplitFingerprint {
    pub fn of<T: Scalar>(series: &Tensor<T>) -> Self {
        let mut hasher = Sha256::new();
        for &v in series.re() {
            hasher.update(v.as_f64().to_le_bytes());
        }
        SplitFingerprint {
            len: series.shape().get(1).copied().unwrap_or(0),
            variables: series.shape().first().copied().unwrap_or(0),
            sha256: hex::encode(hasher.finalize()),
        }
    }
}

/// Top-K band-pass masks per variable.
///
/// Masks are implicit: `Z[i, s, f]` is one iff `f` lies within
/// `delta_f` of `center_freqs[i][s]` and inside `0..d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub format_version: u32,
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub delta_f: usize,
    pub window_len: usize,
    /// `[N][K]`, sorted by descending downsampled magnitude.
    pub center_freqs: Vec<Vec<usize>>,
    /// Downsampled magnitude of each selected centre.
    pub center_magnitudes: Vec<Vec<f64>>,
    pub built_from: SplitFingerprint,
}

/// Magnitude of the one-sided spectrum of `series`, summed into `groups`
/// contiguous bands with boundaries `floor(m·H/groups)`, `H = len/2 + 1`.
pub fn downsampled_magnitudes<T: Scalar>(series: &[T], groups: usize) -> Result<Vec<f64>> {
    let spectrum = fft_real(series)?;
    let one_sided = series.len() / 2 + 1;
    let mags = magnitude(&spectrum[..one_sided]);
    Ok((0..groups)
        .map(|m| {
            let lo = m * one_sided / groups;
            let hi = (m + 1) * one_sided / groups;
            mags[lo..hi].iter().map(|v| v.as_f64()).sum()
        })
        .collect())
}

/// Builds the bank from the training split `train` (`[N, T]`, real).
pub fn build_filter_bank<T: Scalar>(
    train: &Tensor<T>,
    window_len: usize,
    d: usize,
    k: usize,
    delta_f: usize,
) -> Result<FilterBank> {
    if train.rank() != 2 {
        return Err(Error::dim(format!("training series must be [N, T], got {:?}", train.shape())));
    }
    let (n, t) = (train.shape()[0], train.shape()[1]);
    if t < window_len || window_len == 0 {
        return Err(Error::contract(format!(
            "training split of length {t} is shorter than the window {window_len}"
        )));
    }
    if k == 0 || k > window_len {
        return Err(Error::contract(format!(
            "cannot select {k} static filters from {window_len} frequency bands"
        )));
    }
    if d == 0 {
        return Err(Error::contract("model width must be at least 1"));
    }
    let mut center_freqs = Vec::with_capacity(n);
    let mut center_magnitudes = Vec::with_capacity(n);
    for i in 0..n {
        let row = &train.re()[i * t..(i + 1) * t];
        let bands = downsampled_magnitudes(row, window_len)?;
        let mut order: Vec<usize> = (0..window_len).collect();
        order.sort_by(|&a, &b| bands[b].total_cmp(&bands[a]).then(a.cmp(&b)));
        order.truncate(k);
        center_magnitudes.push(order.iter().map(|&f| bands[f]).collect());
        center_freqs.push(order);
    }
    Ok(FilterBank {
        format_version: BANK_FORMAT_VERSION,
        n,
        k,
        d,
        delta_f,
        window_len,
        center_freqs,
        center_magnitudes,
        built_from: SplitFingerprint::of(train),
    })
}

impl FilterBank {
    pub fn passes(&self, var: usize, filter: usize, f: usize) -> bool {
        let c = self.center_freqs[var][filter];
        f < self.d && f + self.delta_f >= c && f <= c + self.delta_f
    }

    /// Dense masks `[N, K, D]` as a real-typed tensor.
    pub fn masks<T: Scalar>(&self) -> Tensor<T> {
        let mut z = Tensor::zeros(&[self.n, self.k, self.d]);
        for i in 0..self.n {
            for s in 0..self.k {
                for f in 0..self.d {
                    if self.passes(i, s, f) {
                        z.re_mut()[(i * self.k + s) * self.d + f] = T::one();
                    }
                }
            }
        }
        z
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bank: FilterBank = serde_json::from_str(text)?;
        if bank.format_version != BANK_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                what: "filter bank",
                found: bank.format_version,
                expected: BANK_FORMAT_VERSION,
            });
        }
        let shaped = bank.center_freqs.len() == bank.n
            && bank.center_freqs.iter().all(|c| c.len() == bank.k)
            && bank.center_magnitudes.len() == bank.n
            && bank.center_magnitudes.iter().all(|c| c.len() == bank.k);
        if !shaped {
            return Err(Error::contract("filter bank centres do not match its N×K header"));
        }
        Ok(bank)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgFilterParams<T> {
    /// Elementwise complex scaling, `[N, D]`.
    pub a_p: Tensor<T>,
    /// Aggregation weights over the K bands, `[N, K]`.
    pub v: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundSgFilter {
    pub a_p: Var,
    pub v: Var,
}

impl<T: Scalar> SgFilterParams<T> {
    /// Identity scaling and uniform `1/K` mixing.
    pub fn new(n: usize, d: usize, k: usize) -> Self {
        SgFilterParams {
            a_p: Tensor::full(&[n, d], Complex::new(T::one(), T::zero())),
            v: Tensor::full(&[n, k], Complex::new(T::one() / T::of_usize(k), T::zero())),
        }
    }

    pub fn param_count(&self) -> usize {
        2 * (self.a_p.len() + self.v.len())
    }

    pub fn bind(&self, g: &mut Graph<T>) -> BoundSgFilter {
        BoundSgFilter {
            a_p: g.param(self.a_p.clone()),
            v: g.param(self.v.clone()),
        }
    }
}

/// Module output for `x` (`[B, N, D]` or `[N, D]`); `masks` is
/// [`FilterBank::masks`] bound as a constant.
pub fn sg_filter_forward<T: Scalar>(g: &mut Graph<T>, x: Var, params: &BoundSgFilter, masks: Var) -> Result<Var> {
    let zs = g.shape(masks).to_vec();
    let (n, k, d) = (zs[0], zs[1], zs[2]);
    let xs = g.shape(x);
    if xs.len() < 2 || xs[xs.len() - 2] != n || xs[xs.len() - 1] != d {
        return Err(Error::dim(format!(
            "spectrum {xs:?} does not match filter bank N={n}, D={d}"
        )));
    }
    if g.shape(params.v) != [n, k] {
        return Err(Error::dim(format!(
            "aggregation weights {:?} do not match filter bank N={n}, K={k}",
            g.shape(params.v)
        )));
    }
    let scaled = g.mul(x, params.a_p)?;
    let weights = sparse_weights(g, params.v, 1)?;
    let weights = g.reshape(weights, &[n, 1, k])?;
    let response = g.matmul(weights, masks)?;
    let response = g.reshape(response, &[n, d])?;
    g.mul(scaled, response)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Sinusoid landing in band `b` of a window of length `l`.
    fn tone(len: usize, l: usize, band: usize, amp: f64, phase: f64) -> Vec<f64> {
        (0..len)
            .map(|t| amp * (2.0 * std::f64::consts::PI * band as f64 * t as f64 / (2.0 * l as f64) + phase).cos())
            .collect()
    }

    #[test]
    fn single_tone_centre() {
        let (l, len) = (16, 320);
        let x = Tensor::from_real(&[1, len], tone(len, l, 5, 1.0, 0.3)).unwrap();
        let bank = build_filter_bank(&x, l, 20, 1, 1).unwrap();
        assert_eq!(bank.center_freqs, vec![vec![5]]);
        let z = bank.masks::<f64>();
        let ones: Vec<usize> = (0..20).filter(|&f| z.re()[f] == 1.0).collect();
        assert_eq!(ones, vec![4, 5, 6]);
    }

    #[test]
    fn zero_bandwidth_gives_single_bin() {
        let (l, len) = (16, 320);
        let x = Tensor::from_real(&[1, len], tone(len, l, 7, 2.0, 0.0)).unwrap();
        let bank = build_filter_bank(&x, l, 20, 3, 0).unwrap();
        let z = bank.masks::<f64>();
        for s in 0..3 {
            let count = (0..20).filter(|&f| z.re()[s * 20 + f] == 1.0).count();
            assert_eq!(count, 1);
        }
    }

    #[test]
    fn masks_clip_at_edges() {
        let (l, len) = (16, 320);
        let x = Tensor::from_real(&[1, len], tone(len, l, 0, 1.0, 0.0)).unwrap();
        let bank = build_filter_bank(&x, l, 20, 1, 2).unwrap();
        assert_eq!(bank.center_freqs[0][0], 0);
        let z = bank.masks::<f64>();
        let ones: Vec<usize> = (0..20).filter(|&f| z.re()[f] == 1.0).collect();
        assert_eq!(ones, vec![0, 1, 2]);
    }

    #[test]
    fn too_many_filters() {
        let x = Tensor::from_real(&[1, 64], vec![0.5; 64]).unwrap();
        assert!(matches!(build_filter_bank(&x, 8, 9, 9, 1), Err(Error::Contract(_))));
        assert!(matches!(build_filter_bank(&x, 128, 9, 1, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn json_round_trip_and_version_check() {
        let x = Tensor::from_real(&[1, 64], tone(64, 8, 3, 1.0, 0.0)).unwrap();
        let bank = build_filter_bank(&x, 8, 9, 2, 1).unwrap();
        let back = FilterBank::from_json(&bank.to_json().unwrap()).unwrap();
        assert_eq!(back, bank);
        let bumped = bank.to_json().unwrap().replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(matches!(FilterBank::from_json(&bumped), Err(Error::FormatVersion { .. })));
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let x = Tensor::from_real(&[2, 64], [tone(64, 8, 3, 1.0, 0.0), tone(64, 8, 1, 1.0, 0.0)].concat()).unwrap();
        let bank = build_filter_bank(&x, 8, 9, 2, 1).unwrap();
        let mut g = Graph::<f64>::new();
        let params = SgFilterParams::<f64>::new(2, 9, 2).bind(&mut g);
        let masks = g.constant(bank.masks());
        let zero = g.constant(Tensor::zeros(&[2, 9]));
        let y = sg_filter_forward(&mut g, zero, &params, masks).unwrap();
        assert!(g.value(y).re().iter().chain(g.value(y).im()).all(|&v| v == 0.0));
    }
}
