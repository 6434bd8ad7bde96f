//! Discrete Fourier transforms of arbitrary length and FFT-based linear
//! convolution.
//!
//! Forward transforms are un-normalized; inverse transforms carry the `1/n`
//! factor, so `ifft(fft(x)) == x`. Power-of-two lengths run an iterative
//! radix-2 kernel; every other length goes through Bluestein's chirp-z
//! reformulation on a power-of-two grid of at least `2n - 1` points.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Reusable transform plan for one length.
#[derive(Clone, Debug)]
pub struct FftPlan<T> {
    len: usize,
    kind: PlanKind<T>,
}

#[derive(Clone, Debug)]
enum PlanKind<T> {
    Radix2(Radix2<T>),
    Bluestein(Bluestein<T>),
}

#[derive(Clone, Debug)]
struct Radix2<T> {
    len: usize,
    /// `exp(-2πi k / len)` for `k < len / 2`.
    twiddles: Vec<Complex<T>>,
    bitrev: Vec<usize>,
}

#[derive(Clone, Debug)]
struct Bluestein<T> {
    inner: Radix2<T>,
    /// `exp(-iπ k² / n)` for `k < n`.
    chirp: Vec<Complex<T>>,
    /// Forward transform of the conjugate chirp, wrapped onto the inner grid.
    kernel_spectrum: Vec<Complex<T>>,
}

fn unit_root<T: Scalar>(num: usize, den: usize) -> Complex<T> {
    // exp(-2πi num/den), with the angle reduced before conversion.
    let angle = -2.0 * std::f64::consts::PI * ((num % den) as f64) / den as f64;
    Complex::new(T::of(angle.cos()), T::of(angle.sin()))
}

impl<T: Scalar> Radix2<T> {
    fn new(len: usize) -> Self {
        debug_assert!(len.is_power_of_two());
        let bits = len.trailing_zeros();
        let bitrev = (0..len)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddles = (0..len / 2).map(|k| unit_root(k, len)).collect();
        Radix2 {
            len,
            twiddles,
            bitrev,
        }
    }

    fn forward_in_place(&self, buf: &mut [Complex<T>]) {
        let n = self.len;
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut half = 1;
        while half < n {
            let step = n / (2 * half);
            for start in (0..n).step_by(2 * half) {
                for k in 0..half {
                    let w = self.twiddles[k * step];
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            half *= 2;
        }
    }
}

impl<T: Scalar> Bluestein<T> {
    fn new(n: usize) -> Self {
        let m = (2 * n - 1).next_power_of_two();
        let inner = Radix2::new(m);
        // k² mod 2n keeps the chirp angle small for large k.
        let chirp: Vec<Complex<T>> = (0..n).map(|k| unit_root((k * k) % (2 * n), 2 * n)).collect();
        let mut kernel = vec![Complex::new(T::zero(), T::zero()); m];
        kernel[0] = chirp[0].conj();
        for k in 1..n {
            kernel[k] = chirp[k].conj();
            kernel[m - k] = chirp[k].conj();
        }
        inner.forward_in_place(&mut kernel);
        Bluestein {
            inner,
            chirp,
            kernel_spectrum: kernel,
        }
    }

    fn forward(&self, input: &[Complex<T>]) -> Vec<Complex<T>> {
        let n = self.chirp.len();
        let m = self.inner.len;
        let zero = Complex::new(T::zero(), T::zero());
        let mut work = vec![zero; m];
        for k in 0..n {
            work[k] = input[k] * self.chirp[k];
        }
        self.inner.forward_in_place(&mut work);
        for (w, &h) in work.iter_mut().zip(&self.kernel_spectrum) {
            *w = *w * h;
        }
        // Inverse on the inner grid via conjugation.
        for w in work.iter_mut() {
            *w = w.conj();
        }
        self.inner.forward_in_place(&mut work);
        let scale = T::one() / T::of_usize(m);
        (0..n)
            .map(|k| work[k].conj() * scale * self.chirp[k])
            .collect()
    }
}

impl<T: Scalar> FftPlan<T> {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::contract("fft length must be at least 1"));
        }
        let kind = if len.is_power_of_two() {
            PlanKind::Radix2(Radix2::new(len))
        } else {
            PlanKind::Bluestein(Bluestein::new(len))
        };
        Ok(FftPlan { len, kind })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Un-normalized forward DFT.
    pub fn forward(&self, input: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        self.check(input)?;
        Ok(match &self.kind {
            PlanKind::Radix2(r) => {
                let mut buf = input.to_vec();
                r.forward_in_place(&mut buf);
                buf
            }
            PlanKind::Bluestein(b) => b.forward(input),
        })
    }

    /// Inverse DFT including the `1/n` factor.
    pub fn inverse(&self, input: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        let conj: Vec<_> = input.iter().map(|z| z.conj()).collect();
        let scale = T::one() / T::of_usize(self.len);
        Ok(self
            .forward(&conj)?
            .into_iter()
            .map(|z| z.conj() * scale)
            .collect())
    }

    pub fn process(&self, input: &[Complex<T>], inverse: bool) -> Result<Vec<Complex<T>>> {
        if inverse {
            self.inverse(input)
        } else {
            self.forward(input)
        }
    }

    fn check(&self, input: &[Complex<T>]) -> Result<()> {
        if input.len() != self.len {
            return Err(Error::dim(format!(
                "plan of length {} applied to input of length {}",
                self.len,
                input.len()
            )));
        }
        Ok(())
    }
}

/// One-shot transform; builds a plan for `x.len()`.
pub fn fft<T: Scalar>(x: &[Complex<T>], inverse: bool) -> Result<Vec<Complex<T>>> {
    FftPlan::new(x.len())?.process(x, inverse)
}

pub fn fft_real<T: Scalar>(x: &[T]) -> Result<Vec<Complex<T>>> {
    let z: Vec<_> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
    fft(&z, false)
}

/// Elementwise modulus `sqrt(re² + im²)`.
pub fn magnitude<T: Scalar>(s: &[Complex<T>]) -> Vec<T> {
    s.iter().map(|z| z.re.hypot(z.im)).collect()
}

/// Linear (non-circular) convolution of `x` and `h`, of length
/// `x.len() + h.len() - 1`, computed through zero-padded transforms.
pub fn linear_convolve_via_fft<T: Scalar>(x: &[T], h: &[T]) -> Result<Vec<T>> {
    if x.is_empty() || h.is_empty() {
        return Err(Error::contract("convolution operands must be nonempty"));
    }
    let out_len = x.len() + h.len() - 1;
    let padded = out_len.next_power_of_two();
    let plan = FftPlan::new(padded)?;
    let pad = |v: &[T]| {
        let mut buf = vec![Complex::new(T::zero(), T::zero()); padded];
        for (b, &s) in buf.iter_mut().zip(v) {
            b.re = s;
        }
        buf
    };
    let xs = plan.forward(&pad(x))?;
    let hs = plan.forward(&pad(h))?;
    let product: Vec<_> = xs.iter().zip(&hs).map(|(&a, &b)| a * b).collect();
    let y = plan.inverse(&product)?;
    Ok(y[..out_len].iter().map(|z| z.re).collect())
}

/// Spectrum of a sequence, indexed by frequency bin.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum<T> {
    pub values: Vec<Complex<T>>,
}

impl<T: Scalar> Spectrum<T> {
    pub fn of_real(x: &[T]) -> Result<Self> {
        Ok(Spectrum {
            values: fft_real(x)?,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn magnitude(&self) -> Vec<T> {
        magnitude(&self.values)
    }

    /// Largest deviation from `values[f] == conj(values[n - f])`.
    pub fn conjugate_asymmetry(&self) -> T {
        let n = self.values.len();
        (1..n)
            .map(|f| (self.values[f] - self.values[n - f].conj()).norm())
            .fold(T::zero(), T::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let out = fft(&[c(1., 0.), c(0., 0.), c(0., 0.), c(0., 0.)], false).unwrap();
        for z in out {
            assert!((z - c(1., 0.)).norm() < 1e-15);
        }
    }

    #[test]
    fn constant_is_dc_only() {
        let out = fft(&[c(1., 0.); 4], false).unwrap();
        assert!((out[0] - c(4., 0.)).norm() < 1e-15);
        for z in &out[1..] {
            assert!(z.norm() < 1e-15);
        }
    }

    #[test]
    fn zero_length_is_rejected() {
        assert!(matches!(
            fft::<f64>(&[], false),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn length_one_is_identity() {
        let out = fft(&[c(2.5, -1.0)], false).unwrap();
        assert_eq!(out, vec![c(2.5, -1.0)]);
        let back = fft(&out, true).unwrap();
        assert_eq!(back, vec![c(2.5, -1.0)]);
    }

    #[test]
    fn magnitudes() {
        assert_eq!(magnitude(&[c(3., 4.)]), vec![5.0]);
        assert_eq!(magnitude(&[c(0., 0.)]), vec![0.0]);
        let m = magnitude(&[c(1., 1.), c(2., -2.)]);
        assert!((m[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!((m[1] - 2.0 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn small_convolutions() {
        let y = linear_convolve_via_fft(&[1.0_f64, 2.0], &[3.0, 4.0]).unwrap();
        let expected = [3.0, 10.0, 8.0];
        for (a, b) in y.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let h = [0.5, -1.0, 2.0, 7.0];
        let y = linear_convolve_via_fft(&[1.0_f64], &h).unwrap();
        for (a, b) in y.iter().zip(h) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(linear_convolve_via_fft::<f64>(&[], &[1.0]).is_err());
    }

    #[test]
    fn single_precision_round_trip() {
        let x: Vec<Complex<f32>> = (0..96).map(|k| Complex::new((k as f32).sin(), 0.0)).collect();
        let back = fft(&fft(&x, false).unwrap(), true).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).norm() < 1e-4);
        }
    }
}
