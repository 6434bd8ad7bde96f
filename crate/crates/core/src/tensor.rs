//! Dense complex tensors stored as split real/imaginary buffers.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense tensor of complex values.
///
/// A tensor is real-typed when its imaginary buffer is identically zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    re: Vec<T>,
    im: Vec<T>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = numel(shape);
        Tensor {
            shape: shape.to_vec(),
            re: vec![T::zero(); n],
            im: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: Complex<T>) -> Self {
        let n = numel(shape);
        Tensor {
            shape: shape.to_vec(),
            re: vec![value.re; n],
            im: vec![value.im; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            re: vec![value],
            im: vec![T::zero()],
        }
    }

    pub fn from_real(shape: &[usize], re: Vec<T>) -> Result<Self> {
        let n = numel(shape);
        if re.len() != n {
            return Err(Error::dim(format!(
                "buffer of length {} does not fit shape {:?}",
                re.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            re,
            im: vec![T::zero(); n],
        })
    }

    pub fn from_parts(shape: &[usize], re: Vec<T>, im: Vec<T>) -> Result<Self> {
        let n = numel(shape);
        if re.len() != n || im.len() != n {
            return Err(Error::dim(format!(
                "buffers of length {}/{} do not fit shape {:?}",
                re.len(),
                im.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            re,
            im,
        })
    }

    pub fn from_complex(shape: &[usize], values: &[Complex<T>]) -> Result<Self> {
        let re = values.iter().map(|z| z.re).collect();
        let im = values.iter().map(|z| z.im).collect();
        Self::from_parts(shape, re, im)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn re(&self) -> &[T] {
        &self.re
    }

    pub fn im(&self) -> &[T] {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut [T] {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut [T] {
        &mut self.im
    }

    pub fn parts_mut(&mut self) -> (&mut [T], &mut [T]) {
        (&mut self.re, &mut self.im)
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<T>, Vec<T>) {
        (self.shape, self.re, self.im)
    }

    pub fn get(&self, flat: usize) -> Complex<T> {
        Complex::new(self.re[flat], self.im[flat])
    }

    pub fn set(&mut self, flat: usize, z: Complex<T>) {
        self.re[flat] = z.re;
        self.im[flat] = z.im;
    }

    /// Element at a multi-index.
    pub fn at(&self, index: &[usize]) -> Complex<T> {
        self.get(self.flat_index(index))
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                debug_assert!(i < n);
                acc * n + i
            })
    }

    pub fn to_complex(&self) -> Vec<Complex<T>> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&re, &im)| Complex::new(re, im))
            .collect()
    }

    pub fn is_real(&self) -> bool {
        self.im.iter().all(|v| v.is_zero())
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn conj(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            re: self.re.clone(),
            im: self.im.iter().map(|&v| -v).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(Complex<T>) -> Complex<T>) -> Self {
        let mut out = self.clone();
        for i in 0..self.len() {
            out.set(i, f(self.get(i)));
        }
        out
    }

    /// Elementwise modulus as a real-typed tensor.
    pub fn abs(&self) -> Self {
        let re = self
            .re
            .iter()
            .zip(&self.im)
            .map(|(&a, &b)| a.hypot(b))
            .collect();
        Tensor {
            shape: self.shape.clone(),
            re,
            im: vec![T::zero(); self.len()],
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff on mismatched shapes");
        (0..self.len())
            .map(|i| (self.get(i) - other.get(i)).norm())
            .fold(T::zero(), T::max)
    }

    /// Tensor of the same shape converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            re: self.re.iter().map(|v| U::of(v.as_f64())).collect(),
            im: self.im.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.re.iter_mut().zip(&other.re) {
            *a += b;
        }
        for (a, &b) in self.im.iter_mut().zip(&other.im) {
            *a += b;
        }
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Output shape of a numpy-style broadcast (right-aligned, unit axes stretch).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for (k, slot) in out.iter_mut().enumerate() {
        let da = if k + a.len() >= rank { a[k + a.len() - rank] } else { 1 };
        let db = if k + b.len() >= rank { b[k + b.len() - rank] } else { 1 };
        *slot = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::dim(format!(
                    "shapes {a:?} and {b:?} are not broadcast-compatible"
                )))
            }
        };
    }
    Ok(out)
}

/// For every flat index of `out`, the flat index of the broadcast source
/// element in a tensor of shape `src`.
pub(crate) fn broadcast_map(out: &[usize], src: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - src.len();
    let mut strides = vec![0usize; rank];
    let mut stride = 1;
    for k in (0..src.len()).rev() {
        strides[k + offset] = if src[k] == 1 { 0 } else { stride };
        stride *= src[k];
    }
    let n = numel(out);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut pos = 0usize;
    for _ in 0..n {
        map.push(pos);
        for k in (0..rank).rev() {
            idx[k] += 1;
            pos += strides[k];
            if idx[k] < out[k] {
                break;
            }
            pos -= strides[k] * idx[k];
            idx[k] = 0;
        }
    }
    map
}
