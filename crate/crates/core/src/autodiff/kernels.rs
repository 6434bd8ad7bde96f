//! Dense real kernels used by the complex ops.

use crate::scalar::Scalar;

/// `c[m×p] += alpha · a[m×k] · b[k×p]`
pub(crate) fn gemm_nn<T: Scalar>(m: usize, k: usize, p: usize, alpha: T, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let crow = &mut c[i * p..(i + 1) * p];
        for r in 0..k {
            let s = alpha * a[i * k + r];
            if s.is_zero() {
                continue;
            }
            let brow = &b[r * p..(r + 1) * p];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += s * bv;
            }
        }
    }
}

/// `c[m×k] += alpha · g[m×p] · b[k×p]ᵀ`
pub(crate) fn gemm_nt<T: Scalar>(m: usize, k: usize, p: usize, alpha: T, g: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let grow = &g[i * p..(i + 1) * p];
        for r in 0..k {
            let brow = &b[r * p..(r + 1) * p];
            let mut acc = T::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            c[i * k + r] += alpha * acc;
        }
    }
}

/// `c[k×p] += alpha · a[m×k]ᵀ · g[m×p]`
pub(crate) fn gemm_tn<T: Scalar>(m: usize, k: usize, p: usize, alpha: T, a: &[T], g: &[T], c: &mut [T]) {
    for i in 0..m {
        let grow = &g[i * p..(i + 1) * p];
        for r in 0..k {
            let s = alpha * a[i * k + r];
            if s.is_zero() {
                continue;
            }
            let crow = &mut c[r * p..(r + 1) * p];
            for (cv, &gv) in crow.iter_mut().zip(grow) {
                *cv += s * gv;
            }
        }
    }
}
