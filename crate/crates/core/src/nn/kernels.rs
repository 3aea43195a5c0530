//! Inner loops. Reductions use eight independent accumulators so the
//! compiler can vectorize them without reassociating floats.

use super::Real;

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for i in 0..chunks {
        let (x, y) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for i in chunks * 8..n {
        s += a[i] * b[i];
    }
    s
}

/// y += a * x
#[inline]
pub fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

/// out[n×m] = a[n×k] · b[m×k]ᵀ (+ bias per column).
pub fn matmul_bt<T: Real>(a: &[T], b: &[T], bias: Option<&[T]>, n: usize, k: usize, m: usize, out: &mut [T]) {
    for i in 0..n {
        let ar = &a[i * k..(i + 1) * k];
        let or = &mut out[i * m..(i + 1) * m];
        for j in 0..m {
            let s = dot(ar, &b[j * k..(j + 1) * k]);
            or[j] = match bias {
                Some(bv) => s + bv[j],
                None => s,
            };
        }
    }
}

/// out[n×k] += a[n×m] · b[m×k]
pub fn matmul_acc<T: Real>(a: &[T], b: &[T], n: usize, m: usize, k: usize, out: &mut [T]) {
    for i in 0..n {
        let or = &mut out[i * k..(i + 1) * k];
        for j in 0..m {
            let s = a[i * m + j];
            if s != T::zero() {
                axpy(or, s, &b[j * k..(j + 1) * k]);
            }
        }
    }
}

/// out[m×k] += a[n×m]ᵀ · b[n×k]
pub fn matmul_at_acc<T: Real>(a: &[T], b: &[T], n: usize, m: usize, k: usize, out: &mut [T]) {
    for i in 0..n {
        let br = &b[i * k..(i + 1) * k];
        for j in 0..m {
            let s = a[i * m + j];
            if s != T::zero() {
                axpy(&mut out[j * k..(j + 1) * k], s, br);
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
