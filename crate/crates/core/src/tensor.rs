//! Scalar abstraction and the dense buffers the network operates on.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of a network. Training runs in `f32`; the
/// gradient checks run the same code in `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;
    const BYTES: usize;

    /// `c = alpha * a * b + beta * c` with explicit row/column strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, in-bounds matrices; `c`
    /// must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits in scalar type")
    }
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f32 {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f64 {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Strided view of a matrix inside a slice.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatRef {
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl MatRef {
    pub fn dense(rows: usize, cols: usize) -> Self {
        MatRef {
            rows,
            cols,
            offset: 0,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            rows: self.cols,
            cols: self.rows,
            offset: self.offset,
            rs: self.cs,
            cs: self.rs,
        }
    }

    pub fn at(mut self, offset: usize) -> Self {
        self.offset = offset;
        self
    }

    pub fn with_rs(mut self, rs: usize) -> Self {
        self.rs = rs;
        self
    }

    fn last_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return self.offset;
        }
        self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
    }
}

/// Bounds-checked `c = alpha * a * b + beta * c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    alpha: T,
    a: &[T],
    am: MatRef,
    b: &[T],
    bm: MatRef,
    beta: T,
    c: &mut [T],
    cm: MatRef,
) {
    assert_eq!(am.cols, bm.rows, "inner dimensions");
    assert_eq!(am.rows, cm.rows, "output rows");
    assert_eq!(bm.cols, cm.cols, "output cols");
    if cm.rows == 0 || cm.cols == 0 {
        return;
    }
    assert!(am.last_index() < a.len().max(1) || am.cols == 0);
    assert!(bm.last_index() < b.len().max(1) || bm.rows == 0);
    assert!(cm.last_index() < c.len());
    if am.cols == 0 {
        for i in 0..cm.rows {
            for j in 0..cm.cols {
                let v = &mut c[cm.offset + i * cm.rs + j * cm.cs];
                *v = if beta == T::zero() { T::zero() } else { *v * beta };
            }
        }
        return;
    }
    // SAFETY: all three views were bounds-checked above and `c` is a distinct
    // mutable borrow.
    unsafe {
        T::gemm_raw(
            am.rows,
            am.cols,
            bm.cols,
            alpha,
            a.as_ptr().add(am.offset),
            am.rs as isize,
            am.cs as isize,
            b.as_ptr().add(bm.offset),
            bm.rs as isize,
            bm.cs as isize,
            beta,
            c.as_mut_ptr().add(cm.offset),
            cm.rs as isize,
            cm.cs as isize,
        )
    }
}

/// Dense NCHW batch. This is the external layout for network input.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    pub shape: [usize; 4],
    pub data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor4 {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> crate::Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(crate::Error::LengthMismatch {
                what: "tensor data",
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }
}

/// Row-major `rows x cols` matrix, used for logits and probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Matrix<T> {
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_and_transposes() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let expect = naive(&a, &b, m, k, n);
        let mut c = vec![0.0; m * n];
        gemm(1.0, &a, MatRef::dense(m, k), &b, MatRef::dense(k, n), 0.0, &mut c, MatRef::dense(m, n));
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
        // c^T = b^T a^T
        let mut ct = vec![0.0; n * m];
        gemm(
            1.0,
            &b,
            MatRef::dense(k, n).t(),
            &a,
            MatRef::dense(m, k).t(),
            0.0,
            &mut ct,
            MatRef::dense(n, m),
        );
        for i in 0..m {
            for j in 0..n {
                assert!((ct[j * m + i] - expect[i * n + j]).abs() < 1e-12);
            }
        }
    }
}
