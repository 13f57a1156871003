use std::fmt::Debug;

use serde::{Deserialize, Serialize};

/// Storage precision of a model, carried through checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

/// Scalar type the engine is generic over.
pub trait Real:
    num_traits::Float + Debug + Send + Sync + 'static
{
    const PRECISION: Precision;

    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// C = alpha * A·B + beta * C, row-major with explicit strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
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
}

impl Real for f32 {
    const PRECISION: Precision = Precision::F32;

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::F64;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major dense matrix. Vectors are `(n, 1)` or `(1, n)`, scalars `(1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Buf<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Buf<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Buf { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, value: T) -> Self {
        Buf { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn scalar(value: T) -> Self {
        Buf { rows: 1, cols: 1, data: vec![value] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "value count must equal product of shape");
        Buf { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Buf { rows, cols, data }
    }

    pub fn from_f64_slice(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols);
        Buf { rows, cols, data: data.iter().map(|&x| T::from_f64(x)).collect() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn item(&self) -> T {
        assert_eq!(self.shape(), (1, 1), "item() requires a scalar");
        self.data[0]
    }

    /// Reinterpret the same data under a new shape with equal element count.
    pub fn reshaped(&self, rows: usize, cols: usize) -> Self {
        assert_eq!(rows * cols, self.data.len(), "reshape must preserve element count");
        Buf { rows, cols, data: self.data.clone() }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Buf { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape(), other.shape());
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Buf { rows: self.rows, cols: self.cols, data }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }

    pub fn scale_assign(&mut self, s: T) {
        for a in self.data.iter_mut() {
            *a = *a * s;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|&x| Real::as_f64(x)).collect()
    }

    /// Plain matrix product, used by the graph op and by inference helpers.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul inner dimensions must agree");
        let mut out = Buf::zeros(self.rows, other.cols);
        unsafe {
            T::gemm(
                self.rows,
                self.cols,
                other.cols,
                T::one(),
                self.data.as_ptr(),
                self.cols as isize,
                1,
                other.data.as_ptr(),
                other.cols as isize,
                1,
                T::zero(),
                out.data.as_mut_ptr(),
                out.cols as isize,
                1,
            );
        }
        out
    }

    /// Broadcast-compatible check: each dim equal or 1 on one side.
    pub fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
        let dim = |x: usize, y: usize| {
            if x == y {
                Some(x)
            } else if x == 1 {
                Some(y)
            } else if y == 1 {
                Some(x)
            } else {
                None
            }
        };
        Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
    }

    /// Elementwise binary op with numpy-style broadcasting over 2 dims.
    pub fn broadcast_zip(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        let (rows, cols) = Self::broadcast_shape(self.shape(), other.shape())
            .unwrap_or_else(|| panic!("shapes {:?} and {:?} not broadcastable", self.shape(), other.shape()));
        if self.shape() == other.shape() {
            return self.zip_map(other, f);
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let ra = if self.rows == 1 { 0 } else { r };
            let rb = if other.rows == 1 { 0 } else { r };
            for c in 0..cols {
                let ca = if self.cols == 1 { 0 } else { c };
                let cb = if other.cols == 1 { 0 } else { c };
                data.push(f(self.get(ra, ca), other.get(rb, cb)));
            }
        }
        Buf { rows, cols, data }
    }

    /// Sum a gradient of broadcast shape back down to `shape`.
    pub fn reduce_to(&self, shape: (usize, usize)) -> Self {
        if self.shape() == shape {
            return self.clone();
        }
        let mut out = Buf::zeros(shape.0, shape.1);
        for r in 0..self.rows {
            let ro = if shape.0 == 1 { 0 } else { r };
            for c in 0..self.cols {
                let co = if shape.1 == 1 { 0 } else { c };
                let v = out.get(ro, co) + self.get(r, c);
                out.set(ro, co, v);
            }
        }
        out
    }

    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &x in &self.data {
            acc = acc + x;
        }
        acc
    }

    /// Row-wise sum producing `(rows, 1)`.
    pub fn sum_rows(&self) -> Self {
        let mut out = Buf::zeros(self.rows, 1);
        for r in 0..self.rows {
            let mut acc = T::zero();
            for c in 0..self.cols {
                acc = acc + self.get(r, c);
            }
            out.set(r, 0, acc);
        }
        out
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.rows);
        Buf {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.cols);
        let mut data = Vec::with_capacity((end - start) * self.rows);
        for r in 0..self.rows {
            data.extend_from_slice(&self.data[r * self.cols + start..r * self.cols + end]);
        }
        Buf { rows: self.rows, cols: end - start, data }
    }
}
