//! Dense row-major matrices and the plain (non-recording) kernels used by
//! both the autodiff tape and the inference path.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::{Error, Result};

/// Row-major 2-D tensor. Vectors are stored as `1 × n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row_vector(data: Vec<T>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn scalar(x: T) -> Self {
        Self::row_vector(vec![x])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// First element; intended for `1 × 1` results.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: T) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut out = Self::zeros(idx.len(), self.cols);
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(r));
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }
}

/// `a · b`.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    assert_eq!(a.cols, b.rows, "matmul inner dims");
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in arow.iter().enumerate() {
            if aik == T::zero() {
                continue;
            }
            for (o, &bkj) in orow.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    out
}

/// `a · bᵀ`.
pub fn matmul_bt<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    assert_eq!(a.cols, b.cols, "matmul_bt inner dims");
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = dot(arow, b.row(j));
        }
    }
    out
}

/// `aᵀ · b`.
pub fn matmul_at<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    assert_eq!(a.rows, b.rows, "matmul_at inner dims");
    let mut out = Matrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let brow = b.row(k);
        for (i, &aki) in a.row(k).iter().enumerate() {
            if aki == T::zero() {
                continue;
            }
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aki * bkj;
            }
        }
    }
    out
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Adds a `1 × cols` row to every row of `a`.
pub fn add_row<T: Scalar>(a: &Matrix<T>, row: &Matrix<T>) -> Matrix<T> {
    assert_eq!(a.cols, row.cols);
    let mut out = a.clone();
    for r in 0..out.rows {
        for (o, &b) in out.row_mut(r).iter_mut().zip(row.as_slice()) {
            *o += b;
        }
    }
    out
}

pub fn add<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let mut out = a.clone();
    out.add_assign(b);
    out
}

/// Softmax of one row in place. Entries with `allowed[i] == false` get
/// probability zero. Returns `false` when nothing is allowed.
pub fn softmax_in_place<T: Scalar>(row: &mut [T], allowed: Option<&[bool]>) -> bool {
    let ok = |i: usize| allowed.map_or(true, |m| m[i]);
    let mut max = T::neg_infinity();
    for (i, &x) in row.iter().enumerate() {
        if ok(i) && x > max {
            max = x;
        }
    }
    if max == T::neg_infinity() {
        return false;
    }
    let mut sum = T::zero();
    for (i, x) in row.iter_mut().enumerate() {
        if ok(i) {
            *x = (*x - max).exp();
            sum += *x;
        } else {
            *x = T::zero();
        }
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
    true
}

/// Row-wise layer normalisation without the affine part. Returns the
/// normalised rows and each row's inverse standard deviation.
pub fn normalize_rows<T: Scalar>(x: &Matrix<T>, eps: T) -> (Matrix<T>, Vec<T>) {
    let cols = T::of_usize(x.cols);
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = out.row_mut(r);
        let mean = row.iter().copied().sum::<T>() / cols;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cols;
        let is = T::one() / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * is;
        }
        inv_std.push(is);
    }
    (out, inv_std)
}

/// Layer normalisation with gain and bias (`1 × cols` each).
pub fn layer_norm<T: Scalar>(x: &Matrix<T>, gamma: &Matrix<T>, beta: &Matrix<T>, eps: T) -> Matrix<T> {
    let (mut out, _) = normalize_rows(x, eps);
    for r in 0..out.rows {
        for ((o, &g), &b) in out
            .row_mut(r)
            .iter_mut()
            .zip(gamma.as_slice())
            .zip(beta.as_slice())
        {
            *o = *o * g + b;
        }
    }
    out
}

pub fn relu<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn softplus<T: Scalar>(x: T) -> T {
    // log(1 + e^x) without overflow for large x
    if x > T::of(30.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn inverse_softplus<T: Scalar>(y: T) -> T {
    if y > T::of(30.0) {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Serialisable snapshot of a matrix; values are widened to `f64`, which
/// is lossless for both supported scalar types.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MatrixRecord {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

impl<T: Scalar> From<&Matrix<T>> for MatrixRecord {
    fn from(m: &Matrix<T>) -> Self {
        Self {
            shape: m.shape(),
            values: m.as_slice().iter().map(|v| v.as_f64()).collect(),
        }
    }
}

impl MatrixRecord {
    pub fn to_matrix<T: Scalar>(&self) -> Result<Matrix<T>> {
        Matrix::from_vec(
            self.shape[0],
            self.shape[1],
            self.values.iter().map(|&v| T::of(v)).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Matrix<f64> {
        Matrix::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_variants_agree_with_transpose() {
        let a = m(2, 3, &[1., 2., 3., 4., 5., 6.]);
        let b = m(3, 2, &[7., 8., 9., 10., 11., 12.]);
        let ab = matmul(&a, &b);
        assert_eq!(ab.as_slice(), &[58., 64., 139., 154.]);
        assert_eq!(matmul_bt(&a, &b.transpose()), ab);
        assert_eq!(matmul_at(&a.transpose(), &b), ab);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Matrix::<f64>::from_vec(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn masked_softmax_zeroes_disallowed() {
        let mut row = vec![1.0f64, 2.0, 3.0];
        assert!(softmax_in_place(&mut row, Some(&[true, false, true])));
        assert_eq!(row[1], 0.0);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut row = vec![1.0f64, 2.0];
        assert!(!softmax_in_place(&mut row, Some(&[false, false])));
    }

    #[test]
    fn softplus_inverse_round_trip() {
        let pi = std::f64::consts::PI;
        assert!((softplus(inverse_softplus(pi)) - pi).abs() < 1e-12);
        assert_eq!(softplus(100.0f64), 100.0);
    }

    #[test]
    fn layer_norm_rows_have_zero_mean_unit_variance() {
        let x = m(2, 4, &[1., 2., 3., 4., -1., 0., 5., 2.]);
        let (n, _) = normalize_rows(&x, 0.0);
        for r in 0..2 {
            let mean: f64 = n.row(r).iter().sum::<f64>() / 4.0;
            let var: f64 = n.row(r).iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
    }
}
