use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
///
/// Rank 0 and rank 1 tensors are viewed as `1×1` and `1×n` matrices by
/// the 2-D helpers, which is all the graph engine works with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor construction (index {i})")));
        }
        Ok(Self { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![], vec![value])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Self { shape: vec![rows, cols], data: vec![value; rows * cols] }
    }

    /// Builds a matrix without the finiteness scan. Graph nodes use this and
    /// report non-finite values through the graph instead.
    pub(crate) fn raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { shape: vec![rows, cols], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn dims2(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols().max(1))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterprets the tensor as a `rows×cols` matrix.
    pub fn as_matrix(&self) -> Self {
        let (r, c) = self.dims2();
        Self::raw(r, c, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.data.len() != other.data.len() {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = self.dims2();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::raw(c, r, out)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        let (m, k) = self.dims2();
        let (k2, n) = other.dims2();
        if k != k2 {
            return Err(Error::Shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, false, &other.data, false, &mut out, 0.0);
        Ok(Self::raw(m, n, out))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let c = self.cols();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(self.row(i));
        }
        Self::raw(idx.len(), c, out)
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        let c = self.cols();
        Self::raw(end - start, c, self.data[start * c..end * c].to_vec())
    }

    pub fn vstack(parts: &[&Tensor]) -> Result<Self> {
        let cols = parts.first().map_or(0, |t| t.cols());
        if parts.iter().any(|t| t.cols() != cols) {
            return Err(Error::Shape("vstack with differing widths".into()));
        }
        let rows = parts.iter().map(|t| t.rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Self::raw(rows, cols, data))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `c = a·b + beta·c` for row-major operands, optionally transposing `a` or `b`.
/// `a` is `m×k` after the optional transpose, `b` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // Strides of the logical (untransposed) operands.
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover every index touched for the given shapes and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_finiteness_are_checked() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![1, 2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![1, 2], vec![1.0, f64::INFINITY]).is_err());
        let t = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.dims2(), (2, 3));
        assert_eq!(Tensor::scalar(1.0).unwrap().dims2(), (1, 1));
        assert_eq!(Tensor::vector(vec![1.0; 4]).unwrap().dims2(), (1, 4));
    }

    #[test]
    fn transposed_gemm_matches_naive() {
        let a = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::matrix(3, 2, vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab.data(), &[58., 64., 139., 154.]);

        // aᵀ·aᵀᵀ with explicit transposes
        let at = a.transpose();
        let mut out = vec![0.0; 9];
        gemm(3, 2, 3, a.data(), true, a.data(), false, &mut out, 0.0);
        assert_eq!(out, at.matmul(&a).unwrap().into_data());
        let mut out = vec![0.0; 4];
        gemm(2, 3, 2, a.data(), false, a.data(), true, &mut out, 0.0);
        assert_eq!(out, a.matmul(&at).unwrap().into_data());
    }
}
