use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense column-major real matrix.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// An `n x 0` matrix, the empty control block.
    pub fn empty(rows: usize) -> Self {
        Matrix::zeros(rows, 0)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_columns(rows: usize, columns: &[&[f64]]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            if c.len() != rows {
                return Err(Error::DimensionMismatch { what: "matrix column", expected: rows, found: c.len() });
            }
            data.extend_from_slice(c);
        }
        Ok(Matrix { rows, cols: columns.len(), data })
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { what: "matrix data", expected: rows * cols, found: data.len() });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from row slices; handy for small literals in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, |r| r.len());
        let mut m = Matrix::zeros(n, p);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != p {
                return Err(Error::DimensionMismatch { what: "matrix row", expected: p, found: r.len() });
            }
            for (j, &v) in r.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.cols).map(move |j| self.col(j))
    }

    pub fn as_col_major(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Keep the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for &j in cols {
            data.extend_from_slice(self.col(j));
        }
        Matrix { rows: self.rows, cols: cols.len(), data }
    }

    /// Keep the listed rows, in the given order (rows may repeat).
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for j in 0..self.cols {
            let c = self.col(j);
            data.extend(rows.iter().map(|&i| c[i]));
        }
        Matrix { rows: rows.len(), cols: self.cols, data }
    }

    /// `[self | other]`.
    pub fn hcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch { what: "hcat rows", expected: self.rows, found: other.rows });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix { rows: self.rows, cols: self.cols + other.cols, data })
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch { what: "matmul inner", expected: self.cols, found: other.rows });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            for k in 0..self.cols {
                let b = other[(k, j)];
                if b == 0.0 {
                    continue;
                }
                let a = self.col(k);
                let o = out.col_mut(j);
                for i in 0..a.len() {
                    o[i] += a[i] * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch { what: "matvec", expected: self.cols, found: v.len() });
        }
        let mut out = vec![0.0; self.rows];
        for (j, &b) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.col(j)) {
                *o += a * b;
            }
        }
        Ok(out)
    }

    /// `selfᵀ v`.
    pub fn tmatvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::DimensionMismatch { what: "tmatvec", expected: self.rows, found: v.len() });
        }
        Ok(self.columns().map(|c| crate::num::dot(c, v)).collect())
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// Determinant of a square matrix by Gaussian elimination with partial pivoting.
    pub fn determinant(&self) -> Result<f64> {
        if self.rows != self.cols {
            return Err(Error::DimensionMismatch { what: "determinant", expected: self.rows, found: self.cols });
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut det = 1.0;
        for k in 0..n {
            let (piv, pmax) =
                (k..n)
                    .map(|i| (i, a[(i, k)].abs()))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax == 0.0 {
                return Ok(0.0);
            }
            if piv != k {
                for j in 0..n {
                    let tmp = a[(k, j)];
                    a[(k, j)] = a[(piv, j)];
                    a[(piv, j)] = tmp;
                }
                det = -det;
            }
            let d = a[(k, k)];
            det *= d;
            for i in k + 1..n {
                let f = a[(i, k)] / d;
                if f != 0.0 {
                    for j in k..n {
                        let v = a[(k, j)];
                        a[(i, j)] -= f * v;
                    }
                }
            }
        }
        Ok(det)
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[j * self.rows + i]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[j * self.rows + i]
    }
}
