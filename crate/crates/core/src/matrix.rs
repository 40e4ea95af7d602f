//! Dense column-major storage and the problem shape.

use crate::gls::GlsError;

/// Dense column-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Wraps column-major `data`. Fails if the length is not `rows * cols`.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, GlsError> {
        if data.len() != rows * cols {
            return Err(GlsError::DimensionMismatch {
                what: "matrix data length",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn column_vector(values: Vec<f64>) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values,
        }
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
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Plain triple-loop product, used by tests and the oracle.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix, GlsError> {
        if self.cols != rhs.rows {
            return Err(GlsError::DimensionMismatch {
                what: "matmul inner dimension",
                expected: self.cols,
                found: rhs.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for j in 0..rhs.cols {
            for k in 0..self.cols {
                let b = rhs[(k, j)];
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

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Columns `[first, first + count)` as a new matrix.
    pub fn columns(&self, first: usize, count: usize) -> Matrix {
        let data = self.data[first * self.rows..(first + count) * self.rows].to_vec();
        Matrix {
            rows: self.rows,
            cols: count,
            data,
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i + j * self.rows]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i + j * self.rows]
    }
}

/// Shape of one run: `n` samples, `p` columns in each per-SNP design matrix
/// (`p - 1` fixed covariates plus the SNP), and `m` SNPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemDims {
    pub n: usize,
    pub p: usize,
    pub m: usize,
}

impl ProblemDims {
    pub fn new(n: usize, p: usize, m: usize) -> Result<Self, GlsError> {
        if p < 2 || n < p || m < 1 {
            return Err(GlsError::InvalidDims { n, p, m });
        }
        Ok(Self { n, p, m })
    }

    /// Number of fixed covariate columns (`X_L` width).
    #[inline]
    pub fn covariates(&self) -> usize {
        self.p - 1
    }
}

/// The shared `n x n` covariance between samples.
///
/// Only the lower triangle is read by the factorization; symmetry of the
/// stored upper triangle is not re-checked.
#[derive(Debug, Clone, PartialEq)]
pub struct KinshipMatrix(Matrix);

impl KinshipMatrix {
    pub fn new(m: Matrix) -> Result<Self, GlsError> {
        if m.rows() != m.cols() {
            return Err(GlsError::DimensionMismatch {
                what: "kinship matrix must be square",
                expected: m.rows(),
                found: m.cols(),
            });
        }
        if let Some(idx) = m.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(GlsError::NonFinite {
                row: idx % m.rows().max(1),
                col: idx / m.rows().max(1),
            });
        }
        Ok(Self(m))
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_major_layout() {
        let m = Matrix::from_col_major(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m[(0, 1)], 3.0);
        assert_eq!(m[(1, 0)], 2.0);
        assert_eq!(m.col(1), &[3.0, 4.0]);
    }

    #[test]
    fn dims_validation() {
        assert!(ProblemDims::new(4, 2, 1).is_ok());
        assert!(ProblemDims::new(1, 2, 1).is_err());
        assert!(ProblemDims::new(4, 1, 1).is_err());
        assert!(ProblemDims::new(4, 2, 0).is_err());
    }

    #[test]
    fn kinship_rejects_nonsquare_and_nan() {
        assert!(KinshipMatrix::new(Matrix::zeros(2, 3)).is_err());
        let mut m = Matrix::identity(3);
        m[(2, 1)] = f64::NAN;
        assert!(matches!(
            KinshipMatrix::new(m),
            Err(GlsError::NonFinite { row: 2, col: 1 })
        ));
    }
}
