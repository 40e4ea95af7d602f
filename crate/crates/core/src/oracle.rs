//! Brute-force reference for `r_i = (X_i^T M^{-1} X_i)^{-1} X_i^T M^{-1} y`.
//!
//! The kinship matrix is reduced by plain Gaussian elimination (no square
//! roots, no whitening), every `M^{-1} v` is an explicit forward/backward
//! solve, and the `p x p` normal equations are solved by partially pivoted
//! elimination. Nothing here is shared with [`crate::gls`], so agreement
//! between the two is evidence rather than tautology.

use thiserror::Error;

use crate::exec::{self, Execution};
use crate::gls::SINGULAR_PIVOT_FACTOR;
use crate::matrix::{KinshipMatrix, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("kinship matrix is not positive definite (elimination pivot {minor} <= 0)")]
    NotPositiveDefinite { minor: usize },
    #[error("normal equations X^T M^-1 X are singular")]
    Singular,
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

/// Solutions for a whole sequence; singular columns are NaN and flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// `p x m`, column-major.
    pub values: Matrix,
    pub singular: Vec<bool>,
}

/// `M = L U` without pivoting; `L` unit lower (multipliers below the
/// diagonal), `U` on and above.
struct EliminatedKinship {
    n: usize,
    lu: Vec<f64>,
}

impl EliminatedKinship {
    fn new(m: &KinshipMatrix) -> Result<Self, OracleError> {
        let n = m.n();
        let mut lu = m.matrix().as_slice().to_vec();
        for k in 0..n {
            let piv = lu[k + k * n];
            // For symmetric M, all elimination pivots are positive iff M is PD.
            if !(piv > 0.0) || !piv.is_finite() {
                return Err(OracleError::NotPositiveDefinite { minor: k + 1 });
            }
            for i in k + 1..n {
                lu[i + k * n] /= piv;
            }
            for j in k + 1..n {
                let ukj = lu[k + j * n];
                if ukj == 0.0 {
                    continue;
                }
                for i in k + 1..n {
                    lu[i + j * n] -= lu[i + k * n] * ukj;
                }
            }
        }
        Ok(Self { n, lu })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let mut v = x[i];
            for k in 0..i {
                v -= self.lu[i + k * n] * x[k];
            }
            x[i] = v;
        }
        for i in (0..n).rev() {
            let mut v = x[i];
            for k in i + 1..n {
                v -= self.lu[i + k * n] * x[k];
            }
            x[i] = v / self.lu[i + i * n];
        }
        x
    }
}

fn plain_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Partially pivoted elimination on a small dense system.
fn solve_small(p: usize, mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>, OracleError> {
    let scale = (0..p).fold(0.0_f64, |m, i| m.max(a[i + i * p].abs()));
    let tol = SINGULAR_PIVOT_FACTOR * p as f64 * f64::EPSILON * scale;
    for k in 0..p {
        let piv_row = (k..p)
            .max_by(|&i, &j| a[i + k * p].abs().total_cmp(&a[j + k * p].abs()))
            .unwrap_or(k);
        if !(a[piv_row + k * p].abs() > tol) {
            return Err(OracleError::Singular);
        }
        if piv_row != k {
            for j in 0..p {
                a.swap(k + j * p, piv_row + j * p);
            }
            b.swap(k, piv_row);
        }
        let piv = a[k + k * p];
        for i in k + 1..p {
            let l = a[i + k * p] / piv;
            for j in k + 1..p {
                a[i + j * p] -= l * a[k + j * p];
            }
            b[i] -= l * b[k];
        }
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut v = b[i];
        for j in i + 1..p {
            v -= a[i + j * p] * x[j];
        }
        x[i] = v / a[i + i * p];
    }
    Ok(x)
}

/// Shared state for many SNPs against one `(X_L, M, y)`.
struct Reference<'a> {
    x_l: &'a Matrix,
    m: EliminatedKinship,
    z_l: Vec<Vec<f64>>,
    w: Vec<f64>,
}

impl<'a> Reference<'a> {
    fn new(x_l: &'a Matrix, m: &KinshipMatrix, y: &[f64]) -> Result<Self, OracleError> {
        let n = m.n();
        if x_l.rows() != n {
            return Err(OracleError::DimensionMismatch {
                what: "X_L rows",
                expected: n,
                found: x_l.rows(),
            });
        }
        if y.len() != n {
            return Err(OracleError::DimensionMismatch {
                what: "y length",
                expected: n,
                found: y.len(),
            });
        }
        let m = EliminatedKinship::new(m)?;
        let z_l = (0..x_l.cols()).map(|j| m.solve(x_l.col(j))).collect();
        let w = m.solve(y);
        Ok(Self { x_l, m, z_l, w })
    }

    fn solve_snp(&self, x_r: &[f64]) -> Result<Vec<f64>, OracleError> {
        if x_r.len() != self.m.n {
            return Err(OracleError::DimensionMismatch {
                what: "SNP column length",
                expected: self.m.n,
                found: x_r.len(),
            });
        }
        let q = self.x_l.cols();
        let p = q + 1;
        let z_r = self.m.solve(x_r);
        let x_col = |j: usize| if j < q { self.x_l.col(j) } else { x_r };
        let z_col = |j: usize| if j < q { &self.z_l[j][..] } else { &z_r[..] };
        let mut a = vec![0.0; p * p];
        let mut b = vec![0.0; p];
        for i in 0..p {
            for j in 0..p {
                a[i + j * p] = plain_dot(x_col(i), z_col(j));
            }
            b[i] = plain_dot(x_col(i), &self.w);
        }
        solve_small(p, a, b)
    }
}

/// Direct evaluation for a single SNP column.
pub fn gls_direct(
    x_l: &Matrix,
    x_r: &[f64],
    m: &KinshipMatrix,
    y: &[f64],
) -> Result<Vec<f64>, OracleError> {
    Reference::new(x_l, m, y)?.solve_snp(x_r)
}

/// Direct evaluation for every column of `x_r`.
pub fn gls_direct_sequence(
    x_l: &Matrix,
    x_r: &Matrix,
    m: &KinshipMatrix,
    y: &[f64],
    exec: Execution,
) -> Result<OracleSolution, OracleError> {
    let cols: Vec<usize> = (0..x_r.cols()).collect();
    gls_direct_columns(x_l, x_r, &cols, m, y, exec)
}

/// Direct evaluation for the listed columns of `x_r`, in list order.
pub fn gls_direct_columns(
    x_l: &Matrix,
    x_r: &Matrix,
    columns: &[usize],
    m: &KinshipMatrix,
    y: &[f64],
    exec: Execution,
) -> Result<OracleSolution, OracleError> {
    let reference = Reference::new(x_l, m, y)?;
    let p = x_l.cols() + 1;
    let solved = exec::map_indices(exec, columns.len(), |i| {
        reference.solve_snp(x_r.col(columns[i]))
    });
    let mut values = Matrix::zeros(p, columns.len());
    let mut singular = vec![false; columns.len()];
    for (i, r) in solved.into_iter().enumerate() {
        match r {
            Ok(v) => values.col_mut(i).copy_from_slice(&v),
            Err(OracleError::Singular) => {
                values.col_mut(i).fill(f64::NAN);
                singular[i] = true;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(OracleSolution { values, singular })
}
