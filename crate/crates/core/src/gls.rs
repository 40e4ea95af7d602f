//! Dense kernels for the GLS sequence.
//!
//! Preprocessing factors the kinship matrix once (`M = L L^T`) and whitens
//! everything that does not depend on the SNP. Afterwards each SNP column
//! only needs a triangular solve followed by a tiny `p x p` SPD solve.
//!
//! No explicit inverse is formed anywhere: every `L^{-1}` below is a forward
//! substitution, and the per-SNP system is solved through its own Cholesky
//! factor.

use std::sync::Arc;

use thiserror::Error;

use crate::exec::{self, Execution};
use crate::matrix::{KinshipMatrix, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlsError {
    /// The leading minor of this order (1-based) is not positive definite.
    #[error("kinship matrix is not positive definite (leading minor of order {minor})")]
    NotPositiveDefinite { minor: usize },
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid problem dimensions n={n}, p={p}, m={m} (need n >= p >= 2, m >= 1)")]
    InvalidDims { n: usize, p: usize, m: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

/// Per-SNP outcome of the small SPD solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[repr(u8)]
pub enum SolveStatus {
    #[default]
    Ok = 0,
    /// `S` was not numerically positive definite; the solution is all NaN.
    Singular = 1,
}

/// Pivots at or below `SINGULAR_PIVOT_FACTOR * p * eps * max(diag S)` mark
/// the per-SNP system as singular. Exact and power-of-two-scaled duplicates
/// of a covariate leave a Schur complement of a few ulps of the diagonal, so
/// the factor has to clear that rounding floor.
pub const SINGULAR_PIVOT_FACTOR: f64 = 16.0;

/// Columns handled together in the blocked triangular solve.
const TRSM_PANEL: usize = 8;

/// Columns per work item in the S-loop.
const SLOOP_CHUNK: usize = 32;

/// Lower-triangular Cholesky factor `L` with `L L^T = M`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerFactor(Matrix);

impl LowerFactor {
    #[inline]
    pub fn n(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    /// Wraps an existing lower-triangular matrix. The strict upper triangle
    /// is ignored by every solve.
    pub fn from_lower(l: Matrix) -> Result<Self, GlsError> {
        if l.rows() != l.cols() {
            return Err(GlsError::DimensionMismatch {
                what: "factor must be square",
                expected: l.rows(),
                found: l.cols(),
            });
        }
        Ok(Self(l))
    }

    /// Bytes needed to hold the factor densely.
    pub fn size_bytes(&self) -> u64 {
        (self.n() * self.n() * 8) as u64
    }
}

/// Factors `M = L L^T` (left-looking, column by column).
pub fn cholesky_factor(m: &KinshipMatrix) -> Result<LowerFactor, GlsError> {
    cholesky_factor_with(m, Execution::default())
}

pub fn cholesky_factor_with(m: &KinshipMatrix, exec: Execution) -> Result<LowerFactor, GlsError> {
    let a = m.matrix();
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        // Column j of L below the diagonal needs columns 0..j already final.
        let (done, rest) = l.as_mut_slice().split_at_mut(j * n);
        let col = &mut rest[..n];
        col[j..].copy_from_slice(&a.col(j)[j..]);
        let done: &[f64] = done;
        let update = |offset: usize, seg: &mut [f64]| {
            for k in 0..j {
                let ljk = done[k * n + j];
                if ljk == 0.0 {
                    continue;
                }
                let src = &done[k * n + offset..k * n + offset + seg.len()];
                for (s, &v) in seg.iter_mut().zip(src) {
                    *s -= v * ljk;
                }
            }
        };
        let tail = &mut col[j..];
        if n - j >= 512 && exec.is_parallel() {
            exec::for_each_chunk(exec, tail, 256, |ci, seg| update(j + ci * 256, seg));
        } else {
            update(j, tail);
        }
        let d = col[j];
        if !(d > 0.0) || !d.is_finite() {
            return Err(GlsError::NotPositiveDefinite { minor: j + 1 });
        }
        let djj = d.sqrt();
        col[j] = djj;
        for v in &mut col[j + 1..] {
            *v /= djj;
        }
    }
    Ok(LowerFactor(l))
}

/// Forward substitution `x <- L^{-1} x` for one column.
pub fn solve_lower_in_place(l: &LowerFactor, x: &mut [f64]) -> Result<(), GlsError> {
    let n = l.n();
    if x.len() != n {
        return Err(GlsError::DimensionMismatch {
            what: "right-hand side length",
            expected: n,
            found: x.len(),
        });
    }
    let a = l.matrix().as_slice();
    for j in 0..n {
        let lc = &a[j * n..(j + 1) * n];
        let xj = x[j] / lc[j];
        x[j] = xj;
        if xj != 0.0 {
            for (xi, &lij) in x[j + 1..].iter_mut().zip(&lc[j + 1..]) {
                *xi -= lij * xj;
            }
        }
    }
    Ok(())
}

/// `X <- L^{-1} X` for a column-major `n x k` slab.
///
/// Columns are processed in panels sharing each pass over `L`, but every
/// column sees exactly the operation sequence of [`solve_lower_in_place`],
/// so the result does not depend on how columns are grouped or split.
pub fn whiten_columns(l: &LowerFactor, data: &mut [f64], exec: Execution) -> Result<(), GlsError> {
    let n = l.n();
    if n == 0 || data.len() % n != 0 {
        return Err(GlsError::DimensionMismatch {
            what: "slab length must be a multiple of n",
            expected: n,
            found: data.len(),
        });
    }
    let a = l.matrix().as_slice();
    exec::for_each_chunk(exec, data, n * TRSM_PANEL, |_, panel| {
        let k = panel.len() / n;
        for j in 0..n {
            let lc = &a[j * n..(j + 1) * n];
            let diag = lc[j];
            let below = &lc[j + 1..];
            for c in 0..k {
                let x = &mut panel[c * n..(c + 1) * n];
                let xj = x[j] / diag;
                x[j] = xj;
                if xj != 0.0 {
                    for (xi, &lij) in x[j + 1..].iter_mut().zip(below) {
                        *xi -= lij * xj;
                    }
                }
            }
        }
    });
    Ok(())
}

/// An `n x k` slab of consecutive SNP columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SnpBlock {
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    /// Global 0-based index of the first SNP in the block.
    pub first_index: usize,
}

impl SnpBlock {
    pub fn new(rows: usize, first_index: usize, data: Vec<f64>) -> Result<Self, GlsError> {
        if rows == 0 || data.len() % rows != 0 {
            return Err(GlsError::DimensionMismatch {
                what: "block length must be a multiple of n",
                expected: rows,
                found: data.len(),
            });
        }
        Ok(Self {
            cols: data.len() / rows,
            rows,
            data,
            first_index,
        })
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }
}

/// Per-SNP solutions for one block: `p x k`, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultBlock {
    pub data: Vec<f64>,
    pub flags: Vec<SolveStatus>,
    pub p: usize,
    pub first_index: usize,
}

impl ResultBlock {
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.p..(j + 1) * self.p]
    }

    pub fn singular_count(&self) -> usize {
        self.flags
            .iter()
            .filter(|f| **f == SolveStatus::Singular)
            .count()
    }
}

/// Everything computed once before streaming starts.
#[derive(Debug, Clone)]
pub struct WhitenedContext {
    pub factor: Arc<LowerFactor>,
    /// `L^{-1} X_L`, `n x (p-1)`.
    pub xl: Matrix,
    /// `L^{-1} y`.
    pub y: Vec<f64>,
    /// `X~_L^T y~`.
    pub r_top: Vec<f64>,
    /// `X~_L^T X~_L`, exactly symmetric.
    pub s_tl: Matrix,
}

impl WhitenedContext {
    #[inline]
    pub fn n(&self) -> usize {
        self.xl.rows()
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.xl.cols() + 1
    }
}

/// Whitens the SNP-independent data and forms the fixed blocks of `S`.
pub fn whiten_fixed(
    factor: Arc<LowerFactor>,
    x_l: &Matrix,
    y: &[f64],
) -> Result<WhitenedContext, GlsError> {
    let n = factor.n();
    if x_l.rows() != n {
        return Err(GlsError::DimensionMismatch {
            what: "X_L rows",
            expected: n,
            found: x_l.rows(),
        });
    }
    if y.len() != n {
        return Err(GlsError::DimensionMismatch {
            what: "y length",
            expected: n,
            found: y.len(),
        });
    }
    let q = x_l.cols();
    let mut xl = x_l.clone();
    if q > 0 {
        whiten_columns(&factor, xl.as_mut_slice(), Execution::default())?;
    }
    let mut yt = y.to_vec();
    solve_lower_in_place(&factor, &mut yt)?;
    let r_top = (0..q).map(|j| dot(xl.col(j), &yt)).collect();
    let mut s_tl = Matrix::zeros(q, q);
    for j in 0..q {
        for i in j..q {
            let v = dot(xl.col(i), xl.col(j));
            s_tl[(i, j)] = v;
            s_tl[(j, i)] = v;
        }
    }
    Ok(WhitenedContext {
        factor,
        xl,
        y: yt,
        r_top,
        s_tl,
    })
}

/// Whitens every column of `block` in place.
pub fn whiten_snp_block(
    l: &LowerFactor,
    block: &mut SnpBlock,
    exec: Execution,
) -> Result<(), GlsError> {
    if block.rows != l.n() {
        return Err(GlsError::DimensionMismatch {
            what: "block rows",
            expected: l.n(),
            found: block.rows,
        });
    }
    if block.cols == 0 {
        return Ok(());
    }
    whiten_columns(l, &mut block.data, exec)
}

/// Four-lane dot product; every caller shares it so that identical inputs
/// give identical sums.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0_f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Writes the symmetric `p x p` system `S` (column-major) and right-hand side
/// for one whitened SNP column.
pub fn assemble_system(
    ctx: &WhitenedContext,
    x: &[f64],
    s: &mut [f64],
    rhs: &mut [f64],
) -> Result<(), GlsError> {
    let p = ctx.p();
    let q = p - 1;
    if x.len() != ctx.n() {
        return Err(GlsError::DimensionMismatch {
            what: "SNP column length",
            expected: ctx.n(),
            found: x.len(),
        });
    }
    debug_assert_eq!(s.len(), p * p);
    debug_assert_eq!(rhs.len(), p);
    for j in 0..q {
        s[j * p..j * p + q].copy_from_slice(ctx.s_tl.col(j));
        let sbl = dot(x, ctx.xl.col(j));
        s[j * p + q] = sbl;
        s[q * p + j] = sbl;
    }
    s[q * p + q] = dot(x, x);
    rhs[..q].copy_from_slice(&ctx.r_top);
    rhs[q] = dot(x, &ctx.y);
    Ok(())
}

/// In-place Cholesky solve of the small system; `s` is overwritten.
fn spd_solve_small(p: usize, s: &mut [f64], rhs: &mut [f64]) -> SolveStatus {
    let max_diag = (0..p).fold(0.0_f64, |m, i| m.max(s[i * p + i]));
    let tol = SINGULAR_PIVOT_FACTOR * p as f64 * f64::EPSILON * max_diag;
    for j in 0..p {
        let mut d = s[j * p + j];
        for k in 0..j {
            d -= s[k * p + j] * s[k * p + j];
        }
        if !(d > tol) {
            return SolveStatus::Singular;
        }
        let ljj = d.sqrt();
        s[j * p + j] = ljj;
        // Row j of L^T stored in the upper triangle: s[j*p + i] for i > j.
        for i in j + 1..p {
            let mut v = s[i * p + j];
            for k in 0..j {
                v -= s[k * p + i] * s[k * p + j];
            }
            s[j * p + i] = v / ljj;
        }
    }
    // L stored transposed: L[i][k] = s[k*p + i] for i >= k.
    for i in 0..p {
        let mut v = rhs[i];
        for k in 0..i {
            v -= s[k * p + i] * rhs[k];
        }
        rhs[i] = v / s[i * p + i];
    }
    for i in (0..p).rev() {
        let mut v = rhs[i];
        for k in i + 1..p {
            v -= s[i * p + k] * rhs[k];
        }
        rhs[i] = v / s[i * p + i];
    }
    SolveStatus::Ok
}

fn solve_into(
    ctx: &WhitenedContext,
    x: &[f64],
    s: &mut [f64],
    out: &mut [f64],
) -> Result<SolveStatus, GlsError> {
    assemble_system(ctx, x, s, out)?;
    let status = spd_solve_small(ctx.p(), s, out);
    if status == SolveStatus::Singular {
        out.fill(f64::NAN);
    }
    Ok(status)
}

/// Solves one whitened SNP column: `r = S^{-1} r~`.
pub fn assemble_and_solve(
    ctx: &WhitenedContext,
    x: &[f64],
) -> Result<(Vec<f64>, SolveStatus), GlsError> {
    let p = ctx.p();
    let mut s = vec![0.0; p * p];
    let mut r = vec![0.0; p];
    let status = solve_into(ctx, x, &mut s, &mut r)?;
    Ok((r, status))
}

/// Solves every column of an already-whitened `n x k` slab into `out`
/// (`p x k`) and `flags` (`k`). Returns the number of singular columns.
pub fn s_loop_into(
    ctx: &WhitenedContext,
    whitened: &[f64],
    out: &mut [f64],
    flags: &mut [SolveStatus],
    exec: Execution,
) -> Result<usize, GlsError> {
    let n = ctx.n();
    let p = ctx.p();
    if whitened.len() % n != 0 {
        return Err(GlsError::DimensionMismatch {
            what: "slab length must be a multiple of n",
            expected: n,
            found: whitened.len(),
        });
    }
    let k = whitened.len() / n;
    if out.len() != p * k || flags.len() != k {
        return Err(GlsError::DimensionMismatch {
            what: "result slab columns",
            expected: k,
            found: flags.len(),
        });
    }
    exec::for_each_chunk_pair(
        exec,
        out,
        p * SLOOP_CHUNK,
        flags,
        SLOOP_CHUNK,
        |ci, rchunk, fchunk| {
            let mut s = vec![0.0; p * p];
            for (c, (r, f)) in rchunk.chunks_mut(p).zip(fchunk.iter_mut()).enumerate() {
                let col = ci * SLOOP_CHUNK + c;
                let x = &whitened[col * n..(col + 1) * n];
                // Lengths were validated above; assemble cannot fail here.
                *f = solve_into(ctx, x, &mut s, r).unwrap_or(SolveStatus::Singular);
            }
        },
    );
    Ok(flags.iter().filter(|f| **f == SolveStatus::Singular).count())
}

/// S-loop over one whitened block.
pub fn s_loop(
    ctx: &WhitenedContext,
    block: &SnpBlock,
    exec: Execution,
) -> Result<ResultBlock, GlsError> {
    if block.rows != ctx.n() {
        return Err(GlsError::DimensionMismatch {
            what: "block rows",
            expected: ctx.n(),
            found: block.rows,
        });
    }
    let p = ctx.p();
    let mut data = vec![0.0; p * block.cols];
    let mut flags = vec![SolveStatus::Ok; block.cols];
    s_loop_into(ctx, &block.data, &mut data, &mut flags, exec)?;
    Ok(ResultBlock {
        data,
        flags,
        p,
        first_index: block.first_index,
    })
}

/// In-core reference loop: factor, whiten, and solve every column of `x_r`.
/// Used as the comparison target for the streaming paths.
pub fn solve_in_core(
    kinship: &KinshipMatrix,
    x_l: &Matrix,
    y: &[f64],
    x_r: &Matrix,
    exec: Execution,
) -> Result<ResultBlock, GlsError> {
    let factor = Arc::new(cholesky_factor(kinship)?);
    let ctx = whiten_fixed(factor.clone(), x_l, y)?;
    let mut block = SnpBlock::new(x_r.rows(), 0, x_r.as_slice().to_vec())?;
    whiten_snp_block(&factor, &mut block, exec)?;
    s_loop(&ctx, &block, exec)
}
