//! Deterministic synthetic GWAS-shaped inputs.
//!
//! Every artifact draws from its own ChaCha stream of the seed, and every
//! X_R column from a stream of its own, so files are byte-identical for a
//! fixed seed regardless of thread count or chunking.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::exec::{self, Execution};
use crate::io::{create_matrix, write_columns, write_matrix_from, MatrixIoError};
use crate::matrix::{Matrix, ProblemDims};

pub const KINSHIP_FILE: &str = "kinship.mat";
pub const XL_FILE: &str = "xl.mat";
pub const Y_FILE: &str = "y.mat";
pub const XR_FILE: &str = "xr.mat";

const STREAM_KINSHIP: u64 = 0;
const STREAM_XL: u64 = 1;
const STREAM_Y: u64 = 2;
const STREAM_XR_BASE: u64 = 1 << 32;

/// Columns generated per write when streaming X_R to disk.
const XR_CHUNK: usize = 256;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// `G^T G / n + I` with `G` an `n x n` standard normal matrix. Symmetric
/// bit-for-bit.
pub fn kinship(n: usize, seed: u64, exec: Execution) -> Matrix {
    let mut r = rng(seed, STREAM_KINSHIP);
    let g = Matrix::from_fn(n, n, |_, _| r.sample(StandardNormal));
    let cols: Vec<Vec<f64>> = exec::map_indices(exec, n, |j| {
        let gj = g.col(j);
        (0..n)
            .map(|i| {
                if i < j {
                    0.0
                } else {
                    let gi = g.col(i);
                    let s: f64 = gi.iter().zip(gj).map(|(a, b)| a * b).sum();
                    s / n as f64 + if i == j { 1.0 } else { 0.0 }
                }
            })
            .collect()
    });
    Matrix::from_fn(n, n, |i, j| if i >= j { cols[j][i] } else { cols[i][j] })
}

/// Intercept column followed by `p - 2` standard normal covariates.
pub fn covariates(n: usize, p: usize, seed: u64) -> Matrix {
    let mut r = rng(seed, STREAM_XL);
    Matrix::from_fn(n, p - 1, |_, j| if j == 0 { 1.0 } else { r.sample(StandardNormal) })
}

pub fn phenotype(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed, STREAM_Y);
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

/// Genotype dosage column `j`: entries in {0, 1, 2}, Binomial(2, f) with
/// allele frequency `f ~ U(0.05, 0.95)`.
pub fn genotype_column(n: usize, j: usize, seed: u64, out: &mut [f64]) {
    let mut r = rng(seed, STREAM_XR_BASE + j as u64);
    let f: f64 = r.random_range(0.05..0.95);
    for v in out.iter_mut().take(n) {
        *v = f64::from(u8::from(r.random_bool(f)) + u8::from(r.random_bool(f)));
    }
}

pub fn genotypes(n: usize, first: usize, count: usize, seed: u64, exec: Execution) -> Vec<f64> {
    let mut data = vec![0.0; n * count];
    if n > 0 {
        exec::for_each_chunk(exec, &mut data, n, |c, col| {
            genotype_column(n, first + c, seed, col)
        });
    }
    data
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kinship: PathBuf,
    pub xl: PathBuf,
    pub y: PathBuf,
    pub xr: PathBuf,
}

/// Writes M, X_L, y and X_R into `dir` (created if missing).
pub fn generate(
    dims: ProblemDims,
    seed: u64,
    dir: impl AsRef<Path>,
    exec: Execution,
) -> Result<Dataset, MatrixIoError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| MatrixIoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let ds = Dataset {
        kinship: dir.join(KINSHIP_FILE),
        xl: dir.join(XL_FILE),
        y: dir.join(Y_FILE),
        xr: dir.join(XR_FILE),
    };
    let ProblemDims { n, p, m } = dims;
    write_matrix_from(&ds.kinship, &kinship(n, seed, exec))?;
    write_matrix_from(&ds.xl, &covariates(n, p, seed))?;
    write_matrix_from(&ds.y, &Matrix::column_vector(phenotype(n, seed)))?;
    create_matrix(&ds.xr, n, m)?;
    let mut first = 0;
    while first < m {
        let count = XR_CHUNK.min(m - first);
        write_columns(&ds.xr, first, count, &genotypes(n, first, count, seed, exec))?;
        first += count;
    }
    Ok(ds)
}
