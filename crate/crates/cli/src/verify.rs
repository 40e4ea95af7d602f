//! Re-evaluates result columns directly from the inputs.

use oocgls::io::{read_columns, read_header, read_matrix};
use oocgls::oracle::{gls_direct_columns, OracleError};
use oocgls::{Execution, KinshipMatrix, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Failure, VerifyArgs};

/// Columns re-evaluated per oracle call; bounds memory for large m.
const CHUNK: usize = 2048;

/// Sorted column indices to check: all of them, or `sample` distinct ones
/// drawn with `seed`.
pub fn select_columns(m: usize, sample: Option<usize>, seed: u64) -> Vec<usize> {
    match sample {
        Some(k) if k < m => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut cols = rand::seq::index::sample(&mut rng, m, k).into_vec();
            cols.sort_unstable();
            cols
        }
        _ => (0..m).collect(),
    }
}

fn oracle_failure(e: OracleError) -> Failure {
    Failure::data(format!("reference evaluation failed: {e}"))
}

pub fn verify(args: VerifyArgs) -> Result<(), Failure> {
    if !(args.tolerance.is_finite() && args.tolerance >= 0.0) {
        return Err(Failure::config(format!("--tolerance must be non-negative, got {}", args.tolerance)));
    }
    let inp = &args.inputs;
    let kinship = KinshipMatrix::new(read_matrix(&inp.kinship)?).map_err(|e| Failure::data(e.to_string()))?;
    let xl = read_matrix(&inp.xl)?;
    let y = read_matrix(&inp.y)?.into_vec();
    let n = kinship.n();
    let p = xl.cols() + 1;
    if xl.rows() != n || y.len() != n {
        return Err(Failure::data(format!(
            "inputs disagree on n: kinship {n}, covariates {}, phenotype {}",
            xl.rows(),
            y.len()
        )));
    }
    let xr = read_header(&inp.xr)?;
    let res = read_header(&args.result)?;
    if xr.rows as usize != n {
        return Err(Failure::data(format!("{}: {} rows, expected {n}", inp.xr.display(), xr.rows)));
    }
    if res.rows as usize != p || res.cols != xr.cols {
        return Err(Failure::data(format!(
            "{}: shape {}x{}, expected {p}x{}",
            args.result.display(),
            res.rows,
            res.cols,
            xr.cols
        )));
    }
    let columns = select_columns(xr.cols as usize, args.sample, args.seed);

    let mut max_dev = 0.0f64;
    let mut bad: Vec<(usize, String)> = Vec::new();
    let mut xbuf = vec![0.0; n];
    let mut rbuf = vec![0.0; p];
    for chunk in columns.chunks(CHUNK) {
        let mut x = Matrix::zeros(n, chunk.len());
        let mut got = Matrix::zeros(p, chunk.len());
        for (i, &j) in chunk.iter().enumerate() {
            read_columns(&inp.xr, j, 1, &mut xbuf)?;
            x.col_mut(i).copy_from_slice(&xbuf);
            read_columns(&args.result, j, 1, &mut rbuf)?;
            got.col_mut(i).copy_from_slice(&rbuf);
        }
        let idx: Vec<usize> = (0..chunk.len()).collect();
        let want = gls_direct_columns(&xl, &x, &idx, &kinship, &y, Execution::default())
            .map_err(oracle_failure)?;
        for (i, &j) in chunk.iter().enumerate() {
            let g = got.col(i);
            let nan = g.iter().any(|v| v.is_nan());
            if want.singular[i] || nan {
                if !(want.singular[i] && g.iter().all(|v| v.is_nan())) {
                    let why = if want.singular[i] {
                        "reference system is singular but result is not NaN"
                    } else {
                        "result is NaN but reference system is regular"
                    };
                    bad.push((j, why.into()));
                }
                continue;
            }
            let mut col_dev = 0.0f64;
            for (a, b) in g.iter().zip(want.values.col(i)) {
                col_dev = col_dev.max((a - b).abs() / (1.0 + b.abs()));
            }
            if !(col_dev <= args.tolerance) {
                bad.push((j, format!("relative deviation {col_dev:.3e}")));
            }
            if col_dev.is_finite() {
                max_dev = max_dev.max(col_dev);
            }
        }
    }
    println!("checked {} of {} columns", columns.len(), xr.cols);
    println!("max relative deviation: {max_dev:.3e} (tolerance {:.1e})", args.tolerance);
    match bad.first() {
        None => Ok(()),
        Some((j, why)) => Err(Failure::verify(format!(
            "column {j}: {why}{}",
            if bad.len() > 1 { format!(" ({} columns failed)", bad.len()) } else { String::new() }
        ))),
    }
}
