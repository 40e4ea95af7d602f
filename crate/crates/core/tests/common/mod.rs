#![allow(dead_code)]

use std::path::Path;

use oocgls::backend::{DeviceSpec, SimParams};
use oocgls::io::{read_matrix, write_columns};
use oocgls::oracle::{gls_direct_sequence, OracleSolution};
use oocgls::pipeline::{DataPaths, HostCosts, PipelineConfig};
use oocgls::synth;
use oocgls::{Execution, KinshipMatrix, Matrix, ProblemDims};
use tempfile::TempDir;

pub struct Instance {
    pub dir: TempDir,
    pub paths: DataPaths,
    pub dims: ProblemDims,
    pub kinship: KinshipMatrix,
    pub xl: Matrix,
    pub y: Vec<f64>,
    pub xr: Matrix,
}

/// Generates and loads an instance. When `with_degenerate` is set, one SNP
/// column is replaced by twice the intercept, which makes its system
/// singular.
pub fn instance(n: usize, p: usize, m: usize, seed: u64, with_degenerate: bool) -> Instance {
    let dir = tempfile::tempdir().unwrap();
    let dims = ProblemDims::new(n, p, m).unwrap();
    synth::generate(dims, seed, dir.path(), Execution::default()).unwrap();
    let paths = DataPaths::in_dir(dir.path(), dir.path().join("r.mat"));
    if with_degenerate {
        write_columns(&paths.xr, m / 2, 1, &vec![2.0; n]).unwrap();
    }
    let kinship = KinshipMatrix::new(read_matrix(&paths.kinship).unwrap()).unwrap();
    let xl = read_matrix(&paths.xl).unwrap();
    let y = read_matrix(&paths.y).unwrap().into_vec();
    let xr = read_matrix(&paths.xr).unwrap();
    Instance {
        dir,
        paths,
        dims,
        kinship,
        xl,
        y,
        xr,
    }
}

impl Instance {
    pub fn oracle(&self) -> OracleSolution {
        gls_direct_sequence(&self.xl, &self.xr, &self.kinship, &self.y, Execution::default())
            .unwrap()
    }

    pub fn config(&self, block_size: usize, devices: Vec<DeviceSpec>) -> PipelineConfig {
        PipelineConfig::new(self.paths.clone(), block_size, devices)
    }

    pub fn result(&self) -> Matrix {
        read_matrix(&self.paths.out).unwrap()
    }

    pub fn result_bytes(&self) -> Vec<u8> {
        std::fs::read(&self.paths.out).unwrap()
    }

    pub fn out_to(&mut self, name: &str) {
        self.paths.out = self.dir.path().join(name);
    }

    pub fn dir(&self) -> &Path {
        self.dir.path()
    }
}

/// Component-wise `|a - b| <= tol (1 + |b|)`, NaN columns matching the
/// oracle's singular flags.
pub fn compare(result: &Matrix, oracle: &OracleSolution, tol: f64) -> Result<(), String> {
    let want = &oracle.values;
    if (result.rows(), result.cols()) != (want.rows(), want.cols()) {
        return Err(format!(
            "shape {}x{} vs oracle {}x{}",
            result.rows(),
            result.cols(),
            want.rows(),
            want.cols()
        ));
    }
    for j in 0..want.cols() {
        let got = result.col(j);
        let nan = got.iter().any(|v| v.is_nan());
        if nan != oracle.singular[j] {
            return Err(format!(
                "column {j}: NaN={nan} but oracle singular={}",
                oracle.singular[j]
            ));
        }
        if nan {
            if !got.iter().all(|v| v.is_nan()) {
                return Err(format!("column {j}: partially NaN"));
            }
            continue;
        }
        for (i, (a, b)) in got.iter().zip(want.col(j)).enumerate() {
            if !((a - b).abs() <= tol * (1.0 + b.abs())) {
                return Err(format!("column {j} entry {i}: {a} vs oracle {b}"));
            }
        }
    }
    Ok(())
}

/// Simulated-run parameters for an `n x k` block: one device solve takes
/// `compute` seconds, moving the block over the bus or disk `io` seconds,
/// and the host S-loop `host` seconds.
pub fn sim_setup(n: usize, p: usize, k: usize, compute: f64, io: f64, host: f64) -> (SimParams, HostCosts) {
    let bytes = (8 * n * k) as f64;
    let params = SimParams {
        transfer_seconds_per_byte: io / bytes,
        compute_seconds_per_flop: compute / (n * n * k) as f64,
        latency_seconds: 1e-6,
    };
    let costs = HostCosts {
        disk_seconds_per_byte: io / bytes,
        host_seconds_per_flop: host / HostCosts::sloop_flops(n, p, k),
        latency_seconds: 1e-6,
    };
    (params, costs)
}
