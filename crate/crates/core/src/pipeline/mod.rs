//! Streaming engine: plans a run over on-disk data and executes it either
//! through devices (three host slabs, two device slots per device) or on the
//! host alone (two slabs).

mod buffers;
mod guards;
mod run;

use std::ops::Range;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::backend::{split_columns, BackendError, DeviceSpec};
use crate::exec::Execution;
use crate::gls::GlsError;
use crate::io::{read_header, MatrixIoError};
use crate::matrix::ProblemDims;
use crate::trace::TraceEvent;

pub use buffers::{rotate_buffers, BufferSet, HostRole, HostSlab};
pub use guards::{Activity, IterationGuards};
pub use run::{run, run_host_only};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(
        "{what} budget exceeded: {needed} bytes needed, {budget} available; \
         largest feasible block size is {suggested_block_size} columns"
    )]
    BudgetExceeded {
        what: &'static str,
        needed: u64,
        budget: u64,
        suggested_block_size: usize,
    },
    #[error("{}: {what} is {found}, expected {expected}", path.display())]
    HeaderMismatch {
        path: PathBuf,
        what: &'static str,
        expected: u64,
        found: u64,
    },
    #[error(transparent)]
    Io(#[from] MatrixIoError),
    #[error(transparent)]
    Numeric(#[from] GlsError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("illegal buffer state: {0}")]
    IllegalBufferState(String),
    #[error("trace file {}: {source}", path.display())]
    TraceSink {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Io,
    Internal,
}

impl PipelineError {
    pub fn class(&self) -> ErrorClass {
        match self {
            PipelineError::Config(_) | PipelineError::BudgetExceeded { .. } => ErrorClass::Config,
            PipelineError::HeaderMismatch { .. } | PipelineError::Numeric(_) => ErrorClass::Data,
            PipelineError::Io(e) if e.is_format_error() => ErrorClass::Data,
            PipelineError::Io(_) | PipelineError::TraceSink { .. } => ErrorClass::Io,
            PipelineError::Backend(BackendError::Kernel(_)) => ErrorClass::Data,
            PipelineError::Backend(BackendError::CapacityExceeded { .. })
            | PipelineError::Backend(BackendError::InvalidSimParams { .. })
            | PipelineError::Backend(BackendError::ClockMismatch) => ErrorClass::Config,
            PipelineError::Backend(_) | PipelineError::IllegalBufferState(_) => {
                ErrorClass::Internal
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataPaths {
    pub kinship: PathBuf,
    pub xl: PathBuf,
    pub y: PathBuf,
    pub xr: PathBuf,
    pub out: PathBuf,
}

impl DataPaths {
    /// Conventional file names inside one directory, as written by the
    /// generator.
    pub fn in_dir(dir: impl AsRef<Path>, out: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        Self {
            kinship: d.join(crate::synth::KINSHIP_FILE),
            xl: d.join(crate::synth::XL_FILE),
            y: d.join(crate::synth::Y_FILE),
            xr: d.join(crate::synth::XR_FILE),
            out: out.as_ref().to_path_buf(),
        }
    }
}

/// Costs of the host-side streams when the run uses the virtual clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HostCosts {
    pub disk_seconds_per_byte: f64,
    pub host_seconds_per_flop: f64,
    pub latency_seconds: f64,
}

impl Default for HostCosts {
    fn default() -> Self {
        Self {
            disk_seconds_per_byte: 1e-9,
            host_seconds_per_flop: 1e-10,
            latency_seconds: 1e-6,
        }
    }
}

impl HostCosts {
    pub fn disk_cost(&self, bytes: u64) -> f64 {
        self.latency_seconds + bytes as f64 * self.disk_seconds_per_byte
    }

    /// Per column: three dot products of length n over p+1 vectors, plus
    /// the p x p solve.
    pub fn sloop_flops(n: usize, p: usize, k: usize) -> f64 {
        let (n, p, k) = (n as f64, p as f64, k as f64);
        k * (2.0 * n * (p + 1.0) + p * p * p / 3.0)
    }

    pub fn sloop_cost(&self, n: usize, p: usize, k: usize) -> f64 {
        self.latency_seconds + Self::sloop_flops(n, p, k) * self.host_seconds_per_flop
    }
}

pub const DEFAULT_HOST_BUDGET: u64 = 256 << 20;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Expected dimensions; checked against the file headers when given.
    pub dims: Option<ProblemDims>,
    pub block_size: usize,
    pub devices: Vec<DeviceSpec>,
    pub paths: DataPaths,
    pub host_budget: u64,
    pub trace: Option<PathBuf>,
    /// Process only the first `m` columns of X_R.
    pub columns: Option<usize>,
    pub host_costs: HostCosts,
    pub execution: Execution,
}

impl PipelineConfig {
    pub fn new(paths: DataPaths, block_size: usize, devices: Vec<DeviceSpec>) -> Self {
        Self {
            dims: None,
            block_size,
            devices,
            paths,
            host_budget: DEFAULT_HOST_BUDGET,
            trace: None,
            columns: None,
            host_costs: HostCosts::default(),
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExecutionPlan {
    pub config: PipelineConfig,
    pub dims: ProblemDims,
    pub block_size: usize,
    pub blockcount: usize,
    /// 0-based column range of block `b` at index `b - 1`.
    pub blocks: Vec<Range<usize>>,
    /// Per block, the column range of each device relative to the block.
    pub splits: Vec<Vec<Range<usize>>>,
}

impl ExecutionPlan {
    pub fn devices(&self) -> usize {
        self.config.devices.len()
    }

    /// Column range of 1-based block `b`.
    pub fn block_range(&self, b: usize) -> Range<usize> {
        self.blocks[b - 1].clone()
    }

    pub fn is_simulated(&self) -> bool {
        self.config.devices.iter().any(DeviceSpec::is_simulated)
    }

    pub fn guards(&self) -> IterationGuards {
        IterationGuards::new(self.blockcount)
    }
}

/// Largest block one device buffer holds: `floor(B / (8 n))` columns.
pub fn max_device_block_columns(buffer_budget: u64, n: usize) -> usize {
    (buffer_budget / (8 * n as u64)) as usize
}

/// Largest block size satisfying the host budget (three slabs) and every
/// device's buffer and total-memory budgets.
pub fn max_feasible_block_size(n: usize, host_budget: u64, devices: &[DeviceSpec]) -> usize {
    let col = 8 * n as u64;
    let mut best = (host_budget / (3 * col)) as usize;
    let d = devices.len();
    for spec in devices {
        best = best.min(d * max_device_block_columns(spec.buffer_budget, n));
        let factor = col * n as u64;
        let per_dev = spec.memory_budget.saturating_sub(factor) / (2 * col);
        best = best.min(d * per_dev as usize);
    }
    best
}

fn check_budgets(n: usize, bs: usize, host_budget: u64, devices: &[DeviceSpec]) -> Result<(), PipelineError> {
    let suggested = max_feasible_block_size(n, host_budget, devices);
    let col = 8 * n as u64;
    let host = 3 * col * bs as u64;
    if host > host_budget {
        return Err(PipelineError::BudgetExceeded {
            what: "host memory",
            needed: host,
            budget: host_budget,
            suggested_block_size: suggested,
        });
    }
    let d = devices.len().max(1);
    let per_dev = col * bs.div_ceil(d) as u64;
    for spec in devices {
        if per_dev > spec.buffer_budget {
            return Err(PipelineError::BudgetExceeded {
                what: "device buffer",
                needed: per_dev,
                budget: spec.buffer_budget,
                suggested_block_size: suggested,
            });
        }
        let total = col * n as u64 + 2 * per_dev;
        if total > spec.memory_budget {
            return Err(PipelineError::BudgetExceeded {
                what: "device memory",
                needed: total,
                budget: spec.memory_budget,
                suggested_block_size: suggested,
            });
        }
    }
    Ok(())
}

fn expect_shape(path: &Path, rows: u64, cols: Option<u64>) -> Result<(u64, u64), PipelineError> {
    let h = read_header(path)?;
    if h.rows != rows {
        return Err(PipelineError::HeaderMismatch {
            path: path.to_path_buf(),
            what: "row count",
            expected: rows,
            found: h.rows,
        });
    }
    if let Some(c) = cols {
        if h.cols != c {
            return Err(PipelineError::HeaderMismatch {
                path: path.to_path_buf(),
                what: "column count",
                expected: c,
                found: h.cols,
            });
        }
    }
    Ok((h.rows, h.cols))
}

/// Validates the inputs against each other and the budgets and lays out
/// the blocks.
pub fn plan(config: PipelineConfig) -> Result<ExecutionPlan, PipelineError> {
    let p = &config.paths;
    let mh = read_header(&p.kinship)?;
    let n = mh.rows;
    expect_shape(&p.kinship, n, Some(n))?;
    let (_, xl_cols) = expect_shape(&p.xl, n, None)?;
    expect_shape(&p.y, n, Some(1))?;
    let (_, xr_cols) = expect_shape(&p.xr, n, None)?;
    let m = match config.columns {
        Some(c) if c as u64 > xr_cols => {
            return Err(PipelineError::HeaderMismatch {
                path: p.xr.clone(),
                what: "column count",
                expected: c as u64,
                found: xr_cols,
            })
        }
        Some(c) => c as u64,
        None => xr_cols,
    };
    let dims = ProblemDims::new(n as usize, xl_cols as usize + 1, m as usize)?;
    if let Some(want) = config.dims {
        for (what, e, f) in [("n", want.n, dims.n), ("p", want.p, dims.p), ("m", want.m, dims.m)] {
            if e != f {
                return Err(PipelineError::HeaderMismatch {
                    path: if what == "m" { p.xr.clone() } else { p.xl.clone() },
                    what,
                    expected: e as u64,
                    found: f as u64,
                });
            }
        }
    }
    if config.block_size == 0 {
        return Err(PipelineError::Config("block size must be at least 1".into()));
    }
    let bs = config.block_size.min(dims.m);
    check_budgets(dims.n, bs, config.host_budget, &config.devices)?;

    let blockcount = dims.m.div_ceil(bs);
    let blocks: Vec<Range<usize>> = (0..blockcount)
        .map(|i| i * bs..((i + 1) * bs).min(dims.m))
        .collect();
    let d = config.devices.len().max(1);
    let splits = blocks.iter().map(|r| split_columns(r.len(), d)).collect();
    Ok(ExecutionPlan {
        config,
        dims,
        block_size: bs,
        blockcount,
        blocks,
        splits,
    })
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub blocks: usize,
    pub block_size: usize,
    pub devices: usize,
    pub singular: usize,
    /// Streaming phase only; preprocessing is reported separately.
    pub wall_seconds: f64,
    pub preprocess_seconds: f64,
    pub trace: Vec<TraceEvent>,
    /// Trace events that could not be written to the trace file.
    pub dropped_events: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::write_matrix;

    fn files(dir: &Path, n: usize, p: usize, m: usize) -> DataPaths {
        let paths = DataPaths::in_dir(dir, dir.join("r.mat"));
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            k[i * n + i] = 1.0;
        }
        write_matrix(&paths.kinship, n, n, &k).unwrap();
        write_matrix(&paths.xl, n, p - 1, &vec![1.0; n * (p - 1)]).unwrap();
        write_matrix(&paths.y, n, 1, &vec![0.5; n]).unwrap();
        write_matrix(&paths.xr, n, m, &vec![0.0; n * m]).unwrap();
        paths
    }

    #[test]
    fn ceiling_division_of_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::new(files(dir.path(), 8, 3, 100), 32, vec![DeviceSpec::host()]);
        let plan = plan(cfg).unwrap();
        assert_eq!(plan.blockcount, 4);
        let widths: Vec<usize> = plan.blocks.iter().map(|r| r.len()).collect();
        assert_eq!(widths, vec![32, 32, 32, 4]);
        assert_eq!(plan.block_range(4), 96..100);
    }

    #[test]
    fn device_column_cap() {
        assert_eq!(max_device_block_columns(1_800_000_000, 10_000), 22_500);
    }

    #[test]
    fn budget_rejection_suggests_size() {
        let dir = tempfile::tempdir().unwrap();
        let n = 16;
        let dev = DeviceSpec::host().with_buffer_budget(8 * n as u64 * 10);
        let mut cfg = PipelineConfig::new(files(dir.path(), n, 2, 100), 11, vec![dev]);
        match plan(cfg.clone()) {
            Err(PipelineError::BudgetExceeded {
                suggested_block_size, ..
            }) => assert_eq!(suggested_block_size, 10),
            other => panic!("{other:?}"),
        }
        cfg.block_size = 10;
        assert!(plan(cfg.clone()).is_ok());
        cfg.host_budget = 3 * 8 * n as u64 * 9;
        match plan(cfg) {
            Err(PipelineError::BudgetExceeded {
                what,
                suggested_block_size,
                ..
            }) => {
                assert_eq!(what, "host memory");
                assert_eq!(suggested_block_size, 9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let paths = files(dir.path(), 8, 3, 10);
        write_matrix(&paths.y, 7, 1, &[0.0; 7]).unwrap();
        let err = plan(PipelineConfig::new(paths, 4, vec![])).unwrap_err();
        assert!(matches!(err, PipelineError::HeaderMismatch { .. }));
        assert_eq!(err.class(), ErrorClass::Data);
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = files(dir.path(), 8, 3, 10);
        paths.xr = dir.path().join("absent.mat");
        let err = plan(PipelineConfig::new(paths, 4, vec![])).unwrap_err();
        assert_eq!(err.class(), ErrorClass::Io);
        assert!(err.to_string().contains("absent.mat"));
    }

    #[test]
    fn splits_follow_remainder_rule() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::new(
            files(dir.path(), 8, 2, 10),
            10,
            vec![DeviceSpec::host(); 4],
        );
        let plan = plan(cfg).unwrap();
        let sizes: Vec<usize> = plan.splits[0].iter().map(|r| r.len()).collect();
        assert_eq!(sizes, vec![3, 3, 2, 2]);
    }
}
