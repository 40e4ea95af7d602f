//! `oocgls`: generate synthetic inputs, solve, verify, benchmark and
//! analyze traces.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 I/O error,
//! 4 verification failed (or trace violations found by `analyze`).

mod size;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use oocgls::backend::{DeviceSpec, SimParams};
use oocgls::io::{read_header, MatrixIoError};
use oocgls::pipeline::{
    max_feasible_block_size, plan, run, run_host_only, DataPaths, ErrorClass, HostCosts,
    PipelineConfig, PipelineError,
};
use oocgls::trace::{analyze, analyze_with, read_trace, TraceError};
use oocgls::{synth, Execution, ProblemDims, RunSummary};

/// Default block sizes never exceed this many columns.
const MAX_DEFAULT_BLOCK: usize = 8192;

#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn verify(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match e.class() {
            ErrorClass::Config => 1,
            ErrorClass::Data => 2,
            ErrorClass::Io | ErrorClass::Internal => 3,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<MatrixIoError> for Failure {
    fn from(e: MatrixIoError) -> Self {
        PipelineError::Io(e).into()
    }
}

impl From<TraceError> for Failure {
    fn from(e: TraceError) -> Self {
        let code = if matches!(e, TraceError::Io(_)) { 3 } else { 2 };
        Self { code, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "oocgls", version, about = "Out-of-core solver for sequences of GLS problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a deterministic synthetic instance (kinship, covariates, phenotype, genotypes).
    Gen(GenArgs),
    /// Stream all SNPs through the solver and write the p x m result matrix.
    Solve(SolveArgs),
    /// Check a result file against direct per-SNP evaluation.
    Verify(VerifyArgs),
    /// Run the solver over a parameter sweep and print CSV.
    Bench(BenchArgs),
    /// Check a trace for completeness and exclusive buffer use, and report overlap.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Sample count.
    #[arg(long, value_parser = size::count)]
    n: usize,
    /// Design width: covariates plus intercept plus the SNP column.
    #[arg(long)]
    p: usize,
    /// SNP count.
    #[arg(long, value_parser = size::count)]
    m: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Clone)]
pub struct Inputs {
    /// Genotype matrix X_R (n x m).
    #[arg(long)]
    pub xr: PathBuf,
    /// Covariates X_L (n x (p-1)).
    #[arg(long)]
    pub xl: PathBuf,
    /// Phenotype y (n x 1).
    #[arg(long)]
    pub y: PathBuf,
    /// Kinship matrix M (n x n).
    #[arg(long)]
    pub kinship: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    /// Real solves on host worker threads.
    Host,
    /// Cost-model devices on a virtual clock; moves data but computes nothing.
    Sim,
}

#[derive(Args, Clone)]
struct Engine {
    /// Columns per block. Defaults to the largest that fits both budgets,
    /// capped at 8192.
    #[arg(long, value_parser = size::count)]
    block_size: Option<usize>,
    #[arg(long, default_value_t = 1)]
    devices: usize,
    #[arg(long, value_enum, default_value_t = Backend::Host)]
    backend: Backend,
    /// Simulated device seconds per flop.
    #[arg(long, default_value_t = 1e-12)]
    sim_flop_time: f64,
    /// Simulated seconds per byte moved over the bus or from disk.
    #[arg(long, default_value_t = 1e-10)]
    sim_byte_time: f64,
    /// Run everything on the host without device offload.
    #[arg(long)]
    host_only: bool,
    #[arg(long, value_parser = size::bytes, default_value = "256M")]
    host_mem_budget: u64,
    /// Memory per device, shared by the factor and two block buffers.
    #[arg(long, value_parser = size::bytes, default_value = "64M")]
    device_mem_budget: u64,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Result matrix (p x m).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    engine: Engine,
    /// Write a JSON-lines trace of every stream operation.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub result: PathBuf,
    #[command(flatten)]
    pub inputs: Inputs,
    /// Relative tolerance: |r - r_ref| <= tol (1 + |r_ref|).
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    /// Check this many distinct randomly chosen columns instead of all.
    #[arg(long, value_parser = size::count)]
    pub sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Sweep {
    M,
    Devices,
    BlockSize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    sweep: Sweep,
    /// Comma-separated sweep points.
    #[arg(long, value_delimiter = ',', num_args = 0.., value_parser = size::count)]
    values: Vec<usize>,
    /// Existing instance (as written by `gen`). Generated into a scratch
    /// directory when omitted.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, value_parser = size::count, default_value = "1000")]
    n: usize,
    #[arg(long, default_value_t = 4)]
    p: usize,
    /// SNP count; for an m sweep the largest value is used instead.
    #[arg(long, value_parser = size::count, default_value = "10K")]
    m: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    engine: Engine,
}

#[derive(Args)]
struct AnalyzeArgs {
    trace: PathBuf,
    /// Expected block count; inferred from the trace when omitted.
    #[arg(long)]
    blocks: Option<usize>,
}

fn paths(inputs: &Inputs, out: &Path) -> DataPaths {
    DataPaths {
        kinship: inputs.kinship.clone(),
        xl: inputs.xl.clone(),
        y: inputs.y.clone(),
        xr: inputs.xr.clone(),
        out: out.to_path_buf(),
    }
}

impl Engine {
    fn validate(&self) -> Result<(), Failure> {
        if !self.host_only && self.devices == 0 {
            return Err(Failure::config("--devices must be at least 1 (or use --host-only)"));
        }
        if self.block_size == Some(0) {
            return Err(Failure::config("--block-size must be at least 1"));
        }
        if self.backend == Backend::Sim {
            for (flag, v) in [("--sim-flop-time", self.sim_flop_time), ("--sim-byte-time", self.sim_byte_time)] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Failure::config(format!("{flag} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }

    fn device_specs(&self, devices: usize) -> Vec<DeviceSpec> {
        if self.host_only {
            return Vec::new();
        }
        let spec = match self.backend {
            Backend::Host => DeviceSpec::host(),
            Backend::Sim => DeviceSpec::simulated(SimParams {
                transfer_seconds_per_byte: self.sim_byte_time,
                compute_seconds_per_flop: self.sim_flop_time,
                latency_seconds: 1e-6,
            }),
        };
        let spec = spec
            .with_buffer_budget(self.device_mem_budget)
            .with_memory_budget(self.device_mem_budget);
        vec![spec; devices]
    }

    /// Builds a run configuration; `block_size` and `devices` override the
    /// flags (used by sweeps).
    fn config(
        &self,
        paths: DataPaths,
        columns: Option<usize>,
        block_size: Option<usize>,
        devices: usize,
    ) -> Result<(PipelineConfig, bool), Failure> {
        let specs = self.device_specs(devices);
        let n = read_header(&paths.kinship)?.rows as usize;
        let m = columns.unwrap_or(read_header(&paths.xr)?.cols as usize);
        let (bs, defaulted) = match block_size.or(self.block_size) {
            Some(bs) => (bs, false),
            None => {
                let fit = max_feasible_block_size(n, self.host_mem_budget, &specs);
                (fit.min(MAX_DEFAULT_BLOCK).min(m).max(1), true)
            }
        };
        let mut config = PipelineConfig::new(paths, bs, specs);
        config.host_budget = self.host_mem_budget;
        config.columns = columns;
        if self.backend == Backend::Sim {
            config.host_costs = HostCosts {
                disk_seconds_per_byte: self.sim_byte_time,
                ..HostCosts::default()
            };
        }
        Ok((config, defaulted))
    }

    fn describe(&self, devices: usize) -> String {
        if self.host_only {
            "host only".into()
        } else {
            let kind = match self.backend {
                Backend::Host => "host",
                Backend::Sim => "simulated",
            };
            format!("{devices} {kind} device{}", if devices == 1 { "" } else { "s" })
        }
    }

    fn execute(&self, config: PipelineConfig) -> Result<RunSummary, Failure> {
        let plan = plan(config)?;
        Ok(if self.host_only { run_host_only(&plan) } else { run(&plan) }?)
    }
}

fn gen(args: GenArgs) -> Result<(), Failure> {
    let dims = ProblemDims::new(args.n, args.p, args.m).map_err(|e| Failure::config(e.to_string()))?;
    let ds = synth::generate(dims, args.seed, &args.out_dir, Execution::default())?;
    for p in [&ds.kinship, &ds.xl, &ds.y, &ds.xr] {
        println!("{}", p.display());
    }
    Ok(())
}

fn solve(args: SolveArgs) -> Result<(), Failure> {
    let e = &args.engine;
    e.validate()?;
    let (mut config, defaulted) = e.config(paths(&args.inputs, &args.out), None, None, e.devices)?;
    config.trace = args.trace.clone();
    println!(
        "block size: {}{} ({})",
        config.block_size,
        if defaulted { " (largest within budgets)" } else { "" },
        e.describe(e.devices)
    );
    let s = e.execute(config)?;
    println!("blocks:      {}", s.blocks);
    println!("block size:  {}", s.block_size);
    println!("singular:    {}", s.singular);
    println!("preprocess:  {:.6} s", s.preprocess_seconds);
    println!("wall:        {:.6} s{}", s.wall_seconds, if e.backend == Backend::Sim && !e.host_only { " (virtual)" } else { "" });
    if args.trace.is_some() {
        let rep = analyze_with(&s.trace, Some(s.blocks))?;
        println!("efficiency:  {:.4}", rep.efficiency);
        if let Some(b) = rep.device_busy_fraction {
            println!("device busy: {b:.4}");
        }
        if s.dropped_events > 0 {
            eprintln!("warning: {} trace events could not be written", s.dropped_events);
        }
        if !rep.is_clean() {
            eprintln!("warning: trace has {} violations", rep.violations.len());
        }
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<(), Failure> {
    if args.values.is_empty() {
        return Err(Failure::config("--values: empty sweep list"));
    }
    if args.values.contains(&0) {
        return Err(Failure::config("--values: sweep points must be positive"));
    }
    let e = &args.engine;
    e.validate()?;
    let scratch;
    let dir = match &args.data_dir {
        Some(d) => d.clone(),
        None => {
            let m = if args.sweep == Sweep::M {
                *args.values.iter().max().unwrap_or(&1)
            } else {
                args.m
            };
            let dims = ProblemDims::new(args.n, args.p, m).map_err(|e| Failure::config(e.to_string()))?;
            scratch = tempfile::tempdir().map_err(|e| Failure { code: 3, message: e.to_string() })?;
            synth::generate(dims, args.seed, scratch.path(), Execution::default())?;
            scratch.path().to_path_buf()
        }
    };
    let out = tempfile::NamedTempFile::new().map_err(|e| Failure { code: 3, message: e.to_string() })?;
    let data = DataPaths::in_dir(&dir, out.path());
    println!("param,wall_seconds,efficiency");
    for &v in &args.values {
        let (columns, bs, d) = match args.sweep {
            Sweep::M => (Some(v), None, e.devices),
            Sweep::Devices => (None, None, v),
            Sweep::BlockSize => (None, Some(v), e.devices),
        };
        let (config, _) = e.config(data.clone(), columns, bs, d)?;
        let s = e.execute(config)?;
        let eff = analyze_with(&s.trace, Some(s.blocks))?.efficiency;
        println!("{v},{:.6},{eff:.4}", s.wall_seconds);
    }
    Ok(())
}

fn analyze_cmd(args: AnalyzeArgs) -> Result<(), Failure> {
    let events = read_trace(&args.trace)?;
    let rep = match args.blocks {
        Some(b) => analyze_with(&events, Some(b))?,
        None => analyze(&events)?,
    };
    print!("{rep}");
    if rep.is_clean() {
        Ok(())
    } else {
        Err(Failure::verify(format!("{} violations", rep.violations.len())))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Solve(a) => solve(a),
        Command::Verify(a) => verify::verify(a),
        Command::Bench(a) => bench(a),
        Command::Analyze(a) => analyze_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
