//! Out-of-core solver for long sequences of generalized least-squares
//! problems that share a covariance matrix and fixed covariates.
//!
//! Each problem `i` asks for `r_i = (X_i^T M^-1 X_i)^-1 X_i^T M^-1 y` with
//! `X_i = [X_L | x_i]`. The shared parts are whitened once; the SNP columns
//! `x_i` are streamed from disk in blocks, whitened on one or more devices
//! and finished on the host while the next blocks are in flight.

pub mod backend;
pub mod clock;
pub mod exec;
pub mod gls;
pub mod io;
pub mod matrix;
pub mod oracle;
pub mod pipeline;
pub mod synth;
pub mod trace;

pub use exec::Execution;
pub use gls::{GlsError, SolveStatus};
pub use matrix::{KinshipMatrix, Matrix, ProblemDims};
pub use pipeline::{plan, run, run_host_only, ExecutionPlan, PipelineConfig, PipelineError, RunSummary};
