//! Compute devices that run the triangular solve on streamed blocks.
//!
//! A device owns the resident factor `L` and two block buffers. Each device
//! has a copy engine (host<->device transfers) and a compute engine; both
//! are in-order, and they run concurrently with each other, which is what
//! allows a transfer into one buffer to hide behind the solve on the other.

mod host;
mod sim;

use std::ops::Range;
use std::sync::Arc;

use thiserror::Error;

use crate::clock::{Clock, Span};
use crate::gls::{GlsError, LowerFactor, SnpBlock};

pub use host::HostDevice;
pub use sim::SimDevice;

/// Default per-buffer limit, the size of one block transfer on a typical
/// accelerator.
pub const DEFAULT_BUFFER_BUDGET: u64 = 2 << 30;
/// Default total device memory.
pub const DEFAULT_MEMORY_BUDGET: u64 = 6 << 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("device {device} buffer {slot}: cannot {op} while {state:?}")]
    IllegalBufferState {
        device: usize,
        slot: usize,
        op: &'static str,
        state: BufferState,
    },
    #[error("device {device}: {needed} bytes requested, {available} available")]
    CapacityExceeded {
        device: usize,
        needed: u64,
        available: u64,
    },
    #[error("device {device}: factor has not been uploaded")]
    FactorNotResident { device: usize },
    #[error("device {device}: buffer holds {expected} values, host slice has {found}")]
    ShapeMismatch {
        device: usize,
        expected: usize,
        found: usize,
    },
    #[error("device {device}: worker terminated")]
    WorkerGone { device: usize },
    #[error("device {device}: invalid simulation parameters ({reason})")]
    InvalidSimParams { device: usize, reason: &'static str },
    #[error("simulated devices need a virtual clock, host devices a wall clock")]
    ClockMismatch,
    #[error(transparent)]
    Kernel(#[from] GlsError),
}

/// Cost model of a simulated device. All values in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub transfer_seconds_per_byte: f64,
    pub compute_seconds_per_flop: f64,
    /// Fixed overhead added to every transfer and kernel launch.
    pub latency_seconds: f64,
}

impl SimParams {
    pub fn validate(&self, device: usize) -> Result<(), BackendError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.transfer_seconds_per_byte) {
            return Err(BackendError::InvalidSimParams {
                device,
                reason: "transfer_seconds_per_byte must be positive",
            });
        }
        if !ok(self.compute_seconds_per_flop) {
            return Err(BackendError::InvalidSimParams {
                device,
                reason: "compute_seconds_per_flop must be positive",
            });
        }
        if !ok(self.latency_seconds) {
            return Err(BackendError::InvalidSimParams {
                device,
                reason: "latency_seconds must be positive",
            });
        }
        Ok(())
    }

    pub fn transfer_cost(&self, bytes: u64) -> f64 {
        self.latency_seconds + bytes as f64 * self.transfer_seconds_per_byte
    }

    /// Forward substitution of an `n x n` factor against `k` columns.
    pub fn trsm_cost(&self, n: usize, k: usize) -> f64 {
        self.latency_seconds + (n as f64) * (n as f64) * (k as f64) * self.compute_seconds_per_flop
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeviceKind {
    /// Runs the real kernel on a host worker thread.
    HostCompute,
    /// Moves data but performs no arithmetic; only virtual time advances.
    Simulated(SimParams),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceSpec {
    pub kind: DeviceKind,
    /// Bytes available to each of the two block buffers.
    pub buffer_budget: u64,
    /// Total bytes for factor plus buffers.
    pub memory_budget: u64,
}

impl DeviceSpec {
    pub fn host() -> Self {
        Self {
            kind: DeviceKind::HostCompute,
            buffer_budget: DEFAULT_BUFFER_BUDGET,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }

    pub fn simulated(params: SimParams) -> Self {
        Self {
            kind: DeviceKind::Simulated(params),
            buffer_budget: DEFAULT_BUFFER_BUDGET,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }

    pub fn with_buffer_budget(mut self, bytes: u64) -> Self {
        self.buffer_budget = bytes;
        self
    }

    pub fn with_memory_budget(mut self, bytes: u64) -> Self {
        self.memory_budget = bytes;
        self
    }

    pub fn is_simulated(&self) -> bool {
        matches!(self.kind, DeviceKind::Simulated(_))
    }
}

/// Lifecycle of one device buffer:
/// `Free -> Receiving -> Computing -> HoldsResult -> Free`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferState {
    Free,
    /// A host-to-device copy was dispatched; `landed` once it was waited on.
    Receiving { landed: bool },
    Computing,
    HoldsResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceOp {
    Send,
    Compute,
}

#[derive(Debug)]
pub(crate) enum Completion {
    Worker(std::sync::mpsc::Receiver<Result<Span, BackendError>>),
    Virtual(Span),
}

/// Completion token for one dispatched send or solve. Consumed by `wait`.
#[must_use = "device operations must be waited on"]
#[derive(Debug)]
pub struct DeviceHandle {
    pub device: usize,
    pub slot: usize,
    pub op: DeviceOp,
    pub(crate) completion: Completion,
}

/// Read-only view of some columns of a shared host slab.
#[derive(Debug, Clone)]
pub struct HostSlice {
    pub data: Arc<Vec<f64>>,
    pub rows: usize,
    pub cols: Range<usize>,
}

impl HostSlice {
    pub fn new(data: Arc<Vec<f64>>, rows: usize, cols: Range<usize>) -> Self {
        Self { data, rows, cols }
    }

    pub fn values(&self) -> &[f64] {
        &self.data[self.cols.start * self.rows..self.cols.end * self.rows]
    }

    pub fn len(&self) -> usize {
        self.cols.len() * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Buffer bookkeeping shared by all device kinds.
#[derive(Debug)]
pub(crate) struct BufferTable {
    device: usize,
    states: [BufferState; 2],
    values: [usize; 2],
    allocated: [u64; 2],
    factor_bytes: u64,
    spec: DeviceSpec,
}

impl BufferTable {
    pub(crate) fn new(device: usize, spec: DeviceSpec) -> Self {
        Self {
            device,
            states: [BufferState::Free; 2],
            values: [0; 2],
            allocated: [0; 2],
            factor_bytes: 0,
            spec,
        }
    }

    fn illegal(&self, slot: usize, op: &'static str) -> BackendError {
        BackendError::IllegalBufferState {
            device: self.device,
            slot,
            op,
            state: self.states[slot],
        }
    }

    fn check_slot(&self, slot: usize, op: &'static str) -> Result<(), BackendError> {
        if slot > 1 {
            return Err(BackendError::IllegalBufferState {
                device: self.device,
                slot,
                op,
                state: BufferState::Free,
            });
        }
        Ok(())
    }

    fn used(&self) -> u64 {
        self.factor_bytes + self.allocated[0] + self.allocated[1]
    }

    pub(crate) fn set_factor(&mut self, bytes: u64) -> Result<(), BackendError> {
        let others = self.allocated[0] + self.allocated[1];
        if bytes + others > self.spec.memory_budget {
            return Err(BackendError::CapacityExceeded {
                device: self.device,
                needed: bytes,
                available: self.spec.memory_budget.saturating_sub(others),
            });
        }
        self.factor_bytes = bytes;
        Ok(())
    }

    pub(crate) fn begin_send(&mut self, slot: usize, values: usize) -> Result<(), BackendError> {
        self.check_slot(slot, "send")?;
        if self.states[slot] != BufferState::Free {
            return Err(self.illegal(slot, "send"));
        }
        let bytes = values as u64 * 8;
        if bytes > self.spec.buffer_budget {
            return Err(BackendError::CapacityExceeded {
                device: self.device,
                needed: bytes,
                available: self.spec.buffer_budget,
            });
        }
        if bytes > self.allocated[slot] {
            let grow = bytes - self.allocated[slot];
            if self.used() + grow > self.spec.memory_budget {
                return Err(BackendError::CapacityExceeded {
                    device: self.device,
                    needed: bytes,
                    available: self.spec.memory_budget.saturating_sub(self.used()),
                });
            }
            self.allocated[slot] = bytes;
        }
        self.values[slot] = values;
        self.states[slot] = BufferState::Receiving { landed: false };
        Ok(())
    }

    pub(crate) fn begin_trsm(&mut self, slot: usize) -> Result<usize, BackendError> {
        self.check_slot(slot, "solve")?;
        if self.states[slot] != (BufferState::Receiving { landed: true }) {
            return Err(self.illegal(slot, "solve"));
        }
        self.states[slot] = BufferState::Computing;
        Ok(self.values[slot])
    }

    pub(crate) fn begin_recv(&mut self, slot: usize, host_len: usize) -> Result<(), BackendError> {
        self.check_slot(slot, "receive")?;
        if self.states[slot] != BufferState::HoldsResult {
            return Err(self.illegal(slot, "receive"));
        }
        if host_len != self.values[slot] {
            return Err(BackendError::ShapeMismatch {
                device: self.device,
                expected: self.values[slot],
                found: host_len,
            });
        }
        self.states[slot] = BufferState::Free;
        Ok(())
    }

    /// Validates the transition a wait performs before blocking on it.
    pub(crate) fn check_wait(&self, h: &DeviceHandle) -> Result<(), BackendError> {
        self.check_slot(h.slot, "wait")?;
        let ok = match h.op {
            DeviceOp::Send => self.states[h.slot] == BufferState::Receiving { landed: false },
            DeviceOp::Compute => self.states[h.slot] == BufferState::Computing,
        };
        if ok {
            Ok(())
        } else {
            Err(self.illegal(h.slot, "wait"))
        }
    }

    pub(crate) fn finish(&mut self, h: &DeviceHandle) {
        self.states[h.slot] = match h.op {
            DeviceOp::Send => BufferState::Receiving { landed: true },
            DeviceOp::Compute => BufferState::HoldsResult,
        };
    }

    pub(crate) fn state(&self, slot: usize) -> BufferState {
        self.states[slot.min(1)]
    }
}

/// One accelerator (real or simulated).
pub trait Device: Send {
    fn id(&self) -> usize;

    fn spec(&self) -> &DeviceSpec;

    /// Makes `L` resident for the rest of the run. Synchronous; a second
    /// upload replaces the first.
    fn upload_factor(&mut self, factor: Arc<LowerFactor>) -> Result<Span, BackendError>;

    /// Starts copying `src` into buffer `slot`, which must be free.
    fn send_async(&mut self, src: HostSlice, slot: usize) -> Result<DeviceHandle, BackendError>;

    /// Starts `buffer <- L^{-1} buffer` on a buffer whose send was waited.
    fn trsm_async(&mut self, slot: usize) -> Result<DeviceHandle, BackendError>;

    /// Copies a solved buffer into `dst` and frees it. Blocks until done.
    fn recv(&mut self, slot: usize, dst: &mut [f64]) -> Result<Span, BackendError>;

    /// Blocks until `handle` has completed.
    fn wait(&mut self, handle: DeviceHandle) -> Result<Span, BackendError>;

    fn buffer_state(&self, slot: usize) -> BufferState;
}

/// Instantiates one device per spec. Simulated devices must share a virtual
/// clock, host devices a wall clock.
pub fn create_devices(
    specs: &[DeviceSpec],
    clock: &Clock,
) -> Result<Vec<Box<dyn Device>>, BackendError> {
    specs
        .iter()
        .enumerate()
        .map(|(id, spec)| -> Result<Box<dyn Device>, BackendError> {
            match (spec.kind, clock) {
                (DeviceKind::HostCompute, Clock::Wall(w)) => {
                    Ok(Box::new(HostDevice::new(id, *spec, w.clone())))
                }
                (DeviceKind::Simulated(_), Clock::Virtual(v)) => {
                    Ok(Box::new(SimDevice::new(id, *spec, v.clone())?))
                }
                _ => Err(BackendError::ClockMismatch),
            }
        })
        .collect()
}

/// Splits `k` columns over `d` devices: contiguous ranges, the first
/// `k mod d` devices take one extra column. Empty ranges are legal.
pub fn split_columns(k: usize, d: usize) -> Vec<Range<usize>> {
    assert!(d >= 1, "device count must be positive");
    let base = k / d;
    let extra = k % d;
    let mut start = 0;
    (0..d)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Splits a block into per-device sub-blocks.
pub fn split_block(block: &SnpBlock, d: usize) -> Vec<SnpBlock> {
    split_columns(block.cols, d)
        .into_iter()
        .map(|r| SnpBlock {
            data: block.data[r.start * block.rows..r.end * block.rows].to_vec(),
            rows: block.rows,
            cols: r.len(),
            first_index: block.first_index + r.start,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let sizes = |k, d| split_columns(k, d).iter().map(|r| r.len()).collect::<Vec<_>>();
        assert_eq!(sizes(64, 4), vec![16, 16, 16, 16]);
        assert_eq!(sizes(10, 4), vec![3, 3, 2, 2]);
        assert_eq!(sizes(3, 4), vec![1, 1, 1, 0]);
        assert_eq!(sizes(5, 1), vec![5]);
        assert_eq!(split_columns(10, 4)[2], 6..8);
    }

    #[test]
    fn split_block_concatenates_back() {
        let data: Vec<f64> = (0..30).map(f64::from).collect();
        let b = SnpBlock::new(3, 100, data.clone()).unwrap();
        let parts = split_block(&b, 4);
        assert_eq!(parts.iter().map(|p| p.cols).collect::<Vec<_>>(), vec![3, 3, 2, 2]);
        assert_eq!(parts[1].first_index, 103);
        let joined: Vec<f64> = parts.into_iter().flat_map(|p| p.data).collect();
        assert_eq!(joined, data);
    }

    #[test]
    fn sim_params_must_be_positive() {
        let p = SimParams {
            transfer_seconds_per_byte: 1e-9,
            compute_seconds_per_flop: 0.0,
            latency_seconds: 1e-6,
        };
        assert!(p.validate(0).is_err());
        assert!(SimParams { compute_seconds_per_flop: 1e-12, ..p }.validate(0).is_ok());
    }

    #[test]
    fn clock_kind_must_match_device_kind() {
        let sim = DeviceSpec::simulated(SimParams {
            transfer_seconds_per_byte: 1e-9,
            compute_seconds_per_flop: 1e-12,
            latency_seconds: 1e-6,
        });
        assert!(matches!(
            create_devices(&[sim], &Clock::wall()),
            Err(BackendError::ClockMismatch)
        ));
        assert!(matches!(
            create_devices(&[DeviceSpec::host()], &Clock::simulated()),
            Err(BackendError::ClockMismatch)
        ));
    }
}
