use std::sync::Arc;

use super::{
    BackendError, BufferState, BufferTable, Completion, Device, DeviceHandle, DeviceKind,
    DeviceOp, DeviceSpec, HostSlice, SimParams,
};
use crate::clock::{Lane, Span, VirtualClock};
use crate::gls::LowerFactor;

/// A device that only moves data and advances virtual time.
///
/// The solve leaves buffer contents untouched; send and receive copy values
/// faithfully, so a round trip returns exactly what was sent.
pub struct SimDevice {
    id: usize,
    spec: DeviceSpec,
    params: SimParams,
    clock: VirtualClock,
    table: BufferTable,
    buffers: [Vec<f64>; 2],
    n: Option<usize>,
}

impl SimDevice {
    pub fn new(id: usize, spec: DeviceSpec, clock: VirtualClock) -> Result<Self, BackendError> {
        let DeviceKind::Simulated(params) = spec.kind else {
            return Err(BackendError::ClockMismatch);
        };
        params.validate(id)?;
        Ok(Self {
            id,
            spec,
            params,
            clock,
            table: BufferTable::new(id, spec),
            buffers: [Vec::new(), Vec::new()],
            n: None,
        })
    }
}

impl Device for SimDevice {
    fn id(&self) -> usize {
        self.id
    }

    fn spec(&self) -> &DeviceSpec {
        &self.spec
    }

    fn upload_factor(&mut self, factor: Arc<LowerFactor>) -> Result<Span, BackendError> {
        self.table.set_factor(factor.size_bytes())?;
        self.n = Some(factor.n());
        let cost = self.params.transfer_cost(factor.size_bytes());
        Ok(self.clock.run_sync(Lane::DeviceCopy(self.id), cost))
    }

    fn send_async(&mut self, src: HostSlice, slot: usize) -> Result<DeviceHandle, BackendError> {
        self.table.begin_send(slot, src.len())?;
        let buf = &mut self.buffers[slot];
        buf.clear();
        buf.extend_from_slice(src.values());
        let cost = self.params.transfer_cost(src.len() as u64 * 8);
        let span = self.clock.reserve(Lane::DeviceCopy(self.id), cost);
        Ok(DeviceHandle {
            device: self.id,
            slot,
            op: DeviceOp::Send,
            completion: Completion::Virtual(span),
        })
    }

    fn trsm_async(&mut self, slot: usize) -> Result<DeviceHandle, BackendError> {
        let n = self.n.ok_or(BackendError::FactorNotResident { device: self.id })?;
        let values = self.table.begin_trsm(slot)?;
        let cols = values / n;
        let span = self
            .clock
            .reserve(Lane::DeviceCompute(self.id), self.params.trsm_cost(n, cols));
        Ok(DeviceHandle {
            device: self.id,
            slot,
            op: DeviceOp::Compute,
            completion: Completion::Virtual(span),
        })
    }

    fn recv(&mut self, slot: usize, dst: &mut [f64]) -> Result<Span, BackendError> {
        self.table.begin_recv(slot, dst.len())?;
        dst.copy_from_slice(&self.buffers[slot]);
        let cost = self.params.transfer_cost(dst.len() as u64 * 8);
        Ok(self.clock.run_sync(Lane::DeviceCopy(self.id), cost))
    }

    fn wait(&mut self, handle: DeviceHandle) -> Result<Span, BackendError> {
        self.table.check_wait(&handle)?;
        let span = match handle.completion {
            Completion::Virtual(s) => s,
            Completion::Worker(ref rx) => rx
                .recv()
                .map_err(|_| BackendError::WorkerGone { device: self.id })??,
        };
        self.clock.complete(span);
        self.table.finish(&handle);
        Ok(span)
    }

    fn buffer_state(&self, slot: usize) -> BufferState {
        self.table.state(slot)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn params() -> SimParams {
        SimParams {
            transfer_seconds_per_byte: 1e-9,
            compute_seconds_per_flop: 1e-10,
            latency_seconds: 1e-6,
        }
    }

    fn eye(n: usize) -> Arc<LowerFactor> {
        Arc::new(LowerFactor::from_lower(Matrix::identity(n)).unwrap())
    }

    #[test]
    fn upload_time_follows_cost_model() {
        let clock = VirtualClock::new();
        let mut dev = SimDevice::new(0, DeviceSpec::simulated(params()), clock.clone()).unwrap();
        let n = 1000;
        let span = dev.upload_factor(eye(n)).unwrap();
        let expect = 8.0 * (n * n) as f64 * 1e-9;
        assert!((span.duration() - expect).abs() <= 1e-6 + 1e-15);
        assert_eq!(clock.now(), span.t1);
    }

    #[test]
    fn values_pass_through_unchanged() {
        let clock = VirtualClock::new();
        let mut dev = SimDevice::new(0, DeviceSpec::simulated(params()), clock).unwrap();
        dev.upload_factor(eye(3)).unwrap();
        let data: Vec<f64> = (0..9).map(|v| v as f64 * 1.5).collect();
        let h = dev.send_async(HostSlice::new(Arc::new(data.clone()), 3, 0..3), 0).unwrap();
        dev.wait(h).unwrap();
        let h = dev.trsm_async(0).unwrap();
        dev.wait(h).unwrap();
        let mut out = vec![0.0; 9];
        dev.recv(0, &mut out).unwrap();
        assert_eq!(out, data);
    }

    #[test]
    fn send_overlaps_compute() {
        let clock = VirtualClock::new();
        let mut dev = SimDevice::new(0, DeviceSpec::simulated(params()), clock.clone()).unwrap();
        let n = 100;
        dev.upload_factor(eye(n)).unwrap();
        let start = clock.now();
        let slab = Arc::new(vec![0.0; n * 50]);
        let h = dev.send_async(HostSlice::new(slab.clone(), n, 0..50), 0).unwrap();
        dev.wait(h).unwrap();
        let t_ready = clock.now();

        let compute = dev.trsm_async(0).unwrap();
        let send = dev.send_async(HostSlice::new(slab, n, 0..50), 1).unwrap();
        let ts = dev.wait(send).unwrap();
        let tc = dev.wait(compute).unwrap();
        let together = clock.now() - t_ready;
        let serial = ts.duration() + tc.duration();
        assert!((together - ts.duration().max(tc.duration())).abs() < 1e-12);
        assert!(together < serial);
        assert!(start <= t_ready);
    }

    #[test]
    fn rejects_bad_params() {
        let bad = SimParams {
            latency_seconds: 0.0,
            ..params()
        };
        assert!(SimDevice::new(0, DeviceSpec::simulated(bad), VirtualClock::new()).is_err());
    }
}
