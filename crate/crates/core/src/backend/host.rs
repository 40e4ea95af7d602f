use std::sync::mpsc;
use std::sync::{Arc, Mutex, PoisonError};
use std::thread;

use super::{
    BackendError, BufferState, BufferTable, Completion, Device, DeviceHandle, DeviceOp,
    DeviceSpec, HostSlice,
};
use crate::clock::{Span, WallClock};
use crate::exec::Execution;
use crate::gls::{whiten_columns, LowerFactor};

type Task = Box<dyn FnOnce() + Send>;

/// In-order command queue served by one thread.
struct Engine {
    tx: Option<mpsc::Sender<Task>>,
    worker: Option<thread::JoinHandle<()>>,
}

impl Engine {
    fn spawn(name: String) -> Self {
        let (tx, rx) = mpsc::channel::<Task>();
        let worker = thread::Builder::new()
            .name(name)
            .spawn(move || {
                for task in rx {
                    task();
                }
            })
            .expect("failed to spawn device engine");
        Self {
            tx: Some(tx),
            worker: Some(worker),
        }
    }

    fn submit(&self, task: Task) -> bool {
        self.tx.as_ref().is_some_and(|tx| tx.send(task).is_ok())
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        drop(self.tx.take());
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

type Buffer = Arc<Mutex<Vec<f64>>>;

fn lock(b: &Buffer) -> std::sync::MutexGuard<'_, Vec<f64>> {
    b.lock().unwrap_or_else(PoisonError::into_inner)
}

/// Executes the solve on the host with a copy engine and a compute engine,
/// each on its own thread, so dispatch returns immediately.
pub struct HostDevice {
    id: usize,
    spec: DeviceSpec,
    clock: WallClock,
    table: BufferTable,
    buffers: [Buffer; 2],
    factor: Option<Arc<LowerFactor>>,
    copy: Engine,
    compute: Engine,
    exec: Execution,
}

impl HostDevice {
    pub fn new(id: usize, spec: DeviceSpec, clock: WallClock) -> Self {
        Self {
            id,
            spec,
            clock,
            table: BufferTable::new(id, spec),
            buffers: [Buffer::default(), Buffer::default()],
            factor: None,
            copy: Engine::spawn(format!("dev{id}-copy")),
            compute: Engine::spawn(format!("dev{id}-compute")),
            exec: Execution::default(),
        }
    }

    /// Overrides how the solve kernel parallelizes across columns.
    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    fn gone(&self) -> BackendError {
        BackendError::WorkerGone { device: self.id }
    }
}

impl Device for HostDevice {
    fn id(&self) -> usize {
        self.id
    }

    fn spec(&self) -> &DeviceSpec {
        &self.spec
    }

    fn upload_factor(&mut self, factor: Arc<LowerFactor>) -> Result<Span, BackendError> {
        let t0 = self.clock.now();
        self.table.set_factor(factor.size_bytes())?;
        self.factor = Some(factor);
        Ok(Span::new(t0, self.clock.now()))
    }

    fn send_async(&mut self, src: HostSlice, slot: usize) -> Result<DeviceHandle, BackendError> {
        self.table.begin_send(slot, src.len())?;
        let buf = self.buffers[slot].clone();
        let clock = self.clock.clone();
        let (tx, rx) = mpsc::channel();
        let task: Task = Box::new(move || {
            let t0 = clock.now();
            {
                let mut b = lock(&buf);
                b.clear();
                b.extend_from_slice(src.values());
            }
            // Release the host slab before signalling so the caller can
            // reclaim sole ownership right after the wait.
            drop(src);
            let _ = tx.send(Ok(Span::new(t0, clock.now())));
        });
        if !self.copy.submit(task) {
            return Err(self.gone());
        }
        Ok(DeviceHandle {
            device: self.id,
            slot,
            op: DeviceOp::Send,
            completion: Completion::Worker(rx),
        })
    }

    fn trsm_async(&mut self, slot: usize) -> Result<DeviceHandle, BackendError> {
        let factor = self
            .factor
            .clone()
            .ok_or(BackendError::FactorNotResident { device: self.id })?;
        self.table.begin_trsm(slot)?;
        let buf = self.buffers[slot].clone();
        let clock = self.clock.clone();
        let exec = self.exec;
        let (tx, rx) = mpsc::channel();
        let task: Task = Box::new(move || {
            let t0 = clock.now();
            let res = {
                let mut b = lock(&buf);
                if b.is_empty() {
                    Ok(())
                } else {
                    whiten_columns(&factor, &mut b, exec)
                }
            };
            let _ = tx.send(
                res.map(|()| Span::new(t0, clock.now()))
                    .map_err(BackendError::from),
            );
        });
        if !self.compute.submit(task) {
            return Err(self.gone());
        }
        Ok(DeviceHandle {
            device: self.id,
            slot,
            op: DeviceOp::Compute,
            completion: Completion::Worker(rx),
        })
    }

    fn recv(&mut self, slot: usize, dst: &mut [f64]) -> Result<Span, BackendError> {
        self.table.begin_recv(slot, dst.len())?;
        // Queue a marker on the copy engine so the receive is ordered after
        // earlier copies, then copy on this thread.
        let (tx, rx) = mpsc::channel::<()>();
        if !self.copy.submit(Box::new(move || {
            let _ = tx.send(());
        })) {
            return Err(self.gone());
        }
        rx.recv().map_err(|_| self.gone())?;
        let t0 = self.clock.now();
        dst.copy_from_slice(&lock(&self.buffers[slot]));
        Ok(Span::new(t0, self.clock.now()))
    }

    fn wait(&mut self, handle: DeviceHandle) -> Result<Span, BackendError> {
        self.table.check_wait(&handle)?;
        let span = match &handle.completion {
            Completion::Worker(rx) => rx.recv().map_err(|_| self.gone())??,
            Completion::Virtual(s) => *s,
        };
        self.table.finish(&handle);
        Ok(span)
    }

    fn buffer_state(&self, slot: usize) -> BufferState {
        self.table.state(slot)
    }
}
