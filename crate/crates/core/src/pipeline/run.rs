use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use super::{
    rotate_buffers, Activity, BufferSet, ExecutionPlan, HostCosts, PipelineError, RunSummary,
};
use crate::backend::{create_devices, DeviceHandle, HostSlice};
use crate::clock::{Clock, Lane, Span, VirtualClock};
use crate::gls::{
    cholesky_factor_with, s_loop_into, whiten_columns, whiten_fixed, SolveStatus,
    WhitenedContext,
};
use crate::io::{create_matrix, read_columns, read_matrix, write_columns, Completed, IoStream, StreamHandle};
use crate::matrix::KinshipMatrix;
use crate::trace::{Stream, TraceEvent, TraceRecorder};

fn internal(msg: &str) -> PipelineError {
    PipelineError::IllegalBufferState(msg.to_string())
}

enum Pending {
    Wall(StreamHandle),
    Virtual(Completed),
}

/// Disk streams: worker threads on the wall clock, or synchronous I/O with
/// virtual-time reservations under simulation.
enum Disk {
    Wall { reader: IoStream, writer: IoStream },
    Virtual { clock: VirtualClock, costs: HostCosts },
}

impl Disk {
    fn new(clock: &Clock, costs: HostCosts) -> Self {
        match clock {
            Clock::Wall(w) => Disk::Wall {
                reader: IoStream::spawn("disk-read", w.clone()),
                writer: IoStream::spawn("disk-write", w.clone()),
            },
            Clock::Virtual(v) => Disk::Virtual {
                clock: v.clone(),
                costs,
            },
        }
    }

    fn read(
        &self,
        path: &Path,
        rows: usize,
        first: usize,
        count: usize,
        mut slab: Vec<f64>,
    ) -> Result<Pending, PipelineError> {
        match self {
            Disk::Wall { reader, .. } => {
                Ok(Pending::Wall(reader.read_columns_async(path, first, count, slab)))
            }
            Disk::Virtual { clock, costs } => {
                slab.resize(rows * count, 0.0);
                read_columns(path, first, count, &mut slab)?;
                let span = clock.reserve(Lane::DiskRead, costs.disk_cost(8 * slab.len() as u64));
                Ok(Pending::Virtual(Completed { slab, span }))
            }
        }
    }

    fn write(
        &self,
        path: &Path,
        first: usize,
        count: usize,
        slab: Vec<f64>,
    ) -> Result<Pending, PipelineError> {
        match self {
            Disk::Wall { writer, .. } => {
                Ok(Pending::Wall(writer.write_columns_async(path, first, count, slab)))
            }
            Disk::Virtual { clock, costs } => {
                write_columns(path, first, count, &slab)?;
                let span = clock.reserve(Lane::DiskWrite, costs.disk_cost(8 * slab.len() as u64));
                Ok(Pending::Virtual(Completed { slab, span }))
            }
        }
    }

    fn wait(&self, p: Pending) -> Result<Completed, PipelineError> {
        match p {
            Pending::Wall(h) => Ok(h.wait()?),
            Pending::Virtual(c) => {
                if let Disk::Virtual { clock, .. } = self {
                    clock.complete(c.span);
                }
                Ok(c)
            }
        }
    }
}

/// Runs `f` on the host compute stream and returns its interval.
fn on_host<T>(clock: &Clock, cost: f64, f: impl FnOnce() -> T) -> (T, Span) {
    match clock {
        Clock::Wall(w) => {
            let t0 = w.now();
            let r = f();
            (r, Span::new(t0, w.now()))
        }
        Clock::Virtual(v) => {
            let r = f();
            (r, v.run_sync(Lane::Host, cost))
        }
    }
}

fn open_recorder(plan: &ExecutionPlan) -> Result<TraceRecorder, PipelineError> {
    match &plan.config.trace {
        Some(path) => TraceRecorder::with_sink(path).map_err(|source| PipelineError::TraceSink {
            path: path.clone(),
            source,
        }),
        None => Ok(TraceRecorder::new()),
    }
}

/// Factor M, whiten the fixed data, and create the result file.
fn preprocess(plan: &ExecutionPlan) -> Result<WhitenedContext, PipelineError> {
    let cfg = &plan.config;
    let kinship = KinshipMatrix::new(read_matrix(&cfg.paths.kinship)?)?;
    let factor = Arc::new(cholesky_factor_with(&kinship, cfg.execution)?);
    drop(kinship);
    let xl = read_matrix(&cfg.paths.xl)?;
    let y = read_matrix(&cfg.paths.y)?.into_vec();
    let ctx = whiten_fixed(factor, &xl, &y)?;
    create_matrix(&cfg.paths.out, plan.dims.p, plan.dims.m)?;
    Ok(ctx)
}

fn event(stream: Stream, block: usize, device: Option<usize>, span: Span) -> TraceEvent {
    TraceEvent::new(stream, block as i64, device, span)
}

/// Full device pipeline: three host slabs, two buffers per device, the
/// S-loop one block behind the devices.
pub fn run(plan: &ExecutionPlan) -> Result<RunSummary, PipelineError> {
    let cfg = &plan.config;
    if cfg.devices.is_empty() {
        return Err(PipelineError::Config(
            "the device pipeline needs at least one device".into(),
        ));
    }
    let clock = if plan.is_simulated() {
        Clock::simulated()
    } else {
        Clock::wall()
    };
    let mut devices = create_devices(&cfg.devices, &clock)?;
    let recorder = open_recorder(plan)?;
    let (n, p) = (plan.dims.n, plan.dims.p);
    let exec = cfg.execution;
    let costs = cfg.host_costs;

    let t_pre = clock.now();
    let ctx = preprocess(plan)?;
    for dev in devices.iter_mut() {
        dev.upload_factor(ctx.factor.clone())?;
    }
    let pre = Span::new(t_pre, clock.now());
    recorder.record(TraceEvent::new(Stream::Preprocess, -1, None, pre));

    let disk = Disk::new(&clock, costs);
    let guards = plan.guards();
    let bs = plan.block_size;
    let mut bufs = BufferSet::new(n * bs);
    let mut results: [Option<Vec<f64>>; 2] =
        [Some(Vec::with_capacity(p * bs)), Some(Vec::with_capacity(p * bs))];
    let mut flags = vec![SolveStatus::Ok; bs];
    let mut solved: Option<Vec<f64>> = None;
    let mut pending_reads: VecDeque<Pending> = VecDeque::new();
    let mut pending_writes: VecDeque<(usize, Pending)> = VecDeque::new();
    let mut sends: Vec<Option<DeviceHandle>> = (0..devices.len()).map(|_| None).collect();
    let mut trsms: Vec<Option<DeviceHandle>> = (0..devices.len()).map(|_| None).collect();
    let mut singular = 0;

    let t_start = clock.now();
    for b in guards.iterations() {
        if let Some(j) = guards.block(Activity::TrsmWait, b) {
            for (d, dev) in devices.iter_mut().enumerate() {
                let h = trsms[d].take().ok_or_else(|| internal("no solve in flight"))?;
                let span = dev.wait(h)?;
                recorder.record(event(Stream::DeviceCompute, j, Some(d), span));
            }
        }
        if let Some(j) = guards.block(Activity::SendWait, b) {
            for (d, dev) in devices.iter_mut().enumerate() {
                let h = sends[d].take().ok_or_else(|| internal("no upload in flight"))?;
                let span = dev.wait(h)?;
                recorder.record(event(Stream::H2d, j, Some(d), span));
            }
            bufs.reclaim_upload()?;
        }
        if guards.active(Activity::TrsmDispatch, b) {
            let alpha = bufs.alpha();
            for (d, dev) in devices.iter_mut().enumerate() {
                trsms[d] = Some(dev.trsm_async(alpha)?);
            }
        }
        if let Some(j) = guards.block(Activity::DiskRead, b) {
            let r = plan.block_range(j);
            let slab = bufs.lend_for_read()?;
            pending_reads.push_back(disk.read(&cfg.paths.xr, n, r.start, r.len(), slab)?);
        }
        if let Some(j) = guards.block(Activity::DeviceRecv, b) {
            let beta = bufs.beta();
            let k = plan.block_range(j).len();
            let slab = bufs.sloop_slab()?;
            slab.resize(n * k, 0.0);
            for (d, (dev, r)) in devices.iter_mut().zip(&plan.splits[j - 1]).enumerate() {
                let span = dev.recv(beta, &mut slab[n * r.start..n * r.end])?;
                recorder.record(event(Stream::D2h, j, Some(d), span));
            }
        }
        if let Some(j) = guards.block(Activity::DiskWait, b) {
            let pend = pending_reads
                .pop_front()
                .ok_or_else(|| internal("no read in flight"))?;
            let done = disk.wait(pend)?;
            recorder.record(event(Stream::DiskRead, j, None, done.span));
            bufs.land_read(done.slab)?;
        }
        if let Some(j) = guards.block(Activity::DeviceSend, b) {
            let shared = bufs.share_for_upload()?;
            let beta = bufs.beta();
            for (d, (dev, r)) in devices.iter_mut().zip(&plan.splits[j - 1]).enumerate() {
                let src = HostSlice::new(shared.clone(), n, r.clone());
                sends[d] = Some(dev.send_async(src, beta)?);
            }
        }
        if let Some(j) = guards.block(Activity::SLoop, b) {
            let k = plan.block_range(j).len();
            let mut out = results[j % 2]
                .take()
                .ok_or_else(|| internal("result slab still being written"))?;
            out.resize(p * k, 0.0);
            let slab = bufs.sloop_slab()?;
            let (res, span) = on_host(&clock, costs.sloop_cost(n, p, k), || {
                s_loop_into(&ctx, slab, &mut out, &mut flags[..k], exec)
            });
            singular += res?;
            recorder.record(event(Stream::HostCompute, j, None, span));
            solved = Some(out);
        }
        if let Some(j) = guards.block(Activity::ResultWait, b) {
            wait_write(&disk, &mut pending_writes, j, &mut results, &recorder)?;
        }
        if let Some(j) = guards.block(Activity::ResultWrite, b) {
            let r = plan.block_range(j);
            let out = solved.take().ok_or_else(|| internal("no results to write"))?;
            pending_writes.push_back((j, disk.write(&cfg.paths.out, r.start, r.len(), out)?));
        }
        bufs = rotate_buffers(bufs)?;
    }
    if let Some(j) = guards.drain_result_wait() {
        wait_write(&disk, &mut pending_writes, j, &mut results, &recorder)?;
    }
    let wall = clock.now() - t_start;
    drop(disk);
    drop(devices);
    let (trace, dropped_events) = recorder.finish();
    Ok(RunSummary {
        blocks: plan.blockcount,
        block_size: bs,
        devices: cfg.devices.len(),
        singular,
        wall_seconds: wall,
        preprocess_seconds: pre.duration(),
        trace,
        dropped_events,
    })
}

fn wait_write(
    disk: &Disk,
    pending: &mut VecDeque<(usize, Pending)>,
    block: usize,
    results: &mut [Option<Vec<f64>>; 2],
    recorder: &TraceRecorder,
) -> Result<(), PipelineError> {
    let (j, pend) = pending
        .pop_front()
        .ok_or_else(|| internal("no write in flight"))?;
    if j != block {
        return Err(internal("result writes completed out of order"));
    }
    let done = disk.wait(pend)?;
    recorder.record(event(Stream::DiskWrite, j, None, done.span));
    results[j % 2] = Some(done.slab);
    Ok(())
}

/// Host-only variant: two data slabs, whitening and S-loop on the host,
/// reads and writes overlapped with compute. Always timed on the wall clock.
pub fn run_host_only(plan: &ExecutionPlan) -> Result<RunSummary, PipelineError> {
    let cfg = &plan.config;
    let clock = Clock::wall();
    let recorder = open_recorder(plan)?;
    let (n, p) = (plan.dims.n, plan.dims.p);
    let exec = cfg.execution;
    let bs = plan.block_size;
    let bc = plan.blockcount;

    let t_pre = clock.now();
    let ctx = preprocess(plan)?;
    let pre = Span::new(t_pre, clock.now());
    recorder.record(TraceEvent::new(Stream::Preprocess, -1, None, pre));

    let disk = Disk::new(&clock, cfg.host_costs);
    let mut slabs: [Option<Vec<f64>>; 2] =
        [Some(Vec::with_capacity(n * bs)), Some(Vec::with_capacity(n * bs))];
    let mut results: [Option<Vec<f64>>; 2] =
        [Some(Vec::with_capacity(p * bs)), Some(Vec::with_capacity(p * bs))];
    let mut flags = vec![SolveStatus::Ok; bs];
    let mut reads: VecDeque<(usize, Pending)> = VecDeque::new();
    let mut writes: VecDeque<(usize, Pending)> = VecDeque::new();
    let mut singular = 0;

    let read = |j: usize, slabs: &mut [Option<Vec<f64>>; 2]| -> Result<Pending, PipelineError> {
        let r = plan.block_range(j);
        let slab = slabs[j % 2]
            .take()
            .ok_or_else(|| internal("data slab still in use"))?;
        disk.read(&cfg.paths.xr, n, r.start, r.len(), slab)
    };

    let t_start = clock.now();
    reads.push_back((1, read(1, &mut slabs)?));
    for j in 1..=bc {
        if j < bc {
            reads.push_back((j + 1, read(j + 1, &mut slabs)?));
        }
        let (_, pend) = reads.pop_front().ok_or_else(|| internal("no read in flight"))?;
        let done = disk.wait(pend)?;
        recorder.record(event(Stream::DiskRead, j, None, done.span));
        let mut slab = done.slab;

        if j >= 3 {
            wait_write(&disk, &mut writes, j - 2, &mut results, &recorder)?;
        }
        let k = plan.block_range(j).len();
        let mut out = results[j % 2]
            .take()
            .ok_or_else(|| internal("result slab still being written"))?;
        out.resize(p * k, 0.0);
        let (res, span) = on_host(&clock, 0.0, || -> Result<usize, PipelineError> {
            whiten_columns(&ctx.factor, &mut slab, exec)?;
            Ok(s_loop_into(&ctx, &slab, &mut out, &mut flags[..k], exec)?)
        });
        singular += res?;
        recorder.record(event(Stream::HostCompute, j, None, span));
        slabs[j % 2] = Some(slab);

        let r = plan.block_range(j);
        writes.push_back((j, disk.write(&cfg.paths.out, r.start, r.len(), out)?));
    }
    while let Some(&(j, _)) = writes.front() {
        wait_write(&disk, &mut writes, j, &mut results, &recorder)?;
    }
    let wall = clock.now() - t_start;
    drop(disk);
    let (trace, dropped_events) = recorder.finish();
    Ok(RunSummary {
        blocks: bc,
        block_size: bs,
        devices: 0,
        singular,
        wall_seconds: wall,
        preprocess_seconds: pre.duration(),
        trace,
        dropped_events,
    })
}
