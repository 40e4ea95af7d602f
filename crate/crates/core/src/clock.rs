//! Time sources for the pipeline.
//!
//! Real runs read a monotonic wall clock. Simulated runs use a virtual
//! clock: every operation reserves an interval on the lane (disk, copy
//! engine, compute engine, host) that executes it, starting no earlier than
//! the coordinator's current time and the lane's previous reservation. The
//! coordinator's time only advances when it waits on a result, which makes
//! overlap measurements exact and repeatable.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, PoisonError};
use std::time::Instant;

/// Closed interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Span {
    pub t0: f64,
    pub t1: f64,
}

impl Span {
    pub fn new(t0: f64, t1: f64) -> Self {
        Self { t0, t1 }
    }

    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }
}

/// Resource that executes one operation at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lane {
    DiskRead,
    DiskWrite,
    Host,
    DeviceCopy(usize),
    DeviceCompute(usize),
}

#[derive(Debug, Clone)]
pub struct WallClock {
    epoch: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self {
            epoch: Instant::now(),
        }
    }

    pub fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Default)]
struct VirtualState {
    now: f64,
    lanes: HashMap<Lane, f64>,
}

#[derive(Debug, Clone, Default)]
pub struct VirtualClock {
    state: Arc<Mutex<VirtualState>>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    fn with<R>(&self, f: impl FnOnce(&mut VirtualState) -> R) -> R {
        let mut g = self.state.lock().unwrap_or_else(PoisonError::into_inner);
        f(&mut g)
    }

    pub fn now(&self) -> f64 {
        self.with(|s| s.now)
    }

    /// Books `cost` seconds on `lane` as soon as both the coordinator and the
    /// lane are free. Does not move the coordinator's time.
    pub fn reserve(&self, lane: Lane, cost: f64) -> Span {
        self.with(|s| {
            let free = s.lanes.get(&lane).copied().unwrap_or(0.0);
            let t0 = s.now.max(free);
            let t1 = t0 + cost.max(0.0);
            s.lanes.insert(lane, t1);
            Span { t0, t1 }
        })
    }

    /// The coordinator has observed completion of `span`.
    pub fn complete(&self, span: Span) {
        self.with(|s| s.now = s.now.max(span.t1));
    }

    /// Reserve and wait in one step (synchronous operation).
    pub fn run_sync(&self, lane: Lane, cost: f64) -> Span {
        let span = self.reserve(lane, cost);
        self.complete(span);
        span
    }
}

/// Either clock, cheaply clonable and shared by all streams of a run.
#[derive(Debug, Clone)]
pub enum Clock {
    Wall(WallClock),
    Virtual(VirtualClock),
}

impl Clock {
    pub fn wall() -> Self {
        Clock::Wall(WallClock::new())
    }

    pub fn simulated() -> Self {
        Clock::Virtual(VirtualClock::new())
    }

    pub fn now(&self) -> f64 {
        match self {
            Clock::Wall(w) => w.now(),
            Clock::Virtual(v) => v.now(),
        }
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self, Clock::Virtual(_))
    }

    pub fn as_virtual(&self) -> Option<&VirtualClock> {
        match self {
            Clock::Virtual(v) => Some(v),
            Clock::Wall(_) => None,
        }
    }
}
