//! Timeline recording and overlap analysis.
//!
//! A trace is a list of intervals, one per operation, written as JSON lines:
//!
//! ```text
//! {"stream":"h2d","block":3,"device":0,"t0":0.5,"t1":1.25}
//! ```
//!
//! Block indices are 1-based; preprocessing uses block -1. Times are seconds
//! on the run's clock (wall or virtual).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::sync::{Mutex, PoisonError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stream {
    DiskRead,
    DiskWrite,
    H2d,
    D2h,
    DeviceCompute,
    HostCompute,
    Preprocess,
}

impl Stream {
    pub fn is_device(self) -> bool {
        matches!(self, Stream::H2d | Stream::D2h | Stream::DeviceCompute)
    }

    pub fn name(self) -> &'static str {
        match self {
            Stream::DiskRead => "disk-read",
            Stream::DiskWrite => "disk-write",
            Stream::H2d => "h2d",
            Stream::D2h => "d2h",
            Stream::DeviceCompute => "device-compute",
            Stream::HostCompute => "host-compute",
            Stream::Preprocess => "preprocess",
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub stream: Stream,
    pub block: i64,
    pub device: Option<usize>,
    pub t0: f64,
    pub t1: f64,
}

impl TraceEvent {
    pub fn new(stream: Stream, block: i64, device: Option<usize>, span: Span) -> Self {
        Self {
            stream,
            block,
            device,
            t0: span.t0,
            t1: span.t1,
        }
    }

    pub fn to_json_line(&self) -> String {
        // Serializing a plain struct of numbers and a unit enum cannot fail.
        serde_json::to_string(self).unwrap_or_default()
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed trace: line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("malformed trace: {0}")]
    Invalid(String),
    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Parses JSON lines. Blank lines are skipped; an unparseable final line
/// without a trailing newline (a crashed writer) is dropped.
pub fn parse_trace(reader: impl BufRead) -> Result<Vec<TraceEvent>, TraceError> {
    let mut events = Vec::new();
    let mut lines = reader.split(b'\n').enumerate().peekable();
    while let Some((i, line)) = lines.next() {
        let line = line?;
        let is_last = lines.peek().is_none();
        let text = String::from_utf8_lossy(&line);
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        match serde_json::from_str::<TraceEvent>(text) {
            Ok(ev) => events.push(ev),
            Err(_) if is_last => break,
            Err(e) => {
                return Err(TraceError::Malformed {
                    line: i + 1,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(events)
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceEvent>, TraceError> {
    let f = File::open(path)?;
    parse_trace(std::io::BufReader::new(f))
}

pub fn write_trace(path: impl AsRef<Path>, events: &[TraceEvent]) -> Result<(), TraceError> {
    let mut w = BufWriter::new(File::create(path)?);
    for ev in events {
        writeln!(w, "{}", ev.to_json_line())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Default)]
struct RecorderState {
    events: Vec<TraceEvent>,
    sink: Option<BufWriter<File>>,
    dropped: u64,
}

/// Thread-safe event collector with an optional JSON-lines file sink.
///
/// Recording never fails: if the sink errors, it is detached and every
/// event that could not be written is counted in [`TraceRecorder::dropped`].
/// The in-memory copy is always complete.
#[derive(Default)]
pub struct TraceRecorder {
    state: Mutex<RecorderState>,
}

impl TraceRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_sink(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let sink = BufWriter::new(File::create(path)?);
        Ok(Self {
            state: Mutex::new(RecorderState {
                sink: Some(sink),
                ..Default::default()
            }),
        })
    }

    pub fn record(&self, event: TraceEvent) {
        let mut s = self.state.lock().unwrap_or_else(PoisonError::into_inner);
        if let Some(sink) = s.sink.as_mut() {
            if writeln!(sink, "{}", event.to_json_line()).is_err() {
                s.sink = None;
                s.dropped += 1;
            }
        } else if s.dropped > 0 {
            s.dropped += 1;
        }
        s.events.push(event);
    }

    /// Events not written to the sink after it failed.
    pub fn dropped(&self) -> u64 {
        self.state
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .dropped
    }

    /// Flushes the sink and returns every recorded event.
    pub fn finish(self) -> (Vec<TraceEvent>, u64) {
        let mut s = self.state.into_inner().unwrap_or_else(PoisonError::into_inner);
        if let Some(mut sink) = s.sink.take() {
            if sink.flush().is_err() {
                s.dropped += 1;
            }
        }
        (s.events, s.dropped)
    }

    pub fn snapshot(&self) -> Vec<TraceEvent> {
        self.state
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .events
            .clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// A block is missing an operation, or has it more than once.
    Completeness {
        block: i64,
        stream: Stream,
        device: Option<usize>,
        count: usize,
    },
    /// Two operations touched the same buffer at the same time.
    ExclusiveAccess {
        buffer: String,
        first: TraceEvent,
        second: TraceEvent,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Completeness {
                block,
                stream,
                device,
                count,
            } => {
                write!(f, "block {block}: {stream}")?;
                if let Some(d) = device {
                    write!(f, " on device {d}")?;
                }
                write!(f, " occurs {count} times, expected once")
            }
            Violation::ExclusiveAccess {
                buffer,
                first,
                second,
            } => write!(
                f,
                "buffer {buffer}: {} of block {} [{:.6}, {:.6}] overlaps {} of block {} [{:.6}, {:.6}]",
                first.stream, first.block, first.t0, first.t1, second.stream, second.block,
                second.t0, second.t1
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneBusy {
    pub stream: Stream,
    pub device: Option<usize>,
    pub busy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapReport {
    pub blocks: usize,
    pub devices: usize,
    /// Busy time (union of intervals) per stream and device.
    pub busy: Vec<LaneBusy>,
    /// First start to last end, preprocessing excluded.
    pub wall: f64,
    /// Busiest lane's busy time over the wall time.
    pub efficiency: f64,
    /// First to last device solve; the window in which the pipeline is full.
    pub steady_state: Option<Span>,
    /// Lowest per-device solve busy fraction inside `steady_state`.
    pub device_busy_fraction: Option<f64>,
    /// Per block, first start to last end of its operations.
    pub block_latency: BTreeMap<i64, f64>,
    pub violations: Vec<Violation>,
}

impl OverlapReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for OverlapReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "blocks:      {}", self.blocks)?;
        writeln!(f, "devices:     {}", self.devices)?;
        writeln!(f, "wall:        {:.6} s", self.wall)?;
        writeln!(f, "efficiency:  {:.4}", self.efficiency)?;
        if let Some(b) = self.device_busy_fraction {
            writeln!(f, "device busy: {b:.4} (steady state)")?;
        }
        for l in &self.busy {
            match l.device {
                Some(d) => writeln!(f, "  {:<15} dev {:<3} {:.6} s", l.stream.name(), d, l.busy)?,
                None => writeln!(f, "  {:<15}         {:.6} s", l.stream.name(), l.busy)?,
            }
        }
        writeln!(f, "violations:  {}", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

/// Length of the union of `intervals`, optionally clipped to `window`.
fn union_length(intervals: &mut [(f64, f64)], window: Option<Span>) -> f64 {
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for &(mut a, mut b) in intervals.iter() {
        if let Some(w) = window {
            a = a.max(w.t0);
            b = b.min(w.t1);
            if b <= a {
                continue;
            }
        }
        match cur {
            Some((s, e)) if a <= e => cur = Some((s, e.max(b))),
            Some((s, e)) => {
                total += e - s;
                cur = Some((a, b));
            }
            None => cur = Some((a, b)),
        }
    }
    if let Some((s, e)) = cur {
        total += e - s;
    }
    total
}

/// Busy fraction of one lane inside `window`.
pub fn busy_fraction(
    events: &[TraceEvent],
    stream: Stream,
    device: Option<usize>,
    window: Span,
) -> f64 {
    let mut iv: Vec<(f64, f64)> = events
        .iter()
        .filter(|e| e.stream == stream && e.device == device)
        .map(|e| (e.t0, e.t1))
        .collect();
    let len = window.duration();
    if len <= 0.0 {
        return 0.0;
    }
    union_length(&mut iv, Some(window)) / len
}

/// Buffers an event occupies, for the exclusive-access check. Host data
/// slabs rotate with period 3 in the device pipeline (2 without devices),
/// device buffers and result slabs with period 2; host slabs are split per
/// device because devices copy disjoint column ranges concurrently.
fn buffers_touched(ev: &TraceEvent, devices: usize) -> Vec<String> {
    let j = ev.block;
    let all_parts = |slab: i64| -> Vec<String> {
        (0..devices.max(1))
            .map(|d| format!("host{slab}/part{d}"))
            .collect()
    };
    if devices == 0 {
        return match ev.stream {
            Stream::DiskRead => vec![format!("host{}", j.rem_euclid(2))],
            Stream::HostCompute => vec![
                format!("host{}", j.rem_euclid(2)),
                format!("result{}", j.rem_euclid(2)),
            ],
            Stream::DiskWrite => vec![format!("result{}", j.rem_euclid(2))],
            _ => Vec::new(),
        };
    }
    let dev = ev.device.unwrap_or(0);
    match ev.stream {
        Stream::DiskRead => all_parts(j.rem_euclid(3)),
        Stream::H2d => vec![
            format!("host{}/part{dev}", j.rem_euclid(3)),
            format!("dev{dev}/buf{}", j.rem_euclid(2)),
        ],
        Stream::DeviceCompute => vec![format!("dev{dev}/buf{}", j.rem_euclid(2))],
        Stream::D2h => vec![
            format!("dev{dev}/buf{}", j.rem_euclid(2)),
            format!("host{}/part{dev}", (j + 1).rem_euclid(3)),
        ],
        Stream::HostCompute => {
            let mut v = all_parts((j + 1).rem_euclid(3));
            v.push(format!("result{}", j.rem_euclid(2)));
            v
        }
        Stream::DiskWrite => vec![format!("result{}", j.rem_euclid(2))],
        Stream::Preprocess => Vec::new(),
    }
}

/// Analyzes a finished trace. The block count is inferred from the largest
/// block index present.
pub fn analyze(events: &[TraceEvent]) -> Result<OverlapReport, TraceError> {
    analyze_with(events, None)
}

/// As [`analyze`], but checks completeness against a known block count.
pub fn analyze_with(
    events: &[TraceEvent],
    expected_blocks: Option<usize>,
) -> Result<OverlapReport, TraceError> {
    for (i, e) in events.iter().enumerate() {
        if !(e.t0.is_finite() && e.t1.is_finite()) || e.t1 < e.t0 {
            return Err(TraceError::Invalid(format!(
                "event {i} ({}) has t0={} t1={}",
                e.stream, e.t0, e.t1
            )));
        }
        let bad_block = match e.stream {
            Stream::Preprocess => e.block != -1,
            _ => e.block < 1 || expected_blocks.is_some_and(|b| e.block as usize > b),
        };
        if bad_block {
            return Err(TraceError::Invalid(format!(
                "event {i} ({}) has out-of-range block {}",
                e.stream, e.block
            )));
        }
        if e.stream.is_device() && e.device.is_none() {
            return Err(TraceError::Invalid(format!(
                "event {i} ({}) has no device",
                e.stream
            )));
        }
    }
    let work: Vec<&TraceEvent> = events
        .iter()
        .filter(|e| e.stream != Stream::Preprocess)
        .collect();
    let device_ids: BTreeSet<usize> = work
        .iter()
        .filter(|e| e.stream.is_device())
        .filter_map(|e| e.device)
        .collect();
    let devices = device_ids.iter().next_back().map_or(0, |m| m + 1);
    let blocks = expected_blocks
        .unwrap_or_else(|| work.iter().map(|e| e.block).max().unwrap_or(0) as usize);

    let t_min = work.iter().map(|e| e.t0).fold(f64::INFINITY, f64::min);
    let t_max = work.iter().map(|e| e.t1).fold(f64::NEG_INFINITY, f64::max);
    let wall = if work.is_empty() { 0.0 } else { t_max - t_min };

    type Lane = (Stream, Option<usize>);
    let mut lanes: BTreeMap<Lane, Vec<(f64, f64)>> = BTreeMap::new();
    for e in &work {
        lanes
            .entry((e.stream, e.device))
            .or_default()
            .push((e.t0, e.t1));
    }
    let busy: Vec<LaneBusy> = lanes
        .iter_mut()
        .map(|((stream, device), iv)| LaneBusy {
            stream: *stream,
            device: *device,
            busy: union_length(iv, None),
        })
        .collect();
    let max_busy = busy.iter().map(|l| l.busy).fold(0.0, f64::max);
    let efficiency = if work.is_empty() {
        0.0
    } else if wall > 0.0 {
        (max_busy / wall).min(1.0)
    } else {
        1.0
    };

    let compute: Vec<&&TraceEvent> = work
        .iter()
        .filter(|e| e.stream == Stream::DeviceCompute)
        .collect();
    let steady_state = if compute.is_empty() {
        None
    } else {
        Some(Span::new(
            compute.iter().map(|e| e.t0).fold(f64::INFINITY, f64::min),
            compute.iter().map(|e| e.t1).fold(f64::NEG_INFINITY, f64::max),
        ))
    };
    let device_busy_fraction = steady_state.map(|w| {
        if w.duration() <= 0.0 {
            return 1.0;
        }
        device_ids
            .iter()
            .map(|&d| busy_fraction(events, Stream::DeviceCompute, Some(d), w))
            .fold(1.0, f64::min)
    });

    let mut block_latency: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    for e in &work {
        let s = block_latency
            .entry(e.block)
            .or_insert((f64::INFINITY, f64::NEG_INFINITY));
        s.0 = s.0.min(e.t0);
        s.1 = s.1.max(e.t1);
    }
    let block_latency = block_latency
        .into_iter()
        .map(|(b, (s, e))| (b, e - s))
        .collect();

    let mut violations = Vec::new();
    let mut counts: BTreeMap<(i64, Stream, Option<usize>), usize> = BTreeMap::new();
    for e in &work {
        *counts.entry((e.block, e.stream, e.device)).or_default() += 1;
    }
    let mut expected: Vec<(Stream, Option<usize>)> = vec![
        (Stream::DiskRead, None),
        (Stream::HostCompute, None),
        (Stream::DiskWrite, None),
    ];
    for d in 0..devices {
        for s in [Stream::H2d, Stream::DeviceCompute, Stream::D2h] {
            expected.push((s, Some(d)));
        }
    }
    for b in 1..=blocks as i64 {
        for &(s, d) in &expected {
            let c = counts.remove(&(b, s, d)).unwrap_or(0);
            if c != 1 {
                violations.push(Violation::Completeness {
                    block: b,
                    stream: s,
                    device: d,
                    count: c,
                });
            }
        }
    }
    // Anything left is an unexpected (stream, device) combination.
    for ((b, s, d), c) in counts {
        violations.push(Violation::Completeness {
            block: b,
            stream: s,
            device: d,
            count: c,
        });
    }

    let mut per_buffer: BTreeMap<String, Vec<&TraceEvent>> = BTreeMap::new();
    for e in &work {
        for key in buffers_touched(e, devices) {
            per_buffer.entry(key).or_default().push(e);
        }
    }
    for (key, mut evs) in per_buffer {
        evs.sort_by(|a, b| a.t0.total_cmp(&b.t0).then(a.t1.total_cmp(&b.t1)));
        let mut latest: Option<&TraceEvent> = None;
        for e in evs {
            if let Some(prev) = latest {
                if e.t0 < prev.t1 {
                    violations.push(Violation::ExclusiveAccess {
                        buffer: key.clone(),
                        first: *prev,
                        second: *e,
                    });
                }
                if e.t1 > prev.t1 {
                    latest = Some(e);
                }
            } else {
                latest = Some(e);
            }
        }
    }

    Ok(OverlapReport {
        blocks,
        devices,
        busy,
        wall,
        efficiency,
        steady_state,
        device_busy_fraction,
        block_latency,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(stream: Stream, block: i64, device: Option<usize>, t0: f64, t1: f64) -> TraceEvent {
        TraceEvent {
            stream,
            block,
            device,
            t0,
            t1,
        }
    }

    #[test]
    fn json_line_schema() {
        let e = ev(Stream::H2d, 3, Some(0), 0.5, 1.25);
        assert_eq!(
            e.to_json_line(),
            r#"{"stream":"h2d","block":3,"device":0,"t0":0.5,"t1":1.25}"#
        );
        let e = ev(Stream::Preprocess, -1, None, 0.0, 2.0);
        assert_eq!(
            e.to_json_line(),
            r#"{"stream":"preprocess","block":-1,"device":null,"t0":0.0,"t1":2.0}"#
        );
        let names: Vec<String> = [
            Stream::DiskRead,
            Stream::DiskWrite,
            Stream::D2h,
            Stream::DeviceCompute,
            Stream::HostCompute,
        ]
        .iter()
        .map(|s| serde_json::to_string(s).unwrap())
        .collect();
        assert_eq!(
            names,
            [
                "\"disk-read\"",
                "\"disk-write\"",
                "\"d2h\"",
                "\"device-compute\"",
                "\"host-compute\""
            ]
        );
    }

    #[test]
    fn empty_recorder_gives_empty_trace() {
        let r = TraceRecorder::new();
        let (events, dropped) = r.finish();
        assert!(events.is_empty());
        assert_eq!(dropped, 0);
        let rep = analyze(&events).unwrap();
        assert!(rep.is_clean());
        assert_eq!(rep.blocks, 0);
    }

    #[test]
    fn sink_and_parse_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        let r = TraceRecorder::with_sink(&p).unwrap();
        let evs = vec![
            ev(Stream::DiskRead, 1, None, 0.0, 0.1),
            ev(Stream::HostCompute, 1, None, 0.1, 0.3),
        ];
        std::thread::scope(|s| {
            for e in &evs {
                let r = &r;
                s.spawn(move || r.record(*e));
            }
        });
        let (mut got, dropped) = r.finish();
        assert_eq!(dropped, 0);
        let mut back = read_trace(&p).unwrap();
        let key = |e: &TraceEvent| (e.stream, e.t0.to_bits());
        got.sort_by_key(key);
        back.sort_by_key(key);
        assert_eq!(got, back);
    }

    #[test]
    fn truncated_last_line_is_tolerated() {
        let text = "{\"stream\":\"disk-read\",\"block\":1,\"device\":null,\"t0\":0.0,\"t1\":1.0}\n{\"stream\":\"disk-wr";
        let evs = parse_trace(text.as_bytes()).unwrap();
        assert_eq!(evs.len(), 1);
        let bad = "{\"stream\":\"nope\"}\n{\"stream\":\"disk-read\",\"block\":1,\"device\":null,\"t0\":0.0,\"t1\":1.0}\n";
        assert!(matches!(
            parse_trace(bad.as_bytes()),
            Err(TraceError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn serial_trace_efficiency_is_busiest_over_sum() {
        let evs = vec![
            ev(Stream::DiskRead, 1, None, 0.0, 1.0),
            ev(Stream::HostCompute, 1, None, 1.0, 4.0),
            ev(Stream::DiskWrite, 1, None, 4.0, 5.0),
        ];
        let rep = analyze(&evs).unwrap();
        assert!(rep.is_clean(), "{:?}", rep.violations);
        assert_eq!(rep.wall, 5.0);
        assert!((rep.efficiency - 3.0 / 5.0).abs() < 1e-15);
        assert_eq!(rep.block_latency[&1], 5.0);
    }

    #[test]
    fn perfectly_overlapped_synthetic_trace() {
        // Compute of block b runs back to back; transfers of other blocks
        // sit inside it, on the other device buffer.
        let blocks = 40;
        let mut evs = Vec::new();
        let c = 1.0;
        let x = 0.05;
        for b in 1..=blocks {
            let t = (b + 1) as f64 * c;
            evs.push(ev(Stream::DiskRead, b, None, t - c, t - c + x));
            evs.push(ev(Stream::H2d, b, Some(0), t - c + x, t - c + 2.0 * x));
            evs.push(ev(Stream::DeviceCompute, b, Some(0), t, t + c));
            evs.push(ev(Stream::D2h, b, Some(0), t + c, t + c + x));
            evs.push(ev(Stream::HostCompute, b, None, t + c + x, t + c + 2.0 * x));
            evs.push(ev(Stream::DiskWrite, b, None, t + c + 2.0 * x, t + c + 3.0 * x));
        }
        let t_first = evs.iter().map(|e| e.t0).fold(f64::INFINITY, f64::min);
        let t_last = evs.iter().map(|e| e.t1).fold(f64::NEG_INFINITY, f64::max);
        let expect = blocks as f64 * c / (t_last - t_first);
        let rep = analyze(&evs).unwrap();
        assert!(rep.is_clean(), "{:?}", rep.violations);
        assert!((rep.efficiency - expect).abs() < 1e-12);
        assert!(rep.efficiency >= 0.95);
        assert_eq!(rep.device_busy_fraction, Some(1.0));
    }

    #[test]
    fn concurrent_access_to_one_buffer_is_flagged() {
        let evs = vec![
            ev(Stream::DiskRead, 1, None, 0.0, 1.0),
            ev(Stream::HostCompute, 1, None, 0.5, 2.0),
            ev(Stream::DiskWrite, 1, None, 2.0, 3.0),
        ];
        let rep = analyze(&evs).unwrap();
        assert_eq!(rep.violations.len(), 1);
        assert!(matches!(rep.violations[0], Violation::ExclusiveAccess { .. }));
    }

    #[test]
    fn missing_and_duplicate_events_are_flagged() {
        let evs = vec![
            ev(Stream::DiskRead, 1, None, 0.0, 1.0),
            ev(Stream::DiskRead, 1, None, 1.0, 1.5),
            ev(Stream::HostCompute, 1, None, 1.5, 2.0),
        ];
        let rep = analyze_with(&evs, Some(1)).unwrap();
        assert!(rep.violations.contains(&Violation::Completeness {
            block: 1,
            stream: Stream::DiskRead,
            device: None,
            count: 2
        }));
        assert!(rep.violations.contains(&Violation::Completeness {
            block: 1,
            stream: Stream::DiskWrite,
            device: None,
            count: 0
        }));
    }

    #[test]
    fn malformed_events_are_rejected() {
        assert!(analyze(&[ev(Stream::DiskRead, 1, None, 2.0, 1.0)]).is_err());
        assert!(analyze(&[ev(Stream::DiskRead, 0, None, 0.0, 1.0)]).is_err());
        assert!(analyze(&[ev(Stream::H2d, 1, None, 0.0, 1.0)]).is_err());
        assert!(analyze_with(&[ev(Stream::DiskRead, 5, None, 0.0, 1.0)], Some(4)).is_err());
    }

    #[test]
    fn analysis_is_deterministic() {
        let evs = vec![
            ev(Stream::DiskRead, 2, None, 0.3, 0.9),
            ev(Stream::DiskRead, 1, None, 0.0, 0.2),
            ev(Stream::HostCompute, 1, None, 0.2, 0.6),
        ];
        assert_eq!(analyze(&evs).unwrap(), analyze(&evs).unwrap());
    }
}
