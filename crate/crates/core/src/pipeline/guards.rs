//! Which activities run in which iteration of the streaming loop.
//!
//! The loop runs `b = -1 ..= blockcount + 1`. Each activity handles a fixed
//! block offset relative to `b` and is active over a fixed iteration range;
//! together they guarantee that every block `1..=blockcount` passes through
//! every activity exactly once. The write-back of the last block is waited
//! after the loop ends (see [`IterationGuards::drain_result_wait`]).

use std::ops::RangeInclusive;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activity {
    /// Wait for the device solve dispatched in the previous iteration.
    TrsmWait,
    /// Wait for the upload dispatched in the previous iteration.
    SendWait,
    /// Dispatch the device solve of the block that just landed.
    TrsmDispatch,
    /// Start reading a block from disk into the free host slab.
    DiskRead,
    /// Copy solved columns back from every device (synchronous).
    DeviceRecv,
    /// Wait for the disk read started in the previous iteration.
    DiskWait,
    /// Start uploading the freshly read block to the devices.
    DeviceSend,
    /// Per-column small solves on the host.
    SLoop,
    /// Wait for the result write started in the previous iteration.
    ResultWait,
    /// Start writing the block's results to disk.
    ResultWrite,
}

impl Activity {
    pub const ALL: [Activity; 10] = [
        Activity::TrsmWait,
        Activity::SendWait,
        Activity::TrsmDispatch,
        Activity::DiskRead,
        Activity::DeviceRecv,
        Activity::DiskWait,
        Activity::DeviceSend,
        Activity::SLoop,
        Activity::ResultWait,
        Activity::ResultWrite,
    ];

    /// Block handled in iteration `b` is `b + offset()`.
    pub fn offset(self) -> i64 {
        match self {
            Activity::DiskRead => 2,
            Activity::DiskWait | Activity::DeviceSend => 1,
            Activity::SendWait | Activity::TrsmDispatch => 0,
            Activity::TrsmWait | Activity::DeviceRecv | Activity::SLoop | Activity::ResultWrite => {
                -1
            }
            Activity::ResultWait => -2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IterationGuards {
    blockcount: usize,
}

impl IterationGuards {
    pub fn new(blockcount: usize) -> Self {
        Self { blockcount }
    }

    pub fn blockcount(&self) -> usize {
        self.blockcount
    }

    pub fn iterations(&self) -> RangeInclusive<i64> {
        -1..=self.blockcount as i64 + 1
    }

    /// Inclusive iteration range over which `a` is active. May be empty
    /// (start > end) for small block counts.
    pub fn range(&self, a: Activity) -> (i64, i64) {
        let bc = self.blockcount as i64;
        match a {
            Activity::DiskRead => (-1, bc - 2),
            Activity::DiskWait | Activity::DeviceSend => (0, bc - 1),
            Activity::SendWait | Activity::TrsmDispatch => (1, bc),
            Activity::TrsmWait | Activity::DeviceRecv | Activity::SLoop | Activity::ResultWrite => {
                (2, bc + 1)
            }
            Activity::ResultWait => (3, bc + 1),
        }
    }

    pub fn active(&self, a: Activity, b: i64) -> bool {
        let (lo, hi) = self.range(a);
        lo <= b && b <= hi
    }

    /// 1-based block handled by `a` in iteration `b`, if active.
    pub fn block(&self, a: Activity, b: i64) -> Option<usize> {
        self.active(a, b).then(|| (b + a.offset()) as usize)
    }

    /// The last block's write-back, waited once the loop has finished.
    pub fn drain_result_wait(&self) -> Option<usize> {
        (self.blockcount >= 1).then_some(self.blockcount)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn covered(g: &IterationGuards, a: Activity) -> Vec<usize> {
        let mut v: Vec<usize> = g.iterations().filter_map(|b| g.block(a, b)).collect();
        if a == Activity::ResultWait {
            v.extend(g.drain_result_wait());
        }
        v
    }

    #[test]
    fn every_block_once_per_activity() {
        for bc in [1, 2, 3, 5, 17] {
            let g = IterationGuards::new(bc);
            for a in Activity::ALL {
                assert_eq!(covered(&g, a), (1..=bc).collect::<Vec<_>>(), "{a:?} bc={bc}");
            }
        }
    }

    #[test]
    fn block_one_flows_in_order() {
        let g = IterationGuards::new(4);
        let first = |a| g.iterations().find(|&b| g.block(a, b) == Some(1)).unwrap();
        assert!(first(Activity::DiskRead) < first(Activity::DiskWait));
        assert!(first(Activity::DiskWait) <= first(Activity::DeviceSend));
        assert!(first(Activity::DeviceSend) < first(Activity::SendWait));
        assert!(first(Activity::SendWait) <= first(Activity::TrsmDispatch));
        assert!(first(Activity::TrsmDispatch) < first(Activity::TrsmWait));
        assert!(first(Activity::TrsmWait) <= first(Activity::DeviceRecv));
        assert!(first(Activity::DeviceRecv) <= first(Activity::SLoop));
        assert!(first(Activity::SLoop) <= first(Activity::ResultWrite));
        assert!(first(Activity::ResultWrite) < first(Activity::ResultWait));
    }

    #[test]
    fn single_block_collapses() {
        let g = IterationGuards::new(1);
        assert_eq!(g.iterations(), -1..=2);
        assert!(!g.iterations().any(|b| g.active(Activity::ResultWait, b)));
        assert_eq!(g.drain_result_wait(), Some(1));
    }
}
