//! Accounting for engine tensor buffers.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

#[derive(Debug, Default)]
pub struct AllocTracker {
    live: AtomicU64,
    peak: AtomicU64,
    total: AtomicU64,
}

impl AllocTracker {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn alloc(&self, bytes: u64) {
        let live = self.live.fetch_add(bytes, Ordering::SeqCst) + bytes;
        self.total.fetch_add(bytes, Ordering::SeqCst);
        self.peak.fetch_max(live, Ordering::SeqCst);
    }

    pub fn free(&self, bytes: u64) {
        let prev = self.live.fetch_sub(bytes, Ordering::SeqCst);
        debug_assert!(prev >= bytes, "freed more than was live");
    }

    /// Accounts `bytes` until the guard is dropped.
    pub fn track(self: &Arc<Self>, bytes: u64) -> AllocGuard {
        self.alloc(bytes);
        AllocGuard {
            tracker: Arc::clone(self),
            bytes,
        }
    }

    pub fn live(&self) -> u64 {
        self.live.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> u64 {
        self.peak.load(Ordering::SeqCst)
    }

    /// Cumulative bytes ever allocated.
    pub fn total(&self) -> u64 {
        self.total.load(Ordering::SeqCst)
    }

    /// Restarts peak tracking from the current live total.
    pub fn reset_peak(&self) {
        self.peak.store(self.live(), Ordering::SeqCst);
    }
}

#[derive(Debug)]
pub struct AllocGuard {
    tracker: Arc<AllocTracker>,
    bytes: u64,
}

impl AllocGuard {
    pub fn bytes(&self) -> u64 {
        self.bytes
    }
}

impl Drop for AllocGuard {
    fn drop(&mut self) {
        self.tracker.free(self.bytes);
    }
}
