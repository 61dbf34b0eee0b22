//! Wall-clock sources. The gateway owns wall time; the device has none.

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

pub const NS_PER_S: i64 = 1_000_000_000;

pub trait Clock: Send + Sync {
    fn now_ns(&self) -> i64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ns(&self) -> i64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos() as i64)
    }
}

/// Shared, manually advanced clock for lockstep simulation.
#[derive(Debug, Clone)]
pub struct VirtualClock {
    ns: Arc<AtomicI64>,
}

impl VirtualClock {
    /// 2020-01-01T00:00:00Z
    pub const DEFAULT_EPOCH_NS: i64 = 1_577_836_800 * NS_PER_S;

    pub fn new(start_ns: i64) -> Self {
        Self { ns: Arc::new(AtomicI64::new(start_ns)) }
    }

    pub fn advance_s(&self, secs: i64) {
        self.ns.fetch_add(secs * NS_PER_S, Ordering::SeqCst);
    }

    pub fn set_ns(&self, ns: i64) {
        self.ns.store(ns, Ordering::SeqCst);
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new(Self::DEFAULT_EPOCH_NS)
    }
}

impl Clock for VirtualClock {
    fn now_ns(&self) -> i64 {
        self.ns.load(Ordering::SeqCst)
    }
}
