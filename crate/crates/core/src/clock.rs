//! Injectable time source. Ledger stamps and audit schedules both need a
//! clock that tests can drive, so real time is behind a trait.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

/// Nanoseconds since the Unix epoch, UTC.
pub trait Clock: Send + Sync {
    fn now_ns(&self) -> u64;
}

/// Wall clock.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ns(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .expect("system clock before Unix epoch")
            .as_nanos() as u64
    }
}

/// Manually-advanced clock for tests and simulations.
#[derive(Debug, Default, Clone)]
pub struct SimClock {
    now_ns: Arc<AtomicU64>,
}

impl SimClock {
    pub fn new(start_ns: u64) -> Self {
        Self {
            now_ns: Arc::new(AtomicU64::new(start_ns)),
        }
    }

    pub fn advance_ns(&self, delta: u64) {
        self.now_ns.fetch_add(delta, Ordering::SeqCst);
    }

    pub fn advance_secs(&self, secs: u64) {
        self.advance_ns(secs * 1_000_000_000);
    }

    pub fn set_ns(&self, now: u64) {
        self.now_ns.store(now, Ordering::SeqCst);
    }
}

impl Clock for SimClock {
    fn now_ns(&self) -> u64 {
        self.now_ns.load(Ordering::SeqCst)
    }
}

/// Wraps any clock so successive reads are strictly increasing, which keeps
/// ledger entry timestamps non-decreasing even if the wall clock steps back.
pub struct MonotoneClock<C> {
    inner: C,
    last_ns: AtomicU64,
}

impl<C: Clock> MonotoneClock<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            last_ns: AtomicU64::new(0),
        }
    }
}

impl<C: Clock> Clock for MonotoneClock<C> {
    fn now_ns(&self) -> u64 {
        let wall = self.inner.now_ns();
        let mut prev = self.last_ns.load(Ordering::SeqCst);
        loop {
            let next = wall.max(prev + 1);
            match self
                .last_ns
                .compare_exchange(prev, next, Ordering::SeqCst, Ordering::SeqCst)
            {
                Ok(_) => return next,
                Err(actual) => prev = actual,
            }
        }
    }
}

impl<C: Clock + ?Sized> Clock for Arc<C> {
    fn now_ns(&self) -> u64 {
        (**self).now_ns()
    }
}
