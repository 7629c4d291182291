//! Process-wide execution flags.

use std::sync::atomic::{AtomicBool, Ordering};

static STRICT: AtomicBool = AtomicBool::new(false);
static DETERMINISTIC: AtomicBool = AtomicBool::new(true);

/// When set, every op checks its output for NaN/Inf and fails with
/// [`TensorError::NonFinite`](crate::TensorError::NonFinite).
pub fn set_strict(on: bool) {
    STRICT.store(on, Ordering::Relaxed);
}

pub fn strict() -> bool {
    STRICT.load(Ordering::Relaxed)
}

/// Deterministic mode pins every reduction to a fixed sequential order.
/// Off, large reductions may be split across the rayon pool.
pub fn set_deterministic(on: bool) {
    DETERMINISTIC.store(on, Ordering::Relaxed);
}

pub fn deterministic() -> bool {
    DETERMINISTIC.load(Ordering::Relaxed)
}

/// Elements below which kernels never fan out to the thread pool.
pub(crate) const PAR_THRESHOLD: usize = 1 << 15;
