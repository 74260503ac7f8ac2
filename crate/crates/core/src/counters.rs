//! Per-thread operation counters.
//!
//! Every matrix product reports `m·k·p` multiply-accumulates and every layer
//! normalization reports the number of elements it normalized. The counters are
//! thread-local, so work done on other threads is not attributed to the caller.

use std::cell::Cell;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
    static NORM_ELEMENTS: Cell<u64> = const { Cell::new(0) };
}

/// Snapshot of the counters over some region of work.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub macs: u64,
    pub norm_elements: u64,
}

pub(crate) fn add_macs(n: usize) {
    MACS.with(|c| c.set(c.get() + n as u64));
}

pub(crate) fn add_norm_elements(n: usize) {
    NORM_ELEMENTS.with(|c| c.set(c.get() + n as u64));
}

fn snapshot() -> OpCounts {
    OpCounts {
        macs: MACS.with(Cell::get),
        norm_elements: NORM_ELEMENTS.with(Cell::get),
    }
}

/// Runs `f` and returns its result together with the operations it performed
/// on the current thread.
pub fn count<R>(f: impl FnOnce() -> R) -> (R, OpCounts) {
    let before = snapshot();
    let out = f();
    let after = snapshot();
    (
        out,
        OpCounts {
            macs: after.macs - before.macs,
            norm_elements: after.norm_elements - before.norm_elements,
        },
    )
}
