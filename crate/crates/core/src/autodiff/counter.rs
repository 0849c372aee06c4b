//! Per-thread instrumentation of attention work.
//!
//! Every attention evaluation adds `queries x keys x heads` to the counter of
//! its kind. Counters are thread local so concurrently running forwards (and
//! tests) do not observe each other.

use std::cell::Cell;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttnKind {
    SelfAttn,
    CrossAttn,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PairCounts {
    pub self_pairs: u64,
    pub cross_pairs: u64,
}

thread_local! {
    static SELF_PAIRS: Cell<u64> = const { Cell::new(0) };
    static CROSS_PAIRS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn record(kind: AttnKind, pairs: u64) {
    match kind {
        AttnKind::SelfAttn => SELF_PAIRS.with(|c| c.set(c.get() + pairs)),
        AttnKind::CrossAttn => CROSS_PAIRS.with(|c| c.set(c.get() + pairs)),
    }
}

pub fn reset() {
    SELF_PAIRS.with(|c| c.set(0));
    CROSS_PAIRS.with(|c| c.set(0));
}

pub fn snapshot() -> PairCounts {
    PairCounts {
        self_pairs: SELF_PAIRS.with(Cell::get),
        cross_pairs: CROSS_PAIRS.with(Cell::get),
    }
}

/// Runs `f` with fresh counters and returns what it recorded. The previous
/// counter values are restored afterwards.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, PairCounts) {
    let saved = snapshot();
    reset();
    let out = f();
    let counted = snapshot();
    SELF_PAIRS.with(|c| c.set(saved.self_pairs + counted.self_pairs));
    CROSS_PAIRS.with(|c| c.set(saved.cross_pairs + counted.cross_pairs));
    (out, counted)
}
