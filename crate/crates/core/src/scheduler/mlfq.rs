//! Skip-join multi-level feedback queue.
//!
//! A slice joins the first level whose token quantum covers its current
//! round's prompt, and drops one level each time its attained service in the
//! round exceeds the level's quantum.

use alloc::vec::Vec;

use crate::units::Nanos;

/// Entry level for a round of `ell` new prompt tokens.
pub fn mlfq_entry_level(ell: u64, quanta: &[u64]) -> usize {
    quanta.iter().position(|&q| ell <= q).unwrap_or(quanta.len() - 1)
}

/// Level after attaining `attained` tokens at `level`.
pub fn mlfq_demote(level: usize, attained: u64, quanta: &[u64]) -> usize {
    if attained > quanta[level] && level + 1 < quanta.len() {
        level + 1
    } else {
        level
    }
}

/// Orders `(id, level, enqueued)` by level, then FIFO within a level.
pub fn mlfq_order(slices: &mut [(u64, usize, Nanos)]) -> Vec<u64> {
    slices.sort_unstable_by_key(|&(id, level, at)| (level, at, id));
    slices.iter().map(|s| s.0).collect()
}
