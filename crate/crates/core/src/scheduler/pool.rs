use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::Serialize;

/// Per-replica KV block budget with watermark-guarded admission.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KvBlockPool {
    total: u64,
    free: u64,
    allocated: BTreeMap<u64, u64>,
    watermark: f64,
}

impl KvBlockPool {
    pub fn new(total: u64, watermark: f64) -> Self {
        KvBlockPool {
            total,
            free: total,
            allocated: BTreeMap::new(),
            watermark,
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn free(&self) -> u64 {
        self.free
    }

    pub fn watermark(&self) -> f64 {
        self.watermark
    }

    /// Reserved blocks: `ceil(watermark * total)`.
    pub fn level(&self) -> u64 {
        libm::ceil(self.watermark * self.total as f64) as u64
    }

    pub fn held(&self, id: u64) -> u64 {
        self.allocated.get(&id).copied().unwrap_or(0)
    }

    /// `free - needed >= level`.
    pub fn fits(&self, needed: u64) -> bool {
        self.free >= needed && self.free - needed >= self.level()
    }

    /// Takes `n` blocks for `id`; false (and no change) if fewer are free.
    pub fn allocate(&mut self, id: u64, n: u64) -> bool {
        if n > self.free {
            return false;
        }
        if n > 0 {
            self.free -= n;
            *self.allocated.entry(id).or_insert(0) += n;
        }
        true
    }

    /// Returns every block held by `id`.
    pub fn release(&mut self, id: u64) -> u64 {
        let n = self.allocated.remove(&id).unwrap_or(0);
        self.free += n;
        n
    }

    /// `free + sum(allocated) == total`.
    pub fn conserved(&self) -> bool {
        self.free + self.allocated.values().sum::<u64>() == self.total
    }

    pub fn holders(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.allocated.iter().map(|(k, v)| (*k, *v))
    }
}

/// Preempts from the back of `running` (most recently admitted first) until
/// `free - needed >= level` or no candidate remains. Candidates failing
/// `eligible` are skipped. Preempted ids are removed from `running` and their
/// blocks released.
pub fn watermark_preempt_where(
    pool: &mut KvBlockPool,
    running: &mut Vec<u64>,
    needed: u64,
    mut eligible: impl FnMut(u64) -> bool,
) -> Vec<u64> {
    let mut out = Vec::new();
    let mut i = running.len();
    while !pool.fits(needed) && i > 0 {
        i -= 1;
        let id = running[i];
        if !eligible(id) {
            continue;
        }
        running.remove(i);
        pool.release(id);
        out.push(id);
    }
    out
}

/// [`watermark_preempt_where`] with every running request eligible.
pub fn watermark_preempt(pool: &mut KvBlockPool, running: &mut Vec<u64>, needed: u64) -> Vec<u64> {
    watermark_preempt_where(pool, running, needed, |_| true)
}
