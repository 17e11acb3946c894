//! Runtime adapters: CUDA-graph capture bins, MTP speculative decoding,
//! prefix caching, chunked prefill.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fidelity::Mode;
use crate::workload::Request;
use crate::{Error, Result};

/// Captured decode batch sizes, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureBinLadder {
    bins: Vec<u32>,
}

impl Default for CaptureBinLadder {
    fn default() -> Self {
        CaptureBinLadder {
            bins: alloc::vec![1, 2, 4, 8, 16, 32, 64],
        }
    }
}

impl CaptureBinLadder {
    pub fn new(bins: Vec<u32>) -> Result<Self> {
        if bins.is_empty() || bins[0] == 0 || bins.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "capture bins must be positive and strictly increasing".into(),
            ));
        }
        Ok(CaptureBinLadder { bins })
    }

    pub fn bins(&self) -> &[u32] {
        &self.bins
    }

    pub fn max(&self) -> u32 {
        *self.bins.last().expect("non-empty")
    }
}

/// Smallest captured bin holding `batch` (graph replay, kernel-only), or the
/// true size run eagerly (launch-inclusive) above the ladder.
pub fn pad_to_bin(batch: u32, ladder: &CaptureBinLadder) -> (u32, Mode) {
    match ladder.bins.iter().find(|&&b| b >= batch) {
        Some(&b) => (b, Mode::KernelOnly),
        None => (batch, Mode::LaunchInclusive),
    }
}

/// Padded versus useful decode slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PaddingStats {
    pub padded: u64,
    pub useful: u64,
    pub steps: u64,
}

impl PaddingStats {
    pub fn record(&mut self, useful: u32, padded: u32) {
        self.useful += useful as u64;
        self.padded += padded as u64;
        self.steps += 1;
    }

    /// `(padded - useful) / useful`.
    pub fn inflation(&self) -> f64 {
        if self.useful == 0 {
            return 0.0;
        }
        (self.padded - self.useful) as f64 / self.useful as f64
    }
}

/// Speculative decoding parameters: verify length `k`, per-token acceptance `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtpState {
    pub k: u32,
    pub p: f64,
}

impl MtpState {
    /// `1 + p + p^2 + ... + p^k`.
    pub fn expected_commits(&self) -> f64 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for _ in 0..self.k {
            term *= self.p;
            sum += term;
        }
        sum
    }
}

/// Accepted draft prefix length: each token is accepted with probability `p`,
/// stopping at the first rejection.
pub fn sample_accepted<R: Rng + ?Sized>(k: u32, p: f64, rng: &mut R) -> u32 {
    let mut a = 0;
    while a < k && rng.random::<f64>() < p {
        a += 1;
    }
    a
}

/// One draft/verify/commit cycle; returns the tokens committed.
pub fn mtp_step(state: &MtpState, req: &mut Request) -> u64 {
    let a = sample_accepted(state.k, state.p, &mut req.rng) as u64;
    let c = req.commit(a + 1);
    let m = &mut req.mtp;
    m.planned += state.k as u64;
    m.verified += state.k as u64;
    // Tokens past the round's decode budget are dropped with the cycle.
    m.accepted += c.saturating_sub(1);
    m.committed += c;
    m.cycles += 1;
    c
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Parent hash preceding block 0 of a content stream.
pub fn chain_root(content: u64) -> u64 {
    mix64(content)
}

/// Hash of block `index` given its parent's hash.
pub fn chain_next(parent: u64, content: u64, index: u64) -> u64 {
    mix64(parent.rotate_left(29) ^ mix64(content.rotate_left(7) ^ index.wrapping_mul(0x632B_E59B_D9B4_E019)))
}

/// Parent-chained hashes of the first `blocks` full blocks of a content stream.
pub fn block_hashes(content: u64, blocks: u64) -> Vec<u64> {
    let mut out = Vec::with_capacity(blocks as usize);
    let mut parent = chain_root(content);
    for i in 0..blocks {
        parent = chain_next(parent, content, i);
        out.push(parent);
    }
    out
}

/// LRU set of cached full-block hashes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PrefixCacheIndex {
    capacity: usize,
    stamp_of: BTreeMap<u64, u64>,
    by_stamp: BTreeMap<u64, u64>,
    clock: u64,
    pub lookups: u64,
    pub hit_blocks: u64,
    pub queried_blocks: u64,
}

impl PrefixCacheIndex {
    pub fn new(capacity: usize) -> Self {
        PrefixCacheIndex {
            capacity,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.stamp_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamp_of.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn contains(&self, h: u64) -> bool {
        self.stamp_of.contains_key(&h)
    }

    fn touch(&mut self, h: u64) {
        self.clock += 1;
        if let Some(old) = self.stamp_of.insert(h, self.clock) {
            self.by_stamp.remove(&old);
        }
        self.by_stamp.insert(self.clock, h);
    }

    /// Hit ratio over all looked-up blocks.
    pub fn hit_ratio(&self) -> f64 {
        if self.queried_blocks == 0 {
            return 0.0;
        }
        self.hit_blocks as f64 / self.queried_blocks as f64
    }
}

/// Length of the longest cached prefix of `hashes`; hits are refreshed.
pub fn prefix_lookup(hashes: &[u64], index: &mut PrefixCacheIndex) -> u64 {
    let hits = hashes.iter().take_while(|h| index.contains(**h)).count();
    for &h in &hashes[..hits] {
        index.touch(h);
    }
    index.lookups += 1;
    index.hit_blocks += hits as u64;
    index.queried_blocks += hashes.len() as u64;
    hits as u64
}

/// Inserts full-block hashes, evicting least-recently-used entries.
pub fn prefix_insert(hashes: &[u64], index: &mut PrefixCacheIndex) {
    if index.capacity == 0 {
        return;
    }
    for &h in hashes {
        index.touch(h);
        while index.stamp_of.len() > index.capacity {
            let (_, victim) = index.by_stamp.pop_first().expect("non-empty");
            index.stamp_of.remove(&victim);
        }
    }
}

/// Next prefill chunk: `min(remaining, budget - scheduled)`, floored at 0.
pub fn chunk_next(remaining: u64, budget: u64, scheduled: u64) -> u64 {
    remaining.min(budget.saturating_sub(scheduled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::RoundPlan;
    use alloc::vec;

    #[test]
    fn padding_examples() {
        let l = CaptureBinLadder::default();
        assert_eq!(pad_to_bin(33, &l), (64, Mode::KernelOnly));
        assert_eq!(pad_to_bin(64, &l), (64, Mode::KernelOnly));
        assert_eq!(pad_to_bin(65, &l), (65, Mode::LaunchInclusive));
        assert_eq!(pad_to_bin(1, &l), (1, Mode::KernelOnly));
        for b in 1..200 {
            let (p, _) = pad_to_bin(b, &l);
            assert_eq!(pad_to_bin(p, &l).0, p);
        }
        assert!(CaptureBinLadder::new(vec![2, 2]).is_err());
        assert!(CaptureBinLadder::new(vec![0, 2]).is_err());
    }

    #[test]
    fn inflation_of_a_single_step() {
        let mut s = PaddingStats::default();
        s.record(33, 64);
        assert!((s.inflation() - 31.0 / 33.0).abs() < 1e-12);
    }

    fn req(decode: u64) -> Request {
        let mut r = Request::new(1, 0, vec![RoundPlan::new(8, decode)], 0, 9);
        r.add_prefill(8);
        r.commit(1);
        r
    }

    #[test]
    fn mtp_extremes() {
        let mut r = req(1000);
        for _ in 0..20 {
            assert_eq!(mtp_step(&MtpState { k: 3, p: 0.0 }, &mut r), 1);
        }
        let mut r = req(1000);
        assert_eq!(mtp_step(&MtpState { k: 4, p: 1.0 }, &mut r), 5);
        let mut r = req(3);
        assert_eq!(mtp_step(&MtpState { k: 4, p: 1.0 }, &mut r), 2);
        assert_eq!(r.mtp.committed, r.mtp.accepted + r.mtp.cycles);
        assert!(r.mtp.accepted <= r.mtp.verified && r.mtp.verified <= r.mtp.planned);
    }

    #[test]
    fn mtp_closed_form() {
        assert!((MtpState { k: 2, p: 0.5 }.expected_commits() - 1.75).abs() < 1e-12);
    }

    #[test]
    fn prefix_cache_basics() {
        let mut idx = PrefixCacheIndex::new(4);
        let h = block_hashes(7, 6);
        assert_eq!(prefix_lookup(&h, &mut idx), 0);
        prefix_insert(&h[..2], &mut idx);
        assert_eq!(prefix_lookup(&h, &mut idx), 2);
        prefix_insert(&h[..2], &mut idx);
        assert_eq!(idx.len(), 2);
        prefix_insert(&h, &mut idx);
        assert_eq!(idx.len(), 4);
        assert!(!idx.contains(h[0]) && !idx.contains(h[1]));
        assert_ne!(block_hashes(8, 1), block_hashes(7, 1));
        assert_eq!(block_hashes(7, 3)[..], h[..3]);
    }

    #[test]
    fn lru_keeps_recently_hit_blocks() {
        let mut idx = PrefixCacheIndex::new(3);
        let a = block_hashes(1, 2);
        let b = block_hashes(2, 2);
        prefix_insert(&a, &mut idx);
        prefix_insert(&b[..1], &mut idx);
        prefix_lookup(&a[..1], &mut idx);
        prefix_insert(&b[1..], &mut idx);
        assert!(idx.contains(a[0]) && !idx.contains(a[1]));
    }

    #[test]
    fn chunk_examples() {
        assert_eq!(chunk_next(32768, 8192, 0), 8192);
        assert_eq!(chunk_next(100, 8192, 0), 100);
        assert_eq!(chunk_next(100, 8192, 8192), 0);
        assert_eq!(chunk_next(100, 8192, 9000), 0);
    }
}
