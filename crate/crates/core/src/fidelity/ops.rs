use alloc::vec::Vec;

use super::{CollectiveKind, CostQuery, Family, Feature, Features};
use crate::config::LinkSpec;
use crate::metrics::nearest_rank;

/// Dense GEMM of `tokens x in_dim` by an `in_dim x out_dim` weight split
/// column-wise over `tp` ranks.
pub fn gemm_query(tokens: u64, in_dim: u64, out_dim: u64, tp: u32, dtype: u32, weight_scale: f64) -> CostQuery {
    let t = tokens as f64;
    let (i, o, tp_f, d) = (in_dim as f64, out_dim as f64, tp as f64, dtype as f64);
    let flops = 2.0 * t * i * o / tp_f;
    let bytes = i * o / tp_f * d * weight_scale + t * (i + o / tp_f) * d;
    let f = Features::default()
        .with(Feature::NumTokens, t)
        .with(Feature::Tp, tp_f)
        .with(Feature::Flops, flops)
        .with(Feature::Bytes, bytes);
    CostQuery::new(Family::TokenCount, f)
}

/// Min, max, p50, p95 of prefill lengths and decode context lengths.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LengthStats {
    pub prefill: [f64; 4],
    pub decode: [f64; 4],
}

impl LengthStats {
    pub fn from_lengths(prefill: &mut [u64], decode: &mut [u64]) -> Self {
        fn four(xs: &mut [u64]) -> [f64; 4] {
            if xs.is_empty() {
                return [0.0; 4];
            }
            xs.sort_unstable();
            [
                xs[0] as f64,
                xs[xs.len() - 1] as f64,
                nearest_rank(xs, 0.5) as f64,
                nearest_rank(xs, 0.95) as f64,
            ]
        }
        LengthStats {
            prefill: four(prefill),
            decode: four(decode),
        }
    }
}

/// Attention over one data-parallel group. Each entry is
/// `(new query tokens, tokens already cached)`.
#[allow(clippy::too_many_arguments)]
pub fn attention_query(
    entries: &[(u64, u64)],
    stats: &LengthStats,
    heads: u32,
    kv_heads: u32,
    head_dim: u32,
    dtype: u32,
    kv_scale: f64,
) -> CostQuery {
    let (h, kvh, hd, d) = (heads as f64, kv_heads as f64, head_dim as f64, dtype as f64);
    let mut flops = 0.0;
    let mut bytes = 0.0;
    let mut total = 0u64;
    for &(q, prev) in entries {
        let (qf, pf) = (q as f64, prev as f64);
        // causal mask: token j attends to prev + j keys
        let pairs = qf * pf + qf * (qf + 1.0) / 2.0;
        flops += 4.0 * h * hd * pairs;
        bytes += (pf + qf) * 2.0 * kvh * hd * d * kv_scale + 2.0 * qf * h * hd * d;
        total += q;
    }
    let mut f = Features::default()
        .with(Feature::BatchSize, entries.len() as f64)
        .with(Feature::TotalTokens, total as f64)
        .with(Feature::Flops, flops)
        .with(Feature::Bytes, bytes);
    let names = [
        (Feature::PrefillMin, Feature::DecodeMin),
        (Feature::PrefillMax, Feature::DecodeMax),
        (Feature::PrefillP50, Feature::DecodeP50),
        (Feature::PrefillP95, Feature::DecodeP95),
    ];
    for (i, (p, dcd)) in names.into_iter().enumerate() {
        f.set(p, stats.prefill[i]);
        f.set(dcd, stats.decode[i]);
    }
    CostQuery::new(Family::Attention, f)
}

/// Grouped expert GEMMs on one EP lane. `counts` holds the tokens routed to
/// each expert resident on the lane.
pub fn moe_lane_query(counts: &[u32], hidden: u32, expert_inter: u32, tp_ffn: u32, dtype: u32, weight_scale: f64) -> CostQuery {
    let (h, i, tp, d) = (hidden as f64, expert_inter as f64, tp_ffn as f64, dtype as f64);
    let n = counts.len().max(1) as f64;
    let sum: f64 = counts.iter().map(|&c| c as f64).sum();
    let mean = sum / n;
    let var = counts.iter().map(|&c| (c as f64 - mean) * (c as f64 - mean)).sum::<f64>() / n;
    let max = counts.iter().copied().max().unwrap_or(0) as f64;
    let active = counts.iter().filter(|&&c| c > 0).count() as f64;
    let flops = 2.0 * sum * 3.0 * h * i / tp;
    let bytes = active * 3.0 * h * i / tp * d * weight_scale + sum * 2.0 * h * d;
    let f = Features::default()
        .with(Feature::ExpertCountVar, var)
        .with(Feature::ExpertCountMax, max)
        .with(Feature::SelectionRatio, active / n)
        .with(Feature::Experts, counts.len() as f64)
        .with(Feature::Hidden, h)
        .with(Feature::ExpertIntermediate, i)
        .with(Feature::Flops, flops)
        .with(Feature::Bytes, bytes);
    CostQuery::new(Family::MoeGrouped, f)
}

/// Point-to-point transfer of `bytes` sharing `link` with `concurrency`
/// active transfers.
pub fn transfer_query(bytes: u64, link: &LinkSpec, concurrency: u32) -> CostQuery {
    let f = Features::default()
        .with(Feature::Bytes, bytes as f64)
        .with(Feature::LinkBandwidth, link.bandwidth)
        .with(Feature::LinkLatency, link.latency_ns as f64)
        .with(Feature::Concurrency, concurrency.max(1) as f64);
    CostQuery::new(Family::Transfer, f)
}

/// Collective over a group of `n` ranks, `bytes` per rank.
pub fn collective_query(kind: CollectiveKind, bytes: u64, n: u32, link: &LinkSpec) -> CostQuery {
    let f = Features::default()
        .with(Feature::CollectiveOp, kind.code() as f64)
        .with(Feature::Bytes, bytes as f64)
        .with(Feature::GroupSize, n as f64)
        .with(Feature::LinkBandwidth, link.bandwidth)
        .with(Feature::LinkLatency, link.latency_ns as f64);
    CostQuery::new(Family::Collective, f)
}

/// Convenience: stats straight from `(new, cached, is_prefill)` entries.
pub fn stats_of(entries: &[(u64, u64, bool)]) -> LengthStats {
    let mut p: Vec<u64> = entries.iter().filter(|e| e.2).map(|e| e.0).collect();
    let mut d: Vec<u64> = entries.iter().filter(|e| !e.2).map(|e| e.1 + e.0).collect();
    LengthStats::from_lengths(&mut p, &mut d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fidelity::{predict_operator, PredictorSet};

    #[test]
    fn gemm_cost_is_monotone_in_tokens() {
        let p = PredictorSet::analytical(0);
        let mut last = 0;
        for t in [0u64, 1, 8, 64, 512, 4096, 32768] {
            let q = gemm_query(t, 4096, 4096, 1, 2, 1.0).on(989e12, 3.35e12);
            let ns = predict_operator(&q, &p).unwrap();
            assert!(ns >= last);
            last = ns;
        }
    }

    #[test]
    fn attention_counts_causal_pairs() {
        let s = stats_of(&[(4, 0, true), (1, 10, false)]);
        assert_eq!(s.prefill, [4.0; 4]);
        assert_eq!(s.decode, [11.0; 4]);
        let q = attention_query(&[(4, 0)], &s, 1, 1, 1, 2, 1.0);
        // 4 query tokens attend to 1+2+3+4 keys
        assert_eq!(q.features.get(Feature::Flops).unwrap(), 40.0);
    }

    #[test]
    fn moe_features() {
        let q = moe_lane_query(&[2, 0, 4, 2], 8, 8, 1, 2, 1.0);
        assert_eq!(q.features.get(Feature::ExpertCountMax).unwrap(), 4.0);
        assert_eq!(q.features.get(Feature::ExpertCountVar).unwrap(), 2.0);
        assert_eq!(q.features.get(Feature::SelectionRatio).unwrap(), 0.75);
    }
}
