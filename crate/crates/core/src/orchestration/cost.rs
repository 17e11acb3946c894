use alloc::vec;
use alloc::vec::Vec;

use super::moe::{ep_combine, route_tokens_moe, Combine, EpSyncBarrier};
use crate::adapters::{pad_to_bin, CaptureBinLadder, PaddingStats};
use crate::config::{GpuSpec, LinkSpec, ModelSpec, MoeRouting, ReplicaLayout, ServingSpec};
use crate::fidelity::{
    attention_query, collective_query, gemm_query, stats_of, CollectiveKind, CostQuery, Feature, Fidelity, Mode,
};
use crate::scheduler::{BatchEntry, Phase};
use crate::units::{div_ceil, Nanos};
use crate::Result;

/// Compute-bound versus total busy time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Busy {
    pub compute: Nanos,
    pub total: Nanos,
}

impl Busy {
    fn add(&mut self, o: Busy, times: u64) {
        self.compute += o.compute * times;
        self.total += o.total * times;
    }
}

/// FFN timing of one layer on one replica.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FfnTiming {
    /// EP dispatch all-to-all.
    pub dispatch: Nanos,
    /// Per-lane expert compute (one entry without EP).
    pub lanes: Vec<Nanos>,
    /// Combine all-to-all or TP all-reduce after the barrier.
    pub combine: Nanos,
}

impl FfnTiming {
    /// Barrier time relative to the FFN start.
    pub fn barrier(&self, delta_ep: Nanos) -> Result<Nanos> {
        if self.lanes.len() <= 1 {
            return Ok(self.dispatch + self.lanes.first().copied().unwrap_or(0));
        }
        let mut b = EpSyncBarrier::new(0, self.lanes.len() as u32, delta_ep);
        let mut fired = 0;
        for (i, &t) in self.lanes.iter().enumerate() {
            if let Combine::Fired(at) = ep_combine(&mut b, i as u32, self.dispatch + t)? {
                fired = at;
            }
        }
        Ok(fired)
    }

    pub fn total(&self, delta_ep: Nanos) -> Result<Nanos> {
        Ok(self.barrier(delta_ep)? + self.combine)
    }
}

/// Per-layer batch cost model of one replica layout.
#[derive(Debug, Clone)]
pub struct CostModel {
    pub model: ModelSpec,
    pub layout: ReplicaLayout,
    pub peak_flops: f64,
    pub mem_bandwidth: f64,
    pub link: LinkSpec,
    pub compute_scale: f64,
    pub weight_scale: f64,
    pub kv_scale: f64,
    pub ladder: Option<CaptureBinLadder>,
    pub routing: MoeRouting,
    pub delta_ep: Nanos,
}

/// Cost of one (micro)batch through one layer.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LayerCost {
    pub attn: Nanos,
    pub ffn: FfnTiming,
    /// Tokens fed to the FFN (padded under graph replay).
    pub ffn_tokens: u64,
    pub mode_kernel_only: bool,
    pub attn_busy: Busy,
    pub ffn_busy: Busy,
}

impl CostModel {
    pub fn new(spec: &ServingSpec, layout: ReplicaLayout, gpu: &GpuSpec) -> Result<Self> {
        let rt = &spec.runtime;
        let ladder = if rt.cuda_graph {
            Some(CaptureBinLadder::new(rt.capture_bins.clone())?)
        } else {
            None
        };
        Ok(CostModel {
            model: spec.model.clone(),
            layout,
            peak_flops: gpu.peak_flops,
            mem_bandwidth: gpu.mem_bandwidth,
            link: gpu.link,
            compute_scale: rt.quant.compute,
            weight_scale: rt.quant.weight_bytes,
            kv_scale: rt.quant.kv_bytes,
            ladder,
            routing: rt.moe_routing,
            delta_ep: rt.delta_ep_ns,
        })
    }

    fn compute(&self, fid: &Fidelity, q: CostQuery, mode: Mode, busy: &mut Busy) -> Result<Nanos> {
        let q = q.on(self.peak_flops, self.mem_bandwidth).scaled(self.compute_scale).mode(mode);
        let t = fid.predict(&q)?;
        let flops = q.features.get(Feature::Flops)?;
        let bytes = q.features.get(Feature::Bytes)?;
        busy.total += t;
        if flops / self.peak_flops >= bytes / self.mem_bandwidth {
            busy.compute += t;
        }
        Ok(t)
    }

    fn collective(&self, fid: &Fidelity, kind: CollectiveKind, bytes: u64, n: u32, busy: &mut Busy) -> Result<Nanos> {
        if n <= 1 {
            return Ok(0);
        }
        let t = fid.predict(&collective_query(kind, bytes, n, &self.link))?;
        busy.total += t;
        Ok(t)
    }

    /// Layers held by pipeline stage `s`.
    pub fn layers_in(&self, s: u32) -> u64 {
        let (l, pp) = (self.model.layers as u64, self.layout.pp as u64);
        l / pp + ((s as u64) < l % pp) as u64
    }

    /// Attention part of one layer (projections, attention, TP all-reduce)
    /// on the slowest attention-DP group, and the FFN token count.
    pub fn attention_layer(
        &self,
        fid: &Fidelity,
        entries: &[BatchEntry],
        padding: Option<&mut PaddingStats>,
    ) -> Result<(Nanos, u64, bool, Busy)> {
        let m = &self.model;
        let dp = self.layout.dp_attn.max(1) as usize;
        let tp = self.layout.tp_attn;
        let mut groups: Vec<Vec<BatchEntry>> = vec![Vec::new(); dp.min(entries.len()).max(1)];
        let ng = groups.len();
        for (i, e) in entries.iter().enumerate() {
            groups[i % ng].push(*e);
        }
        let pure_decode = !entries.is_empty() && entries.iter().all(|e| e.phase != Phase::Prefill);
        // Graph replay only when every group fits the capture ladder.
        let mut padded: Vec<u32> = Vec::with_capacity(ng);
        let mut kernel_only = false;
        if let (Some(ladder), true) = (&self.ladder, pure_decode) {
            kernel_only = groups.iter().all(|g| g.len() as u32 <= ladder.max());
            if kernel_only {
                for g in &groups {
                    padded.push(pad_to_bin(g.len() as u32, ladder).0);
                }
            }
        }
        let mode = if kernel_only { Mode::KernelOnly } else { Mode::LaunchInclusive };
        if let Some(stats) = padding {
            if kernel_only {
                for (g, &p) in groups.iter().zip(&padded) {
                    stats.record(g.len() as u32, p);
                }
            }
        }
        let heads = div_ceil(m.heads as u64, tp as u64) as u32;
        let kv_heads = div_ceil(m.kv_heads as u64, tp as u64) as u32;
        let qkv_out = (m.heads as u64 + 2 * m.kv_heads as u64) * m.head_dim as u64;
        let mut worst = 0;
        let mut worst_busy = Busy::default();
        let mut ffn_tokens = 0;
        for (gi, g) in groups.iter().enumerate() {
            let real: u64 = g.iter().map(|e| e.tokens).sum();
            let per_entry = if g.is_empty() { 0 } else { real / g.len() as u64 };
            let tokens = if kernel_only {
                real + (padded[gi] as u64 - g.len() as u64) * per_entry
            } else {
                real
            };
            ffn_tokens += tokens;
            if g.is_empty() {
                continue;
            }
            let mut busy = Busy::default();
            let d = m.dtype_bytes;
            let mut t = self.compute(
                fid,
                gemm_query(tokens, m.hidden as u64, qkv_out, tp, d, self.weight_scale),
                mode,
                &mut busy,
            )?;
            let shape: Vec<(u64, u64, bool)> =
                g.iter().map(|e| (e.tokens, e.context, e.phase == Phase::Prefill)).collect();
            let pairs: Vec<(u64, u64)> = g.iter().map(|e| (e.tokens, e.context)).collect();
            let q = attention_query(&pairs, &stats_of(&shape), heads, kv_heads, m.head_dim, d, self.kv_scale);
            t += self.compute(fid, q, mode, &mut busy)?;
            t += self.compute(
                fid,
                gemm_query(tokens, m.heads as u64 * m.head_dim as u64, m.hidden as u64, tp, d, self.weight_scale),
                mode,
                &mut busy,
            )?;
            t += self.collective(fid, CollectiveKind::AllReduce, tokens * m.hidden as u64 * d as u64, tp, &mut busy)?;
            if t > worst {
                worst = t;
                worst_busy = busy;
            }
        }
        Ok((worst, ffn_tokens, kernel_only, worst_busy))
    }

    /// FFN part of one layer for `tokens` tokens.
    pub fn ffn_layer(&self, fid: &Fidelity, tokens: u64, kernel_only: bool, seed: u64) -> Result<(FfnTiming, Busy)> {
        let m = &self.model;
        let mode = if kernel_only { Mode::KernelOnly } else { Mode::LaunchInclusive };
        let mut busy = Busy::default();
        let d = m.dtype_bytes;
        let act = tokens * m.hidden as u64 * d as u64;
        if tokens == 0 {
            return Ok((FfnTiming::default(), busy));
        }
        if !m.is_moe() {
            let tp = self.layout.tp_ffn * self.layout.ep_ffn;
            let mut t = self.compute(
                fid,
                gemm_query(tokens, m.hidden as u64, 2 * m.intermediate as u64, tp, d, self.weight_scale),
                mode,
                &mut busy,
            )?;
            t += self.compute(
                fid,
                gemm_query(tokens, m.intermediate as u64, m.hidden as u64, tp, d, self.weight_scale),
                mode,
                &mut busy,
            )?;
            let combine = self.collective(fid, CollectiveKind::AllReduce, act, tp, &mut busy)?;
            return Ok((
                FfnTiming {
                    dispatch: 0,
                    lanes: vec![t],
                    combine,
                },
                busy,
            ));
        }
        let ep = self.layout.ep_ffn.max(1);
        let tp = self.layout.tp_ffn;
        let counts = route_tokens_moe(tokens, m.experts, m.top_k, self.routing, seed)?;
        let per_lane = div_ceil(m.experts as u64, ep as u64) as usize;
        let mut lanes = Vec::with_capacity(ep as usize);
        for chunk in counts.chunks(per_lane) {
            let q = crate::fidelity::moe_lane_query(chunk, m.hidden, m.expert_intermediate, tp, d, self.weight_scale);
            lanes.push(self.compute(fid, q, mode, &mut busy)?);
        }
        let routed = act * m.top_k as u64 / ep as u64;
        let dispatch = self.collective(fid, CollectiveKind::AllToAll, routed, ep, &mut busy)?;
        let mut combine = self.collective(fid, CollectiveKind::AllToAll, routed, ep, &mut busy)?;
        combine += self.collective(fid, CollectiveKind::AllReduce, act, tp, &mut busy)?;
        Ok((
            FfnTiming {
                dispatch,
                lanes,
                combine,
            },
            busy,
        ))
    }

    /// Full layer (attention then FFN) for a microbatch.
    pub fn layer(
        &self,
        fid: &Fidelity,
        entries: &[BatchEntry],
        padding: Option<&mut PaddingStats>,
        seed: u64,
    ) -> Result<LayerCost> {
        let (attn, ffn_tokens, kernel_only, attn_busy) = self.attention_layer(fid, entries, padding)?;
        let (ffn, ffn_busy) = self.ffn_layer(fid, ffn_tokens, kernel_only, seed)?;
        Ok(LayerCost {
            attn,
            ffn,
            ffn_tokens,
            mode_kernel_only: kernel_only,
            attn_busy,
            ffn_busy,
        })
    }

    /// Output projection over the rows that produce logits.
    pub fn lm_head(&self, fid: &Fidelity, entries: &[BatchEntry], kernel_only: bool, busy: &mut Busy) -> Result<Nanos> {
        let rows: u64 = entries
            .iter()
            .map(|e| if e.phase == Phase::Prefill { 1 } else { e.tokens })
            .sum();
        if rows == 0 {
            return Ok(0);
        }
        let mode = if kernel_only { Mode::KernelOnly } else { Mode::LaunchInclusive };
        let m = &self.model;
        self.compute(
            fid,
            gemm_query(rows, m.hidden as u64, m.vocab as u64, self.layout.tp_attn, m.dtype_bytes, self.weight_scale),
            mode,
            busy,
        )
    }

    /// Stage-to-stage activation send.
    pub fn p2p(&self, fid: &Fidelity, tokens: u64, busy: &mut Busy) -> Result<Nanos> {
        let bytes = tokens * self.model.hidden as u64 * self.model.dtype_bytes as u64;
        let t = fid.predict(&crate::fidelity::transfer_query(bytes, &self.link, 1))?;
        busy.total += t;
        Ok(t)
    }

    /// Per-microbatch, per-stage durations of a unified attention+FFN step.
    /// Microbatches: `min(pp, entries)`, entries dealt round-robin.
    pub fn step_stage_times(
        &self,
        fid: &Fidelity,
        entries: &[BatchEntry],
        mut padding: Option<&mut PaddingStats>,
        seed: u64,
        busy: &mut Busy,
    ) -> Result<Vec<Vec<Nanos>>> {
        let pp = self.layout.pp.max(1);
        let m = (pp as usize).min(entries.len()).max(1);
        let mut mbs: Vec<Vec<BatchEntry>> = vec![Vec::new(); m];
        for (i, e) in entries.iter().enumerate() {
            mbs[i % m].push(*e);
        }
        let mut out = Vec::with_capacity(m);
        for (j, mb) in mbs.iter().enumerate() {
            let lc = self.layer(fid, mb, padding.as_deref_mut(), seed.wrapping_add(j as u64))?;
            let per_layer = lc.attn + lc.ffn.total(self.delta_ep)?;
            let mut stages = Vec::with_capacity(pp as usize);
            for s in 0..pp {
                let n = self.layers_in(s);
                busy.add(lc.attn_busy, n);
                busy.add(lc.ffn_busy, n);
                let mut t = per_layer * n;
                if s + 1 == pp {
                    t += self.lm_head(fid, mb, lc.mode_kernel_only, busy)?;
                } else {
                    t += self.p2p(fid, mb.iter().map(|e| e.tokens).sum(), busy)?;
                }
                stages.push(t);
            }
            out.push(stages);
        }
        Ok(out)
    }
}

/// Runs microbatches through pipeline stages: a microbatch enters stage `s`
/// once it left stage `s - 1` and the stage is free. Returns the finish time
/// of the last microbatch at the last stage and updates the stage clocks.
pub fn pipeline_schedule(start: Nanos, stage_free: &mut [Nanos], stage_times: &[Vec<Nanos>]) -> Nanos {
    let mut end = start;
    for mb in stage_times {
        let mut t = start;
        for (s, &d) in mb.iter().enumerate() {
            let begin = t.max(stage_free[s]);
            t = begin + d;
            stage_free[s] = t;
        }
        end = end.max(t);
    }
    end
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::ms;
    use alloc::vec;

    #[test]
    fn pipeline_fill_and_drain() {
        let mut free = vec![0; 2];
        let end = pipeline_schedule(0, &mut free, &[vec![ms(1), ms(1)], vec![ms(1), ms(1)]]);
        assert_eq!(end, ms(3));
        assert_eq!(free, [ms(2), ms(3)]);
        let mut free = vec![0; 1];
        assert_eq!(pipeline_schedule(ms(5), &mut free, &[vec![ms(3)]]), ms(8));
    }

    #[test]
    fn barrier_on_ffn_timing() {
        let t = FfnTiming {
            dispatch: ms(1),
            lanes: vec![ms(9), ms(11), ms(14)],
            combine: ms(2),
        };
        assert_eq!(t.barrier(ms(1)).unwrap(), ms(16));
        assert_eq!(t.total(ms(1)).unwrap(), ms(18));
        let single = FfnTiming {
            dispatch: 0,
            lanes: vec![ms(2)],
            combine: 0,
        };
        assert_eq!(single.total(ms(7)).unwrap(), ms(2));
    }
}
