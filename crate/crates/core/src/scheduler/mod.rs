//! Per-replica admission, batch composition, and preemption.
//!
//! All four policies share one batch builder. A policy only decides the
//! order in which running and waiting requests are offered to the builder
//! (and, for the prefill-first policy, whether a batch may mix phases). The
//! builder enforces token and size budgets, chunked prefill, watermark
//! admission, and preemption of the most recently admitted request.

mod h2q;
mod mlfq;
mod pool;

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;
use alloc::format;
use alloc::string::String;

use serde::Serialize;

use crate::adapters::{
    block_hashes, chain_next, chain_root, chunk_next, mtp_step, prefix_insert, prefix_lookup, MtpState,
    PrefixCacheIndex,
};
use crate::config::{H2qParams, RuntimeSpec, SchedulerKind};
use crate::units::{div_ceil, Nanos};
use crate::workload::Request;

pub use h2q::{h2q_classify, h2q_order, H2qOrder, H2qSessionState, H2qSlice, H2qState, Queue, SliceOutcome};
pub use mlfq::{mlfq_demote, mlfq_entry_level, mlfq_order};
pub use pool::{watermark_preempt, watermark_preempt_where, KvBlockPool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    /// Prompt chunk (or recompute after preemption).
    Prefill,
    Decode,
    /// Speculative verify pass over `k + 1` tokens.
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BatchEntry {
    pub id: u64,
    pub phase: Phase,
    pub tokens: u64,
    /// Tokens already in the KV cache before this step.
    pub context: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct BatchPlan {
    pub entries: Vec<BatchEntry>,
    pub total_tokens: u64,
}

impl BatchPlan {
    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_pure_decode(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.phase != Phase::Prefill)
    }

    pub fn decode_entries(&self) -> usize {
        self.entries.iter().filter(|e| e.phase != Phase::Prefill).count()
    }

    pub fn prefill_tokens(&self) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.phase == Phase::Prefill)
            .map(|e| e.tokens)
            .sum()
    }

    fn push(&mut self, e: BatchEntry) {
        self.total_tokens += e.tokens;
        self.entries.push(e);
    }
}

/// Budgets and features of one replica's scheduler.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchedConfig {
    pub kind: SchedulerKind,
    pub max_batch_size: u64,
    pub max_batch_tokens: u64,
    pub max_prefill_tokens: u64,
    pub chunked_prefill: bool,
    pub chunk_budget: Option<u64>,
    pub block_tokens: u64,
    pub spec: Option<MtpState>,
    pub prefix_cache: bool,
    pub h2q: H2qParams,
    pub mlfq_quanta: Vec<u64>,
}

impl SchedConfig {
    /// Runtime budgets scaled to a replica with `dp` attention data-parallel
    /// groups.
    pub fn from_runtime(rt: &RuntimeSpec, dp: u32) -> Self {
        let dp = dp as u64;
        SchedConfig {
            kind: rt.scheduler,
            max_batch_size: rt.max_batch_size as u64 * dp,
            max_batch_tokens: rt.max_batch_tokens as u64 * dp,
            max_prefill_tokens: rt.max_prefill_tokens.unwrap_or(rt.max_batch_tokens) as u64 * dp,
            chunked_prefill: rt.chunked_prefill,
            chunk_budget: rt.chunk_budget.map(|c| c as u64),
            block_tokens: rt.block_tokens as u64,
            spec: rt.spec_decode.map(|s| MtpState {
                k: s.verify_tokens,
                p: s.acceptance,
            }),
            prefix_cache: rt.prefix_cache,
            h2q: rt.h2q,
            mlfq_quanta: rt.mlfq_quanta.clone(),
        }
    }
}

/// A request resident on a replica.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub req: Request,
    /// Tokens whose KV is materialized on this replica.
    pub kv: u64,
    /// Admission sequence number while running.
    pub admitted: Option<u64>,
    /// Arrival of the current slice (round entry or transfer end).
    pub enqueued: Nanos,
    pub level: usize,
    pub attained: u64,
    pub queue: Queue,
    chain_blocks: u64,
    chain_tip: u64,
    hashes: Option<Vec<u64>>,
}

impl Slot {
    /// Tokens that must be in KV before the next decode step.
    pub fn kv_target(&self) -> u64 {
        self.req.prompt_len() + self.req.committed.saturating_sub(1)
    }

    pub fn needs_prefill(&self) -> bool {
        self.kv < self.kv_target()
    }

    pub fn is_running(&self) -> bool {
        self.admitted.is_some()
    }
}

/// What a finished batch changed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Completion {
    /// Requests whose current-round prefill finished in this batch.
    pub prefill_done: Vec<u64>,
    /// Requests whose current round finished (prefill and all decode).
    pub round_done: Vec<u64>,
    /// Decode tokens committed per request.
    pub committed: Vec<(u64, u64)>,
}

/// Per-replica scheduler state.
#[derive(Debug, Clone)]
pub struct ReplicaScheduler {
    pub cfg: SchedConfig,
    pub pool: KvBlockPool,
    slots: BTreeMap<u64, Slot>,
    detached: BTreeMap<u64, Request>,
    waiting: VecDeque<u64>,
    running: Vec<u64>,
    admit_seq: u64,
    pub cache: Option<PrefixCacheIndex>,
    pub h2q: H2qState,
    pub preemptions: u64,
    last_release: Option<u64>,
    last_queues: BTreeMap<u64, Queue>,
    /// Ids admitted since the caller last drained this list.
    pub admitted_log: Vec<u64>,
    /// Ids preempted since the caller last drained this list.
    pub preempted_log: Vec<u64>,
}

impl ReplicaScheduler {
    pub fn new(cfg: SchedConfig, blocks: u64, watermark: f64) -> Self {
        let cache = cfg.prefix_cache.then(|| PrefixCacheIndex::new(blocks as usize));
        ReplicaScheduler {
            cfg,
            pool: KvBlockPool::new(blocks, watermark),
            slots: BTreeMap::new(),
            detached: BTreeMap::new(),
            waiting: VecDeque::new(),
            running: Vec::new(),
            admit_seq: 0,
            cache,
            h2q: H2qState::default(),
            preemptions: 0,
            last_release: None,
            last_queues: BTreeMap::new(),
            admitted_log: Vec::new(),
            preempted_log: Vec::new(),
        }
    }

    pub fn blocks_for(&self, tokens: u64) -> u64 {
        div_ceil(tokens, self.cfg.block_tokens)
    }

    pub fn waiting_len(&self) -> usize {
        self.waiting.len()
    }

    pub fn running_len(&self) -> usize {
        self.running.len()
    }

    /// Requests resident here (queued, running, or held for a transfer).
    pub fn resident(&self) -> usize {
        self.slots.len() + self.detached.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot(&self, id: u64) -> Option<&Slot> {
        self.slots.get(&id)
    }

    pub fn slots(&self) -> impl Iterator<Item = &Slot> {
        self.slots.values()
    }

    pub fn waiting_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.waiting.iter().copied()
    }

    pub fn running_ids(&self) -> &[u64] {
        &self.running
    }

    /// Whether a request could ever fit on this replica.
    pub fn admissible(&self, req: &Request) -> bool {
        let spec = self.cfg.spec.map_or(0, |s| s.k as u64);
        let need = self.blocks_for(req.prompt_len() + req.current().decode + spec);
        need + self.pool.level() <= self.pool.total()
    }

    /// Queues a request. `kv` is the KV already present (transferred). Returns
    /// the request back if it can never fit.
    pub fn enqueue(&mut self, req: Request, now: Nanos, kv: u64) -> core::result::Result<(), Request> {
        if !self.admissible(&req) {
            return Err(req);
        }
        let ell = req.current().prompt;
        let level = mlfq_entry_level(ell, &self.cfg.mlfq_quanta);
        let queue = self.h2q.on_arrival(req.session, req.prompt_len(), &self.cfg.h2q);
        let id = req.id;
        let chain_tip = chain_root(req.content);
        self.slots.insert(
            id,
            Slot {
                req,
                kv,
                admitted: None,
                enqueued: now,
                level,
                attained: 0,
                queue,
                chain_blocks: 0,
                chain_tip,
                hashes: None,
            },
        );
        self.waiting.push_back(id);
        Ok(())
    }

    /// Removes a request whose round finished; releases its blocks.
    pub fn finish(&mut self, id: u64) -> Option<Request> {
        let slot = self.slots.remove(&id)?;
        self.running.retain(|&r| r != id);
        self.waiting.retain(|&r| r != id);
        self.pool.release(id);
        Some(slot.req)
    }

    /// Removes a request from scheduling but keeps its blocks (outbound KV
    /// transfer in progress). Returns a copy of the request.
    pub fn detach(&mut self, id: u64) -> Option<Request> {
        let slot = self.slots.remove(&id)?;
        self.running.retain(|&r| r != id);
        self.waiting.retain(|&r| r != id);
        self.detached.insert(id, slot.req.clone());
        Some(slot.req)
    }

    /// Frees the blocks of a detached request.
    pub fn release(&mut self, id: u64) -> u64 {
        self.detached.remove(&id);
        self.pool.release(id)
    }

    /// Checks block and token accounting: the pool conserves blocks, only
    /// resident or detached requests hold blocks, running requests hold
    /// blocks for their materialized KV, and no request commits past its
    /// round plan.
    pub fn audit(&self) -> core::result::Result<(), String> {
        if !self.pool.conserved() || self.pool.free() > self.pool.total() {
            return Err(format!("pool not conserved: free {} of {}", self.pool.free(), self.pool.total()));
        }
        for (id, held) in self.pool.holders() {
            if held > 0 && !self.slots.contains_key(&id) && !self.detached.contains_key(&id) {
                return Err(format!("request {id} holds {held} blocks but is not resident"));
            }
        }
        for (id, slot) in &self.slots {
            let held = self.pool.held(*id);
            if slot.is_running() && held < self.blocks_for(slot.kv) {
                return Err(format!("request {id} holds {held} blocks for {} KV tokens", slot.kv));
            }
            if !slot.is_running() && held > 0 {
                return Err(format!("waiting request {id} holds {held} blocks"));
            }
            let round = slot.req.current();
            if slot.req.committed > round.decode {
                return Err(format!("request {id} committed {} of {}", slot.req.committed, round.decode));
            }
            if slot.is_running() && slot.kv > slot.req.prompt_len() + slot.req.committed {
                return Err(format!("request {id} has {} KV tokens past its context", slot.kv));
            }
        }
        Ok(())
    }

    /// Every request resident here with its materialized KV tokens,
    /// including ones held for a transfer. Blocks are released.
    pub fn drain(&mut self) -> Vec<(Request, u64)> {
        let mut out: Vec<(Request, u64)> = core::mem::take(&mut self.slots)
            .into_values()
            .map(|s| (s.req, s.kv))
            .collect();
        out.extend(core::mem::take(&mut self.detached).into_values().map(|r| (r, 0)));
        for (r, _) in &out {
            self.pool.release(r.id);
        }
        self.waiting.clear();
        self.running.clear();
        out
    }

    fn step_for(&self, slot: &Slot, kv: u64, budget: u64, scheduled: u64) -> Option<(Phase, u64)> {
        let target = slot.kv_target();
        if kv < target {
            let remaining = target - kv;
            let mut c = chunk_next(remaining, budget, scheduled);
            if let Some(cb) = self.cfg.chunk_budget {
                c = c.min(cb);
            }
            if !self.cfg.chunked_prefill && c < remaining {
                // Unchunked prompts run whole, alone if they exceed the budget.
                if scheduled == 0 && remaining > budget {
                    c = remaining;
                } else {
                    return None;
                }
            }
            (c > 0).then_some((Phase::Prefill, c))
        } else if slot.req.remaining_decode() == 0 {
            None
        } else {
            let (phase, t) = match self.cfg.spec {
                Some(s) => (Phase::Verify, s.k as u64 + 1),
                None => (Phase::Decode, 1),
            };
            (scheduled + t <= budget).then_some((phase, t))
        }
    }

    fn cached_tokens(&mut self, id: u64) -> u64 {
        let bt = self.cfg.block_tokens;
        let Some(cache) = self.cache.as_ref() else {
            return 0;
        };
        let slot = self.slots.get_mut(&id).expect("slot");
        if slot.kv > 0 {
            return 0;
        }
        let target = slot.kv_target();
        let hashes = slot
            .hashes
            .get_or_insert_with(|| block_hashes(slot.req.content, target / bt));
        let hits = hashes.iter().take_while(|h| cache.contains(**h)).count() as u64;
        // The prompt's last token is always computed to emit the first output.
        let cap = if slot.req.committed == 0 {
            slot.req.prompt_len().saturating_sub(1)
        } else {
            target
        };
        (hits * bt).min(cap)
    }

    fn preempt(&mut self, ids: &[u64]) {
        for &id in ids.iter().rev() {
            if let Some(s) = self.slots.get_mut(&id) {
                s.admitted = None;
                s.kv = 0;
                s.hashes = None;
            }
            self.waiting.push_front(id);
            self.preempted_log.push(id);
        }
        self.preemptions += ids.len() as u64;
    }

    /// Blocks a slot holds once its current round has fully decoded.
    fn final_blocks(&self, slot: &Slot) -> u64 {
        let k = self.cfg.spec.map_or(0, |s| s.k as u64);
        self.blocks_for(slot.req.prompt_len() + slot.req.current().decode.saturating_sub(1) + k)
    }

    /// Remaining growth of running requests, in blocks.
    fn running_growth(&self) -> u64 {
        self.running
            .iter()
            .map(|id| {
                let s = &self.slots[id];
                self.final_blocks(s).saturating_sub(self.pool.held(*id))
            })
            .sum()
    }

    /// Shared batch builder over an ordered candidate list.
    fn build(&mut self, order: &[u64], budget: u64, prefill_only: bool, decode_only: bool) -> BatchPlan {
        let mut plan = BatchPlan::default();
        // The prefill-first policy admits only what fits alongside the full
        // remaining growth of the running set.
        let reserving = self.cfg.kind == SchedulerKind::Sglang;
        let mut reserved = if reserving { self.running_growth() } else { 0 };
        let cap = self.cfg.max_batch_size;
        let mut stop_waiting = false;
        let mut scheduled: BTreeSet<u64> = BTreeSet::new();
        let mut bumped: BTreeSet<u64> = BTreeSet::new();
        for &id in order {
            if plan.size() as u64 >= cap || plan.total_tokens >= budget {
                break;
            }
            if bumped.contains(&id) {
                continue;
            }
            let Some(slot) = self.slots.get(&id) else { continue };
            let running = slot.is_running();
            if !running && (stop_waiting || self.running.len() as u64 >= cap) {
                continue;
            }
            let wants_prefill = slot.needs_prefill();
            if (prefill_only && !wants_prefill) || (decode_only && wants_prefill) {
                continue;
            }
            let cached = if running { 0 } else { self.cached_tokens(id) };
            let slot = &self.slots[&id];
            let kv = slot.kv.max(cached);
            let Some((phase, tokens)) = self.step_for(slot, kv, budget, plan.total_tokens) else {
                if !running && slot.needs_prefill() && !self.cfg.chunked_prefill {
                    stop_waiting = true;
                }
                continue;
            };
            let needed = self.blocks_for(kv + tokens).saturating_sub(self.pool.held(id));
            if running {
                if !self.pool.fits(needed) {
                    let mut run = core::mem::take(&mut self.running);
                    let pos = run.iter().position(|&r| r == id).unwrap_or(0);
                    let younger: BTreeSet<u64> = run[pos + 1..].iter().copied().collect();
                    let victims = watermark_preempt_where(&mut self.pool, &mut run, needed, |v| {
                        younger.contains(&v) && !scheduled.contains(&v)
                    });
                    self.running = run;
                    bumped.extend(victims.iter().copied());
                    self.preempt(&victims);
                    if !self.pool.fits(needed) {
                        self.running.retain(|&r| r != id);
                        self.pool.release(id);
                        bumped.insert(id);
                        self.preempt(&[id]);
                        continue;
                    }
                }
                self.pool.allocate(id, needed);
                reserved = reserved.saturating_sub(needed);
            } else {
                let growth = if reserving {
                    self.final_blocks(slot).saturating_sub(self.pool.held(id))
                } else {
                    needed
                };
                if !self.pool.fits(growth.max(needed) + reserved) {
                    stop_waiting = true;
                    continue;
                }
                if reserving {
                    reserved += growth.saturating_sub(needed);
                }
                self.pool.allocate(id, needed);
                self.admit_seq += 1;
                self.waiting.retain(|&w| w != id);
                self.running.push(id);
                self.admitted_log.push(id);
                let seq = self.admit_seq;
                let slot = self.slots.get_mut(&id).expect("slot");
                slot.admitted = Some(seq);
                if let Some(hashes) = slot.hashes.take() {
                    if let Some(cache) = self.cache.as_mut() {
                        prefix_lookup(&hashes, cache);
                    }
                }
                slot.kv = kv;
            }
            plan.push(BatchEntry {
                id,
                phase,
                tokens,
                context: kv,
            });
            scheduled.insert(id);
        }
        plan
    }

    fn all_ids(&self) -> Vec<u64> {
        let mut v = self.running.clone();
        v.extend(self.waiting.iter().copied());
        v
    }

    /// Running first (admission order), then waiting FIFO.
    pub fn tick_vllm_v1(&mut self) -> BatchPlan {
        let order = self.all_ids();
        self.build(&order, self.cfg.max_batch_tokens, false, false)
    }

    /// A prefill-only batch whenever prompt work can be admitted, else the
    /// running-first decode batch.
    pub fn tick_sglang(&mut self) -> BatchPlan {
        let order = self.all_ids();
        let has_prefill = order.iter().any(|id| self.slots[id].needs_prefill());
        if has_prefill {
            let plan = self.build(&order, self.cfg.max_prefill_tokens, true, false);
            if !plan.is_empty() {
                return plan;
            }
        }
        self.build(&order, self.cfg.max_batch_tokens, false, true)
    }

    /// Running first (admission order), then waiting slices in skip-join
    /// MLFQ order.
    pub fn tick_mlfq_skipjoin(&mut self) -> BatchPlan {
        let mut keyed: Vec<_> = self
            .waiting
            .iter()
            .map(|id| {
                let s = &self.slots[id];
                (*id, s.level, s.enqueued)
            })
            .collect();
        let mut order = self.running.clone();
        order.extend(mlfq_order(&mut keyed));
        self.build(&order, self.cfg.max_batch_tokens, false, false)
    }

    pub fn h2q_slices(&self) -> Vec<H2qSlice> {
        self.slots
            .values()
            .map(|s| {
                let st = self.h2q.session(s.req.session);
                H2qSlice {
                    id: s.req.id,
                    session: s.req.session,
                    waiting: !s.is_running(),
                    decode: !s.needs_prefill(),
                    arrival: s.enqueued,
                    ell: st.ell,
                    queue: st.queue.unwrap_or(s.queue),
                    carry: st.carry,
                }
            })
            .collect()
    }

    /// H2Q-BR order over running and waiting slices.
    pub fn tick_h2q(&mut self) -> BatchPlan {
        let slices = self.h2q_slices();
        let o = h2q_order(&slices, self.h2q.eta, &self.cfg.h2q);
        self.last_release = o.release;
        self.last_queues = slices.iter().map(|s| (s.id, s.queue)).collect();
        self.build(&o.order, self.cfg.max_batch_tokens, false, false)
    }

    pub fn tick(&mut self) -> BatchPlan {
        match self.cfg.kind {
            SchedulerKind::VllmV1 => self.tick_vllm_v1(),
            SchedulerKind::Sglang => self.tick_sglang(),
            SchedulerKind::Mlfq => self.tick_mlfq_skipjoin(),
            SchedulerKind::H2qBr => self.tick_h2q(),
        }
    }

    /// Applies an executed batch to request progress, caches, and policy
    /// state.
    pub fn complete(&mut self, plan: &BatchPlan) -> Completion {
        let mut c = Completion::default();
        let mut outcomes = Vec::new();
        let bt = self.cfg.block_tokens;
        for e in &plan.entries {
            let Some(slot) = self.slots.get_mut(&e.id) else { continue };
            let pl = slot.req.prompt_len();
            let was_prefilled = slot.req.prefilled;
            let mut committed = 0;
            match e.phase {
                Phase::Prefill => {
                    slot.kv += e.tokens;
                    let reached = slot.kv.min(pl);
                    if reached > slot.req.prefilled {
                        slot.req.add_prefill(reached - slot.req.prefilled);
                    }
                    if slot.req.prefilled == pl && was_prefilled < pl && slot.req.committed == 0 {
                        c.prefill_done.push(e.id);
                        committed = slot.req.commit(1);
                    }
                }
                Phase::Decode => {
                    slot.kv += 1;
                    committed = slot.req.commit(1);
                }
                Phase::Verify => {
                    committed = mtp_step(self.cfg.spec.as_ref().expect("spec decode"), &mut slot.req);
                    slot.kv = pl + slot.req.committed - 1;
                }
            }
            if committed > 0 {
                c.committed.push((e.id, committed));
            }
            slot.attained += e.tokens;
            slot.level = mlfq_demote(slot.level, slot.attained, &self.cfg.mlfq_quanta);
            if let Some(cache) = self.cache.as_mut() {
                let full = slot.kv / bt;
                if full > slot.chain_blocks {
                    let mut fresh = Vec::with_capacity((full - slot.chain_blocks) as usize);
                    for i in slot.chain_blocks..full {
                        slot.chain_tip = chain_next(slot.chain_tip, slot.req.content, i);
                        fresh.push(slot.chain_tip);
                    }
                    slot.chain_blocks = full;
                    prefix_insert(&fresh, cache);
                }
            }
            let round_done = slot.req.round_done();
            if round_done {
                c.round_done.push(e.id);
            }
            let new_tokens = slot.req.prefilled - was_prefilled;
            // A spill is a prompt too long for one full pass, not a short prompt
            // cut by leftover budget.
            let partial = e.phase == Phase::Prefill && slot.req.prefilled < pl && pl - was_prefilled > self.cfg.max_batch_tokens;
            let queue = self.last_queues.get(&e.id).copied().unwrap_or(slot.queue);
            if partial {
                slot.queue = Queue::Long;
            }
            outcomes.push(SliceOutcome {
                session: slot.req.session,
                queue,
                new_tokens,
                // The next round's prompt extends this round's full context, so
                // the history mark can move once the prompt is served.
                round_done: round_done || slot.req.prefilled == pl,
                round_total: pl + slot.req.current().decode,
                partial_prefill: partial,
                was_release: self.last_release == Some(e.id),
            });
        }
        if self.cfg.kind == SchedulerKind::H2qBr {
            self.h2q.on_completion(&outcomes);
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::RoundPlan;
    use alloc::vec;

    fn cfg(kind: SchedulerKind) -> SchedConfig {
        let mut rt = RuntimeSpec::default();
        rt.scheduler = kind;
        SchedConfig::from_runtime(&rt, 1)
    }

    fn req(id: u64, prompt: u64, decode: u64) -> Request {
        Request::new(id, 0, vec![RoundPlan::new(prompt, decode)], 0, 0)
    }

    fn run_prefill(s: &mut ReplicaScheduler) {
        let p = s.tick();
        s.complete(&p);
    }

    #[test]
    fn vllm_runs_decodes_before_waiting_prefill() {
        let mut s = ReplicaScheduler::new(cfg(SchedulerKind::VllmV1), 1000, 0.01);
        s.enqueue(req(1, 16, 10), 0, 0).unwrap();
        s.enqueue(req(2, 16, 10), 0, 0).unwrap();
        run_prefill(&mut s);
        s.enqueue(req(3, 100, 10), 0, 0).unwrap();
        let p = s.tick();
        let ids: Vec<_> = p.entries.iter().map(|e| (e.id, e.phase)).collect();
        assert_eq!(ids, [(1, Phase::Decode), (2, Phase::Decode), (3, Phase::Prefill)]);
        assert_eq!(p.total_tokens, 102);
    }

    #[test]
    fn zero_budget_gives_empty_plan() {
        let mut c = cfg(SchedulerKind::VllmV1);
        c.max_batch_tokens = 0;
        let mut s = ReplicaScheduler::new(c, 1000, 0.01);
        s.enqueue(req(1, 16, 10), 0, 0).unwrap();
        assert!(s.tick().is_empty());
    }

    #[test]
    fn watermark_blocks_admission() {
        // 100 blocks, level 10; first request takes 80.
        let mut s = ReplicaScheduler::new(cfg(SchedulerKind::VllmV1), 100, 0.1);
        s.enqueue(req(1, 80 * 16, 1), 0, 0).unwrap();
        run_prefill(&mut s);
        assert_eq!(s.pool.free(), 20);
        s.enqueue(req(2, 11 * 16, 1), 0, 0).unwrap();
        let p = s.tick();
        assert!(p.entries.iter().all(|e| e.id != 2));
        assert!(s.pool.free() >= s.pool.level());
        assert!(s.pool.conserved());
    }

    #[test]
    fn oversized_request_is_rejected() {
        let mut s = ReplicaScheduler::new(cfg(SchedulerKind::VllmV1), 10, 0.0);
        assert!(s.enqueue(req(1, 200, 0), 0, 0).is_err());
        assert!(s.enqueue(req(2, 150, 10), 0, 0).is_ok());
    }

    #[test]
    fn chunked_prefill_splits_long_prompts() {
        let mut s = ReplicaScheduler::new(cfg(SchedulerKind::VllmV1), 100_000, 0.0);
        s.enqueue(req(1, 32768, 1), 0, 0).unwrap();
        let mut chunks = vec![];
        loop {
            let p = s.tick();
            if p.is_empty() {
                break;
            }
            chunks.push(p.entries[0].tokens);
            let c = s.complete(&p);
            if !c.round_done.is_empty() {
                s.finish(1);
            }
        }
        assert_eq!(chunks, [8192; 4]);
    }

    #[test]
    fn sglang_prefers_prefill_and_matches_vllm_without_it() {
        let mut c = cfg(SchedulerKind::Sglang);
        c.max_batch_tokens = 4;
        c.max_prefill_tokens = 4;
        let mut s = ReplicaScheduler::new(c.clone(), 1000, 0.0);
        for i in 0..3 {
            s.enqueue(req(i, 4, 10), 0, 0).unwrap();
        }
        for _ in 0..3 {
            run_prefill(&mut s);
        }
        s.enqueue(req(9, 4, 10), 0, 0).unwrap();
        let p = s.tick();
        assert_eq!(p.entries.iter().map(|e| e.id).collect::<Vec<_>>(), [9]);

        let mut wide = cfg(SchedulerKind::Sglang);
        wide.max_batch_tokens = 64;
        wide.max_prefill_tokens = 64;
        let mut a = ReplicaScheduler::new(wide.clone(), 1000, 0.0);
        let mut b = ReplicaScheduler::new(SchedConfig { kind: SchedulerKind::VllmV1, ..wide }, 1000, 0.0);
        for s in [&mut a, &mut b] {
            for i in 0..3 {
                s.enqueue(req(i, 4, 10), 0, 0).unwrap();
            }
            run_prefill(s);
        }
        for _ in 0..5 {
            let (pa, pb) = (a.tick(), b.tick());
            assert_eq!(pa, pb);
            assert!(pa.is_pure_decode());
            a.complete(&pa);
            b.complete(&pb);
        }
        let mut e = ReplicaScheduler::new(cfg(SchedulerKind::Sglang), 10, 0.0);
        assert!(e.tick().is_empty());
    }

    #[test]
    fn growth_preempts_most_recent() {
        // 10 blocks of 16 tokens, no watermark; three requests of 3 blocks.
        let mut s = ReplicaScheduler::new(cfg(SchedulerKind::VllmV1), 10, 0.0);
        for i in 0..3 {
            s.enqueue(req(i, 48, 60), 0, 0).unwrap();
        }
        run_prefill(&mut s);
        assert_eq!(s.running_len(), 3);
        // decode grows until a 4th block per request is needed: 9 + 3 > 10
        let mut preempted = false;
        for _ in 0..40 {
            let p = s.tick();
            s.complete(&p);
            assert!(s.pool.conserved());
            if s.preemptions > 0 {
                preempted = true;
                break;
            }
        }
        assert!(preempted);
        assert_eq!(s.waiting_ids().next(), Some(2));
        assert_eq!(s.slot(2).unwrap().kv, 0);
    }

    #[test]
    fn mlfq_prefers_small_rounds() {
        let mut s = ReplicaScheduler::new(cfg(SchedulerKind::Mlfq), 100_000, 0.0);
        s.enqueue(req(1, 32768, 1), 0, 0).unwrap();
        s.enqueue(req(2, 256, 1), 5, 0).unwrap();
        let p = s.tick();
        assert_eq!(p.entries[0].id, 2);
    }

    #[test]
    fn mlfq_orders_admission_only() {
        let mut s = ReplicaScheduler::new(cfg(SchedulerKind::Mlfq), 100_000, 0.0);
        s.enqueue(req(1, 32768, 1), 0, 0).unwrap();
        run_prefill(&mut s);
        s.enqueue(req(2, 256, 1), 5, 0).unwrap();
        s.enqueue(req(3, 20000, 1), 6, 0).unwrap();
        let p = s.tick();
        assert_eq!(p.entries[0].id, 1);
        assert!(p.entries.iter().all(|e| e.id != 3));
    }

    #[test]
    fn prefix_hits_skip_compute() {
        let mut c = cfg(SchedulerKind::VllmV1);
        c.prefix_cache = true;
        let mut s = ReplicaScheduler::new(c, 100, 0.0);
        let mut a = req(1, 32, 1);
        a.content = 77;
        let mut b = req(2, 32, 1);
        b.content = 77;
        s.enqueue(a, 0, 0).unwrap();
        run_prefill(&mut s);
        s.finish(1);
        s.enqueue(b, 0, 0).unwrap();
        let p = s.tick();
        assert_eq!(p.entries[0].tokens, 1);
        let cache = s.cache.as_ref().unwrap();
        assert_eq!(cache.hit_blocks, 2);
    }
}
