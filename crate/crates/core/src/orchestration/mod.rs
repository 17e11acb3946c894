//! Role-specific event handling and the simulation loop.
//!
//! Every cluster runs one [`ClusterHandler`] owning its replica workers.
//! Requests travel between clusters as [`Ticket`]s carrying their lifecycle
//! record; clusters interact only through channel events.
//!
//! Event graph per architecture:
//!
//! - co-located: arrival, batch end, local thinking requeue, layout switch.
//! - PDD: prefill batch end on P starts a KV transfer; its end admits the
//!   request on D; finished non-final rounds requeue to P.
//! - AFD: as PDD with A in place of D; every decode layer ships activations
//!   A to F and back, with the expert-parallel combine barrier on F.

mod cost;
mod moe;
mod reconfig;

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::Serialize;

use crate::config::{compile_plan, replica_budget, Architecture, ReplicaLayout, Role, ServingSpec, SimulationPlan};
use crate::des::{run_sequential, ClusterId, Event, EventHandler, EventKind, Outbox, Routes, RunStats, Traced, FINAL};
use crate::fidelity::{transfer_query, Fidelity};
use crate::metrics::{finalize, BatchSample, KvSample, LifecycleRecord, RoundRecord, RunCounters, SummaryReport};
use crate::scheduler::{BatchEntry, BatchPlan, Phase, ReplicaScheduler, SchedConfig};
use crate::units::{div_ceil, Nanos};
use crate::workload::{advance_session, Request, SessionStep};
use crate::{Error, Result};

pub use cost::{pipeline_schedule, Busy, CostModel, FfnTiming, LayerCost};
pub use moe::{ep_combine, route_tokens_moe, Combine, EpSyncBarrier};
pub use reconfig::{maybe_reconfigure, LayoutSwitchPolicy};

/// A request in flight between clusters, with its lifecycle record.
#[derive(Debug, Clone)]
pub struct Ticket {
    pub req: Request,
    pub rec: LifecycleRecord,
    /// Replica the ticket left (prefill replica for KV transfers).
    pub from: u32,
}

/// Activation hand-off of one AFD layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Activation {
    pub attn_replica: u32,
    pub ffn_replica: u32,
    pub batch: u64,
    pub layer: u32,
    pub tokens: u64,
    pub kernel_only: bool,
    /// F side: combine time after the EP barrier fires.
    pub combine_ns: Nanos,
}

#[derive(Debug, Clone)]
pub enum Payload {
    Ticket(Box<Ticket>),
    Release { replica: u32, id: u64 },
    Tick { replica: u32 },
    BatchEnd { replica: u32, batch: u64 },
    Activation(Activation),
    SwitchBegin,
    SwitchEnd,
}

impl Traced for Payload {
    fn request_id(&self) -> Option<u64> {
        match self {
            Payload::Ticket(t) => Some(t.req.id),
            Payload::Release { id, .. } => Some(*id),
            _ => None,
        }
    }
}

/// Simulation knobs that are not part of a serving spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SimOptions {
    pub horizon: Nanos,
    /// Minimum spacing of free-block samples per replica.
    pub kv_sample_ns: Nanos,
    /// Record every started batch in `RunCounters::batch_log`.
    pub batch_log: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            horizon: FINAL,
            kv_sample_ns: 1_000_000,
            batch_log: false,
        }
    }
}

/// Shared read-only context.
#[derive(Debug)]
pub struct Ctx {
    pub spec: ServingSpec,
    pub plan: SimulationPlan,
    pub fidelity: Fidelity,
    pub opts: SimOptions,
}

/// Per-role busy accounting for bottleneck classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RoleStats {
    pub role: Role,
    pub compute_ns: Nanos,
    pub busy_ns: Nanos,
    pub batches: u64,
}

struct InFlight {
    plan: BatchPlan,
    seq: u64,
    /// AFD: per-layer attention time and output projection of the batch.
    attn_ns: Nanos,
    lm_head_ns: Nanos,
}

/// One serving replica of a cluster.
pub struct ReplicaWorker {
    pub index: u32,
    pub sched: ReplicaScheduler,
    pub cost: CostModel,
    records: BTreeMap<u64, LifecycleRecord>,
    preempted_at: BTreeMap<u64, Nanos>,
    busy: bool,
    tick_pending: bool,
    batch_seq: u64,
    current: Option<InFlight>,
    stage_free: Vec<Nanos>,
    last_sample: Option<Nanos>,
    last_free: u64,
    /// FFN replica: time its experts become free.
    ffn_free: Nanos,
    /// FFN replica: cached per-layer timing of the batch being served.
    ffn_cache: BTreeMap<(u32, u64), FfnTiming>,
}

impl ReplicaWorker {
    fn new(index: u32, sched: ReplicaScheduler, cost: CostModel) -> Self {
        let pp = cost.layout.pp.max(1) as usize;
        ReplicaWorker {
            index,
            last_free: sched.pool.free(),
            sched,
            cost,
            records: BTreeMap::new(),
            preempted_at: BTreeMap::new(),
            busy: false,
            tick_pending: false,
            batch_seq: 0,
            current: None,
            stage_free: alloc::vec![0; pp],
            last_sample: None,
            ffn_free: 0,
            ffn_cache: BTreeMap::new(),
        }
    }

    pub fn is_busy(&self) -> bool {
        self.busy
    }
}

/// Event handler of one cluster.
pub struct ClusterHandler {
    ctx: Arc<Ctx>,
    pub id: ClusterId,
    pub role: Role,
    pub workers: Vec<ReplicaWorker>,
    rr: u32,
    affinity: BTreeMap<u64, u32>,
    arrivals: Vec<Ticket>,
    pub finished: Vec<LifecycleRecord>,
    pub counters: RunCounters,
    pub stats: RoleStats,
    xfer_ends: Vec<Nanos>,
    policy: Option<LayoutSwitchPolicy>,
    sessions_total: u64,
    sessions_done: u64,
    switching: bool,
    drain_wait: bool,
}

fn build_workers(ctx: &Ctx, layout: ReplicaLayout, replicas: u32, blocks: u64) -> Result<Vec<ReplicaWorker>> {
    let spec = &ctx.spec;
    let gpu = spec.gpu(&layout.gpu)?;
    let sc = SchedConfig::from_runtime(&spec.runtime, layout.dp_attn);
    let cost = CostModel::new(spec, layout, gpu)?;
    Ok((0..replicas)
        .map(|i| {
            let sched = ReplicaScheduler::new(sc.clone(), blocks, spec.runtime.watermark);
            ReplicaWorker::new(i, sched, cost.clone())
        })
        .collect())
}

impl ClusterHandler {
    fn new(ctx: Arc<Ctx>, id: ClusterId, arrivals: Vec<Ticket>) -> Result<Self> {
        let cs = ctx.plan.clusters[id].clone();
        let workers = build_workers(&ctx, cs.layout.clone(), cs.replicas, cs.kv_blocks_per_replica)?;
        let policy = (cs.role == Role::C)
            .then_some(ctx.spec.runtime.reconfig.as_ref().map(LayoutSwitchPolicy::new))
            .flatten();
        let sessions_total = arrivals.len() as u64;
        Ok(ClusterHandler {
            id,
            role: cs.role,
            workers,
            rr: 0,
            affinity: BTreeMap::new(),
            arrivals,
            finished: Vec::new(),
            counters: RunCounters::default(),
            stats: RoleStats {
                role: cs.role,
                compute_ns: 0,
                busy_ns: 0,
                batches: 0,
            },
            xfer_ends: Vec::new(),
            policy,
            sessions_total,
            sessions_done: 0,
            switching: false,
            drain_wait: false,
            ctx,
        })
    }

    fn cluster_of(&self, role: Role) -> ClusterId {
        self.ctx.plan.cluster_of(role).map(|c| c.id).expect("role present")
    }

    fn pick_replica(&mut self, session: u64) -> u32 {
        let n = self.workers.len() as u32;
        if let Some(&r) = self.affinity.get(&session) {
            if r < n {
                return r;
            }
        }
        let r = self.rr % n;
        self.rr = self.rr.wrapping_add(1);
        self.affinity.insert(session, r);
        r
    }

    fn kick(&mut self, w: u32, out: &mut Outbox<'_, Payload>) -> Result<()> {
        let wk = &mut self.workers[w as usize];
        if !wk.busy && !wk.tick_pending && !self.switching {
            wk.tick_pending = true;
            out.schedule(out.now(), EventKind::SchedulerTick, Payload::Tick { replica: w })?;
        }
        Ok(())
    }

    fn finish_rejected(&mut self, mut t: Ticket, now: Nanos) {
        t.rec.rejected = true;
        t.rec.completion = Some(now);
        self.finished.push(t.rec);
        self.sessions_done += 1;
    }

    /// Queues a ticket on a replica of this cluster. `kv` is KV already
    /// materialized by a transfer.
    fn admit_ticket(&mut self, mut t: Ticket, kv: u64, out: &mut Outbox<'_, Payload>) -> Result<()> {
        let now = out.now();
        let w = self.pick_replica(t.req.session);
        let id = t.req.id;
        let wk = &mut self.workers[w as usize];
        match wk.sched.enqueue(t.req, now, kv) {
            Ok(()) => {
                wk.records.insert(id, t.rec);
                self.kick(w, out)
            }
            Err(req) => {
                t.req = req;
                self.finish_rejected(t, now);
                Ok(())
            }
        }
    }

    fn on_request(&mut self, mut t: Ticket, out: &mut Outbox<'_, Payload>) -> Result<()> {
        let cur = t.req.current();
        t.rec.rounds.push(RoundRecord {
            enqueued: out.now(),
            prompt: cur.prompt,
            decode: cur.decode,
            ..Default::default()
        });
        self.admit_ticket(t, 0, out)
    }

    fn sample_kv(&mut self, w: usize, now: Nanos) {
        let every = self.ctx.opts.kv_sample_ns;
        let wk = &mut self.workers[w];
        let free = wk.sched.pool.free();
        let due = wk.last_sample.is_none_or(|t| now >= t.saturating_add(every));
        if due && (wk.last_sample.is_none() || free != wk.last_free) {
            self.counters.kv_timeline.push(KvSample {
                time: now,
                cluster: self.id,
                replica: wk.index,
                free,
                total: wk.sched.pool.total(),
            });
            wk.last_sample = Some(now);
            wk.last_free = free;
        }
    }

    fn try_start(&mut self, w: usize, out: &mut Outbox<'_, Payload>) -> Result<()> {
        let now = out.now();
        if self.switching || self.workers[w].busy {
            return Ok(());
        }
        let ctx = self.ctx.clone();
        let fid = &ctx.fidelity;
        let nf = ctx.plan.cluster_of(Role::F).map_or(1, |c| c.replicas);
        let wk = &mut self.workers[w];
        let plan = wk.sched.tick();
        for id in core::mem::take(&mut wk.sched.preempted_log) {
            wk.preempted_at.insert(id, now);
        }
        for id in core::mem::take(&mut wk.sched.admitted_log) {
            if let Some(rec) = wk.records.get_mut(&id) {
                if let Some(t0) = wk.preempted_at.remove(&id) {
                    rec.preemptions.push((t0, now));
                }
                let r = rec.round_mut();
                match self.role {
                    Role::D | Role::A => {
                        r.decode_admitted.get_or_insert(now);
                    }
                    _ => {
                        r.admitted.get_or_insert(now);
                    }
                }
            }
        }
        if plan.is_empty() {
            self.sample_kv(w, now);
            return Ok(());
        }
        wk.batch_seq += 1;
        let seq = wk.batch_seq;
        let seed = ctx.spec.seed ^ ((self.id as u64) << 56) ^ ((wk.index as u64) << 32) ^ seq;
        self.counters.batches += 1;
        self.counters.batch_slots += plan.size() as u64;
        if ctx.opts.batch_log {
            self.counters.batch_log.push(BatchSample {
                time: out.now(),
                cluster: self.id,
                replica: wk.index,
                size: plan.size() as u32,
                decode: plan.decode_entries() as u32,
            });
        }
        self.stats.batches += 1;
        let mut busy = Busy::default();
        if self.role == Role::A {
            let (attn, tokens, kernel_only, ab) =
                wk.cost.attention_layer(fid, &plan.entries, Some(&mut self.counters.padding))?;
            let lm = wk.cost.lm_head(fid, &plan.entries, kernel_only, &mut busy)?;
            busy.compute += ab.compute * wk.cost.model.layers as u64;
            busy.total += ab.total * wk.cost.model.layers as u64;
            wk.current = Some(InFlight {
                plan,
                seq,
                attn_ns: attn,
                lm_head_ns: lm,
            });
            wk.busy = true;
            let act = Activation {
                attn_replica: wk.index,
                ffn_replica: wk.index % nf,
                batch: seq,
                layer: 0,
                tokens,
                kernel_only,
                combine_ns: 0,
            };
            out.schedule(now + attn, EventKind::M2NTransferStart, Payload::Activation(act))?;
        } else {
            let times = wk
                .cost
                .step_stage_times(fid, &plan.entries, Some(&mut self.counters.padding), seed, &mut busy)?;
            let end = pipeline_schedule(now, &mut wk.stage_free, &times);
            wk.current = Some(InFlight {
                plan,
                seq,
                attn_ns: 0,
                lm_head_ns: 0,
            });
            wk.busy = true;
            out.schedule(
                end,
                EventKind::GlobalBatchEnd,
                Payload::BatchEnd {
                    replica: w as u32,
                    batch: seq,
                },
            )?;
        }
        self.stats.compute_ns += busy.compute;
        self.stats.busy_ns += busy.total;
        self.sample_kv(w, now);
        Ok(())
    }

    fn on_batch_end(&mut self, w: usize, out: &mut Outbox<'_, Payload>) -> Result<()> {
        let now = out.now();
        let wk = &mut self.workers[w];
        let Some(fl) = wk.current.take() else {
            return Err(Error::InvalidConfig("batch end without a batch in flight".into()));
        };
        wk.busy = false;
        let c = wk.sched.complete(&fl.plan);
        for &(id, n) in &c.committed {
            if let Some(rec) = wk.records.get_mut(&id) {
                let r = rec.round_mut();
                r.first_token.get_or_insert(now);
                r.last_token = Some(now);
                r.committed += n;
                rec.committed += n;
            }
        }
        for &id in &c.prefill_done {
            if let Some(rec) = wk.records.get_mut(&id) {
                rec.round_mut().prefill_end.get_or_insert(now);
            }
        }
        let done: Vec<u64> = c.round_done.clone();
        if self.role == Role::P {
            for &id in &c.prefill_done {
                if done.contains(&id) {
                    continue;
                }
                let wk = &mut self.workers[w];
                let req = wk.sched.detach(id).expect("resident");
                let rec = wk.records.remove(&id).expect("record");
                let t = Ticket {
                    req,
                    rec,
                    from: w as u32,
                };
                out.schedule(now, EventKind::KVCacheTransferStart, Payload::Ticket(Box::new(t)))?;
            }
        }
        for id in done {
            let wk = &mut self.workers[w];
            let mut req = wk.sched.finish(id).expect("resident");
            let mut rec = wk.records.remove(&id).expect("record");
            rec.round_mut().end = Some(now);
            match advance_session(&mut req, now)? {
                SessionStep::Requeue { at, .. } => {
                    let t = Ticket {
                        req,
                        rec,
                        from: w as u32,
                    };
                    let entry = self.cluster_of(if self.role == Role::C { Role::C } else { Role::P });
                    let p = Payload::Ticket(Box::new(t));
                    if entry == self.id {
                        out.schedule(at, EventKind::ThinkingRequeue, p)?;
                    } else {
                        out.send(entry, at, EventKind::ThinkingRequeue, p)?;
                    }
                }
                SessionStep::Final => {
                    rec.completion = Some(now);
                    rec.mtp = req.mtp;
                    rec.new_prompt_tokens = req.new_prefilled_total;
                    self.finished.push(rec);
                    self.sessions_done += 1;
                }
            }
        }
        self.sample_kv(w, now);
        if let Some(policy) = self.policy.as_mut() {
            let active = self.sessions_total - self.sessions_done;
            if maybe_reconfigure(policy, active, self.sessions_total).is_some() {
                self.switching = true;
                out.schedule(now, EventKind::LayoutSwitch, Payload::SwitchBegin)?;
            }
        }
        if self.switching {
            if self.drain_wait && self.workers.iter().all(|w| !w.busy) {
                self.drain_wait = false;
                let cost = self.policy.as_ref().map_or(0, |p| p.cost_ns);
                out.schedule(now + cost, EventKind::LayoutSwitch, Payload::SwitchEnd)?;
            }
            return Ok(());
        }
        self.try_start(w, out)
    }

    fn on_transfer_start(&mut self, mut t: Ticket, out: &mut Outbox<'_, Payload>) -> Result<()> {
        let now = out.now();
        let ctx = self.ctx.clone();
        let dst = self.cluster_of(if ctx.plan.architecture == Architecture::Afd {
            Role::A
        } else {
            Role::D
        });
        let ch = ctx.plan.channel(self.id, dst).expect("kv channel");
        let bt = ctx.spec.runtime.block_tokens as u64;
        let blocks = div_ceil(t.req.prompt_len(), bt);
        let bytes = blocks * ctx.plan.clusters[self.id].block_bytes;
        self.xfer_ends.retain(|&e| e > now);
        let conc = self.xfer_ends.len() as u32 + 1;
        let dur = ctx.fidelity.predict(&transfer_query(bytes, &ch.link, conc))?.max(ch.lookahead_ns);
        let end = now + dur;
        self.xfer_ends.push(end);
        t.rec.transfers.push((now, end));
        out.schedule(
            end,
            EventKind::KVCacheTransferEnd,
            Payload::Release {
                replica: t.from,
                id: t.req.id,
            },
        )?;
        out.send(dst, end, EventKind::KVCacheTransferEnd, Payload::Ticket(Box::new(t)))
    }

    fn on_release(&mut self, replica: u32, id: u64, out: &mut Outbox<'_, Payload>) -> Result<()> {
        let w = replica as usize;
        self.workers[w].sched.release(id);
        self.sample_kv(w, out.now());
        if !self.workers[w].busy {
            self.kick(replica, out)?;
        }
        Ok(())
    }

    fn on_transfer_end(&mut self, t: Ticket, out: &mut Outbox<'_, Payload>) -> Result<()> {
        let kv = t.req.prompt_len() + t.req.committed.saturating_sub(1);
        self.admit_ticket(t, kv, out)
    }

    fn send_activation(&mut self, act: Activation, out: &mut Outbox<'_, Payload>) -> Result<()> {
        let ctx = self.ctx.clone();
        let dst = self.cluster_of(if self.role == Role::A { Role::F } else { Role::A });
        let ch = ctx.plan.channel(self.id, dst).expect("activation channel");
        let m = &ctx.spec.model;
        let bytes = act.tokens * m.hidden as u64 * m.dtype_bytes as u64;
        let dur = ctx.fidelity.predict(&transfer_query(bytes, &ch.link, 1))?.max(ch.lookahead_ns);
        out.send(dst, out.now() + dur, EventKind::M2NTransferEnd, Payload::Activation(act))
    }

    /// F side: activations of one layer arrived.
    fn on_ffn_arrival(&mut self, act: Activation, out: &mut Outbox<'_, Payload>) -> Result<()> {
        let now = out.now();
        let ctx = self.ctx.clone();
        let layers = ctx.spec.model.layers;
        let wk = &mut self.workers[act.ffn_replica as usize];
        let key = (act.attn_replica, act.batch);
        if !wk.ffn_cache.contains_key(&key) {
            let seed = ctx.spec.seed ^ ((act.attn_replica as u64) << 40) ^ act.batch;
            let (timing, busy) = wk.cost.ffn_layer(&ctx.fidelity, act.tokens, act.kernel_only, seed)?;
            self.stats.compute_ns += busy.compute * layers as u64;
            self.stats.busy_ns += busy.total * layers as u64;
            wk.ffn_cache.insert(key, timing);
        }
        let timing = &wk.ffn_cache[&key];
        let start = now.max(wk.ffn_free);
        let fire = start + timing.barrier(wk.cost.delta_ep)?;
        let end = fire + timing.combine;
        wk.ffn_free = end;
        if act.layer + 1 >= layers {
            wk.ffn_cache.remove(&key);
        }
        if wk.cost.layout.ep_ffn > 1 && ctx.spec.model.is_moe() {
            let act = Activation {
                combine_ns: end - fire,
                ..act
            };
            out.schedule(fire, EventKind::AllToAllCombineReady, Payload::Activation(act))?;
        } else {
            out.schedule(end, EventKind::M2NTransferStart, Payload::Activation(act))?;
        }
        Ok(())
    }

    /// A side: FFN output of one layer came back.
    fn on_attn_return(&mut self, act: Activation, out: &mut Outbox<'_, Payload>) -> Result<()> {
        let now = out.now();
        let layers = self.ctx.spec.model.layers;
        let w = act.attn_replica as usize;
        let fl = self.workers[w].current.as_ref().expect("batch in flight");
        if act.layer + 1 < layers {
            let next = Activation {
                layer: act.layer + 1,
                combine_ns: 0,
                ..act
            };
            out.schedule(now + fl.attn_ns, EventKind::M2NTransferStart, Payload::Activation(next))
        } else {
            let end = now + fl.lm_head_ns;
            let seq = fl.seq;
            out.schedule(
                end,
                EventKind::GlobalBatchEnd,
                Payload::BatchEnd {
                    replica: act.attn_replica,
                    batch: seq,
                },
            )
        }
    }

    fn on_switch_begin(&mut self, out: &mut Outbox<'_, Payload>) -> Result<()> {
        if self.workers.iter().all(|w| !w.busy) {
            let cost = self.policy.as_ref().map_or(0, |p| p.cost_ns);
            out.schedule(out.now() + cost, EventKind::LayoutSwitch, Payload::SwitchEnd)
        } else {
            self.drain_wait = true;
            Ok(())
        }
    }

    fn on_switch_end(&mut self, out: &mut Outbox<'_, Payload>) -> Result<()> {
        let now = out.now();
        let ctx = self.ctx.clone();
        let target = self.policy.as_ref().expect("policy").target;
        let (layout, blocks, _) = replica_budget(&ctx.spec, self.role, &target)?;
        let gpus = ctx.plan.clusters[self.id].replicas as u64 * ctx.plan.clusters[self.id].layout.world_size;
        let replicas = (gpus / layout.world_size).max(1) as u32;
        let mut moved: Vec<(Request, u64, LifecycleRecord)> = Vec::new();
        for wk in &mut self.workers {
            self.counters.prefix_lookups += wk.sched.cache.as_ref().map_or(0, |c| c.lookups);
            self.counters.prefix_hit_blocks += wk.sched.cache.as_ref().map_or(0, |c| c.hit_blocks);
            self.counters.prefix_queried_blocks += wk.sched.cache.as_ref().map_or(0, |c| c.queried_blocks);
            self.counters.preemptions += wk.sched.preemptions;
            for (req, kv) in wk.sched.drain() {
                let rec = wk.records.remove(&req.id).expect("record");
                moved.push((req, kv, rec));
            }
        }
        moved.sort_by_key(|m| m.0.id);
        self.workers = build_workers(&ctx, layout, replicas, blocks)?;
        self.affinity.clear();
        self.rr = 0;
        self.switching = false;
        self.counters.reconfigured_at = Some(now);
        for (req, kv, rec) in moved {
            let w = self.pick_replica(req.session);
            let id = req.id;
            let wk = &mut self.workers[w as usize];
            match wk.sched.enqueue(req, now, kv) {
                Ok(()) => {
                    wk.records.insert(id, rec);
                }
                Err(req) => self.finish_rejected(Ticket { req, rec, from: w }, now),
            }
        }
        for w in 0..self.workers.len() {
            self.try_start(w, out)?;
        }
        Ok(())
    }

    /// Moves end-of-run per-replica counters into `counters`.
    fn harvest(&mut self) {
        for wk in &mut self.workers {
            if let Some(c) = wk.sched.cache.as_ref() {
                self.counters.prefix_lookups += c.lookups;
                self.counters.prefix_hit_blocks += c.hit_blocks;
                self.counters.prefix_queried_blocks += c.queried_blocks;
            }
            self.counters.preemptions += wk.sched.preemptions;
        }
    }
}

impl EventHandler for ClusterHandler {
    type Payload = Payload;

    fn start(&mut self, out: &mut Outbox<'_, Payload>) -> Result<()> {
        for t in core::mem::take(&mut self.arrivals) {
            let at = t.req.arrival;
            out.schedule(at, EventKind::RequestArrival, Payload::Ticket(Box::new(t)))?;
        }
        Ok(())
    }

    fn handle(&mut self, ev: Event<Payload>, out: &mut Outbox<'_, Payload>) -> Result<()> {
        match (ev.kind, ev.payload) {
            (EventKind::RequestArrival | EventKind::ThinkingRequeue, Payload::Ticket(t)) => self.on_request(*t, out),
            (EventKind::SchedulerTick, Payload::Tick { replica }) => {
                self.workers[replica as usize].tick_pending = false;
                self.try_start(replica as usize, out)
            }
            (EventKind::GlobalBatchEnd, Payload::BatchEnd { replica, .. }) => self.on_batch_end(replica as usize, out),
            (EventKind::KVCacheTransferStart, Payload::Ticket(t)) => self.on_transfer_start(*t, out),
            (EventKind::KVCacheTransferEnd, Payload::Release { replica, id }) => self.on_release(replica, id, out),
            (EventKind::KVCacheTransferEnd, Payload::Ticket(t)) => self.on_transfer_end(*t, out),
            (EventKind::M2NTransferStart, Payload::Activation(a)) => self.send_activation(a, out),
            (EventKind::AllToAllCombineReady, Payload::Activation(a)) => {
                out.schedule(out.now() + a.combine_ns, EventKind::M2NTransferStart, Payload::Activation(a))
            }
            (EventKind::M2NTransferEnd, Payload::Activation(a)) => {
                if self.role == Role::F {
                    self.on_ffn_arrival(a, out)
                } else {
                    self.on_attn_return(a, out)
                }
            }
            (EventKind::LayoutSwitch, Payload::SwitchBegin) => self.on_switch_begin(out),
            (EventKind::LayoutSwitch, Payload::SwitchEnd) => self.on_switch_end(out),
            (kind, _) => Err(Error::InvalidConfig(alloc::format!(
                "unexpected {} on cluster {}",
                kind.name(),
                self.id
            ))),
        }
    }
}

/// Compiles the plan and builds one handler per cluster. All requests enter
/// at cluster 0 (the prefill or co-located role).
pub fn build_clusters(
    spec: &ServingSpec,
    fidelity: &Fidelity,
    requests: Vec<Request>,
    opts: SimOptions,
) -> Result<(Vec<ClusterHandler>, Routes)> {
    let plan = compile_plan(spec, fidelity)?;
    let routes = Routes::from_plan(&plan)?;
    let n = plan.clusters.len();
    let ctx = Arc::new(Ctx {
        spec: spec.clone(),
        plan,
        fidelity: fidelity.clone(),
        opts,
    });
    let tickets: Vec<Ticket> = requests
        .into_iter()
        .map(|req| Ticket {
            rec: LifecycleRecord::new(req.id, req.session, req.arrival),
            req,
            from: 0,
        })
        .collect();
    let mut handlers = Vec::with_capacity(n);
    let mut tickets = Some(tickets);
    for c in 0..n {
        let arrivals = if c == 0 { tickets.take().unwrap_or_default() } else { Vec::new() };
        handlers.push(ClusterHandler::new(ctx.clone(), c, arrivals)?);
    }
    Ok((handlers, routes))
}

/// Everything a finished run reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimOutput {
    pub records: Vec<LifecycleRecord>,
    pub counters: RunCounters,
    pub summary: SummaryReport,
    pub stats: RunStats,
    pub roles: Vec<RoleStats>,
    /// Free blocks equal total blocks on every replica at the end.
    pub pools_drained: bool,
}

/// Merges per-cluster buffers after a run.
pub fn collect(mut handlers: Vec<ClusterHandler>, stats: RunStats) -> Result<SimOutput> {
    let mut records = Vec::new();
    let mut counters = RunCounters::default();
    let mut roles = Vec::new();
    let mut pools_drained = true;
    for h in &mut handlers {
        h.harvest();
        records.append(&mut h.finished);
        for wk in &mut h.workers {
            pools_drained &= wk.sched.pool.free() == wk.sched.pool.total() && wk.sched.pool.conserved();
            records.extend(core::mem::take(&mut wk.records).into_values());
        }
        counters.merge(&h.counters);
        roles.push(h.stats);
    }
    records.sort_by_key(|r| r.id);
    counters.events = stats.processed;
    counters.kv_timeline.sort_by_key(|s| (s.time, s.cluster, s.replica));
    counters.batch_log.sort_by_key(|s| (s.time, s.cluster, s.replica));
    let summary = finalize(&records, &counters)?;
    Ok(SimOutput {
        records,
        counters,
        summary,
        stats,
        roles,
        pools_drained,
    })
}

/// Runs a whole simulation on the single merged event queue.
pub fn simulate(spec: &ServingSpec, fidelity: &Fidelity, requests: Vec<Request>, opts: SimOptions) -> Result<SimOutput> {
    let (mut handlers, routes) = build_clusters(spec, fidelity, requests, opts)?;
    let stats = run_sequential(&mut handlers, &routes, opts.horizon, None)?;
    collect(handlers, stats)
}

/// Batch entries for tests and cost oracles.
pub fn decode_entries(n: usize, context: u64) -> Vec<BatchEntry> {
    (0..n as u64)
        .map(|id| BatchEntry {
            id,
            phase: Phase::Decode,
            tokens: 1,
            context,
        })
        .collect()
}
