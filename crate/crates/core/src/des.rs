//! Deterministic discrete-event engine.
//!
//! Events are totally ordered by `(timestamp, target cluster, origin cluster,
//! origin sequence)`. Each cluster numbers the events it creates, so the
//! order never depends on how clusters are interleaved across threads.
//!
//! Two executors share one [`EventHandler`] contract:
//!
//! - [`run_sequential`] pops a single merged queue.
//! - [`RoundExecutor`] keeps one [`ClusterDriver`] per cluster and advances
//!   them in rounds. Before each round it computes, for every cluster, a
//!   lower bound on any timestamp it may still process or emit, and lets each
//!   driver process only what no upstream cluster can undercut. The drivers of
//!   one round are independent and may run on separate threads.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use serde::Serialize;

use crate::config::SimulationPlan;
use crate::units::Nanos;
use crate::{Error, Result};

pub type ClusterId = usize;

/// Bound meaning "no further events", i.e. a finalized channel.
pub const FINAL: Nanos = Nanos::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum EventKind {
    RequestArrival,
    BatchStageEnd,
    GlobalBatchEnd,
    KVCacheTransferStart,
    KVCacheTransferEnd,
    M2NTransferStart,
    M2NTransferEnd,
    AllToAllCombineReady,
    ThinkingRequeue,
    LayoutSwitch,
    SchedulerTick,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::RequestArrival => "RequestArrival",
            EventKind::BatchStageEnd => "BatchStageEnd",
            EventKind::GlobalBatchEnd => "GlobalBatchEnd",
            EventKind::KVCacheTransferStart => "KVCacheTransferStart",
            EventKind::KVCacheTransferEnd => "KVCacheTransferEnd",
            EventKind::M2NTransferStart => "M2NTransferStart",
            EventKind::M2NTransferEnd => "M2NTransferEnd",
            EventKind::AllToAllCombineReady => "AllToAllCombineReady",
            EventKind::ThinkingRequeue => "ThinkingRequeue",
            EventKind::LayoutSwitch => "LayoutSwitch",
            EventKind::SchedulerTick => "SchedulerTick",
        }
    }
}

/// Total-order key of an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct EventKey {
    pub timestamp: Nanos,
    pub cluster: ClusterId,
    pub origin: ClusterId,
    pub seq: u64,
}

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub key: EventKey,
    pub kind: EventKind,
    pub payload: P,
}

impl<P> Event<P> {
    pub fn time(&self) -> Nanos {
        self.key.timestamp
    }
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl<P> Eq for Event<P> {}
impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Event<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key)
    }
}

/// Payloads that can name the request they concern (for event traces).
pub trait Traced {
    fn request_id(&self) -> Option<u64>;
}

impl Traced for () {
    fn request_id(&self) -> Option<u64> {
        None
    }
}

/// One line of the optional event trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EventRecord {
    pub timestamp: Nanos,
    pub cluster: ClusterId,
    pub kind: &'static str,
    pub request: Option<u64>,
}

/// Directed channel lookahead table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Routes {
    lookahead: Vec<Vec<Option<Nanos>>>,
}

impl Routes {
    /// `n` clusters, no channels.
    pub fn isolated(n: usize) -> Self {
        Routes {
            lookahead: vec![vec![None; n]; n],
        }
    }

    /// Adds a channel. Zero-lookahead channels must point from a higher to a
    /// lower cluster id so that no zero-delay cycle exists.
    pub fn connect(&mut self, src: ClusterId, dst: ClusterId, lookahead: Nanos) -> Result<()> {
        if src == dst || src >= self.len() || dst >= self.len() || (lookahead == 0 && src < dst) {
            return Err(Error::UnknownChannel { src, dst });
        }
        self.lookahead[src][dst] = Some(lookahead);
        Ok(())
    }

    pub fn from_plan(plan: &SimulationPlan) -> Result<Self> {
        let mut r = Routes::isolated(plan.clusters.len());
        for c in &plan.channels {
            r.connect(c.src, c.dst, c.lookahead_ns)?;
        }
        Ok(r)
    }

    pub fn len(&self) -> usize {
        self.lookahead.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lookahead.is_empty()
    }

    pub fn lookahead(&self, src: ClusterId, dst: ClusterId) -> Option<Nanos> {
        self.lookahead.get(src)?.get(dst).copied().flatten()
    }

    fn upstream(&self, dst: ClusterId) -> impl Iterator<Item = (ClusterId, Nanos)> + '_ {
        self.lookahead
            .iter()
            .enumerate()
            .filter_map(move |(s, row)| row[dst].map(|la| (s, la)))
    }
}

/// Collects the events created while handling one event.
pub struct Outbox<'a, P> {
    now: Nanos,
    cluster: ClusterId,
    seq: &'a mut u64,
    routes: &'a Routes,
    pub(crate) local: Vec<Event<P>>,
    pub(crate) remote: Vec<Event<P>>,
}

impl<'a, P> Outbox<'a, P> {
    fn new(now: Nanos, cluster: ClusterId, seq: &'a mut u64, routes: &'a Routes) -> Self {
        Outbox {
            now,
            cluster,
            seq,
            routes,
            local: Vec::new(),
            remote: Vec::new(),
        }
    }

    pub fn now(&self) -> Nanos {
        self.now
    }

    pub fn cluster(&self) -> ClusterId {
        self.cluster
    }

    fn key(&mut self, timestamp: Nanos, cluster: ClusterId) -> EventKey {
        let seq = *self.seq;
        *self.seq += 1;
        EventKey {
            timestamp,
            cluster,
            origin: self.cluster,
            seq,
        }
    }

    /// Schedules an event on the current cluster.
    pub fn schedule(&mut self, at: Nanos, kind: EventKind, payload: P) -> Result<()> {
        if at < self.now {
            return Err(Error::Causality {
                event: at,
                clock: self.now,
            });
        }
        let key = self.key(at, self.cluster);
        self.local.push(Event { key, kind, payload });
        Ok(())
    }

    /// Sends an event over the channel to `dst`. The timestamp must respect
    /// the channel lookahead.
    pub fn send(&mut self, dst: ClusterId, at: Nanos, kind: EventKind, payload: P) -> Result<()> {
        let la = self
            .routes
            .lookahead(self.cluster, dst)
            .ok_or(Error::UnknownChannel {
                src: self.cluster,
                dst,
            })?;
        if at < self.now.saturating_add(la) {
            return Err(Error::Causality {
                event: at,
                clock: self.now + la,
            });
        }
        let key = self.key(at, dst);
        self.remote.push(Event { key, kind, payload });
        Ok(())
    }
}

/// Role-specific logic of one cluster.
pub trait EventHandler {
    type Payload: Traced;

    /// Creates the cluster's initial events at time 0.
    fn start(&mut self, out: &mut Outbox<'_, Self::Payload>) -> Result<()>;

    fn handle(&mut self, ev: Event<Self::Payload>, out: &mut Outbox<'_, Self::Payload>) -> Result<()>;
}

/// Counters reported by both executors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RunStats {
    pub created: u64,
    pub processed: u64,
    pub rounds: u64,
    pub end_time: Nanos,
}

/// Single merged queue over all clusters.
pub fn run_sequential<H: EventHandler>(
    handlers: &mut [H],
    routes: &Routes,
    horizon: Nanos,
    mut trace: Option<&mut dyn FnMut(&EventRecord)>,
) -> Result<RunStats> {
    let n = handlers.len();
    let mut seqs = vec![0u64; n];
    let mut clocks = vec![0 as Nanos; n];
    let mut heap: BinaryHeap<Reverse<Event<H::Payload>>> = BinaryHeap::new();
    let mut stats = RunStats::default();
    for (c, h) in handlers.iter_mut().enumerate() {
        let mut out = Outbox::new(0, c, &mut seqs[c], routes);
        h.start(&mut out)?;
        stats.created += (out.local.len() + out.remote.len()) as u64;
        heap.extend(out.local.into_iter().chain(out.remote).map(Reverse));
    }
    while let Some(Reverse(ev)) = heap.pop() {
        if ev.time() > horizon {
            heap.push(Reverse(ev));
            break;
        }
        let c = ev.key.cluster;
        clocks[c] = ev.time();
        stats.end_time = stats.end_time.max(ev.time());
        if let Some(t) = trace.as_mut() {
            t(&EventRecord {
                timestamp: ev.time(),
                cluster: c,
                kind: ev.kind.name(),
                request: ev.payload.request_id(),
            });
        }
        let mut out = Outbox::new(ev.time(), c, &mut seqs[c], routes);
        handlers[c].handle(ev, &mut out)?;
        stats.processed += 1;
        stats.created += (out.local.len() + out.remote.len()) as u64;
        heap.extend(out.local.into_iter().chain(out.remote).map(Reverse));
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Inbound {
    src: ClusterId,
    bound: Nanos,
}

/// One cluster's queue, clock, and inbound channel bounds.
pub struct ClusterDriver<H: EventHandler> {
    pub id: ClusterId,
    pub handler: H,
    queue: BinaryHeap<Reverse<Event<H::Payload>>>,
    inbound: Vec<Inbound>,
    clock: Nanos,
    seq: u64,
    processed: u64,
    created: u64,
    outbound: Vec<Event<H::Payload>>,
    trace: Vec<EventRecord>,
    tracing: bool,
}

impl<H: EventHandler> ClusterDriver<H> {
    pub fn new(id: ClusterId, handler: H, routes: &Routes) -> Self {
        let inbound = routes
            .upstream(id)
            .map(|(src, _)| Inbound { src, bound: 0 })
            .collect();
        ClusterDriver {
            id,
            handler,
            queue: BinaryHeap::new(),
            inbound,
            clock: 0,
            seq: 0,
            processed: 0,
            created: 0,
            outbound: Vec::new(),
            trace: Vec::new(),
            tracing: false,
        }
    }

    pub fn set_tracing(&mut self, on: bool) {
        self.tracing = on;
    }

    pub fn clock(&self) -> Nanos {
        self.clock
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn created(&self) -> u64 {
        self.created
    }

    pub fn next_time(&self) -> Option<Nanos> {
        self.queue.peek().map(|Reverse(e)| e.time())
    }

    /// Stores a locally generated event; it may not precede the clock.
    pub fn enqueue(&mut self, ev: Event<H::Payload>) -> Result<()> {
        if ev.time() < self.clock {
            return Err(Error::Causality {
                event: ev.time(),
                clock: self.clock,
            });
        }
        self.queue.push(Reverse(ev));
        Ok(())
    }

    /// Accepts an event delivered over a channel.
    pub fn deliver(&mut self, ev: Event<H::Payload>) {
        self.queue.push(Reverse(ev));
    }

    /// Raises the bound of the channel from `src`: no event with a timestamp
    /// below `bound` will arrive on it any more.
    pub fn raise_bound(&mut self, src: ClusterId, bound: Nanos) -> Result<()> {
        let ch = self
            .inbound
            .iter_mut()
            .find(|c| c.src == src)
            .ok_or(Error::UnknownChannel { src, dst: self.id })?;
        ch.bound = ch.bound.max(bound);
        Ok(())
    }

    /// Minimum inbound bound; events strictly below it are safe.
    pub fn safe_bound(&self) -> Nanos {
        self.inbound.iter().map(|c| c.bound).min().unwrap_or(FINAL)
    }

    pub fn start(&mut self, routes: &Routes) -> Result<()> {
        let mut out = Outbox::new(0, self.id, &mut self.seq, routes);
        self.handler.start(&mut out)?;
        let (local, remote) = (out.local, out.remote);
        self.absorb(local, remote)
    }

    fn absorb(&mut self, local: Vec<Event<H::Payload>>, remote: Vec<Event<H::Payload>>) -> Result<()> {
        self.created += (local.len() + remote.len()) as u64;
        for e in local {
            self.enqueue(e)?;
        }
        self.outbound.extend(remote);
        Ok(())
    }

    /// Processes every queued event with timestamp `<= horizon` that lies
    /// strictly below the inbound bounds. Returns the processed count.
    pub fn advance(&mut self, horizon: Nanos, routes: &Routes) -> Result<u64> {
        let safe = self.safe_bound();
        let mut n = 0;
        while let Some(Reverse(head)) = self.queue.peek() {
            let t = head.time();
            if t > horizon || t >= safe {
                break;
            }
            let Reverse(ev) = self.queue.pop().expect("peeked");
            self.clock = t;
            if self.tracing {
                self.trace.push(EventRecord {
                    timestamp: t,
                    cluster: self.id,
                    kind: ev.kind.name(),
                    request: ev.payload.request_id(),
                });
            }
            let mut out = Outbox::new(t, self.id, &mut self.seq, routes);
            self.handler.handle(ev, &mut out)?;
            let (local, remote) = (out.local, out.remote);
            self.absorb(local, remote)?;
            n += 1;
        }
        if n == 0 {
            let idle_to = horizon.min(safe);
            if idle_to != FINAL && idle_to > self.clock {
                self.clock = idle_to;
                // An idle advance must not pass a queued event.
                if let Some(t) = self.next_time() {
                    self.clock = self.clock.min(t);
                }
            }
        }
        self.processed += n;
        Ok(n)
    }

    pub fn take_outbound(&mut self) -> Vec<Event<H::Payload>> {
        core::mem::take(&mut self.outbound)
    }

    pub fn take_trace(&mut self) -> Vec<EventRecord> {
        core::mem::take(&mut self.trace)
    }
}

/// Drives one [`ClusterDriver`] per cluster in synchronized rounds.
///
/// Each round computes `LB(X) = min(next_local(X), min_Y LB(Y) + la(Y->X))`
/// by relaxation, hands every driver the inbound bounds `LB(Y) + la(Y->X)`,
/// advances all drivers (through the caller-supplied `advance_all`, which may
/// run them in parallel), then delivers the produced cross-cluster events.
pub struct RoundExecutor<H: EventHandler> {
    pub drivers: Vec<ClusterDriver<H>>,
    routes: Routes,
    rounds: u64,
}

impl<H: EventHandler> RoundExecutor<H> {
    pub fn new(handlers: Vec<H>, routes: Routes) -> Self {
        let drivers = handlers
            .into_iter()
            .enumerate()
            .map(|(i, h)| ClusterDriver::new(i, h, &routes))
            .collect();
        RoundExecutor {
            drivers,
            routes,
            rounds: 0,
        }
    }

    pub fn routes(&self) -> &Routes {
        &self.routes
    }

    pub fn set_tracing(&mut self, on: bool) {
        for d in &mut self.drivers {
            d.set_tracing(on);
        }
    }

    fn deliver_outbound(&mut self) {
        let mut moved = Vec::new();
        for d in &mut self.drivers {
            moved.extend(d.take_outbound());
        }
        for e in moved {
            self.drivers[e.key.cluster].deliver(e);
        }
    }

    fn lower_bounds(&self) -> Vec<Nanos> {
        let n = self.drivers.len();
        let mut lb: Vec<Nanos> = self.drivers.iter().map(|d| d.next_time().unwrap_or(FINAL)).collect();
        // Relax along channels; positive-lookahead cycles converge within n passes.
        for _ in 0..n {
            let mut changed = false;
            for dst in 0..n {
                for (src, la) in self.routes.upstream(dst) {
                    let via = lb[src].saturating_add(la);
                    if via < lb[dst] {
                        lb[dst] = via;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        lb
    }

    /// Runs to quiescence or `horizon`. `advance_all` must call
    /// [`ClusterDriver::advance`] on every driver it is given.
    pub fn run<F>(&mut self, horizon: Nanos, mut advance_all: F) -> Result<RunStats>
    where
        F: FnMut(&mut [ClusterDriver<H>], &Routes, Nanos) -> Result<u64>,
    {
        let routes = self.routes.clone();
        for d in &mut self.drivers {
            d.start(&routes)?;
        }
        self.deliver_outbound();
        loop {
            let lb = self.lower_bounds();
            if lb.iter().all(|&t| t == FINAL || t > horizon) {
                break;
            }
            for dst in 0..self.drivers.len() {
                let ups: Vec<_> = routes.upstream(dst).collect();
                for (src, la) in ups {
                    self.drivers[dst].raise_bound(src, lb[src].saturating_add(la))?;
                }
            }
            let n = advance_all(&mut self.drivers, &routes, horizon)?;
            self.rounds += 1;
            self.deliver_outbound();
            if n == 0 {
                return Err(Error::InvalidConfig("executor made no progress".into()));
            }
        }
        Ok(self.stats())
    }

    pub fn stats(&self) -> RunStats {
        RunStats {
            created: self.drivers.iter().map(|d| d.created()).sum(),
            processed: self.drivers.iter().map(|d| d.processed()).sum(),
            rounds: self.rounds,
            end_time: self.drivers.iter().map(|d| d.clock()).max().unwrap_or(0),
        }
    }

    pub fn into_handlers(self) -> Vec<H> {
        self.drivers.into_iter().map(|d| d.handler).collect()
    }
}

/// Advances drivers one after another; the reference for parallel variants.
pub fn advance_serial<H: EventHandler>(drivers: &mut [ClusterDriver<H>], routes: &Routes, horizon: Nanos) -> Result<u64> {
    let mut n = 0;
    for d in drivers {
        n += d.advance(horizon, routes)?;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[derive(Debug, Clone)]
    struct Tag(u64);
    impl Traced for Tag {
        fn request_id(&self) -> Option<u64> {
            Some(self.0)
        }
    }

    /// Records what it sees; forwards each event downstream with a delay.
    struct Echo {
        seen: Vec<(Nanos, u64)>,
        starts: Vec<Nanos>,
        forward: Option<(ClusterId, Nanos)>,
        hops: u64,
    }

    impl EventHandler for Echo {
        type Payload = Tag;
        fn start(&mut self, out: &mut Outbox<'_, Tag>) -> Result<()> {
            for (i, &t) in self.starts.iter().enumerate() {
                out.schedule(t, EventKind::RequestArrival, Tag(i as u64))?;
            }
            Ok(())
        }
        fn handle(&mut self, ev: Event<Tag>, out: &mut Outbox<'_, Tag>) -> Result<()> {
            self.seen.push((ev.time(), ev.payload.0));
            if ev.payload.0 < self.hops {
                if let Some((dst, d)) = self.forward {
                    out.send(dst, ev.time() + d, EventKind::KVCacheTransferStart, Tag(ev.payload.0 + 10))?;
                }
                out.schedule(ev.time(), EventKind::SchedulerTick, Tag(ev.payload.0 + 100))?;
            }
            Ok(())
        }
    }

    fn echo(starts: &[Nanos], forward: Option<(ClusterId, Nanos)>) -> Echo {
        Echo {
            seen: Vec::new(),
            starts: starts.to_vec(),
            forward,
            hops: 3,
        }
    }

    fn driver(routes: &Routes) -> ClusterDriver<Echo> {
        ClusterDriver::new(1, echo(&[], None), routes)
    }

    fn ev(t: Nanos, seq: u64) -> Event<Tag> {
        Event {
            key: EventKey {
                timestamp: t,
                cluster: 1,
                origin: 1,
                seq,
            },
            kind: EventKind::SchedulerTick,
            payload: Tag(1000 + seq),
        }
    }

    #[test]
    fn equal_timestamps_break_ties_by_sequence() {
        let routes = Routes::isolated(2);
        let mut d = driver(&routes);
        d.enqueue(ev(7, 1)).unwrap();
        d.enqueue(ev(7, 0)).unwrap();
        d.advance(100, &routes).unwrap();
        assert_eq!(d.handler.seen, [(7, 1000), (7, 1001)]);
    }

    #[test]
    fn remote_events_reorder_and_stale_local_is_rejected() {
        let routes = Routes::isolated(2);
        let mut d = driver(&routes);
        d.deliver(ev(5, 0));
        d.deliver(ev(3, 1));
        d.advance(100, &routes).unwrap();
        assert_eq!(d.handler.seen[0], (3, 1001));
        assert_eq!(d.clock(), 5);
        assert!(matches!(d.enqueue(ev(4, 9)), Err(Error::Causality { event: 4, clock: 5 })));
    }

    #[test]
    fn advance_respects_bounds_and_horizon() {
        let mut routes = Routes::isolated(2);
        routes.connect(0, 1, 1).unwrap();
        let mut d = driver(&routes);
        assert_eq!(d.advance(100, &routes).unwrap(), 0);
        assert_eq!(d.clock(), 0);
        d.raise_bound(0, FINAL).unwrap();
        assert_eq!(d.advance(100, &routes).unwrap(), 0);
        assert_eq!(d.clock(), 100);

        let mut d = driver(&routes);
        d.raise_bound(0, FINAL).unwrap();
        d.enqueue(ev(1, 0)).unwrap();
        d.enqueue(ev(2, 1)).unwrap();
        assert_eq!(d.advance(10, &routes).unwrap(), 2);
        assert_eq!(d.clock(), 2);

        let mut d = driver(&routes);
        d.enqueue(ev(9, 0)).unwrap();
        d.raise_bound(0, 5).unwrap();
        assert_eq!(d.advance(100, &routes).unwrap(), 0);
        assert_eq!(d.clock(), 5);
    }

    #[test]
    fn send_needs_a_channel_and_lookahead() {
        let mut routes = Routes::isolated(2);
        routes.connect(0, 1, 40).unwrap();
        let mut seq = 0;
        let mut out: Outbox<'_, Tag> = Outbox::new(0, 0, &mut seq, &routes);
        out.send(1, 40, EventKind::KVCacheTransferStart, Tag(0)).unwrap();
        assert!(matches!(out.send(1, 39, EventKind::KVCacheTransferStart, Tag(0)), Err(Error::Causality { .. })));
        let mut seq = 0;
        let mut back: Outbox<'_, Tag> = Outbox::new(0, 1, &mut seq, &routes);
        assert!(matches!(back.send(0, 50, EventKind::ThinkingRequeue, Tag(0)), Err(Error::UnknownChannel { src: 1, dst: 0 })));
        assert!(routes.clone().connect(0, 1, 0).is_err());
    }

    #[test]
    fn sent_event_raises_downstream_bound() {
        let mut routes = Routes::isolated(2);
        routes.connect(0, 1, 40).unwrap();
        let mut ex = RoundExecutor::new(vec![echo(&[0], Some((1, 40))), echo(&[], None)], routes);
        ex.run(FINAL, advance_serial).unwrap();
        // LB(P)=0 at the first round gives D a bound of 40.
        assert!(ex.drivers[1].safe_bound() >= 40);
        assert_eq!(ex.drivers[1].handler.seen[0], (40, 10));
    }

    fn topology() -> Routes {
        let mut r = Routes::isolated(3);
        r.connect(0, 1, 5).unwrap();
        r.connect(1, 2, 3).unwrap();
        r.connect(2, 1, 3).unwrap();
        r.connect(1, 0, 0).unwrap();
        r
    }

    fn handlers() -> Vec<Echo> {
        vec![
            echo(&[0, 0, 4, 9, 9], Some((1, 5))),
            Echo {
                seen: Vec::new(),
                starts: vec![2],
                forward: Some((0, 0)),
                hops: 50,
            },
            echo(&[1, 7], Some((1, 3))),
        ]
    }

    #[test]
    fn round_executor_matches_sequential() {
        let routes = topology();
        let mut seq = handlers();
        let s = run_sequential(&mut seq, &routes, FINAL, None).unwrap();
        let mut ex = RoundExecutor::new(handlers(), routes);
        let r = ex.run(FINAL, advance_serial).unwrap();
        assert_eq!(s.processed, r.processed);
        assert_eq!(s.created, r.created);
        assert_eq!(s.processed, s.created);
        for (a, b) in seq.iter().zip(ex.into_handlers()) {
            assert_eq!(a.seen, b.seen);
        }
    }

    #[test]
    fn horizon_stops_both_executors() {
        let routes = topology();
        let mut seq = handlers();
        let s = run_sequential(&mut seq, &routes, 6, None).unwrap();
        let mut ex = RoundExecutor::new(handlers(), routes);
        let r = ex.run(6, advance_serial).unwrap();
        assert_eq!(s.processed, r.processed);
        assert!(s.processed < s.created);
    }
}
