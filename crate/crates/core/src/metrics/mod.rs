//! Request lifecycles, summary statistics, sweeps, and allocation scoring.

mod sweep;

use alloc::string::String;
use alloc::vec::Vec;

use serde::Serialize;

use crate::adapters::PaddingStats;
use crate::units::{ns_to_ms, ns_to_secs, Nanos};
use crate::workload::MtpCounters;
use crate::{Error, Result};

pub use sweep::{
    compute_bound, pareto_filter, price, run_sweep, score_allocation, Allocation, AllocationScore, Candidate,
    CandidateOutcome, Frontier, Gates, ParetoPoint, Sla, SweepReport, CE_GATE,
};

/// Nearest-rank empirical quantile of a sorted slice: the element at rank
/// `ceil(q * n)` (1-based). Returns the default for an empty slice.
pub fn nearest_rank<T: Copy + Default>(sorted: &[T], q: f64) -> T {
    if sorted.is_empty() {
        return T::default();
    }
    let n = sorted.len();
    let rank = libm::ceil(q * n as f64) as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Timeline of one session round.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct RoundRecord {
    /// Entry into the first scheduler queue (arrival or requeue time).
    pub enqueued: Nanos,
    pub admitted: Option<Nanos>,
    /// Admission to decode scheduling after a KV transfer.
    pub decode_admitted: Option<Nanos>,
    pub prefill_end: Option<Nanos>,
    pub first_token: Option<Nanos>,
    pub last_token: Option<Nanos>,
    pub end: Option<Nanos>,
    pub prompt: u64,
    pub decode: u64,
    pub committed: u64,
}

/// Lifecycle of one request across all of its rounds.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct LifecycleRecord {
    pub id: u64,
    pub session: u64,
    pub arrival: Nanos,
    pub rounds: Vec<RoundRecord>,
    /// KV transfer intervals (start, end).
    pub transfers: Vec<(Nanos, Nanos)>,
    /// Preemption intervals (evicted, readmitted).
    pub preemptions: Vec<(Nanos, Nanos)>,
    pub completion: Option<Nanos>,
    /// Never admissible on some replica it was routed to.
    pub rejected: bool,
    pub committed: u64,
    pub new_prompt_tokens: u64,
    pub mtp: MtpCounters,
}

impl LifecycleRecord {
    pub fn new(id: u64, session: u64, arrival: Nanos) -> Self {
        LifecycleRecord {
            id,
            session,
            arrival,
            ..Default::default()
        }
    }

    pub fn round_mut(&mut self) -> &mut RoundRecord {
        self.rounds.last_mut().expect("round started")
    }

    pub fn ttft(&self) -> Option<Nanos> {
        Some(self.rounds.first()?.first_token? - self.arrival)
    }

    /// Session arrival to the end of the final round's prefill.
    pub fn attft(&self) -> Option<Nanos> {
        Some(self.rounds.last()?.prefill_end? - self.arrival)
    }

    pub fn e2e(&self) -> Option<Nanos> {
        Some(self.completion? - self.arrival)
    }

    /// Mean inter-token gap pooled over rounds with at least two tokens.
    pub fn tpot(&self) -> Option<f64> {
        let mut span = 0u64;
        let mut gaps = 0u64;
        for r in &self.rounds {
            if let (Some(f), Some(l)) = (r.first_token, r.last_token) {
                if r.committed >= 2 {
                    span += l - f;
                    gaps += r.committed - 1;
                }
            }
        }
        (gaps > 0).then(|| span as f64 / gaps as f64)
    }

    /// Tokens decoded in rounds other than the last.
    pub fn hidden_tokens(&self) -> u64 {
        let n = self.rounds.len().saturating_sub(1);
        self.rounds[..n].iter().map(|r| r.committed).sum()
    }

    /// Checks that lifecycle timestamps never go backwards.
    pub fn check_order(&self) -> core::result::Result<(), String> {
        let id = self.id;
        let step = |t: &mut Nanos, name: &str, v: Option<Nanos>| -> core::result::Result<(), String> {
            if let Some(v) = v {
                if v < *t {
                    return Err(alloc::format!("request {id}: {name} at {v} before {t}"));
                }
                *t = v;
            }
            Ok(())
        };
        let mut t = self.arrival;
        for r in &self.rounds {
            step(&mut t, "enqueue", Some(r.enqueued))?;
            step(&mut t, "admission", r.admitted)?;
            step(&mut t, "prefill end", r.prefill_end)?;
            let mut first = t;
            step(&mut first, "first token", r.first_token)?;
            step(&mut t, "decode admission", r.decode_admitted)?;
            t = t.max(first);
            step(&mut t, "last token", r.last_token)?;
            step(&mut t, "round end", r.end)?;
        }
        step(&mut t, "completion", self.completion)?;
        for &(a, b) in self.transfers.iter().chain(&self.preemptions) {
            if b < a || a < self.arrival {
                return Err(alloc::format!("request {}: interval ({a}, {b}) out of order", self.id));
            }
        }
        Ok(())
    }
}

/// Free-block sample of one replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KvSample {
    pub time: Nanos,
    pub cluster: usize,
    pub replica: u32,
    pub free: u64,
    pub total: u64,
}

/// One started batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BatchSample {
    pub time: Nanos,
    pub cluster: usize,
    pub replica: u32,
    pub size: u32,
    pub decode: u32,
}

/// Run-wide counters not attached to a single request.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunCounters {
    pub kv_timeline: Vec<KvSample>,
    /// Filled only when [`crate::orchestration::SimOptions::batch_log`] is set.
    pub batch_log: Vec<BatchSample>,
    pub prefix_lookups: u64,
    pub prefix_hit_blocks: u64,
    pub prefix_queried_blocks: u64,
    pub padding: PaddingStats,
    pub preemptions: u64,
    pub batches: u64,
    pub batch_slots: u64,
    pub events: u64,
    pub reconfigured_at: Option<Nanos>,
}

impl RunCounters {
    pub fn merge(&mut self, o: &RunCounters) {
        self.kv_timeline.extend_from_slice(&o.kv_timeline);
        self.batch_log.extend_from_slice(&o.batch_log);
        self.prefix_lookups += o.prefix_lookups;
        self.prefix_hit_blocks += o.prefix_hit_blocks;
        self.prefix_queried_blocks += o.prefix_queried_blocks;
        self.padding.padded += o.padding.padded;
        self.padding.useful += o.padding.useful;
        self.padding.steps += o.padding.steps;
        self.preemptions += o.preemptions;
        self.batches += o.batches;
        self.batch_slots += o.batch_slots;
        self.events += o.events;
        self.reconfigured_at = self.reconfigured_at.or(o.reconfigured_at);
    }
}

/// Latency distribution in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Dist {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

impl Dist {
    /// From values in nanoseconds.
    pub fn of(mut ns: Vec<f64>) -> Self {
        if ns.is_empty() {
            return Dist::default();
        }
        ns.sort_unstable_by(f64::total_cmp);
        let ms = |v: f64| v / 1e6;
        Dist {
            count: ns.len(),
            mean: ms(ns.iter().sum::<f64>() / ns.len() as f64),
            p50: ms(nearest_rank(&ns, 0.5)),
            p95: ms(nearest_rank(&ns, 0.95)),
            p99: ms(nearest_rank(&ns, 0.99)),
            max: ms(ns[ns.len() - 1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SummaryReport {
    pub requests: usize,
    pub rejected: usize,
    pub ttft_ms: Dist,
    pub tpot_ms: Dist,
    pub e2e_ms: Dist,
    pub attft_ms: Dist,
    pub first_arrival_ns: Nanos,
    pub last_completion_ns: Nanos,
    pub makespan_ms: f64,
    pub committed_tokens: u64,
    pub prompt_tokens: u64,
    /// Committed tokens per second of makespan.
    pub throughput_tok_s: f64,
    /// Non-final-round tokens per second of makespan.
    pub hidden_planning_tok_s: f64,
    pub prefix_hit_ratio: f64,
    pub padding_inflation: f64,
    pub mean_batch_size: f64,
    pub preemptions: u64,
    pub mtp_commits_per_cycle: f64,
    pub events: u64,
    pub reconfigured_at_ns: Option<Nanos>,
    pub kv_timeline: Vec<KvSample>,
}

/// Computes the summary. Every record must be terminal.
pub fn finalize(records: &[LifecycleRecord], counters: &RunCounters) -> Result<SummaryReport> {
    if let Some(r) = records.iter().find(|r| r.completion.is_none()) {
        return Err(Error::NonTerminal(r.id));
    }
    let rejected = records.iter().filter(|r| r.rejected).count();
    let records: Vec<&LifecycleRecord> = records.iter().filter(|r| !r.rejected).collect();
    let first = records.iter().map(|r| r.arrival).min().unwrap_or(0);
    let last = records.iter().filter_map(|r| r.completion).max().unwrap_or(0);
    let makespan = last - first;
    let committed: u64 = records.iter().map(|r| r.committed).sum();
    let hidden: u64 = records.iter().map(|r| r.hidden_tokens()).sum();
    let per_s = |tokens: u64| {
        if makespan == 0 {
            0.0
        } else {
            tokens as f64 / ns_to_secs(makespan)
        }
    };
    let collect = |f: &dyn Fn(&LifecycleRecord) -> Option<f64>| records.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
    let mtp = records.iter().fold(MtpCounters::default(), |mut a, r| {
        a.committed += r.mtp.committed;
        a.cycles += r.mtp.cycles;
        a
    });
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(SummaryReport {
        requests: records.len(),
        rejected,
        ttft_ms: Dist::of(collect(&|r| r.ttft().map(|v| v as f64))),
        tpot_ms: Dist::of(collect(&|r| r.tpot())),
        e2e_ms: Dist::of(collect(&|r| r.e2e().map(|v| v as f64))),
        attft_ms: Dist::of(collect(&|r| r.attft().map(|v| v as f64))),
        first_arrival_ns: first,
        last_completion_ns: last,
        makespan_ms: ns_to_ms(makespan),
        committed_tokens: committed,
        prompt_tokens: records.iter().map(|r| r.new_prompt_tokens).sum(),
        throughput_tok_s: per_s(committed),
        hidden_planning_tok_s: per_s(hidden),
        prefix_hit_ratio: ratio(counters.prefix_hit_blocks, counters.prefix_queried_blocks),
        padding_inflation: counters.padding.inflation(),
        mean_batch_size: ratio(counters.batch_slots, counters.batches),
        preemptions: counters.preemptions,
        mtp_commits_per_cycle: ratio(mtp.committed, mtp.cycles),
        events: counters.events,
        reconfigured_at_ns: counters.reconfigured_at,
        kv_timeline: counters.kv_timeline.clone(),
    })
}
