use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::Serialize;

use super::SummaryReport;
use crate::config::{feasibility_check, Feasibility, GpuSpec, Role, ServingSpec};
use crate::fidelity::Fidelity;
use crate::{Error, Result};

/// Minimum cost efficiency for the ROI gate.
pub const CE_GATE: f64 = 1.08;

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoPoint {
    pub label: String,
    pub architecture: String,
    /// Per-user generation speed, tokens/s (inverse median TPOT).
    pub speed: f64,
    /// Tokens/s per GPU.
    pub throughput: f64,
    pub p95_tpot_ms: f64,
    pub p95_ttft_ms: f64,
}

impl ParetoPoint {
    pub fn from_summary(label: &str, architecture: &str, rep: &SummaryReport, gpus: u64) -> Self {
        ParetoPoint {
            label: label.to_string(),
            architecture: architecture.to_string(),
            speed: if rep.tpot_ms.p50 > 0.0 { 1e3 / rep.tpot_ms.p50 } else { 0.0 },
            throughput: rep.throughput_tok_s / gpus.max(1) as f64,
            p95_tpot_ms: rep.tpot_ms.p95,
            p95_ttft_ms: rep.ttft_ms.p95,
        }
    }

    fn dominates(&self, o: &ParetoPoint) -> bool {
        self.speed >= o.speed && self.throughput >= o.throughput && (self.speed > o.speed || self.throughput > o.throughput)
    }
}

/// Service-level thresholds. A per-user speed floor `s` caps p95 TPOT at
/// `1000 / s` ms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Sla {
    pub min_speed: Option<f64>,
    pub max_p95_tpot_ms: Option<f64>,
    pub max_p95_ttft_ms: Option<f64>,
}

impl Sla {
    pub fn admits(&self, p: &ParetoPoint) -> bool {
        let tpot_cap = match (self.min_speed, self.max_p95_tpot_ms) {
            (Some(s), Some(t)) => Some(t.min(1e3 / s)),
            (Some(s), None) => Some(1e3 / s),
            (None, t) => t,
        };
        tpot_cap.is_none_or(|c| p.p95_tpot_ms <= c) && self.max_p95_ttft_ms.is_none_or(|c| p.p95_ttft_ms <= c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Frontier {
    pub points: Vec<ParetoPoint>,
    /// Index into `points` of each architecture's highest-throughput point.
    pub best: BTreeMap<String, usize>,
}

/// Drops SLA violators and dominated points.
pub fn pareto_filter(points: &[ParetoPoint], sla: &Sla) -> Result<Frontier> {
    if points.is_empty() {
        return Err(Error::Empty("pareto points"));
    }
    let ok: Vec<&ParetoPoint> = points.iter().filter(|p| sla.admits(p)).collect();
    let mut front: Vec<ParetoPoint> = Vec::new();
    for p in &ok {
        if ok.iter().any(|q| q.dominates(p)) {
            continue;
        }
        // Exact duplicates keep one representative.
        if front.iter().any(|f| f.speed == p.speed && f.throughput == p.throughput) {
            continue;
        }
        front.push((*p).clone());
    }
    front.sort_by(|a, b| a.speed.total_cmp(&b.speed).then(b.throughput.total_cmp(&a.throughput)));
    let mut best: BTreeMap<String, usize> = BTreeMap::new();
    for (i, p) in front.iter().enumerate() {
        let e = best.entry(p.architecture.clone()).or_insert(i);
        if front[*e].throughput < p.throughput {
            *e = i;
        }
    }
    Ok(Frontier { points: front, best })
}

/// GPUs per role: count and GPU type.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Allocation {
    pub roles: BTreeMap<Role, (u64, String)>,
}

impl Allocation {
    pub fn with(mut self, role: Role, count: u64, gpu: &str) -> Self {
        self.roles.insert(role, (count, gpu.to_string()));
        self
    }
}

/// Hourly spend of an allocation.
pub fn price(g: &Allocation, catalog: &BTreeMap<String, GpuSpec>) -> Result<f64> {
    g.roles.values().try_fold(0.0, |acc, (n, gpu)| {
        let p = catalog
            .get(gpu)
            .and_then(|s| s.price_per_hour)
            .ok_or_else(|| Error::UnknownGpu(gpu.clone()))?;
        Ok(acc + *n as f64 * p)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Gates {
    pub alignment: bool,
    pub sla: bool,
    pub roi: bool,
}

impl Gates {
    pub fn all(&self) -> bool {
        self.alignment && self.sla && self.roi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationScore {
    pub price: f64,
    pub baseline_price: f64,
    pub sr: f64,
    pub ce: f64,
    pub gates: Gates,
}

/// A role is compute-bound when compute dominates its busy time.
pub fn compute_bound(compute_ns: u64, busy_ns: u64, threshold: f64) -> bool {
    busy_ns > 0 && compute_ns as f64 / busy_ns as f64 > threshold
}

/// Spend ratio, cost efficiency, and the three deployment gates.
/// `compute_bound_roles` must use `premium_gpu`.
#[allow(clippy::too_many_arguments)]
pub fn score_allocation(
    g: &Allocation,
    g0: &Allocation,
    t_g: f64,
    t_g0: f64,
    sla_ok: bool,
    compute_bound_roles: &[Role],
    premium_gpu: &str,
    catalog: &BTreeMap<String, GpuSpec>,
) -> Result<AllocationScore> {
    let p = price(g, catalog)?;
    let p0 = price(g0, catalog)?;
    if !catalog.contains_key(premium_gpu) {
        return Err(Error::UnknownGpu(premium_gpu.to_string()));
    }
    let sr = p0 / p;
    let ce = (t_g / p) / (t_g0 / p0);
    let alignment = compute_bound_roles
        .iter()
        .all(|r| g.roles.get(r).is_none_or(|(_, gpu)| gpu == premium_gpu));
    Ok(AllocationScore {
        price: p,
        baseline_price: p0,
        sr,
        ce,
        gates: Gates {
            alignment,
            sla: sla_ok,
            roi: ce > CE_GATE,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub label: String,
    pub spec: ServingSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CandidateOutcome {
    Skipped(String),
    Simulated(ParetoPoint),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub outcomes: Vec<(String, CandidateOutcome)>,
    pub simulated: usize,
    pub frontier: Option<Frontier>,
}

/// Skips infeasible or over-budget candidates, simulates the rest, and
/// extracts the SLA-filtered frontier.
pub fn run_sweep(
    grid: &[Candidate],
    sla: &Sla,
    budget_gpus: Option<u64>,
    fidelity: &Fidelity,
    mut simulate: impl FnMut(&Candidate) -> Result<ParetoPoint>,
) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(Error::Empty("sweep grid"));
    }
    let mut outcomes = Vec::with_capacity(grid.len());
    let mut points = Vec::new();
    for c in grid {
        let over = match (c.spec.gpu_count(), budget_gpus) {
            (Err(e), _) => Some(alloc::format!("{e}")),
            (Ok(g), Some(b)) if g > b => Some(alloc::format!("{g} GPUs over budget {b}")),
            _ => None,
        };
        let outcome = if let Some(why) = over {
            CandidateOutcome::Skipped(why)
        } else {
            match feasibility_check(&c.spec, fidelity) {
                Feasibility::Infeasible(why) => CandidateOutcome::Skipped(why),
                Feasibility::Feasible { .. } => {
                    let p = simulate(c)?;
                    points.push(p.clone());
                    CandidateOutcome::Simulated(p)
                }
            }
        };
        outcomes.push((c.label.clone(), outcome));
    }
    let frontier = if points.is_empty() {
        None
    } else {
        Some(pareto_filter(&points, sla)?)
    };
    Ok(SweepReport {
        outcomes,
        simulated: points.len(),
        frontier,
    })
}
