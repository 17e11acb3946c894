//! Sweep grids and allocation-scoring documents.
//!
//! A grid names a base spec and, per variant, candidate layouts and replica
//! counts for each role; candidates are the cartesian product:
//!
//! ```toml
//! base = "spec.toml"
//! budget_gpus = 256
//!
//! [sla]
//! min_speed = 50.0
//!
//! [[variant]]
//! architecture = "pdd"
//! roles.P = { layouts = ["pp1/tp8/dp1"], replicas = [4, 8] }
//! roles.D = { layouts = ["pp1/tp8/dp2", "pp1/tp8/dp4"], replicas = [2], gpu = "H20" }
//! ```
//!
//! An allocation document compares a candidate GPU assignment with a
//! baseline, either from given throughputs or by simulating a serving spec:
//!
//! ```toml
//! premium_gpu = "H800"
//! [baseline.roles]
//! P = { count = 512, gpu = "H800" }
//! D = { count = 512, gpu = "H800" }
//! [candidate.roles]
//! P = { count = 512, gpu = "H800" }
//! D = { count = 512, gpu = "H20" }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use servesim_core::config::{parse_layout, Architecture, Role, RoleSpec, ServingSpec};
use servesim_core::fidelity::Fidelity;
use servesim_core::metrics::{
    compute_bound, run_sweep, score_allocation, Allocation, AllocationScore, Candidate, ParetoPoint, Sla, SweepReport,
};
use servesim_core::orchestration::{SimOptions, SimOutput};

use crate::exec::{run, ExecMode};
use crate::spec_file::{load_spec, requests_for};
use crate::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridDoc {
    base: String,
    budget_gpus: Option<u64>,
    #[serde(default)]
    sla: SlaDoc,
    variant: Vec<VariantDoc>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SlaDoc {
    min_speed: Option<f64>,
    max_p95_tpot_ms: Option<f64>,
    max_p95_ttft_ms: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariantDoc {
    architecture: Architecture,
    roles: BTreeMap<String, AxisDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AxisDoc {
    layouts: Vec<String>,
    #[serde(default = "one")]
    replicas: Vec<u32>,
    gpu: Option<String>,
}

fn one() -> Vec<u32> {
    vec![1]
}

/// A loaded grid: expanded candidates plus the SLA and GPU budget.
#[derive(Debug, Clone)]
pub struct Grid {
    pub candidates: Vec<Candidate>,
    pub sla: Sla,
    pub budget_gpus: Option<u64>,
}

/// Expands a grid document against its base spec.
pub fn parse_grid(text: &str, base: &ServingSpec) -> Result<Grid> {
    let doc: GridDoc = toml::from_str(text)?;
    expand(&doc, base)
}

pub fn load_grid(path: &Path) -> Result<Grid> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(path.to_path_buf(), e))?;
    let doc: GridDoc = toml::from_str(&text)?;
    let base = load_spec(&path.parent().unwrap_or(Path::new(".")).join(&doc.base))?;
    expand(&doc, &base)
}

fn expand(doc: &GridDoc, base: &ServingSpec) -> Result<Grid> {
    let mut candidates = Vec::new();
    for v in &doc.variant {
        let mut axes: Vec<(Role, Vec<RoleSpec>)> = Vec::new();
        for (key, a) in &v.roles {
            let role = Role::parse(key).ok_or_else(|| Error::Spec(format!("unknown role {key:?}")))?;
            let gpu = a
                .gpu
                .clone()
                .or_else(|| base.roles.get(&role).map(|r| r.gpu.clone()))
                .unwrap_or_else(|| "H800".to_string());
            let mut opts = Vec::new();
            for l in &a.layouts {
                let parallel = parse_layout(role, l)?;
                for &replicas in &a.replicas {
                    opts.push(RoleSpec {
                        parallel,
                        replicas,
                        gpu: gpu.clone(),
                    });
                }
            }
            axes.push((role, opts));
        }
        let mut combos: Vec<BTreeMap<Role, RoleSpec>> = vec![BTreeMap::new()];
        for (role, opts) in &axes {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    opts.iter().map(move |o| {
                        let mut c = c.clone();
                        c.insert(*role, o.clone());
                        c
                    })
                })
                .collect();
        }
        for roles in combos {
            let label = format!(
                "{}:{}",
                v.architecture,
                roles
                    .iter()
                    .map(|(r, s)| format!("{r}={}x{}@{}", s.replicas, s.parallel, s.gpu))
                    .collect::<Vec<_>>()
                    .join(",")
            );
            let mut spec = base.clone();
            spec.architecture = v.architecture;
            spec.roles = roles;
            spec.total_gpus = None;
            if v.architecture != Architecture::Colocated {
                spec.runtime.reconfig = None;
            }
            candidates.push(Candidate { label, spec });
        }
    }
    Ok(Grid {
        candidates,
        sla: Sla {
            min_speed: doc.sla.min_speed,
            max_p95_tpot_ms: doc.sla.max_p95_tpot_ms,
            max_p95_ttft_ms: doc.sla.max_p95_ttft_ms,
        },
        budget_gpus: doc.budget_gpus,
    })
}

fn simulate_spec(spec: &ServingSpec, fidelity: &Fidelity) -> Result<SimOutput> {
    spec.validate()?;
    run(spec, fidelity, requests_for(spec)?, SimOptions::default(), ExecMode::Sequential, None)
}

/// Runs a grid. Feasible candidates are simulated in parallel; skipping and
/// frontier extraction follow the candidate order.
pub fn sweep(grid: &Grid, fidelity: &Fidelity) -> Result<SweepReport> {
    let points: Vec<Option<Result<ParetoPoint>>> = grid
        .candidates
        .par_iter()
        .map(|c| {
            let gpus = c.spec.gpu_count().ok()?;
            if grid.budget_gpus.is_some_and(|b| gpus > b) {
                return None;
            }
            if !servesim_core::config::feasibility_check(&c.spec, fidelity).is_feasible() {
                return None;
            }
            Some(simulate_spec(&c.spec, fidelity).map(|out| {
                ParetoPoint::from_summary(&c.label, c.spec.architecture.name(), &out.summary, gpus)
            }))
        })
        .collect();
    let mut by_label: BTreeMap<String, ParetoPoint> = BTreeMap::new();
    for (c, p) in grid.candidates.iter().zip(points) {
        if let Some(p) = p {
            by_label.insert(c.label.clone(), p?);
        }
    }
    Ok(run_sweep(&grid.candidates, &grid.sla, grid.budget_gpus, fidelity, |c| {
        by_label
            .remove(&c.label)
            .ok_or_else(|| servesim_core::Error::InvalidConfig(format!("candidate {} was not simulated", c.label)))
    })?)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AllocDoc {
    #[serde(default = "premium")]
    premium_gpu: String,
    #[serde(default = "half")]
    compute_threshold: f64,
    baseline: AllocSide,
    candidate: AllocSide,
    #[serde(default)]
    sla: SlaDoc,
}

fn premium() -> String {
    "H800".to_string()
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AllocSide {
    roles: BTreeMap<String, AllocRole>,
    /// Measured throughput; simulated from `--spec` when absent.
    throughput: Option<f64>,
    /// SLA verdict when the throughput is given.
    sla_ok: Option<bool>,
    /// Compute-bound roles when the throughput is given.
    compute_bound: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AllocRole {
    count: u64,
    gpu: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreReport {
    pub score: AllocationScore,
    pub baseline_throughput: f64,
    pub candidate_throughput: f64,
    pub compute_bound_roles: Vec<Role>,
}

fn allocation(side: &AllocSide) -> Result<Allocation> {
    let mut g = Allocation::default();
    for (k, r) in &side.roles {
        let role = Role::parse(k).ok_or_else(|| Error::Spec(format!("unknown role {k:?}")))?;
        g = g.with(role, r.count, &r.gpu);
    }
    Ok(g)
}

fn with_gpus(spec: &ServingSpec, g: &Allocation) -> ServingSpec {
    let mut s = spec.clone();
    for (role, (_, gpu)) in &g.roles {
        if let Some(r) = s.roles.get_mut(role) {
            r.gpu = gpu.clone();
        }
    }
    s
}

/// Scores an allocation document. Missing throughputs, SLA verdicts, and
/// bottleneck tags come from simulating `spec` under each GPU assignment;
/// bottlenecks are tagged on the baseline run.
pub fn score(text: &str, spec: Option<&ServingSpec>, fidelity: &Fidelity) -> Result<ScoreReport> {
    let doc: AllocDoc = toml::from_str(text)?;
    let g0 = allocation(&doc.baseline)?;
    let g = allocation(&doc.candidate)?;
    let sla = Sla {
        min_speed: doc.sla.min_speed,
        max_p95_tpot_ms: doc.sla.max_p95_tpot_ms,
        max_p95_ttft_ms: doc.sla.max_p95_ttft_ms,
    };
    let need_spec = || spec.ok_or_else(|| Error::Spec("throughput missing and no --spec given".into()));
    let mut tags: Vec<Role> = Vec::new();
    let mut catalog = servesim_core::config::builtin_gpus();
    if let Some(s) = spec {
        catalog.extend(s.gpus.clone());
    }
    let t0 = match doc.baseline.throughput {
        Some(t) => t,
        None => {
            let s = with_gpus(need_spec()?, &g0);
            let out = simulate_spec(&s, fidelity)?;
            for st in &out.roles {
                if compute_bound(st.compute_ns, st.busy_ns, doc.compute_threshold) && !tags.contains(&st.role) {
                    tags.push(st.role);
                }
            }
            out.summary.throughput_tok_s
        }
    };
    let (t, sla_ok) = match doc.candidate.throughput {
        Some(t) => (t, doc.candidate.sla_ok.unwrap_or(true)),
        None => {
            let s = with_gpus(need_spec()?, &g);
            let out = simulate_spec(&s, fidelity)?;
            let gpus = s.gpu_count()?;
            let p = ParetoPoint::from_summary("candidate", s.architecture.name(), &out.summary, gpus);
            (out.summary.throughput_tok_s, doc.candidate.sla_ok.unwrap_or(sla.admits(&p)))
        }
    };
    if let Some(list) = &doc.candidate.compute_bound {
        for k in list {
            let r = Role::parse(k).ok_or_else(|| Error::Spec(format!("unknown role {k:?}")))?;
            if !tags.contains(&r) {
                tags.push(r);
            }
        }
    }
    let score = score_allocation(&g, &g0, t, t0, sla_ok, &tags, &doc.premium_gpu, &catalog)?;
    Ok(ScoreReport {
        score,
        baseline_throughput: t0,
        candidate_throughput: t,
        compute_bound_roles: tags,
    })
}
