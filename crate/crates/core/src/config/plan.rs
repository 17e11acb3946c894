use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::Serialize;

use super::layout::{layout_for, ReplicaLayout};
use super::{resolve_layout, Architecture, LinkSpec, Parallelism, Role, ServingSpec};
use crate::fidelity::{kv_block_budget, kv_block_bytes, weight_bytes_per_rank, Fidelity, MemoryProfile};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ChannelKind {
    /// Request-granular KV-cache handoff (P to D or A).
    KvTransfer,
    /// Per-layer activation ping-pong between A and F.
    Activation,
    /// Reasoning-round re-entry back to the prefill role.
    Requeue,
}

/// Directed inter-cluster channel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelSpec {
    pub id: usize,
    pub src: usize,
    pub dst: usize,
    pub kind: ChannelKind,
    /// Minimum gap between the send time and the delivered timestamp.
    pub lookahead_ns: u64,
    pub link: LinkSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DomainAxis {
    Pipeline,
    AttnTp,
    AttnDp,
    FfnTp,
    FfnEp,
}

/// Communication group registered for one active parallel axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DomainGroup {
    pub cluster: usize,
    pub axis: DomainAxis,
    pub size: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSpec {
    pub id: usize,
    pub role: Role,
    pub layout: ReplicaLayout,
    pub replicas: u32,
    pub memory: MemoryProfile,
    pub block_bytes: u64,
    /// KV capacity of one replica (per-rank blocks times attention DP).
    pub kv_blocks_per_replica: u64,
    pub inbound: Vec<usize>,
    pub outbound: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuntimeContracts {
    pub capture_bins: Vec<u32>,
    pub cuda_graph: bool,
    pub prefix_cache: bool,
    /// Extra KV slots a decode step may claim for speculative tokens.
    pub speculative_tokens: u32,
    pub block_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationPlan {
    pub architecture: Architecture,
    pub clusters: Vec<ClusterSpec>,
    pub channels: Vec<ChannelSpec>,
    pub domain_groups: Vec<DomainGroup>,
    pub contracts: RuntimeContracts,
    pub total_gpus: u64,
}

impl SimulationPlan {
    pub fn cluster_of(&self, role: Role) -> Option<&ClusterSpec> {
        self.clusters.iter().find(|c| c.role == role)
    }

    pub fn channel(&self, src: usize, dst: usize) -> Option<&ChannelSpec> {
        self.channels.iter().find(|c| c.src == src && c.dst == dst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Feasibility {
    Feasible { kv_blocks: Vec<(Role, u64)> },
    Infeasible(String),
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible { .. })
    }
}

/// Memory footprint of one representative rank of `layout`.
pub fn memory_profile(spec: &ServingSpec, layout: &ReplicaLayout) -> MemoryProfile {
    MemoryProfile {
        weight_bytes: weight_bytes_per_rank(&spec.model, layout, spec.runtime.quant.weight_bytes),
        framework_peak_bytes: spec.runtime.framework_overhead_bytes,
        nonframework_bytes: spec.runtime.nonframework_bytes,
    }
}

struct RoleBudget {
    layout: ReplicaLayout,
    memory: MemoryProfile,
    block_bytes: u64,
    per_rank_blocks: u64,
}

fn role_budget(spec: &ServingSpec, role: Role) -> Result<core::result::Result<RoleBudget, String>> {
    let layout = resolve_layout(spec, role)?;
    layout_budget(spec, layout)
}

fn layout_budget(spec: &ServingSpec, layout: ReplicaLayout) -> Result<core::result::Result<RoleBudget, String>> {
    let role = layout.role;
    let gpu = spec.gpu(&layout.gpu)?;
    let memory = memory_profile(spec, &layout);
    let budget = gpu.memory_bytes as f64 * spec.runtime.gpu_memory_utilization;
    if memory.weight_bytes as f64 > budget {
        return Ok(Err(format!(
            "role {role}: weights do not fit ({} bytes per rank, budget {:.0})",
            memory.weight_bytes, budget
        )));
    }
    let block_bytes = kv_block_bytes(&spec.model, &layout, spec.runtime.block_tokens, spec.runtime.quant.kv_bytes);
    let per_rank_blocks = if role.holds_kv() {
        let blocks = kv_block_budget(
            gpu.memory_bytes,
            spec.runtime.gpu_memory_utilization,
            &memory,
            block_bytes,
        );
        if blocks == 0 {
            return Ok(Err(format!("role {role}: zero KV blocks")));
        }
        blocks
    } else {
        0
    };
    Ok(Ok(RoleBudget {
        layout,
        memory,
        block_bytes,
        per_rank_blocks,
    }))
}

/// Layout, KV blocks per replica, and per-rank block bytes of `role` re-sharded
/// to `parallel`.
pub fn replica_budget(spec: &ServingSpec, role: Role, parallel: &Parallelism) -> Result<(ReplicaLayout, u64, u64)> {
    let gpu = &spec.role(role)?.gpu;
    let layout = layout_for(role, parallel, gpu)?;
    match layout_budget(spec, layout)? {
        Ok(b) => Ok((b.layout.clone(), b.per_rank_blocks * b.layout.dp_attn as u64, b.block_bytes)),
        Err(reason) => Err(Error::Infeasible(reason)),
    }
}

/// Static memory filter: infeasible when any role's per-rank weights exceed
/// the memory budget or a KV-holding role resolves to zero blocks.
pub fn feasibility_check(spec: &ServingSpec, _fidelity: &Fidelity) -> Feasibility {
    let mut kv_blocks = Vec::new();
    for &role in spec.architecture.roles() {
        match role_budget(spec, role) {
            Err(e) => return Feasibility::Infeasible(format!("{e}")),
            Ok(Err(reason)) => return Feasibility::Infeasible(reason),
            Ok(Ok(b)) => kv_blocks.push((role, b.per_rank_blocks * b.layout.dp_attn as u64)),
        }
    }
    Feasibility::Feasible { kv_blocks }
}

/// Instantiates clusters, channels, domain groups, and capacity envelopes.
pub fn compile_plan(spec: &ServingSpec, fidelity: &Fidelity) -> Result<SimulationPlan> {
    spec.validate()?;
    let mut clusters = Vec::new();
    let mut domain_groups = Vec::new();
    for (id, &role) in spec.architecture.roles().iter().enumerate() {
        let budget = match role_budget(spec, role)? {
            Ok(b) => b,
            Err(reason) => return Err(Error::Infeasible(reason)),
        };
        let l = &budget.layout;
        for (axis, size, active) in [
            (DomainAxis::Pipeline, l.pp, true),
            (DomainAxis::AttnTp, l.tp_attn, role != Role::F),
            (DomainAxis::AttnDp, l.dp_attn, role != Role::F),
            (DomainAxis::FfnTp, l.tp_ffn, role != Role::A),
            (DomainAxis::FfnEp, l.ep_ffn, role != Role::A),
        ] {
            if active && size > 1 {
                domain_groups.push(DomainGroup {
                    cluster: id,
                    axis,
                    size,
                });
            }
        }
        clusters.push(ClusterSpec {
            id,
            role,
            replicas: spec.role(role)?.replicas,
            kv_blocks_per_replica: budget.per_rank_blocks * l.dp_attn as u64,
            block_bytes: budget.block_bytes,
            memory: budget.memory,
            layout: budget.layout,
            inbound: Vec::new(),
            outbound: Vec::new(),
        });
    }

    let link = spec.inter_cluster_link;
    let la = link.latency_ns.max(1);
    let wiring: &[(usize, usize, ChannelKind, u64)] = match spec.architecture {
        Architecture::Colocated => &[],
        // Cluster ids follow `Architecture::roles`: P=0, D=1 / P=0, A=1, F=2.
        Architecture::Pdd => &[(0, 1, ChannelKind::KvTransfer, la), (1, 0, ChannelKind::Requeue, 0)],
        Architecture::Afd => &[
            (0, 1, ChannelKind::KvTransfer, la),
            (1, 2, ChannelKind::Activation, la),
            (2, 1, ChannelKind::Activation, la),
            (1, 0, ChannelKind::Requeue, 0),
        ],
    };
    let mut channels = Vec::new();
    for (id, &(src, dst, kind, lookahead_ns)) in wiring.iter().enumerate() {
        channels.push(ChannelSpec {
            id,
            src,
            dst,
            kind,
            lookahead_ns,
            link,
        });
        clusters[src].outbound.push(id);
        clusters[dst].inbound.push(id);
    }

    let total_gpus: u64 = clusters
        .iter()
        .map(|c| c.replicas as u64 * c.layout.world_size)
        .sum();
    if let Some(declared) = spec.total_gpus {
        if declared != total_gpus {
            return Err(Error::InvalidConfig(format!(
                "declared {declared} GPUs but layouts use {total_gpus}"
            )));
        }
    }
    let _ = fidelity;
    Ok(SimulationPlan {
        architecture: spec.architecture,
        clusters,
        channels,
        domain_groups,
        contracts: RuntimeContracts {
            capture_bins: spec.runtime.capture_bins.clone(),
            cuda_graph: spec.runtime.cuda_graph,
            prefix_cache: spec.runtime.prefix_cache,
            speculative_tokens: spec.runtime.spec_decode.map_or(0, |s| s.verify_tokens),
            block_tokens: spec.runtime.block_tokens,
        },
        total_gpus,
    })
}
