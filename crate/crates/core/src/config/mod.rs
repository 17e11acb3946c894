//! Serving spec and its compilation into a simulation plan.
//!
//! A [`ServingSpec`] names the model, the hardware, the serving architecture,
//! one parallel layout per cluster role, runtime features, and the workload.
//! [`resolve_layout`] turns a role's layout into a [`ReplicaLayout`] (world
//! size and domain checks), and [`compile_plan`] instantiates every cluster,
//! channel, domain group, and KV budget the simulation needs.

mod layout;
mod plan;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::units::{GIB, NS_PER_US};
use crate::workload::WorkloadConfig;

pub use layout::{parse_layout, resolve_layout, ReplicaLayout};
pub use plan::{
    compile_plan, feasibility_check, memory_profile, replica_budget, ChannelKind, ChannelSpec, ClusterSpec,
    DomainAxis, DomainGroup, Feasibility, RuntimeContracts, SimulationPlan,
};

pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Colocated,
    Pdd,
    Afd,
}

impl Architecture {
    pub fn roles(self) -> &'static [Role] {
        match self {
            Architecture::Colocated => &[Role::C],
            Architecture::Pdd => &[Role::P, Role::D],
            Architecture::Afd => &[Role::P, Role::A, Role::F],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Colocated => "colocated",
            Architecture::Pdd => "pdd",
            Architecture::Afd => "afd",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Cluster role. `C` is co-located, `P` prefill, `D` decode, `A` decode
/// attention, `F` decode FFN/MoE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    C,
    P,
    D,
    A,
    F,
}

impl Role {
    /// Roles that host both the attention and the FFN domain.
    pub fn hosts_both_domains(self) -> bool {
        matches!(self, Role::C | Role::P | Role::D)
    }

    /// Roles that keep a KV cache.
    pub fn holds_kv(self) -> bool {
        !matches!(self, Role::F)
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "C" | "c" => Some(Role::C),
            "P" | "p" => Some(Role::P),
            "D" | "d" => Some(Role::D),
            "A" | "a" => Some(Role::A),
            "F" | "f" => Some(Role::F),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::C => "C",
            Role::P => "P",
            Role::D => "D",
            Role::A => "A",
            Role::F => "F",
        };
        f.write_str(s)
    }
}

/// Model dimensions needed for cost and memory math.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub layers: u32,
    pub hidden: u32,
    pub heads: u32,
    pub kv_heads: u32,
    pub head_dim: u32,
    /// Dense FFN intermediate size (ignored when `experts > 1`).
    pub intermediate: u32,
    /// Routed expert count; 0 or 1 means a dense model.
    pub experts: u32,
    pub top_k: u32,
    pub expert_intermediate: u32,
    pub vocab: u32,
    pub dtype_bytes: u32,
}

impl ModelSpec {
    pub fn is_moe(&self) -> bool {
        self.experts > 1
    }

    /// Small dense model used by tests and examples.
    pub fn tiny_dense() -> Self {
        ModelSpec {
            name: "tiny-dense".to_string(),
            layers: 4,
            hidden: 1024,
            heads: 8,
            kv_heads: 8,
            head_dim: 128,
            intermediate: 4096,
            experts: 0,
            top_k: 0,
            expert_intermediate: 0,
            vocab: 32000,
            dtype_bytes: 2,
        }
    }

    pub fn llama3_8b() -> Self {
        ModelSpec {
            name: "llama-3.1-8b".to_string(),
            layers: 32,
            hidden: 4096,
            heads: 32,
            kv_heads: 8,
            head_dim: 128,
            intermediate: 14336,
            experts: 0,
            top_k: 0,
            expert_intermediate: 0,
            vocab: 128256,
            dtype_bytes: 2,
        }
    }

    pub fn llama3_70b() -> Self {
        ModelSpec {
            name: "llama-3.3-70b".to_string(),
            layers: 80,
            hidden: 8192,
            heads: 64,
            kv_heads: 8,
            head_dim: 128,
            intermediate: 28672,
            experts: 0,
            top_k: 0,
            expert_intermediate: 0,
            vocab: 128256,
            dtype_bytes: 2,
        }
    }

    pub fn llama3_405b() -> Self {
        ModelSpec {
            name: "llama-3.1-405b".to_string(),
            layers: 126,
            hidden: 16384,
            heads: 128,
            kv_heads: 8,
            head_dim: 128,
            intermediate: 53248,
            experts: 0,
            top_k: 0,
            expert_intermediate: 0,
            vocab: 128256,
            dtype_bytes: 2,
        }
    }

    pub fn qwen3_30b_a3b() -> Self {
        ModelSpec {
            name: "qwen3-30b-a3b".to_string(),
            layers: 48,
            hidden: 2048,
            heads: 32,
            kv_heads: 4,
            head_dim: 128,
            intermediate: 6144,
            experts: 128,
            top_k: 8,
            expert_intermediate: 768,
            vocab: 151936,
            dtype_bytes: 2,
        }
    }

    pub fn qwen3_235b_a22b() -> Self {
        ModelSpec {
            name: "qwen3-235b-a22b".to_string(),
            layers: 94,
            hidden: 4096,
            heads: 64,
            kv_heads: 4,
            head_dim: 128,
            intermediate: 12288,
            experts: 128,
            top_k: 8,
            expert_intermediate: 1536,
            vocab: 151936,
            dtype_bytes: 2,
        }
    }
}

/// One GPU type from the catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuSpec {
    pub name: String,
    pub memory_bytes: u64,
    /// Dense peak rate in FLOP/s for the serving dtype.
    pub peak_flops: f64,
    /// HBM bandwidth in bytes/s.
    pub mem_bandwidth: f64,
    /// Intra-replica interconnect used by collectives.
    pub link: LinkSpec,
    /// Hourly price in dollars, when known.
    pub price_per_hour: Option<f64>,
}

/// Point-to-point or collective link: bandwidth in bytes/s and a fixed
/// per-message latency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub bandwidth: f64,
    pub latency_ns: u64,
}

impl LinkSpec {
    pub fn new(bandwidth: f64, latency_ns: u64) -> Self {
        LinkSpec {
            bandwidth,
            latency_ns,
        }
    }
}

/// Built-in GPU catalog. Prices are only filled in where a public hourly
/// price is part of the allocation study; other entries need a catalog file.
pub fn builtin_gpus() -> BTreeMap<String, GpuSpec> {
    let mut m = BTreeMap::new();
    let mut add = |name: &str, mem_gib: u64, tflops: f64, bw_tbs: f64, nvlink_gbs: f64, price| {
        m.insert(
            name.to_string(),
            GpuSpec {
                name: name.to_string(),
                memory_bytes: mem_gib * GIB,
                peak_flops: tflops * 1e12,
                mem_bandwidth: bw_tbs * 1e12,
                link: LinkSpec::new(nvlink_gbs * 1e9, 2 * NS_PER_US),
                price_per_hour: price,
            },
        );
    };
    add("H800", 80, 989.0, 3.35, 400.0, Some(3.49));
    add("H20", 96, 148.0, 4.0, 900.0, Some(1.59));
    add("H100", 80, 989.0, 3.35, 900.0, None);
    add("A800", 80, 312.0, 2.039, 400.0, None);
    m
}

/// Parallel degrees of one role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parallelism {
    pub pp: u32,
    pub tp_attn: u32,
    pub dp_attn: u32,
    pub tp_ffn: u32,
    pub ep_ffn: u32,
}

impl Parallelism {
    pub fn new(pp: u32, tp_attn: u32, dp_attn: u32, tp_ffn: u32, ep_ffn: u32) -> Self {
        Parallelism {
            pp,
            tp_attn,
            dp_attn,
            tp_ffn,
            ep_ffn,
        }
    }

    /// Layout whose FFN domain mirrors the attention domain (`tp_ffn = tp_attn`,
    /// `ep_ffn = dp_attn`).
    pub fn mirrored(pp: u32, tp: u32, dp: u32) -> Self {
        Parallelism::new(pp, tp, dp, tp, dp)
    }

    pub fn single() -> Self {
        Parallelism::mirrored(1, 1, 1)
    }

    pub fn validate(&self) -> crate::Result<()> {
        for (field, v) in [
            ("pp", self.pp),
            ("tp_attn", self.tp_attn),
            ("dp_attn", self.dp_attn),
            ("tp_ffn", self.tp_ffn),
            ("ep_ffn", self.ep_ffn),
        ] {
            if v == 0 {
                return Err(crate::Error::InvalidParallelDegree { field, value: 0 });
            }
        }
        Ok(())
    }
}

impl fmt::Display for Parallelism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "pp{}/tp{}/dp{}/ftp{}/ep{}",
            self.pp, self.tp_attn, self.dp_attn, self.tp_ffn, self.ep_ffn
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleSpec {
    pub parallel: Parallelism,
    pub replicas: u32,
    pub gpu: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    VllmV1,
    Sglang,
    Mlfq,
    H2qBr,
}

impl SchedulerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vllm_v1" | "vllm" => Some(SchedulerKind::VllmV1),
            "sglang" => Some(SchedulerKind::Sglang),
            "mlfq" => Some(SchedulerKind::Mlfq),
            "h2q_br" | "h2q" => Some(SchedulerKind::H2qBr),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::VllmV1 => "vllm_v1",
            SchedulerKind::Sglang => "sglang",
            SchedulerKind::Mlfq => "mlfq",
            SchedulerKind::H2qBr => "h2q_br",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoeRouting {
    Balanced,
    Skew,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecDecode {
    pub verify_tokens: u32,
    pub acceptance: f64,
}

/// H2Q-BR thresholds: long-round prompt length, cumulative service cap, and
/// short-streak liveness bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct H2qParams {
    pub long_round: u64,
    pub service_cap: u64,
    pub liveness: u64,
}

impl Default for H2qParams {
    fn default() -> Self {
        H2qParams {
            long_round: 8192,
            service_cap: 65536,
            liveness: 8,
        }
    }
}

/// Multiplicative scale factors standing in for quantized kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantScales {
    pub compute: f64,
    pub weight_bytes: f64,
    pub kv_bytes: f64,
}

impl Default for QuantScales {
    fn default() -> Self {
        QuantScales {
            compute: 1.0,
            weight_bytes: 1.0,
            kv_bytes: 1.0,
        }
    }
}

/// One-shot layout switch: when the active fraction falls below `threshold`,
/// drain, pay `cost_ns`, and re-shard the co-located role to `target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconfigSpec {
    pub threshold: f64,
    pub target: Parallelism,
    pub cost_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeSpec {
    pub scheduler: SchedulerKind,
    pub max_batch_size: u32,
    pub max_batch_tokens: u32,
    /// Prefill-batch token budget for the prefill-first scheduler. Defaults
    /// to `max_batch_tokens`.
    pub max_prefill_tokens: Option<u32>,
    pub gpu_memory_utilization: f64,
    pub watermark: f64,
    pub block_tokens: u32,
    pub chunked_prefill: bool,
    /// Per-request cap on prefill tokens per iteration.
    pub chunk_budget: Option<u32>,
    pub cuda_graph: bool,
    pub capture_bins: Vec<u32>,
    pub spec_decode: Option<SpecDecode>,
    pub prefix_cache: bool,
    pub moe_routing: MoeRouting,
    pub delta_ep_ns: u64,
    pub launch_overhead_ns: u64,
    /// Profiled framework peak increase per rank.
    pub framework_overhead_bytes: u64,
    /// Profiled non-framework residency per rank (collective workspaces).
    pub nonframework_bytes: u64,
    pub quant: QuantScales,
    pub h2q: H2qParams,
    pub mlfq_quanta: Vec<u64>,
    pub reconfig: Option<ReconfigSpec>,
}

impl Default for RuntimeSpec {
    fn default() -> Self {
        RuntimeSpec {
            scheduler: SchedulerKind::VllmV1,
            max_batch_size: 256,
            max_batch_tokens: 8192,
            max_prefill_tokens: None,
            gpu_memory_utilization: 0.9,
            watermark: 0.01,
            block_tokens: 16,
            chunked_prefill: true,
            chunk_budget: None,
            cuda_graph: true,
            capture_bins: vec![1, 2, 4, 8, 16, 32, 64],
            spec_decode: None,
            prefix_cache: false,
            moe_routing: MoeRouting::Balanced,
            delta_ep_ns: 0,
            launch_overhead_ns: 4 * NS_PER_US,
            framework_overhead_bytes: 2 * GIB,
            nonframework_bytes: GIB / 2,
            quant: QuantScales::default(),
            h2q: H2qParams::default(),
            mlfq_quanta: vec![512, 2048, 8192, u64::MAX],
            reconfig: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServingSpec {
    pub spec_version: u32,
    pub model: ModelSpec,
    pub architecture: Architecture,
    pub roles: BTreeMap<Role, RoleSpec>,
    pub gpus: BTreeMap<String, GpuSpec>,
    /// Link used for cross-cluster KV and activation transfers.
    pub inter_cluster_link: LinkSpec,
    pub runtime: RuntimeSpec,
    pub workload: WorkloadConfig,
    /// Declared GPU total; checked against the compiled plan when present.
    pub total_gpus: Option<u64>,
    pub seed: u64,
}

impl ServingSpec {
    /// Minimal spec: given model and architecture, one single-GPU replica per
    /// role on H800, default runtime and workload.
    pub fn minimal(model: ModelSpec, architecture: Architecture) -> Self {
        let mut roles = BTreeMap::new();
        for &role in architecture.roles() {
            roles.insert(
                role,
                RoleSpec {
                    parallel: Parallelism::single(),
                    replicas: 1,
                    gpu: "H800".to_string(),
                },
            );
        }
        ServingSpec {
            spec_version: SPEC_VERSION,
            model,
            architecture,
            roles,
            gpus: builtin_gpus(),
            inter_cluster_link: LinkSpec::new(50e9, 10 * NS_PER_US),
            runtime: RuntimeSpec::default(),
            workload: WorkloadConfig::default(),
            total_gpus: None,
            seed: 0,
        }
    }

    /// Simulated GPUs: replicas times per-replica world size, over all roles.
    pub fn gpu_count(&self) -> crate::Result<u64> {
        self.roles
            .keys()
            .try_fold(0, |acc, &r| Ok(acc + self.roles[&r].replicas as u64 * resolve_layout(self, r)?.world_size))
    }

    pub fn role(&self, role: Role) -> crate::Result<&RoleSpec> {
        self.roles.get(&role).ok_or(crate::Error::MissingRole(role))
    }

    pub fn gpu(&self, name: &str) -> crate::Result<&GpuSpec> {
        self.gpus
            .get(name)
            .ok_or_else(|| crate::Error::UnknownGpu(name.to_string()))
    }

    pub fn gpu_for(&self, role: Role) -> crate::Result<&GpuSpec> {
        self.gpu(&self.role(role)?.gpu)
    }

    pub fn set_parallel(&mut self, role: Role, parallel: Parallelism, replicas: u32) {
        let gpu = self
            .roles
            .get(&role)
            .map(|r| r.gpu.clone())
            .unwrap_or_else(|| "H800".to_string());
        self.roles.insert(
            role,
            RoleSpec {
                parallel,
                replicas,
                gpu,
            },
        );
    }

    /// Structural validation shared by every entry point.
    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error;
        if self.spec_version != SPEC_VERSION {
            return Err(Error::InvalidConfig(alloc::format!(
                "unsupported spec_version {}",
                self.spec_version
            )));
        }
        for &role in self.architecture.roles() {
            let r = self.role(role)?;
            layout::layout_for(role, &r.parallel, &r.gpu)?;
            if r.replicas == 0 {
                return Err(Error::InvalidParallelDegree {
                    field: "replicas",
                    value: 0,
                });
            }
            self.gpu(&r.gpu)?;
        }
        for role in self.roles.keys() {
            if !self.architecture.roles().contains(role) {
                return Err(Error::RoleNotInArchitecture(*role, self.architecture.name()));
            }
        }
        let m = &self.model;
        if m.layers == 0 || m.hidden == 0 || m.heads == 0 || m.kv_heads == 0 || m.head_dim == 0 {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        if m.is_moe() && (m.top_k == 0 || m.top_k > m.experts || m.expert_intermediate == 0) {
            return Err(Error::InvalidConfig("moe model needs 1 <= top_k <= experts".into()));
        }
        let rt = &self.runtime;
        if rt.block_tokens == 0 || rt.max_batch_size == 0 || rt.max_batch_tokens == 0 {
            return Err(Error::InvalidConfig(
                "block_tokens, max_batch_size and max_batch_tokens must be positive".into(),
            ));
        }
        if !(rt.gpu_memory_utilization > 0.0 && rt.gpu_memory_utilization <= 1.0) {
            return Err(Error::InvalidConfig("gpu_memory_utilization must be in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&rt.watermark) {
            return Err(Error::InvalidConfig("watermark must be in [0, 1)".into()));
        }
        crate::adapters::CaptureBinLadder::new(rt.capture_bins.clone())?;
        if let Some(sd) = rt.spec_decode {
            if sd.verify_tokens == 0 || !(0.0..=1.0).contains(&sd.acceptance) {
                return Err(Error::InvalidConfig("spec decode needs k >= 1 and p in [0, 1]".into()));
            }
        }
        if rt.mlfq_quanta.is_empty() || rt.mlfq_quanta.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("mlfq quanta must be strictly increasing".into()));
        }
        if self.inter_cluster_link.latency_ns == 0 || !(self.inter_cluster_link.bandwidth > 0.0) {
            return Err(Error::InvalidConfig(
                "inter-cluster link needs positive bandwidth and latency".into(),
            ));
        }
        if let Some(rc) = rt.reconfig {
            if self.architecture != Architecture::Colocated {
                return Err(Error::InvalidConfig(
                    "layout switching is only modeled for the co-located architecture".into(),
                ));
            }
            layout::layout_for(Role::C, &rc.target, "")?;
        }
        self.workload.validate()?;
        Ok(())
    }
}
