//! TOML serving-spec documents, GPU catalogs, traces, and coefficient files.
//!
//! A spec document looks like:
//!
//! ```toml
//! spec_version = 1
//! architecture = "pdd"
//! total_gpus = 1024
//!
//! [model]
//! preset = "llama3-405b"
//!
//! [roles.P]
//! parallel = "pp16/tp8/dp2"
//! gpu = "H100"
//!
//! [roles.D]
//! parallel = { pp = 16, tp_attn = 8, dp_attn = 6 }
//! replicas = 1
//! gpu = "H20"
//!
//! [workload]
//! pattern = "prefill_heavy"
//! num_requests = 1024
//! arrival = { poisson = { qps = 64.0 } }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use servesim_core::config::{
    builtin_gpus, parse_layout, Architecture, GpuSpec, LinkSpec, ModelSpec, Parallelism, Role, RoleSpec,
    RuntimeSpec, ServingSpec, SPEC_VERSION,
};
use servesim_core::fidelity::{CoeffTable, PredictorSet};
use servesim_core::units::NS_PER_US;
use servesim_core::workload::{parse_trace, Pattern, Request, WorkloadConfig};

use crate::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDoc {
    spec_version: u32,
    model: ModelDoc,
    architecture: Architecture,
    roles: BTreeMap<String, RoleDoc>,
    /// Catalog file, relative to this file.
    gpu_catalog: Option<String>,
    #[serde(default)]
    gpus: BTreeMap<String, GpuDoc>,
    inter_cluster_link: Option<LinkDoc>,
    #[serde(default)]
    runtime: RuntimeSpec,
    workload: WorkloadConfig,
    total_gpus: Option<u64>,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    preset: Option<String>,
    name: Option<String>,
    layers: Option<u32>,
    hidden: Option<u32>,
    heads: Option<u32>,
    kv_heads: Option<u32>,
    head_dim: Option<u32>,
    intermediate: Option<u32>,
    experts: Option<u32>,
    top_k: Option<u32>,
    expert_intermediate: Option<u32>,
    vocab: Option<u32>,
    dtype_bytes: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoleDoc {
    parallel: ParallelDoc,
    #[serde(default = "one")]
    replicas: i64,
    #[serde(default = "default_gpu")]
    gpu: String,
}

fn one() -> i64 {
    1
}

fn default_gpu() -> String {
    "H800".to_string()
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ParallelDoc {
    Notation(String),
    Table(ParallelTable),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParallelTable {
    #[serde(default = "one")]
    pp: i64,
    #[serde(default = "one")]
    tp_attn: i64,
    #[serde(default = "one")]
    dp_attn: i64,
    tp_ffn: Option<i64>,
    ep_ffn: Option<i64>,
}

/// Catalog entry in human units.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuDoc {
    pub memory_gib: f64,
    pub peak_tflops: f64,
    pub hbm_tbps: f64,
    pub link_gbps: f64,
    #[serde(default = "default_link_latency")]
    pub link_latency_us: f64,
    pub price_per_hour: Option<f64>,
}

fn default_link_latency() -> f64 {
    2.0
}

impl GpuDoc {
    pub fn to_spec(&self, name: &str) -> GpuSpec {
        GpuSpec {
            name: name.to_string(),
            memory_bytes: (self.memory_gib * (1u64 << 30) as f64).round() as u64,
            peak_flops: self.peak_tflops * 1e12,
            mem_bandwidth: self.hbm_tbps * 1e12,
            link: LinkSpec::new(self.link_gbps * 1e9, (self.link_latency_us * NS_PER_US as f64).round() as u64),
            price_per_hour: self.price_per_hour,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDoc {
    bandwidth_gbps: f64,
    latency_us: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogDoc {
    gpu: BTreeMap<String, GpuDoc>,
}

fn degree(field: &'static str, v: i64) -> Result<u32> {
    if v <= 0 || v > u32::MAX as i64 {
        return Err(servesim_core::Error::InvalidParallelDegree { field, value: v }.into());
    }
    Ok(v as u32)
}

fn parallel(role: Role, doc: &ParallelDoc, moe: bool) -> Result<Parallelism> {
    Ok(match doc {
        ParallelDoc::Notation(s) => parse_layout(role, s)?,
        ParallelDoc::Table(t) => {
            let pp = degree("pp", t.pp)?;
            let tp = degree("tp_attn", t.tp_attn)?;
            let dp = degree("dp_attn", t.dp_attn)?;
            let tp_ffn = t.tp_ffn.map(|v| degree("tp_ffn", v)).transpose()?;
            let ep_ffn = t.ep_ffn.map(|v| degree("ep_ffn", v)).transpose()?;
            // Dense FFNs take the attention domain unless told otherwise.
            let (tp_ffn, ep_ffn) = match (tp_ffn, ep_ffn) {
                (Some(a), Some(b)) => (a, b),
                (Some(a), None) => (a, (tp * dp) / a.max(1)),
                (None, Some(b)) if moe => ((tp * dp) / b.max(1), b),
                (None, Some(b)) => (tp, b),
                (None, None) => (tp, dp),
            };
            Parallelism::new(pp, tp, dp, tp_ffn.max(1), ep_ffn.max(1))
        }
    })
}

/// Named model descriptors.
pub fn model_preset(name: &str) -> Option<ModelSpec> {
    Some(match name {
        "tiny-dense" => ModelSpec::tiny_dense(),
        "llama3-8b" => ModelSpec::llama3_8b(),
        "llama3-70b" => ModelSpec::llama3_70b(),
        "llama3-405b" => ModelSpec::llama3_405b(),
        "qwen3-30b-a3b" => ModelSpec::qwen3_30b_a3b(),
        "qwen3-235b-a22b" => ModelSpec::qwen3_235b_a22b(),
        _ => return None,
    })
}

fn model(doc: &ModelDoc) -> Result<ModelSpec> {
    let mut m = match &doc.preset {
        Some(p) => model_preset(p).ok_or_else(|| Error::Spec(format!("unknown model preset {p:?}")))?,
        None => {
            let missing = |f: &str| Error::Spec(format!("model.{f} is required without a preset"));
            ModelSpec {
                name: doc.name.clone().unwrap_or_else(|| "custom".to_string()),
                layers: doc.layers.ok_or_else(|| missing("layers"))?,
                hidden: doc.hidden.ok_or_else(|| missing("hidden"))?,
                heads: doc.heads.ok_or_else(|| missing("heads"))?,
                kv_heads: doc.kv_heads.ok_or_else(|| missing("kv_heads"))?,
                head_dim: doc.head_dim.ok_or_else(|| missing("head_dim"))?,
                intermediate: doc.intermediate.unwrap_or(0),
                experts: doc.experts.unwrap_or(0),
                top_k: doc.top_k.unwrap_or(1),
                expert_intermediate: doc.expert_intermediate.unwrap_or(0),
                vocab: doc.vocab.ok_or_else(|| missing("vocab"))?,
                dtype_bytes: doc.dtype_bytes.unwrap_or(2),
            }
        }
    };
    macro_rules! over {
        ($($f:ident),*) => { $( if let Some(v) = doc.$f { m.$f = v; } )* };
    }
    over!(layers, hidden, heads, kv_heads, head_dim, intermediate, experts, top_k, expert_intermediate, vocab, dtype_bytes);
    if let Some(n) = &doc.name {
        m.name = n.clone();
    }
    Ok(m)
}

/// Parses a spec document. Catalog and trace paths are left for
/// [`load_spec`] to resolve.
pub fn parse_spec(text: &str) -> Result<ServingSpec> {
    parse_doc(text).map(|(spec, _)| spec)
}

fn parse_doc(text: &str) -> Result<(ServingSpec, Option<String>)> {
    let doc: SpecDoc = toml::from_str(text)?;
    if doc.spec_version != SPEC_VERSION {
        return Err(Error::Spec(format!(
            "unsupported spec_version {} (expected {SPEC_VERSION})",
            doc.spec_version
        )));
    }
    let model = model(&doc.model)?;
    let mut roles = BTreeMap::new();
    for (key, r) in &doc.roles {
        let role = Role::parse(key).ok_or_else(|| Error::Spec(format!("unknown role {key:?}")))?;
        let replicas = degree("replicas", r.replicas)?;
        roles.insert(
            role,
            RoleSpec {
                parallel: parallel(role, &r.parallel, model.is_moe())?,
                replicas,
                gpu: r.gpu.clone(),
            },
        );
    }
    let mut gpus = builtin_gpus();
    for (name, g) in &doc.gpus {
        gpus.insert(name.clone(), g.to_spec(name));
    }
    let mut spec = ServingSpec::minimal(model, doc.architecture);
    spec.roles = roles;
    spec.gpus = gpus;
    if let Some(l) = doc.inter_cluster_link {
        spec.inter_cluster_link = LinkSpec::new(l.bandwidth_gbps * 1e9, (l.latency_us * NS_PER_US as f64).round() as u64);
    }
    spec.runtime = doc.runtime;
    spec.workload = doc.workload;
    spec.total_gpus = doc.total_gpus;
    spec.seed = doc.seed;
    spec.validate()?;
    Ok((spec, doc.gpu_catalog))
}

/// Parses a catalog document of `[gpu.<name>]` tables.
pub fn parse_catalog(text: &str) -> Result<BTreeMap<String, GpuSpec>> {
    let doc: CatalogDoc = toml::from_str(text)?;
    Ok(doc.gpu.iter().map(|(n, g)| (n.clone(), g.to_spec(n))).collect())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(path.to_path_buf(), e))
}

fn relative(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Reads a spec file, merging its catalog file and resolving a trace path
/// relative to its directory.
pub fn load_spec(path: &Path) -> Result<ServingSpec> {
    let (mut spec, catalog) = parse_doc(&read(path)?)?;
    if let Some(c) = catalog {
        let extra = parse_catalog(&read(&relative(path, &c))?)?;
        spec.gpus.extend(extra);
        spec.validate()?;
    }
    if let Pattern::Trace { path: t } = &spec.workload.pattern {
        let resolved = relative(path, t);
        spec.workload.pattern = Pattern::Trace {
            path: resolved.to_string_lossy().into_owned(),
        };
    }
    Ok(spec)
}

pub fn load_catalog(path: &Path) -> Result<BTreeMap<String, GpuSpec>> {
    parse_catalog(&read(path)?)
}

/// Reads a trace file (`arrival_ms, input_len, output_len[, session_id, round_plan]`).
pub fn load_trace(path: &Path, cfg: &WorkloadConfig) -> Result<Vec<Request>> {
    let mut reqs = parse_trace(&read(path)?, cfg.tool_delay_ns, cfg.seed)?;
    if cfg.num_requests > 0 && (cfg.num_requests as usize) < reqs.len() {
        reqs.truncate(cfg.num_requests as usize);
    }
    Ok(reqs)
}

/// Requests for a spec's workload section.
pub fn requests_for(spec: &ServingSpec) -> Result<Vec<Request>> {
    match &spec.workload.pattern {
        Pattern::Trace { path } => load_trace(Path::new(path), &spec.workload),
        _ => Ok(servesim_core::workload::synthesize(&spec.workload)?),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoeffDoc {
    #[serde(default)]
    table: Vec<CoeffTable>,
}

/// Predictors for `--cost-model`: `analytical` or `file:<path>` (a TOML list
/// of `[[table]]` coefficient tables with golden pairs).
pub fn load_cost_model(arg: &str, launch_overhead_ns: u64) -> Result<PredictorSet> {
    let mut set = PredictorSet::analytical(launch_overhead_ns);
    if arg == "analytical" {
        return Ok(set);
    }
    let path = arg
        .strip_prefix("file:")
        .ok_or_else(|| Error::Spec(format!("cost model must be analytical or file:<path>, got {arg:?}")))?;
    let doc: CoeffDoc = toml::from_str(&read(Path::new(path))?)?;
    for t in &doc.table {
        set.load_table(t)?;
    }
    Ok(set)
}
