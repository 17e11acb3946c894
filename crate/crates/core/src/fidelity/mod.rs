//! Cost models: operator durations, memory capacity, transfers, collectives.
//!
//! Every query resolves through a [`PredictorSet`]. The default predictors
//! are analytical (roofline for compute, alpha-beta for communication); a
//! family/mode pair can be overridden by a fitted [`CoeffTable`].

mod comm;
mod memory;
mod ops;

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::units::{secs_to_ns, Nanos};
use crate::{Error, Result};

pub use comm::{collective_time, transfer_time, CollectiveKind};
pub use memory::{kv_block_budget, kv_block_bytes, weight_bytes_per_rank, MemoryProfile};
pub use ops::{
    attention_query, collective_query, gemm_query, moe_lane_query, stats_of, transfer_query, LengthStats,
};

/// Operator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    TokenCount,
    Attention,
    MoeGrouped,
    Transfer,
    Collective,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::TokenCount,
        Family::Attention,
        Family::MoeGrouped,
        Family::Transfer,
        Family::Collective,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::TokenCount => "token_count",
            Family::Attention => "attention",
            Family::MoeGrouped => "moe_grouped",
            Family::Transfer => "transfer",
            Family::Collective => "collective",
        }
    }

    pub fn parse(s: &str) -> Result<Family> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownFamily(s.to_string()))
    }

    pub fn is_compute(self) -> bool {
        matches!(self, Family::TokenCount | Family::Attention | Family::MoeGrouped)
    }

    /// Features a query of this family must carry.
    pub fn required(self) -> &'static [Feature] {
        use Feature::*;
        match self {
            Family::TokenCount => &[NumTokens, Tp, Flops, Bytes],
            Family::Attention => &[
                BatchSize, TotalTokens, PrefillMin, PrefillMax, PrefillP50, PrefillP95,
                DecodeMin, DecodeMax, DecodeP50, DecodeP95, Flops, Bytes,
            ],
            Family::MoeGrouped => &[
                ExpertCountVar, ExpertCountMax, SelectionRatio, Experts, Hidden,
                ExpertIntermediate, Flops, Bytes,
            ],
            Family::Transfer => &[Bytes, LinkBandwidth, LinkLatency, Concurrency],
            Family::Collective => &[CollectiveOp, Bytes, GroupSize, LinkBandwidth, LinkLatency],
        }
    }
}

/// Measurement mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    KernelOnly,
    LaunchInclusive,
}

macro_rules! features {
    ($($v:ident => $n:literal),* $(,)?) => {
        /// Named shape feature.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum Feature { $($v),* }

        impl Feature {
            pub const ALL: &'static [Feature] = &[$(Feature::$v),*];

            pub fn name(self) -> &'static str {
                match self { $(Feature::$v => $n),* }
            }
        }
    };
}

features! {
    NumTokens => "num_tokens",
    Tp => "tp",
    Flops => "flops",
    Bytes => "bytes",
    BatchSize => "batch_size",
    TotalTokens => "total_tokens",
    PrefillMin => "prefill_len_min",
    PrefillMax => "prefill_len_max",
    PrefillP50 => "prefill_len_p50",
    PrefillP95 => "prefill_len_p95",
    DecodeMin => "decode_len_min",
    DecodeMax => "decode_len_max",
    DecodeP50 => "decode_len_p50",
    DecodeP95 => "decode_len_p95",
    ExpertCountVar => "expert_count_var",
    ExpertCountMax => "expert_count_max",
    SelectionRatio => "selection_ratio",
    Experts => "experts",
    Hidden => "hidden",
    ExpertIntermediate => "expert_intermediate",
    LinkBandwidth => "link_bandwidth",
    LinkLatency => "link_latency_ns",
    Concurrency => "concurrency",
    GroupSize => "group_size",
    CollectiveOp => "collective_kind",
}

impl Feature {
    pub fn parse(s: &str) -> Result<Feature> {
        Feature::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::MissingFeature(s.to_string()))
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fixed-slot feature vector; no allocation per query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Features {
    values: [f64; 25],
    present: u32,
}

impl Default for Features {
    fn default() -> Self {
        Features {
            values: [0.0; 25],
            present: 0,
        }
    }
}

impl Features {
    pub fn set(&mut self, f: Feature, v: f64) -> &mut Self {
        self.values[f as usize] = v;
        self.present |= 1 << f as u32;
        self
    }

    pub fn with(mut self, f: Feature, v: f64) -> Self {
        self.set(f, v);
        self
    }

    pub fn get(&self, f: Feature) -> Result<f64> {
        if self.present & (1 << f as u32) == 0 {
            return Err(Error::MissingFeature(f.name().to_string()));
        }
        Ok(self.values[f as usize])
    }

    pub fn has(&self, f: Feature) -> bool {
        self.present & (1 << f as u32) != 0
    }
}

/// One operator, transfer, or collective to be priced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostQuery {
    pub family: Family,
    pub mode: Mode,
    pub features: Features,
    /// Device peak compute rate (FLOP/s) for roofline predictors.
    pub peak_flops: f64,
    /// Device memory bandwidth (bytes/s) for roofline predictors.
    pub mem_bandwidth: f64,
    /// Multiplier on compute durations (quantized kernels).
    pub compute_scale: f64,
}

impl CostQuery {
    pub fn new(family: Family, features: Features) -> Self {
        CostQuery {
            family,
            mode: Mode::KernelOnly,
            features,
            peak_flops: 1.0,
            mem_bandwidth: 1.0,
            compute_scale: 1.0,
        }
    }

    pub fn on(mut self, peak_flops: f64, mem_bandwidth: f64) -> Self {
        self.peak_flops = peak_flops;
        self.mem_bandwidth = mem_bandwidth;
        self
    }

    pub fn mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.compute_scale = s;
        self
    }
}

/// Linear duration model for one family and mode:
/// `ns = ceil(intercept + sum(coef_i * feature_i))`, at least 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffTable {
    pub family: Family,
    pub mode: Mode,
    pub features: Vec<String>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Reference (feature values, expected ns) pairs shipped with the table.
    #[serde(default)]
    pub golden: Vec<(Vec<f64>, u64)>,
}

#[derive(Debug, Clone, PartialEq)]
struct CompiledTable {
    family: Family,
    mode: Mode,
    features: Vec<Feature>,
    intercept: f64,
    coefficients: Vec<f64>,
}

impl CompiledTable {
    fn eval_values(&self, xs: impl Iterator<Item = f64>) -> Nanos {
        let mut acc = self.intercept;
        for (c, x) in self.coefficients.iter().zip(xs) {
            acc += c * x;
        }
        (libm::ceil(acc) as i64).max(1) as Nanos
    }

    fn eval(&self, q: &CostQuery) -> Result<Nanos> {
        let mut xs = [0.0; 25];
        for (i, f) in self.features.iter().enumerate() {
            xs[i] = q.features.get(*f)?;
        }
        Ok(self.eval_values(xs[..self.features.len()].iter().copied()))
    }
}

/// Predictors for every family in both modes.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorSet {
    tables: Vec<CompiledTable>,
    /// Launch-inclusive minus kernel-only for analytical predictors.
    pub launch_overhead_ns: Nanos,
}

/// Fidelity-plane handle passed to the compiler and the simulation.
pub type Fidelity = PredictorSet;

impl PredictorSet {
    pub fn analytical(launch_overhead_ns: Nanos) -> Self {
        PredictorSet {
            tables: Vec::new(),
            launch_overhead_ns,
        }
    }

    /// Installs a fitted table after checking its declared features and
    /// replaying its golden pairs.
    pub fn load_table(&mut self, t: &CoeffTable) -> Result<()> {
        if t.features.len() != t.coefficients.len() {
            return Err(Error::InvalidConfig(alloc::format!(
                "{} table: {} features but {} coefficients",
                t.family.name(),
                t.features.len(),
                t.coefficients.len()
            )));
        }
        let features = t
            .features
            .iter()
            .map(|s| Feature::parse(s))
            .collect::<Result<Vec<_>>>()?;
        let c = CompiledTable {
            family: t.family,
            mode: t.mode,
            features,
            intercept: t.intercept,
            coefficients: t.coefficients.clone(),
        };
        for (xs, want) in &t.golden {
            if xs.len() != c.features.len() {
                return Err(Error::InvalidConfig("golden pair arity mismatch".into()));
            }
            let got = c.eval_values(xs.iter().copied());
            if got != *want {
                return Err(Error::InvalidConfig(alloc::format!(
                    "{} table: golden pair expected {want} ns, got {got} ns",
                    t.family.name()
                )));
            }
        }
        self.tables.retain(|x| !(x.family == t.family && x.mode == t.mode));
        self.tables.push(c);
        Ok(())
    }

    pub fn has_table(&self, family: Family, mode: Mode) -> bool {
        self.tables.iter().any(|t| t.family == family && t.mode == mode)
    }

    fn table(&self, family: Family, mode: Mode) -> Option<&CompiledTable> {
        self.tables.iter().find(|t| t.family == family && t.mode == mode)
    }

    /// Kernel-only duration: loaded table if any, else roofline / alpha-beta.
    fn kernel(&self, q: &CostQuery) -> Result<Nanos> {
        for f in q.family.required() {
            q.features.get(*f)?;
        }
        if let Some(t) = self.table(q.family, Mode::KernelOnly) {
            return t.eval(q);
        }
        let f = &q.features;
        let ns = match q.family {
            Family::TokenCount | Family::Attention | Family::MoeGrouped => {
                let flops = f.get(Feature::Flops)?;
                let bytes = f.get(Feature::Bytes)?;
                let t = (flops / q.peak_flops).max(bytes / q.mem_bandwidth) * q.compute_scale;
                secs_to_ns(t)
            }
            Family::Transfer => {
                let link = crate::config::LinkSpec::new(
                    f.get(Feature::LinkBandwidth)?,
                    f.get(Feature::LinkLatency)? as u64,
                );
                transfer_time(f.get(Feature::Bytes)? as u64, &link, f.get(Feature::Concurrency)? as u32)
            }
            Family::Collective => {
                let link = crate::config::LinkSpec::new(
                    f.get(Feature::LinkBandwidth)?,
                    f.get(Feature::LinkLatency)? as u64,
                );
                let kind = CollectiveKind::from_code(f.get(Feature::CollectiveOp)? as u32)?;
                collective_time(kind, f.get(Feature::Bytes)? as u64, f.get(Feature::GroupSize)? as u32, &link)
            }
        };
        Ok(ns.max(if q.family.is_compute() { 1 } else { 0 }))
    }

    /// Resolves a query to a duration in nanoseconds.
    pub fn predict(&self, q: &CostQuery) -> Result<Nanos> {
        match q.mode {
            Mode::KernelOnly => self.kernel(q),
            Mode::LaunchInclusive => {
                if let Some(t) = self.table(q.family, Mode::LaunchInclusive) {
                    for f in q.family.required() {
                        q.features.get(*f)?;
                    }
                    let k = self.kernel(q)?;
                    return Ok(t.eval(q)?.max(k));
                }
                let k = self.kernel(q)?;
                Ok(if q.family.is_compute() {
                    k + self.launch_overhead_ns
                } else {
                    k
                })
            }
        }
    }
}

/// Duration of a compute operator under `predictors`.
pub fn predict_operator(query: &CostQuery, predictors: &PredictorSet) -> Result<Nanos> {
    if !query.family.is_compute() {
        return Err(Error::UnknownFamily(alloc::format!(
            "{} is not a compute family",
            query.family.name()
        )));
    }
    predictors.predict(query)
}
