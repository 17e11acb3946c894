use serde::{Deserialize, Serialize};

use crate::config::{ModelSpec, ReplicaLayout, Role};
use crate::units::div_ceil;

/// Per-rank memory residency of the representative (worst) pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MemoryProfile {
    pub weight_bytes: u64,
    pub framework_peak_bytes: u64,
    pub nonframework_bytes: u64,
}

fn scaled(bytes: u128, scale: f64) -> u64 {
    libm::ceil(bytes as f64 * scale) as u64
}

/// Weight bytes held by one rank of the worst pipeline stage.
///
/// Attention projections are split over `tp_attn` (KV heads rounded up when
/// there are fewer than `tp_attn`), dense FFN over `tp_ffn`, routed experts
/// over `tp_ffn * ep_ffn`. Embedding and LM head are replicated; with one
/// stage a rank holds both, otherwise the first or last stage holds one.
pub fn weight_bytes_per_rank(m: &ModelSpec, l: &ReplicaLayout, weight_scale: f64) -> u64 {
    let h = m.hidden as u128;
    let hd = m.head_dim as u128;
    let layers = div_ceil(m.layers as u64, l.pp as u64) as u128;
    let attn = 2 * h * m.heads as u128 * hd / l.tp_attn as u128
        + 2 * h * div_ceil(m.kv_heads as u64, l.tp_attn as u64) as u128 * hd;
    let ffn = if m.is_moe() {
        m.experts as u128 * 3 * h * m.expert_intermediate as u128
            / (l.tp_ffn as u128 * l.ep_ffn as u128)
            + h * m.experts as u128
    } else {
        3 * h * m.intermediate as u128 / l.tp_ffn as u128
    };
    let per_layer = match l.role {
        Role::A => attn,
        Role::F => ffn,
        _ => attn + ffn,
    };
    let embed = match l.role {
        Role::F => 0,
        _ if l.pp == 1 => 2 * m.vocab as u128 * h,
        _ => m.vocab as u128 * h,
    };
    scaled((layers * per_layer + embed) * m.dtype_bytes as u128, weight_scale)
}

/// Bytes of one KV block on one rank:
/// `2 * ceil(layers/pp) * ceil(kv_heads/tp_attn) * head_dim * dtype * block_tokens`.
pub fn kv_block_bytes(m: &ModelSpec, l: &ReplicaLayout, block_tokens: u32, kv_scale: f64) -> u64 {
    let raw = 2
        * div_ceil(m.layers as u64, l.pp as u64) as u128
        * div_ceil(m.kv_heads as u64, l.tp_attn as u64) as u128
        * m.head_dim as u128
        * m.dtype_bytes as u128
        * block_tokens as u128;
    scaled(raw, kv_scale).max(1)
}

/// KV blocks left after weights and profiled overheads, clamped at zero.
pub fn kv_block_budget(memory_bytes: u64, utilization: f64, p: &MemoryProfile, block_bytes: u64) -> u64 {
    let budget = libm::floor(memory_bytes as f64 * utilization) as i128;
    let residual = budget
        - p.weight_bytes as i128
        - p.framework_peak_bytes as i128
        - p.nonframework_bytes as i128;
    if residual <= 0 || block_bytes == 0 {
        return 0;
    }
    (residual / block_bytes as i128) as u64
}
