use alloc::format;
use alloc::string::String;

use serde::Serialize;

use super::{Parallelism, Role, ServingSpec};
use crate::{Error, Result};

/// Resolved per-replica layout of one cluster role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplicaLayout {
    pub role: Role,
    /// GPUs per replica.
    pub world_size: u64,
    pub pp: u32,
    pub tp_attn: u32,
    pub dp_attn: u32,
    pub tp_ffn: u32,
    pub ep_ffn: u32,
    pub gpu: String,
}

impl ReplicaLayout {
    pub fn parallel(&self) -> Parallelism {
        Parallelism::new(self.pp, self.tp_attn, self.dp_attn, self.tp_ffn, self.ep_ffn)
    }
}

/// Computes the replica world size of `role` and checks that roles hosting
/// both domains shard attention and FFN over the same device set.
pub fn resolve_layout(spec: &ServingSpec, role: Role) -> Result<ReplicaLayout> {
    if !spec.architecture.roles().contains(&role) {
        return Err(Error::RoleNotInArchitecture(role, spec.architecture.name()));
    }
    let rs = spec.role(role)?;
    layout_for(role, &rs.parallel, &rs.gpu)
}

pub(crate) fn layout_for(role: Role, p: &Parallelism, gpu: &str) -> Result<ReplicaLayout> {
    p.validate()?;
    let attn = p.tp_attn * p.dp_attn;
    let ffn = p.tp_ffn * p.ep_ffn;
    if role.hosts_both_domains() && attn != ffn {
        return Err(Error::DomainMismatch { role, attn, ffn });
    }
    let world_size = match role {
        Role::F => p.pp as u64 * ffn as u64,
        _ => p.pp as u64 * attn as u64,
    };
    Ok(ReplicaLayout {
        role,
        world_size,
        pp: p.pp,
        tp_attn: p.tp_attn,
        dp_attn: p.dp_attn,
        tp_ffn: p.tp_ffn,
        ep_ffn: p.ep_ffn,
        gpu: gpu.into(),
    })
}

/// Parses the compact layout notation used in configuration tables, e.g.
/// `pp16/tp8/dp2` or `pp8/tp8/dp8/ep64`.
///
/// Tokens: `pp`, `tp` (attention TP), `dp` (attention DP), `ep` (FFN expert
/// or data parallel), `ftp` (FFN TP). When `ep` is given without `ftp`, the
/// FFN TP degree is derived so that both domains span the same devices. For
/// the `F` role, `tp`/`dp` describe the FFN domain directly unless `ftp`/`ep`
/// are present.
pub fn parse_layout(role: Role, s: &str) -> Result<Parallelism> {
    let mut pp = None;
    let mut tp = None;
    let mut dp = None;
    let mut ep = None;
    let mut ftp = None;
    for tok in s.split('/').map(str::trim).filter(|t| !t.is_empty()) {
        let split = tok
            .find(|c: char| c.is_ascii_digit() || c == '-')
            .ok_or_else(|| Error::InvalidConfig(format!("bad layout token {tok:?}")))?;
        let (key, num) = tok.split_at(split);
        let value: i64 = num
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad layout token {tok:?}")))?;
        let field: &'static str = match key.to_ascii_lowercase().as_str() {
            "pp" => "pp",
            "tp" => "tp_attn",
            "dp" => "dp_attn",
            "ep" => "ep_ffn",
            "ftp" => "tp_ffn",
            _ => return Err(Error::InvalidConfig(format!("unknown layout key {key:?}"))),
        };
        if value <= 0 || value > u32::MAX as i64 {
            return Err(Error::InvalidParallelDegree { field, value });
        }
        let v = Some(value as u32);
        match field {
            "pp" => pp = v,
            "tp_attn" => tp = v,
            "dp_attn" => dp = v,
            "ep_ffn" => ep = v,
            _ => ftp = v,
        }
    }
    let pp = pp.unwrap_or(1);
    let tp = tp.unwrap_or(1);
    let dp = dp.unwrap_or(1);
    if role == Role::F {
        let tp_ffn = ftp.unwrap_or(if ep.is_some() { 1 } else { tp });
        let ep_ffn = ep.unwrap_or(dp);
        return Ok(Parallelism::new(pp, tp, dp, tp_ffn, ep_ffn));
    }
    let (tp_ffn, ep_ffn) = match (ftp, ep) {
        (Some(f), Some(e)) => (f, e),
        (Some(f), None) => (f, (tp * dp) / f.max(1)),
        (None, Some(e)) => {
            let span = tp * dp;
            if span % e != 0 {
                return Err(Error::DomainMismatch {
                    role,
                    attn: span,
                    ffn: e,
                });
            }
            (span / e, e)
        }
        (None, None) => (tp, dp),
    };
    Ok(Parallelism::new(pp, tp, dp, tp_ffn.max(1), ep_ffn.max(1)))
}
