use alloc::string::String;

use crate::config::Role;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parallel degree: {field} = {value}")]
    InvalidParallelDegree { field: &'static str, value: i64 },
    #[error("role {role}: tp_attn*dp_attn = {attn} but tp_ffn*ep_ffn = {ffn}")]
    DomainMismatch { role: Role, attn: u32, ffn: u32 },
    #[error("role {0} is not part of the {1} architecture")]
    RoleNotInArchitecture(Role, &'static str),
    #[error("missing role {0}")]
    MissingRole(Role),
    #[error("unknown gpu type {0:?}")]
    UnknownGpu(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("causality violation: event at {event} before local clock {clock}")]
    Causality { event: u64, clock: u64 },
    #[error("no channel from cluster {src} to cluster {dst}")]
    UnknownChannel { src: usize, dst: usize },
    #[error("missing feature {0:?} for cost query")]
    MissingFeature(String),
    #[error("unknown operator family {0:?}")]
    UnknownFamily(String),
    #[error("duplicate ready report from lane {0}")]
    DuplicateLane(u32),
    #[error("lane {0} is not part of the barrier")]
    UnknownLane(u32),
    #[error("session round not complete")]
    RoundIncomplete,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("request {0} did not reach a terminal state")]
    NonTerminal(u64),
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
}
