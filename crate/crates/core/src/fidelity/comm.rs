use serde::{Deserialize, Serialize};

use crate::config::LinkSpec;
use crate::units::{secs_to_ns, Nanos};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectiveKind {
    AllReduce,
    AllToAll,
    AllGather,
}

impl CollectiveKind {
    pub fn code(self) -> u32 {
        match self {
            CollectiveKind::AllReduce => 0,
            CollectiveKind::AllToAll => 1,
            CollectiveKind::AllGather => 2,
        }
    }

    pub fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(CollectiveKind::AllReduce),
            1 => Ok(CollectiveKind::AllToAll),
            2 => Ok(CollectiveKind::AllGather),
            _ => Err(Error::UnknownFamily(alloc::format!("collective kind {c}"))),
        }
    }
}

/// Point-to-point transfer with the link bandwidth shared evenly among
/// `concurrency` active transfers (sampled at start, fixed for the lifetime).
pub fn transfer_time(bytes: u64, link: &LinkSpec, concurrency: u32) -> Nanos {
    let share = link.bandwidth / concurrency.max(1) as f64;
    link.latency_ns + secs_to_ns(bytes as f64 / share)
}

fn log2_ceil(n: u32) -> u64 {
    (32 - (n - 1).leading_zeros()) as u64
}

/// Alpha-beta collective cost over a group of `n` ranks; `alpha` is the link
/// latency.
pub fn collective_time(kind: CollectiveKind, bytes: u64, n: u32, link: &LinkSpec) -> Nanos {
    if n <= 1 {
        return 0;
    }
    let frac = (n - 1) as f64 / n as f64;
    let b = bytes as f64 / link.bandwidth;
    let a = link.latency_ns;
    match kind {
        CollectiveKind::AllReduce => secs_to_ns(2.0 * frac * b) + 2 * log2_ceil(n) * a,
        CollectiveKind::AllToAll => secs_to_ns(frac * b) + (n as u64 - 1) * a,
        CollectiveKind::AllGather => secs_to_ns(frac * b) + log2_ceil(n) * a,
    }
}
