use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::MoeRouting;
use crate::units::Nanos;
use crate::{Error, Result};

/// Zipf exponent of the skewed router.
const SKEW_EXPONENT: f64 = 1.2;

/// Token-to-expert counts for one MoE layer. Each token selects `top_k`
/// distinct experts. Balanced routing spreads selections round-robin; skewed
/// routing draws from a seeded Zipf-like popularity over a seeded expert
/// permutation.
pub fn route_tokens_moe(tokens: u64, experts: u32, top_k: u32, routing: MoeRouting, seed: u64) -> Result<Vec<u32>> {
    if top_k == 0 || experts < top_k {
        return Err(Error::InvalidConfig(alloc::format!(
            "moe routing needs experts >= top_k >= 1 (experts {experts}, top_k {top_k})"
        )));
    }
    let e = experts as usize;
    let mut counts = vec![0u32; e];
    match routing {
        MoeRouting::Balanced => {
            let total = tokens * top_k as u64;
            let base = (total / experts as u64) as u32;
            let rem = (total % experts as u64) as usize;
            for (i, c) in counts.iter_mut().enumerate() {
                *c = base + (i < rem) as u32;
            }
        }
        MoeRouting::Skew => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..e).collect();
            for i in (1..e).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let mut cdf = Vec::with_capacity(e);
            let mut acc = 0.0;
            for r in 0..e {
                acc += 1.0 / libm::pow((r + 1) as f64, SKEW_EXPONENT);
                cdf.push(acc);
            }
            let mut picked = vec![false; e];
            let mut chosen = Vec::with_capacity(top_k as usize);
            for _ in 0..tokens {
                chosen.clear();
                while chosen.len() < top_k as usize {
                    let u = rng.random::<f64>() * acc;
                    let mut r = cdf.partition_point(|&c| c <= u).min(e - 1);
                    while picked[r] {
                        r = (r + 1) % e;
                    }
                    picked[r] = true;
                    chosen.push(r);
                }
                for &r in &chosen {
                    picked[r] = false;
                    counts[order[r]] += 1;
                }
            }
        }
    }
    Ok(counts)
}

/// Expert-parallel combine barrier of one MoE layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpSyncBarrier {
    pub layer: u32,
    pub delta_ep: Nanos,
    ready: Vec<Option<Nanos>>,
    reported: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    Pending,
    Fired(Nanos),
}

impl EpSyncBarrier {
    pub fn new(layer: u32, lanes: u32, delta_ep: Nanos) -> Self {
        EpSyncBarrier {
            layer,
            delta_ep,
            ready: vec![None; lanes as usize],
            reported: 0,
        }
    }

    pub fn lanes(&self) -> u32 {
        self.ready.len() as u32
    }
}

/// Records a lane's ready time; fires at the latest ready time plus the
/// combine slack once every lane has reported.
pub fn ep_combine(barrier: &mut EpSyncBarrier, lane: u32, t_ready: Nanos) -> Result<Combine> {
    let slot = barrier.ready.get_mut(lane as usize).ok_or(Error::UnknownLane(lane))?;
    if slot.is_some() {
        return Err(Error::DuplicateLane(lane));
    }
    *slot = Some(t_ready);
    barrier.reported += 1;
    if barrier.reported < barrier.lanes() {
        return Ok(Combine::Pending);
    }
    let max = barrier.ready.iter().flatten().copied().max().unwrap_or(0);
    Ok(Combine::Fired(max + barrier.delta_ep))
}
