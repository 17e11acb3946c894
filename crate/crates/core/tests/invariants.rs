use proptest::prelude::*;

use servesim_core::config::{H2qParams, MoeRouting, RuntimeSpec, SchedulerKind};
use servesim_core::metrics::nearest_rank;
use servesim_core::orchestration::{ep_combine, pipeline_schedule, route_tokens_moe, Combine, EpSyncBarrier};
use servesim_core::scheduler::{
    h2q_order, watermark_preempt, H2qSlice, KvBlockPool, Queue, ReplicaScheduler, SchedConfig,
};
use servesim_core::workload::{Request, RoundPlan};

proptest! {
    #[test]
    fn pool_conserves_blocks(total in 1u64..500, ops in prop::collection::vec((0u64..8, 0u64..80, any::<bool>()), 0..64)) {
        let mut p = KvBlockPool::new(total, 0.0);
        for (id, n, alloc) in ops {
            if alloc {
                let free = p.free();
                let held = p.held(id);
                let ok = p.allocate(id, n);
                prop_assert_eq!(ok, n <= free);
                prop_assert_eq!(p.held(id), if ok { held + n } else { held });
            } else {
                let held = p.held(id);
                prop_assert_eq!(p.release(id), held);
            }
            let held: u64 = p.holders().map(|(_, n)| n).sum();
            prop_assert_eq!(p.free() + held, total);
            prop_assert!(p.conserved());
        }
    }

    #[test]
    fn watermark_preemption_restores_headroom(
        total in 10u64..400,
        wm in 0.0f64..0.2,
        sizes in prop::collection::vec(1u64..40, 1..12),
        needed in 0u64..60,
    ) {
        let mut p = KvBlockPool::new(total, wm);
        let mut running = Vec::new();
        for (i, n) in sizes.into_iter().enumerate() {
            if p.allocate(i as u64, n) {
                running.push(i as u64);
            }
        }
        let before = running.clone();
        let out = watermark_preempt(&mut p, &mut running, needed);
        prop_assert!(p.fits(needed) || running.is_empty());
        // Survivors are a prefix; victims come off the back in reverse order.
        prop_assert_eq!(&before[..running.len()], &running[..]);
        let mut victims = before[running.len()..].to_vec();
        victims.reverse();
        prop_assert_eq!(out, victims);
        prop_assert!(p.conserved());
    }

    #[test]
    fn barrier_fires_once_at_the_latest_lane(ready in prop::collection::vec(0u64..1_000_000, 1..16), delta in 0u64..50_000, perm_seed in any::<u64>()) {
        let lanes = ready.len() as u32;
        let mut order: Vec<u32> = (0..lanes).collect();
        let mut s = perm_seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let mut b = EpSyncBarrier::new(0, lanes, delta);
        let mut fired = Vec::new();
        for (k, &lane) in order.iter().enumerate() {
            match ep_combine(&mut b, lane, ready[lane as usize]).unwrap() {
                Combine::Pending => prop_assert!(k + 1 < order.len()),
                Combine::Fired(t) => fired.push(t),
            }
        }
        prop_assert_eq!(fired, vec![ready.iter().max().unwrap() + delta]);
        prop_assert!(ep_combine(&mut b, order[0], 0).is_err());
        prop_assert!(ep_combine(&mut b, lanes, 0).is_err());
    }

    #[test]
    fn routing_conserves_assignments(tokens in 0u64..5000, experts in 1u32..128, k in 1u32..9, skew in any::<bool>(), seed in any::<u64>()) {
        let k = k.min(experts);
        let routing = if skew { MoeRouting::Skew } else { MoeRouting::Balanced };
        let c = route_tokens_moe(tokens, experts, k, routing, seed).unwrap();
        prop_assert_eq!(c.len(), experts as usize);
        prop_assert_eq!(c.iter().map(|&x| x as u64).sum::<u64>(), tokens * k as u64);
        prop_assert!(c.iter().all(|&x| x as u64 <= tokens));
        if !skew {
            let (lo, hi) = (c.iter().min().unwrap(), c.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        }
    }

    #[test]
    fn pipeline_matches_the_completion_recurrence(
        start in 0u64..1000,
        free0 in prop::collection::vec(0u64..2000, 1..5),
        raw in prop::collection::vec(prop::collection::vec(0u64..500, 5), 1..6),
    ) {
        let stages = free0.len();
        let times: Vec<Vec<u64>> = raw.iter().map(|m| m[..stages].to_vec()).collect();
        // C[m][s] = max(C[m][s-1], C[m-1][s]) + d[m][s]
        let mut prev = free0.clone();
        let mut last = start;
        for m in &times {
            let mut left = start;
            for s in 0..stages {
                left = left.max(prev[s]) + m[s];
                prev[s] = left;
            }
            last = last.max(left);
        }
        let mut free = free0.clone();
        let end = pipeline_schedule(start, &mut free, &times);
        prop_assert_eq!(end, last);
        prop_assert_eq!(free, prev);
        for s in 0..stages {
            let busy: u64 = times.iter().map(|m| m[s]).sum();
            prop_assert!(end >= start + busy);
        }
    }

    #[test]
    fn nearest_rank_matches_definition(mut v in prop::collection::vec(0u64..1000, 1..64), q in 0.0f64..=1.0) {
        v.sort_unstable();
        let got = nearest_rank(&v, q);
        let n = v.len() as f64;
        let want = v.iter().copied().find(|&x| v.iter().filter(|&&y| y <= x).count() as f64 / n >= q).unwrap();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn h2q_order_respects_precedence(
        raw in prop::collection::vec((any::<bool>(), any::<bool>(), 0u64..100, 1u64..20_000, any::<bool>(), any::<bool>()), 1..24),
        eta in 0u64..8,
    ) {
        let p = H2qParams::default();
        let slices: Vec<H2qSlice> = raw
            .iter()
            .enumerate()
            .map(|(i, &(waiting, decode, arrival, ell, long, carry))| H2qSlice {
                id: i as u64,
                session: i as u64,
                waiting,
                decode,
                arrival,
                ell,
                queue: if long { Queue::Long } else { Queue::Short },
                carry,
            })
            .collect();
        let o = h2q_order(&slices, eta, &p);
        let mut sorted = o.order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..slices.len() as u64).collect::<Vec<_>>());
        let mut rest: &[u64] = &o.order;
        if let Some(r) = o.release {
            prop_assert!(slices[r as usize].carry);
            prop_assert_eq!(rest[0], r);
            rest = &rest[1..];
        }
        if let Some(l) = o.liveness {
            prop_assert!(eta >= p.liveness);
            prop_assert_eq!(slices[l as usize].queue, Queue::Long);
            if Some(l) != o.release {
                prop_assert_eq!(rest[0], l);
                rest = &rest[1..];
            }
        }
        let rest: Vec<&H2qSlice> = rest.iter().map(|&i| &slices[i as usize]).collect();
        let first_long = rest.iter().position(|s| s.queue == Queue::Long).unwrap_or(rest.len());
        prop_assert!(rest[first_long..].iter().all(|s| s.queue == Queue::Long));
        for w in rest[..first_long].windows(2) {
            prop_assert!(w[0].ell <= w[1].ell);
        }
    }

    #[test]
    fn replica_scheduler_stays_within_budgets(
        kind in prop::sample::select(vec![SchedulerKind::VllmV1, SchedulerKind::Sglang, SchedulerKind::Mlfq, SchedulerKind::H2qBr]),
        blocks in 64u64..600,
        bs in 1u32..16,
        bt in 16u32..1024,
        reqs in prop::collection::vec((1u64..1500, 1u64..40), 1..20),
    ) {
        let rt = RuntimeSpec { scheduler: kind, max_batch_size: bs, max_batch_tokens: bt, ..RuntimeSpec::default() };
        let cfg = SchedConfig::from_runtime(&rt, 1);
        let mut s = ReplicaScheduler::new(cfg, blocks, rt.watermark);
        let mut expected = 0;
        for (i, &(pl, dl)) in reqs.iter().enumerate() {
            let r = Request::new(i as u64, 0, vec![RoundPlan::new(pl, dl)], 0, 1);
            if s.enqueue(r, 0, 0).is_ok() {
                expected += 1;
            }
        }
        let mut done = 0;
        let mut idle = 0;
        let mut steps = 0;
        while !s.is_empty() {
            steps += 1;
            prop_assert!(steps < 100_000, "scheduler livelock");
            let plan = s.tick();
            prop_assert!(plan.size() as u64 <= bs as u64);
            prop_assert!(plan.total_tokens <= bt as u64);
            prop_assert!(s.pool.conserved());
            if plan.is_empty() {
                idle += 1;
                prop_assert!(idle < 3, "scheduler stalled");
                continue;
            }
            idle = 0;
            let c = s.complete(&plan);
            for id in c.round_done {
                prop_assert!(s.finish(id).is_some());
                done += 1;
            }
        }
        prop_assert_eq!(done, expected);
        prop_assert_eq!(s.pool.free(), blocks);
    }
}
