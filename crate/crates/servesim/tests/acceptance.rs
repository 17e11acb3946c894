//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test -p servesim --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use servesim::spec_file::{load_spec, requests_for};
use servesim::{run, ExecMode};
use servesim_core::adapters::{mtp_step, MtpState, PaddingStats};
use servesim_core::config::{
    builtin_gpus, compile_plan, parse_layout, resolve_layout, Architecture, H2qParams, ModelSpec, Parallelism,
    ReconfigSpec, Role, SchedulerKind, ServingSpec, SpecDecode,
};
use servesim_core::des::{run_sequential, Event, EventHandler, Outbox};
use servesim_core::fidelity::{Fidelity, PredictorSet};
use servesim_core::metrics::{score_allocation, Allocation, LifecycleRecord};
use servesim_core::orchestration::{
    build_clusters, collect, ep_combine, simulate, ClusterHandler, Combine, CostModel, EpSyncBarrier, Payload,
    SimOptions, SimOutput,
};
use servesim_core::scheduler::{h2q_order, BatchEntry, H2qSlice, H2qState, Phase, Queue, SliceOutcome};
use servesim_core::units::{ms, Nanos, GIB};
use servesim_core::workload::{parse_trace, synthesize, Arrival, Pattern, Request, RoundPlan, WorkloadConfig};
use servesim_core::Error;

type Outcome = Result<String, String>;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn fid(spec: &ServingSpec) -> Fidelity {
    PredictorSet::analytical(spec.runtime.launch_overhead_ns)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn world(spec: &ServingSpec, role: Role) -> u64 {
    let rs = &spec.roles[&role];
    rs.replicas as u64 * resolve_layout(spec, role).unwrap().world_size
}

fn parallel_arithmetic() -> Outcome {
    let pdd = load_spec(&configs().join("llama405b-pdd.toml")).map_err(|e| e.to_string())?;
    let plan = compile_plan(&pdd, &fid(&pdd)).map_err(|e| e.to_string())?;
    let (p, d) = (world(&pdd, Role::P), world(&pdd, Role::D));
    ensure(p == 16 * 8 * 2 && d == 16 * 8 * 6, || format!("P={p} D={d}"))?;
    ensure(p == 256 && d == 768 && plan.total_gpus == 1024, || format!("total {}", plan.total_gpus))?;
    for c in &plan.clusters {
        let rs = &pdd.roles[&c.role];
        let par = rs.parallel;
        ensure(c.layout.world_size == (par.pp * par.tp_attn * par.dp_attn) as u64, || {
            format!("{} world {}", c.role, c.layout.world_size)
        })?;
    }

    let afd = load_spec(&configs().join("qwen235b-afd.toml")).map_err(|e| e.to_string())?;
    compile_plan(&afd, &fid(&afd)).map_err(|e| e.to_string())?;
    let (wp, wa, wf) = (world(&afd, Role::P), world(&afd, Role::A), world(&afd, Role::F));
    ensure(wp == 8 * 8 * 8 && wa == 8 * 8 * 4 && wf == 8 * 256, || format!("P={wp} A={wa} F={wf}"))?;

    for (role, text) in [
        (Role::C, "pp2/tp8/dp16/ep128"),
        (Role::P, "pp2/tp8/dp16/ep128"),
        (Role::A, "pp2/tp8/dp16"),
        (Role::F, "pp2/ftp1/ep128"),
    ] {
        let par = parse_layout(role, text).map_err(|e| e.to_string())?;
        let arch = match role {
            Role::C => Architecture::Colocated,
            Role::P => Architecture::Pdd,
            _ => Architecture::Afd,
        };
        let mut spec = ServingSpec::minimal(ModelSpec::qwen3_235b_a22b(), arch);
        spec.roles.get_mut(&role).unwrap().parallel = par;
        let w = resolve_layout(&spec, role).map_err(|e| e.to_string())?.world_size;
        ensure(w == 256, || format!("{role} {text}: W={w}"))?;
    }
    for (tp, dp, ftp, ep) in [(8, 2, 4, 2), (8, 16, 8, 8), (4, 4, 2, 4)] {
        let mut spec = ServingSpec::minimal(ModelSpec::qwen3_235b_a22b(), Architecture::Colocated);
        spec.roles.get_mut(&Role::C).unwrap().parallel = Parallelism::new(1, tp, dp, ftp, ep);
        match resolve_layout(&spec, Role::C) {
            Err(Error::DomainMismatch { .. }) => {}
            other => return Err(format!("tp{tp}·dp{dp} vs ftp{ftp}·ep{ep} accepted: {other:?}")),
        }
    }
    Ok(format!("P={p} D={d} total={}; AFD P/A/F={wp}/{wa}/{wf}; pp2/tp8/dp16 W=256", plan.total_gpus))
}

fn random_spec(rng: &mut ChaCha8Rng) -> (ServingSpec, WorkloadConfig) {
    let arch = *[Architecture::Colocated, Architecture::Pdd, Architecture::Afd].choose(rng).unwrap();
    let mut spec = ServingSpec::minimal(ModelSpec::tiny_dense(), arch);
    let pp = rng.random_range(1..=2);
    for (role, rs) in spec.roles.iter_mut() {
        let tp = *[1, 2].choose(rng).unwrap();
        let dp = *[1, 2].choose(rng).unwrap();
        rs.parallel = if *role == Role::F {
            Parallelism::new(pp, 1, 1, tp, 1)
        } else {
            Parallelism::mirrored(pp, tp, dp)
        };
        rs.replicas = rng.random_range(1..=2);
    }
    spec.runtime.scheduler = *[SchedulerKind::VllmV1, SchedulerKind::Sglang, SchedulerKind::Mlfq, SchedulerKind::H2qBr]
        .choose(rng)
        .unwrap();
    spec.runtime.prefix_cache = rng.random_bool(0.5);
    spec.runtime.cuda_graph = rng.random_bool(0.7);
    if rng.random_bool(0.3) {
        spec.runtime.spec_decode = Some(SpecDecode {
            verify_tokens: rng.random_range(1..=4),
            acceptance: 0.6,
        });
    }
    spec.seed = rng.random();
    let pattern = match rng.random_range(0..4) {
        0 => Pattern::Agentic { mix: 0.2 },
        1 => Pattern::Fixed { prompt: rng.random_range(16..600), decode: rng.random_range(1..64) },
        2 => Pattern::Balanced,
        _ => Pattern::PrefillHeavy,
    };
    let wl = WorkloadConfig {
        pattern,
        num_requests: rng.random_range(8..40),
        arrival: Arrival::Poisson { qps: rng.random_range(5.0..80.0) },
        seed: rng.random(),
        jitter: 0.3,
        ..WorkloadConfig::default()
    };
    (spec, wl)
}

fn determinism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD37);
    let mut events = 0;
    for case in 0..50 {
        let (spec, wl) = random_spec(&mut rng);
        let f = fid(&spec);
        let reqs = synthesize(&wl).map_err(|e| e.to_string())?;
        let mut outs = Vec::new();
        for mode in [ExecMode::Sequential, ExecMode::Drivers, ExecMode::Threaded] {
            let out = run(&spec, &f, reqs.clone(), SimOptions::default(), mode, None)
                .map_err(|e| format!("case {case} {mode:?}: {e}"))?;
            outs.push((serde_json::to_string(&out.records).unwrap(), out.counters.events));
        }
        events += outs[0].1;
        for (mode, o) in ["drivers", "threaded"].iter().zip(&outs[1..]) {
            ensure(o == &outs[0], || format!("case {case} ({}): {mode} differs from sequential", spec.architecture))?;
        }
    }
    Ok(format!("50 plans, 3 executors each, {events} events per executor, identical records"))
}

/// Checks scheduler accounting after every event of one cluster.
struct Audited {
    inner: ClusterHandler,
    last: Nanos,
    events: u64,
}

impl Audited {
    fn audit(&self, at: &str) -> servesim_core::Result<()> {
        for w in &self.inner.workers {
            w.sched
                .audit()
                .map_err(|e| Error::InvalidConfig(format!("cluster {} replica {} after {at}: {e}", self.inner.id, w.index)))?;
        }
        Ok(())
    }
}

impl EventHandler for Audited {
    type Payload = Payload;

    fn start(&mut self, out: &mut Outbox<'_, Payload>) -> servesim_core::Result<()> {
        self.inner.start(out)?;
        self.audit("start")
    }

    fn handle(&mut self, ev: Event<Payload>, out: &mut Outbox<'_, Payload>) -> servesim_core::Result<()> {
        let t = ev.time();
        if t < self.last {
            return Err(Error::InvalidConfig(format!("cluster {} clock went back {} -> {t}", self.inner.id, self.last)));
        }
        self.last = t;
        self.events += 1;
        let kind = ev.kind.name();
        self.inner.handle(ev, out)?;
        self.audit(kind)
    }
}

fn check_final(out: &SimOutput, n: usize) -> Result<(), String> {
    ensure(out.records.len() == n, || format!("{} of {n} records", out.records.len()))?;
    ensure(out.pools_drained, || "blocks leaked at the end".into())?;
    for r in &out.records {
        if r.rejected {
            continue;
        }
        ensure(r.completion.is_some(), || format!("request {} unfinished", r.id))?;
        r.check_order().map_err(|e| format!("request {}: {e}", r.id))?;
        let planned: u64 = r.rounds.iter().map(|x| x.decode).sum();
        ensure(r.committed == planned, || format!("request {} committed {} of {planned}", r.id, r.committed))?;
        for x in &r.rounds {
            ensure(x.committed == x.decode, || format!("request {} round committed {} of {}", r.id, x.committed, x.decode))?;
        }
    }
    Ok(())
}

fn conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DE);
    let (mut events, mut runs, mut preemptions, mut transfers) = (0u64, 0, 0, 0);
    while events < 100_000 {
        let (mut spec, mut wl) = random_spec(&mut rng);
        if runs % 3 == 0 && spec.architecture != Architecture::Afd {
            // Tight memory forces watermark preemption.
            spec.model = ModelSpec::llama3_8b();
            for rs in spec.roles.values_mut() {
                rs.parallel = Parallelism::single();
            }
            spec.gpus.get_mut("H800").unwrap().memory_bytes = 21 * GIB;
            wl.pattern = Pattern::Fixed { prompt: 2048, decode: 512 };
            wl.num_requests = 48;
            wl.arrival = Arrival::Burst;
        }
        let f = fid(&spec);
        let reqs = synthesize(&wl).map_err(|e| e.to_string())?;
        let n = reqs.len();
        let (handlers, routes) = build_clusters(&spec, &f, reqs, SimOptions::default()).map_err(|e| e.to_string())?;
        let mut audited: Vec<Audited> = handlers.into_iter().map(|inner| Audited { inner, last: 0, events: 0 }).collect();
        let stats = run_sequential(&mut audited, &routes, Nanos::MAX, None).map_err(|e| format!("run {runs}: {e}"))?;
        events += audited.iter().map(|a| a.events).sum::<u64>();
        let out = collect(audited.into_iter().map(|a| a.inner).collect(), stats).map_err(|e| e.to_string())?;
        check_final(&out, n).map_err(|e| format!("run {runs}: {e}"))?;
        preemptions += out.counters.preemptions;
        transfers += out.records.iter().map(|r| r.transfers.len()).sum::<usize>();
        runs += 1;
    }
    ensure(preemptions > 0, || "no run exercised preemption".into())?;
    ensure(transfers > 0, || "no run exercised KV transfer".into())?;
    Ok(format!("{events} audited events over {runs} runs ({preemptions} preemptions, {transfers} transfers), 0 violations"))
}

fn cuda_graph_padding() -> Outcome {
    let spec = ServingSpec::minimal(ModelSpec::llama3_8b(), Architecture::Colocated);
    let layout = resolve_layout(&spec, Role::C).map_err(|e| e.to_string())?;
    let gpu = spec.gpu(&layout.gpu).map_err(|e| e.to_string())?.clone();
    let cost = CostModel::new(&spec, layout, &gpu).map_err(|e| e.to_string())?;
    let f = fid(&spec);
    let bins = spec.runtime.capture_bins.clone();
    let decode = |n: u32| -> Vec<BatchEntry> {
        (0..n as u64)
            .map(|id| BatchEntry { id, phase: Phase::Decode, tokens: 1, context: 512 })
            .collect()
    };

    let mut one = PaddingStats::default();
    cost.attention_layer(&f, &decode(33), Some(&mut one)).map_err(|e| e.to_string())?;
    ensure(one.padded == 64 && one.useful == 33, || format!("33 padded to {}", one.padded))?;

    let seq: Vec<u32> = vec![1, 2, 3, 5, 8, 9, 16, 17, 31, 32, 33, 33, 40, 63, 64, 65, 100, 7, 33, 1];
    let mut stats = PaddingStats::default();
    for &b in &seq {
        cost.attention_layer(&f, &decode(b), Some(&mut stats)).map_err(|e| e.to_string())?;
    }
    let (mut padded, mut useful, mut steps) = (0u64, 0u64, 0u64);
    for &b in &seq {
        let mut bin = None;
        for &c in &bins {
            if c >= b {
                bin = Some(c);
                break;
            }
        }
        if let Some(c) = bin {
            padded += c as u64;
            useful += b as u64;
            steps += 1;
        }
    }
    ensure(stats.padded == padded && stats.useful == useful && stats.steps == steps, || {
        format!("model {stats:?} vs replay ({padded}, {useful}, {steps})")
    })?;
    let replay = (padded - useful) as f64 / useful as f64;
    ensure(stats.inflation() == replay, || format!("inflation {} vs {replay}", stats.inflation()))?;
    Ok(format!("33 -> 64; {steps} graph steps, padded {padded} / useful {useful}, inflation {replay:.6}"))
}

fn closed_form(k: u32, p: f64) -> f64 {
    (0..=k).map(|i| p.powi(i as i32)).sum()
}

fn enumerated(k: u32, p: f64) -> f64 {
    let mut e = 0.0;
    for mask in 0u32..(1 << k) {
        let prob: f64 = (0..k).map(|i| if mask >> i & 1 == 1 { p } else { 1.0 - p }).product();
        let accepted = (0..k).take_while(|i| mask >> i & 1 == 1).count();
        e += prob * (accepted + 1) as f64;
    }
    e
}

fn mtp_oracle() -> Outcome {
    for k in 1..=4 {
        for p in [0.3, 0.5, 0.7] {
            let (a, b) = (enumerated(k, p), closed_form(k, p));
            ensure((a - b).abs() < 1e-12, || format!("k={k} p={p}: enumeration {a} vs closed form {b}"))?;
        }
    }
    let mut worst: f64 = 0.0;
    for k in [2, 8, 32] {
        for p in [0.3, 0.7] {
            let state = MtpState { k, p };
            let expect = closed_form(k, p);
            ensure((state.expected_commits() - expect).abs() < 1e-12, || format!("k={k} p={p} expected_commits"))?;
            let mut req = Request::new(k as u64, 0, vec![RoundPlan::new(1, u64::MAX / 2)], 0, 11);
            let cycles = 100_000;
            let total: u64 = (0..cycles).map(|_| mtp_step(&state, &mut req)).sum();
            let mean = total as f64 / cycles as f64;
            let err = (mean - expect).abs() / expect;
            worst = worst.max(err);
            ensure(err <= 0.02, || format!("k={k} p={p}: mean {mean:.4} vs {expect:.4}"))?;
        }
    }
    Ok(format!("6 configurations, worst relative error {:.3}%; enumeration matches for k<=4", worst * 100.0))
}

fn prefix_cache_exactness() -> Outcome {
    // Duplicate prompts of one session spaced far apart, multi-round
    // sessions, and unrelated one-off prompts.
    let mut lines = Vec::new();
    let mut t = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0xCAC4E);
    for i in 0..60 {
        let session = rng.random_range(1..=6);
        let prompt = rng.random_range(1..2000);
        let decode = rng.random_range(1..40);
        let line = match i % 4 {
            0 => format!("{t},{prompt},{decode}"),
            1 => {
                let r2 = rng.random_range(1..500);
                let r3 = rng.random_range(1..500);
                format!("{t},{prompt},{decode},{session},{r2}/7;{r3}/5")
            }
            _ => format!("{t},{prompt},{decode},{session}"),
        };
        lines.push(line);
        t += 20_000.0;
    }
    let reqs = parse_trace(&lines.join("\n"), ms(50), 3).map_err(|e| e.to_string())?;
    let mut spec = ServingSpec::minimal(ModelSpec::tiny_dense(), Architecture::Colocated);
    spec.runtime.prefix_cache = true;
    let f = fid(&spec);
    let out = simulate(&spec, &f, reqs.clone(), SimOptions::default()).map_err(|e| e.to_string())?;
    check_final(&out, reqs.len())?;
    ensure(out.counters.preemptions == 0, || "unexpected preemption".into())?;
    let mut by_id: BTreeMap<u64, &LifecycleRecord> = BTreeMap::new();
    for r in &out.records {
        by_id.insert(r.id, r);
    }
    for w in reqs.windows(2) {
        let done = by_id[&w[0].id].completion.unwrap();
        ensure(done < w[1].arrival, || format!("request {} overlaps the next arrival", w[0].id))?;
    }

    let bt = spec.runtime.block_tokens as u64;
    let mut cached: BTreeSet<(u64, u64)> = BTreeSet::new();
    let (mut lookups, mut queried, mut hits) = (0u64, 0u64, 0u64);
    for r in &reqs {
        let mut context = 0;
        for round in &r.plan {
            let pl = context + round.prompt;
            let q = pl / bt;
            let h = (0..q).take_while(|i| cached.contains(&(r.content, *i))).count() as u64;
            lookups += 1;
            queried += q;
            hits += h;
            for i in 0..(pl + round.decode - 1) / bt {
                cached.insert((r.content, i));
            }
            context = pl + round.decode;
        }
    }
    let c = &out.counters;
    ensure(c.prefix_lookups == lookups, || format!("lookups {} vs {lookups}", c.prefix_lookups))?;
    ensure(c.prefix_queried_blocks == queried, || format!("queried {} vs {queried}", c.prefix_queried_blocks))?;
    ensure(c.prefix_hit_blocks == hits, || format!("hits {} vs {hits}", c.prefix_hit_blocks))?;
    let ratio = hits as f64 / queried as f64;
    ensure(out.summary.prefix_hit_ratio == ratio, || format!("ratio {} vs {ratio}", out.summary.prefix_hit_ratio))?;
    ensure(hits > 0 && hits < queried, || "trace exercised no partial hits".into())?;
    Ok(format!("{lookups} lookups, {hits}/{queried} blocks hit (ratio {ratio:.6}), exact"))
}

fn ep_barrier() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xE9);
    for case in 0..10_000 {
        let lanes = rng.random_range(1..=256u32);
        let delta: Nanos = rng.random_range(0..50_000);
        let layer = rng.random_range(0..128);
        let ready: Vec<Nanos> = (0..lanes).map(|_| rng.random_range(0..1_000_000_000)).collect();
        let mut order: Vec<u32> = (0..lanes).collect();
        order.shuffle(&mut rng);
        let mut b = EpSyncBarrier::new(layer, lanes, delta);
        for (i, &lane) in order.iter().enumerate() {
            let c = ep_combine(&mut b, lane, ready[lane as usize]).map_err(|e| e.to_string())?;
            let last = i + 1 == order.len();
            match c {
                Combine::Pending if !last => {}
                Combine::Fired(t) if last => {
                    let want = ready.iter().copied().max().unwrap() + delta;
                    ensure(t == want, || format!("case {case}: fired at {t}, want {want}"))?;
                }
                other => return Err(format!("case {case}: {other:?} after {} of {lanes} lanes", i + 1)),
            }
        }
    }
    Ok("10000 fuzzed barriers, combine = max + delta".into())
}

fn sr_ce() -> Outcome {
    let cat = builtin_gpus();
    let all_h800 = |p: u64, d: u64| Allocation::default().with(Role::P, p, "H800").with(Role::D, d, "H800");
    let d_on_h20 = |p: u64, d: u64| Allocation::default().with(Role::P, p, "H800").with(Role::D, d, "H20");
    let s11 = score_allocation(&d_on_h20(512, 512), &all_h800(512, 512), 1.0, 1.0, true, &[Role::P], "H800", &cat)
        .map_err(|e| e.to_string())?;
    let s26 = score_allocation(&d_on_h20(256, 768), &all_h800(256, 768), 1.0, 1.0, true, &[Role::P], "H800", &cat)
        .map_err(|e| e.to_string())?;
    ensure((s11.sr - 1.37).abs() <= 0.01, || format!("1:1 SR {}", s11.sr))?;
    ensure((s26.sr - 1.69).abs() <= 0.01, || format!("2:6 SR {}", s26.sr))?;
    let want11 = (1024.0 * 3.49) / (512.0 * 3.49 + 512.0 * 1.59);
    ensure((s11.sr - want11).abs() < 1e-12, || "1:1 SR arithmetic".into())?;
    let id = score_allocation(&all_h800(512, 512), &all_h800(512, 512), 7.0, 7.0, true, &[], "H800", &cat)
        .map_err(|e| e.to_string())?;
    ensure(id.sr == 1.0 && id.ce == 1.0 && !id.gates.roi, || format!("baseline identity {id:?}"))?;
    let slow = score_allocation(&d_on_h20(512, 512), &all_h800(512, 512), 0.8, 1.0, true, &[Role::P], "H800", &cat)
        .map_err(|e| e.to_string())?;
    ensure((slow.ce - 0.8 * slow.sr).abs() < 1e-12, || format!("CE {} vs {}", slow.ce, 0.8 * slow.sr))?;
    let misaligned = score_allocation(&d_on_h20(512, 512), &all_h800(512, 512), 1.0, 1.0, true, &[Role::D], "H800", &cat)
        .map_err(|e| e.to_string())?;
    ensure(!misaligned.gates.alignment, || "compute-bound D on H20 passed alignment".into())?;
    Ok(format!("SR 1:1 = {:.4}, SR 2:6 = {:.4}", s11.sr, s26.sr))
}

/// Ordering derived directly from the rank and secondary-key rules.
fn reference_order(slices: &[H2qSlice], eta: u64, b: u64) -> (Vec<u64>, Option<u64>, Option<u64>) {
    let oldest = |v: Vec<&H2qSlice>| v.into_iter().min_by_key(|s| (s.arrival, s.id)).map(|s| s.id);
    let waiting_short: Vec<Nanos> =
        slices.iter().filter(|s| s.waiting && s.queue == Queue::Short).map(|s| s.arrival).collect();
    let rel = match waiting_short.iter().min() {
        None => oldest(slices.iter().filter(|s| s.carry).collect()),
        Some(&a) => oldest(slices.iter().filter(|s| s.carry && s.arrival <= a).collect()),
    };
    let long: Vec<&H2qSlice> = slices.iter().filter(|s| s.queue == Queue::Long).collect();
    let live = if eta >= b && !long.is_empty() { oldest(long) } else { None };
    let mut v: Vec<&H2qSlice> = slices.iter().collect();
    let rho = |s: &H2qSlice| {
        if Some(s.id) == rel {
            -2
        } else if Some(s.id) == live {
            -1
        } else if s.queue == Queue::Short {
            0
        } else {
            1
        }
    };
    v.sort_by(|x, y| {
        let (rx, ry) = (rho(x), rho(y));
        rx.cmp(&ry).then_with(|| {
            if rx == 0 {
                (x.ell, x.decode, x.arrival, x.id).cmp(&(y.ell, y.decode, y.arrival, y.id))
            } else {
                (!x.decode, x.arrival, x.id).cmp(&(!y.decode, y.arrival, y.id))
            }
        })
    });
    (v.into_iter().map(|s| s.id).collect(), rel, live)
}

fn agentic_pdd_p95(kind: SchedulerKind, seed: u64) -> Result<f64, String> {
    let mut spec = ServingSpec::minimal(ModelSpec::llama3_405b(), Architecture::Pdd);
    for rs in spec.roles.values_mut() {
        rs.parallel = Parallelism::mirrored(2, 8, 2);
    }
    spec.runtime.scheduler = kind;
    spec.runtime.prefix_cache = true;
    // Liveness after one full batch of short slices.
    spec.runtime.h2q.liveness = spec.runtime.max_batch_size as u64;
    let wl = WorkloadConfig {
        pattern: Pattern::Agentic { mix: 0.03 },
        num_requests: 400,
        arrival: Arrival::Poisson { qps: 1.5 },
        seed,
        ..WorkloadConfig::default()
    };
    let reqs = synthesize(&wl).map_err(|e| e.to_string())?;
    let out = simulate(&spec, &fid(&spec), reqs, SimOptions::default()).map_err(|e| e.to_string())?;
    check_final(&out, 400)?;
    Ok(out.summary.attft_ms.p95)
}

fn h2q_behavior() -> Outcome {
    let p = H2qParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x42);
    for case in 0..10_000 {
        let n = rng.random_range(0..24);
        let slices: Vec<H2qSlice> = (0..n)
            .map(|id| {
                let queue = if rng.random_bool(0.4) { Queue::Long } else { Queue::Short };
                H2qSlice {
                    id,
                    session: id,
                    waiting: rng.random_bool(0.5),
                    decode: rng.random_bool(0.4),
                    arrival: rng.random_range(0..20),
                    ell: *[256, 512, 4096, 8192, 16384, 32768].choose(&mut rng).unwrap(),
                    queue,
                    carry: queue == Queue::Long && rng.random_bool(0.3),
                }
            })
            .collect();
        let eta = rng.random_range(0..2 * p.liveness);
        let got = h2q_order(&slices, eta, &p);
        let (order, rel, live) = reference_order(&slices, eta, p.liveness);
        ensure(got.order == order && got.release == rel && got.liveness == live, || {
            format!("case {case}: {got:?} vs {order:?} rel {rel:?} live {live:?}")
        })?;
    }

    // Liveness and one-shot release over scheduling passes.
    for case in 0..200 {
        let mut st = H2qState::default();
        let carrier = 0u64;
        st.on_arrival(carrier, 32768, &p);
        st.on_completion(&[SliceOutcome {
            session: carrier,
            queue: Queue::Long,
            new_tokens: 8192,
            round_done: false,
            round_total: 0,
            partial_prefill: true,
            was_release: false,
        }]);
        let (mut streak, mut releases) = (0u64, 0);
        for pass in 0..60u64 {
            let mut slices = vec![H2qSlice {
                id: carrier,
                session: carrier,
                waiting: false,
                decode: false,
                arrival: 5,
                ell: 32768,
                queue: Queue::Long,
                carry: st.session(carrier).carry,
            }];
            let shorts = rng.random_range(1..6);
            for j in 0..shorts {
                slices.push(H2qSlice {
                    id: 100 + j,
                    session: 100 + pass * 10 + j,
                    waiting: true,
                    decode: false,
                    arrival: rng.random_range(0..10),
                    ell: 256,
                    queue: Queue::Short,
                    carry: false,
                });
            }
            let o = h2q_order(&slices, st.eta, &p);
            let take = rng.random_range(1..=shorts as usize);
            let ran: Vec<u64> = o.order[..take].to_vec();
            let outcomes: Vec<SliceOutcome> = ran
                .iter()
                .map(|id| {
                    let s = slices.iter().find(|s| s.id == *id).unwrap();
                    SliceOutcome {
                        session: s.session,
                        queue: s.queue,
                        new_tokens: 256,
                        round_done: false,
                        round_total: 0,
                        partial_prefill: false,
                        was_release: o.release == Some(*id),
                    }
                })
                .collect();
            if ran.contains(&carrier) {
                streak = 0;
                releases += (o.release == Some(carrier)) as u32;
            } else {
                streak += 1;
            }
            ensure(streak <= p.liveness, || format!("case {case}: oldest long slice starved {streak} passes"))?;
            st.on_completion(&outcomes);
        }
        ensure(releases <= 1, || format!("case {case}: carryover released {releases} times"))?;
        ensure(!st.session(carrier).carry || releases == 0, || format!("case {case}: carry survived release"))?;
    }

    let mut rows = Vec::new();
    for seed in [1, 2, 3] {
        let mlfq = agentic_pdd_p95(SchedulerKind::Mlfq, seed)?;
        let h2q = agentic_pdd_p95(SchedulerKind::H2qBr, seed)?;
        ensure(h2q < mlfq, || format!("seed {seed}: H2Q-BR p95 aTTFT {h2q:.0} ms >= MLFQ {mlfq:.0} ms"))?;
        rows.push(format!("{:.1}s<{:.1}s", h2q / 1e3, mlfq / 1e3));
    }
    Ok(format!("10^4 states match reference; p95 aTTFT H2Q-BR vs MLFQ: {}", rows.join(", ")))
}

struct ContrastRun {
    mean_batch: f64,
    transition: Nanos,
}

fn contrast_run(kind: SchedulerKind) -> Result<ContrastRun, String> {
    let mut spec = ServingSpec::minimal(ModelSpec::qwen3_235b_a22b(), Architecture::Colocated);
    spec.roles.get_mut(&Role::C).unwrap().parallel = Parallelism::new(2, 8, 16, 1, 128);
    spec.runtime.scheduler = kind;
    spec.runtime.max_batch_tokens = 8192;
    if kind == SchedulerKind::Sglang {
        // Separate prefill budget at the engine's default.
        spec.runtime.max_prefill_tokens = Some(16384);
    }
    let wl = WorkloadConfig {
        pattern: Pattern::PrefillHeavy,
        num_requests: 4096,
        arrival: Arrival::Burst,
        seed: 1,
        jitter: 0.5,
        ..WorkloadConfig::default()
    };
    let reqs = synthesize(&wl).map_err(|e| e.to_string())?;
    let opts = SimOptions { batch_log: true, ..SimOptions::default() };
    let out = simulate(&spec, &fid(&spec), reqs, opts).map_err(|e| e.to_string())?;
    check_final(&out, 4096)?;
    let log: Vec<_> = out.counters.batch_log.iter().filter(|b| b.size > 0).collect();
    let mean_batch = log.iter().map(|b| b.size as f64).sum::<f64>() / log.len() as f64;
    let window = ms(1000);
    let mut by_window: BTreeMap<Nanos, (u64, u64)> = BTreeMap::new();
    for b in &log {
        let e = by_window.entry(b.time / window).or_default();
        e.0 += b.size as u64;
        e.1 += b.decode as u64;
    }
    let transition = by_window
        .iter()
        .find(|(_, (size, dec))| *dec as f64 >= 0.9 * *size as f64)
        .map(|(w, _)| w * window)
        .ok_or("never decode-dominant")?;
    Ok(ContrastRun { mean_batch, transition })
}

fn scheduler_contrast() -> Outcome {
    let v = contrast_run(SchedulerKind::VllmV1)?;
    let s = contrast_run(SchedulerKind::Sglang)?;
    ensure(s.mean_batch > v.mean_batch, || {
        format!("mean batch prefill-first {:.1} <= running-first {:.1}", s.mean_batch, v.mean_batch)
    })?;
    ensure(s.transition > v.transition, || {
        format!("decode-dominant at {} ns (prefill-first) vs {} ns", s.transition, v.transition)
    })?;
    Ok(format!(
        "mean non-empty batch {:.1} vs {:.1}; decode-dominant from {:.0}s vs {:.0}s",
        s.mean_batch,
        v.mean_batch,
        s.transition as f64 / 1e9,
        v.transition as f64 / 1e9
    ))
}

fn rollout() -> Vec<Request> {
    (0..4000u64)
        .map(|i| {
            let decode = if i % 20 == 0 { 8192 } else { 512 + (i * 37) % 512 };
            Request::new(i, 0, vec![RoundPlan::new(2048, decode)], 0, 1)
        })
        .collect()
}

fn reconfiguration() -> Outcome {
    let reqs = rollout();
    let heavy = reqs.iter().filter(|r| r.plan[0].decode == 8192).count();
    ensure(heavy * 20 == reqs.len(), || format!("{heavy} heavy of {}", reqs.len()))?;
    let cost = ms(10_000);
    let mut makespans = Vec::new();
    for dynamic in [false, true] {
        let mut spec = ServingSpec::minimal(ModelSpec::llama3_405b(), Architecture::Colocated);
        let c = spec.roles.get_mut(&Role::C).unwrap();
        c.parallel = Parallelism::mirrored(16, 2, 1);
        c.replicas = 32;
        if dynamic {
            spec.runtime.reconfig = Some(ReconfigSpec {
                threshold: 0.1,
                target: Parallelism::mirrored(16, 8, 1),
                cost_ns: cost,
            });
        }
        ensure(spec.gpu_count().unwrap() == 1024, || "layout A is not 1024 GPUs".into())?;
        let out = simulate(&spec, &fid(&spec), reqs.clone(), SimOptions::default()).map_err(|e| e.to_string())?;
        check_final(&out, reqs.len())?;
        ensure(out.counters.reconfigured_at.is_some() == dynamic, || "switch fired on the wrong run".into())?;
        makespans.push(out.summary.makespan_ms / 1e3);
    }
    ensure(makespans[1] < makespans[0], || format!("dynamic {:.1}s >= static {:.1}s", makespans[1], makespans[0]))?;
    Ok(format!(
        "makespan static layout A {:.1}s, dynamic A->B {:.1}s ({:.2}x), switch cost {:.0}s",
        makespans[0],
        makespans[1],
        makespans[0] / makespans[1],
        cost as f64 / 1e9
    ))
}

fn scale() -> Outcome {
    let spec = load_spec(&configs().join("qwen235b-afd-1024.toml")).map_err(|e| e.to_string())?;
    let gpus = spec.gpu_count().map_err(|e| e.to_string())?;
    ensure(gpus == 1024, || format!("{gpus} GPUs"))?;
    let reqs = requests_for(&spec).map_err(|e| e.to_string())?;
    ensure(reqs.len() == 10_000, || format!("{} requests", reqs.len()))?;
    let t = Instant::now();
    let out = run(&spec, &fid(&spec), reqs, SimOptions::default(), ExecMode::Threaded, None).map_err(|e| e.to_string())?;
    check_final(&out, 10_000)?;
    Ok(format!("1024-GPU AFD, 10000 requests, {} events in {:.1}s", out.counters.events, t.elapsed().as_secs_f64()))
}

fn main() {
    let criteria: Vec<(&str, Duration, fn() -> Outcome)> = vec![
        ("parallel-primitive arithmetic", Duration::from_secs(1), parallel_arithmetic),
        ("determinism across executors", Duration::from_secs(120), determinism),
        ("conservation at every event", Duration::from_secs(120), conservation),
        ("cuda-graph padding", Duration::from_secs(10), cuda_graph_padding),
        ("mtp oracle", Duration::from_secs(60), mtp_oracle),
        ("prefix cache exactness", Duration::from_secs(30), prefix_cache_exactness),
        ("ep barrier", Duration::from_secs(10), ep_barrier),
        ("sr/ce reproduction", Duration::from_secs(1), sr_ce),
        ("h2q-br behavior", Duration::from_secs(300), h2q_behavior),
        ("scheduler contrast", Duration::from_secs(120), scheduler_contrast),
        ("reconfiguration", Duration::from_secs(180), reconfiguration),
        ("scale", Duration::from_secs(600), scale),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, limit, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let t = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = t.elapsed();
        let r = match r {
            Ok(msg) if took > limit => Err(format!("{msg}; exceeded {:.0?}", limit)),
            r => r,
        };
        match r {
            Ok(msg) => println!("PASS {name} [{:.2}s / {:.0?}]: {msg}", took.as_secs_f64(), limit),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name} [{:.2}s / {:.0?}]: {msg}", took.as_secs_f64(), limit);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
