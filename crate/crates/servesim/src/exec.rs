//! Per-cluster drivers advanced on the rayon pool.

use std::io::Write;

use rayon::prelude::*;
use servesim_core::config::ServingSpec;
use servesim_core::des::{advance_serial, ClusterDriver, EventHandler, EventRecord, Routes, RoundExecutor};
use servesim_core::fidelity::Fidelity;
use servesim_core::orchestration::{build_clusters, collect, simulate, SimOptions, SimOutput};
use servesim_core::workload::Request;
use servesim_core::Nanos;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    /// One merged event queue.
    Sequential,
    /// Synchronized per-cluster drivers, advanced one after another.
    Drivers,
    /// Synchronized per-cluster drivers, advanced in parallel.
    Threaded,
}

/// Advances every driver on the rayon pool; same result as [`advance_serial`].
pub fn advance_parallel<H>(drivers: &mut [ClusterDriver<H>], routes: &Routes, horizon: Nanos) -> servesim_core::Result<u64>
where
    H: EventHandler + Send,
    H::Payload: Send,
{
    drivers
        .par_iter_mut()
        .map(|d| d.advance(horizon, routes))
        .try_reduce(|| 0, |a, b| Ok(a + b))
}

/// Runs a simulation. When `trace` is given every processed event is written
/// to it as one JSON line; driver runs emit each round's events ordered by
/// (timestamp, cluster).
pub fn run(
    spec: &ServingSpec,
    fidelity: &Fidelity,
    requests: Vec<Request>,
    opts: SimOptions,
    mode: ExecMode,
    trace: Option<&mut dyn Write>,
) -> Result<SimOutput> {
    if mode == ExecMode::Sequential && trace.is_none() {
        return Ok(simulate(spec, fidelity, requests, opts)?);
    }
    let (mut handlers, routes) = build_clusters(spec, fidelity, requests, opts)?;
    if mode == ExecMode::Sequential {
        let sink = trace.expect("trace");
        let mut failed = None;
        let mut emit = |r: &EventRecord| {
            if failed.is_none() {
                if let Err(e) = write_record(sink, r) {
                    failed = Some(e);
                }
            }
        };
        let stats = servesim_core::des::run_sequential(&mut handlers, &routes, opts.horizon, Some(&mut emit))?;
        if let Some(e) = failed {
            return Err(e);
        }
        return Ok(collect(handlers, stats)?);
    }
    let mut exec = RoundExecutor::new(handlers, routes);
    let tracing = trace.is_some();
    exec.set_tracing(tracing);
    let mut buf: Vec<EventRecord> = Vec::new();
    let stats = exec.run(opts.horizon, |drivers, routes, horizon| {
        let n = match mode {
            ExecMode::Threaded => advance_parallel(drivers, routes, horizon)?,
            _ => advance_serial(drivers, routes, horizon)?,
        };
        if tracing {
            for d in drivers.iter_mut() {
                buf.extend(d.take_trace());
            }
        }
        Ok(n)
    })?;
    if let Some(sink) = trace {
        buf.sort_by_key(|r| (r.timestamp, r.cluster));
        for r in &buf {
            write_record(sink, r)?;
        }
    }
    Ok(collect(exec.into_handlers(), stats)?)
}

fn write_record(sink: &mut dyn Write, r: &EventRecord) -> Result<()> {
    serde_json::to_writer(&mut *sink, r)?;
    sink.write_all(b"\n").map_err(|e| Error::Io("event trace".into(), e))
}
