//! Command-line interface.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use servesim_core::config::{parse_layout, MoeRouting, ReconfigSpec, Role, SchedulerKind, ServingSpec, SpecDecode};
use servesim_core::orchestration::SimOptions;
use servesim_core::workload::{Arrival, Pattern};

use crate::exec::{run, ExecMode};
use crate::report::{write_frontier, write_records, write_summary};
use crate::spec_file::{load_catalog, load_cost_model, load_spec, requests_for};
use crate::sweep_file::{load_grid, score, sweep};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "servesim", version, about = "Discrete-event simulator for LLM serving clusters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one serving spec.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[command(flatten)]
        output: Output,
    },
    /// Simulate a grid of candidates and extract the SLA frontier.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value = "analytical", help_heading = "Hardware")]
        cost_model: String,
        #[command(flatten)]
        output: Output,
    },
    /// Score a heterogeneous GPU allocation against a baseline.
    Score {
        #[arg(long)]
        alloc: PathBuf,
        /// Spec simulated when the allocation omits throughputs.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = "analytical", help_heading = "Hardware")]
        cost_model: String,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

impl From<OnOff> for bool {
    fn from(v: OnOff) -> bool {
        v == OnOff::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WorkloadArg {
    PrefillHeavy,
    DecodeHeavy,
    Balanced,
    Agentic,
    Trace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchedulerArg {
    #[value(name = "vllm_v1")]
    VllmV1,
    Sglang,
    Mlfq,
    #[value(name = "h2q_br")]
    H2qBr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoutingArg {
    Balanced,
    Skew,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExecArg {
    Sequential,
    Drivers,
    Threaded,
}

#[derive(Debug, Args)]
pub struct Overrides {
    #[arg(long, value_enum, help_heading = "Workload")]
    pub workload: Option<WorkloadArg>,
    /// Heavy-tail fraction for the agentic workload.
    #[arg(long, default_value_t = 0.0, help_heading = "Workload")]
    pub agentic_mix: f64,
    #[arg(long, help_heading = "Workload")]
    pub trace: Option<PathBuf>,
    /// Poisson arrival rate; 0 releases all requests at once.
    #[arg(long, help_heading = "Workload")]
    pub qps: Option<f64>,
    #[arg(long, help_heading = "Workload")]
    pub num_requests: Option<u64>,
    #[arg(long, help_heading = "Workload")]
    pub seed: Option<u64>,

    #[arg(long, default_value = "analytical", help_heading = "Hardware")]
    pub cost_model: String,
    #[arg(long, help_heading = "Hardware")]
    pub gpu_catalog: Option<PathBuf>,

    #[arg(long, value_enum, help_heading = "Serving")]
    pub scheduler: Option<SchedulerArg>,
    #[arg(long = "h2q-L", help_heading = "Serving")]
    pub h2q_l: Option<u64>,
    #[arg(long = "h2q-C", help_heading = "Serving")]
    pub h2q_c: Option<u64>,
    #[arg(long = "h2q-B", help_heading = "Serving")]
    pub h2q_b: Option<u64>,
    #[arg(long, help_heading = "Serving")]
    pub watermark: Option<f64>,
    #[arg(long, value_enum, help_heading = "Serving")]
    pub cuda_graph: Option<OnOff>,
    /// Comma-separated capture batch sizes.
    #[arg(long, value_delimiter = ',', help_heading = "Serving")]
    pub capture_bins: Option<Vec<u32>>,
    /// `k,p`: verify tokens and per-token acceptance.
    #[arg(long, help_heading = "Serving")]
    pub spec_decode: Option<String>,
    #[arg(long, value_enum, help_heading = "Serving")]
    pub prefix_cache: Option<OnOff>,
    #[arg(long, help_heading = "Serving")]
    pub chunk_budget: Option<u32>,
    /// EP combine slack in microseconds.
    #[arg(long, help_heading = "Serving")]
    pub afd_delta_ep: Option<f64>,
    #[arg(long, value_enum, help_heading = "Serving")]
    pub moe_routing: Option<RoutingArg>,
    /// `<threshold>,<target layout>,<cost_ms>`, e.g. `0.1,pp1/tp8/dp1,2000`.
    #[arg(long, help_heading = "Serving")]
    pub reconfig: Option<String>,
}

#[derive(Debug, Args)]
pub struct Output {
    #[arg(long, default_value = "out", help_heading = "Metrics")]
    pub out_dir: PathBuf,
    /// Line-delimited event dump.
    #[arg(long, help_heading = "Metrics")]
    pub event_trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "threaded", help_heading = "Metrics")]
    pub exec: ExecArg,
}

fn parse_spec_decode(s: &str) -> Result<SpecDecode> {
    let bad = || Error::Spec(format!("--spec-decode expects k,p, got {s:?}"));
    let (k, p) = s.split_once(',').ok_or_else(bad)?;
    Ok(SpecDecode {
        verify_tokens: k.trim().parse().map_err(|_| bad())?,
        acceptance: p.trim().parse().map_err(|_| bad())?,
    })
}

/// Parses `<threshold>,<target layout>,<cost_ms>`.
pub fn parse_reconfig(s: &str) -> Result<ReconfigSpec> {
    let bad = || Error::Spec(format!("--reconfig expects threshold,layout,cost_ms, got {s:?}"));
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [t, layout, cost] = parts[..] else { return Err(bad()) };
    let cost_ms: f64 = cost.parse().map_err(|_| bad())?;
    Ok(ReconfigSpec {
        threshold: t.parse().map_err(|_| bad())?,
        target: parse_layout(Role::C, layout)?,
        cost_ns: (cost_ms * 1e6).round() as u64,
    })
}

impl Overrides {
    pub fn apply(&self, spec: &mut ServingSpec) -> Result<()> {
        let w = &mut spec.workload;
        if let Some(kind) = self.workload {
            w.pattern = match kind {
                WorkloadArg::PrefillHeavy => Pattern::PrefillHeavy,
                WorkloadArg::DecodeHeavy => Pattern::DecodeHeavy,
                WorkloadArg::Balanced => Pattern::Balanced,
                WorkloadArg::Agentic => Pattern::Agentic { mix: self.agentic_mix },
                WorkloadArg::Trace => Pattern::Trace {
                    path: self
                        .trace
                        .as_ref()
                        .ok_or_else(|| Error::Spec("--workload trace needs --trace".into()))?
                        .to_string_lossy()
                        .into_owned(),
                },
            };
        } else if let Some(t) = &self.trace {
            w.pattern = Pattern::Trace {
                path: t.to_string_lossy().into_owned(),
            };
        }
        if let Some(q) = self.qps {
            w.arrival = if q > 0.0 { Arrival::Poisson { qps: q } } else { Arrival::Burst };
        }
        if let Some(n) = self.num_requests {
            w.num_requests = n;
        }
        if let Some(s) = self.seed {
            w.seed = s;
            spec.seed = s;
        }
        if let Some(c) = &self.gpu_catalog {
            spec.gpus.extend(load_catalog(c)?);
        }
        let rt = &mut spec.runtime;
        if let Some(s) = self.scheduler {
            rt.scheduler = match s {
                SchedulerArg::VllmV1 => SchedulerKind::VllmV1,
                SchedulerArg::Sglang => SchedulerKind::Sglang,
                SchedulerArg::Mlfq => SchedulerKind::Mlfq,
                SchedulerArg::H2qBr => SchedulerKind::H2qBr,
            };
        }
        if let Some(v) = self.h2q_l {
            rt.h2q.long_round = v;
        }
        if let Some(v) = self.h2q_c {
            rt.h2q.service_cap = v;
        }
        if let Some(v) = self.h2q_b {
            rt.h2q.liveness = v;
        }
        if let Some(v) = self.watermark {
            rt.watermark = v;
        }
        if let Some(v) = self.cuda_graph {
            rt.cuda_graph = v.into();
        }
        if let Some(v) = &self.capture_bins {
            rt.capture_bins = v.clone();
        }
        if let Some(v) = &self.spec_decode {
            rt.spec_decode = Some(parse_spec_decode(v)?);
        }
        if let Some(v) = self.prefix_cache {
            rt.prefix_cache = v.into();
        }
        if let Some(v) = self.chunk_budget {
            rt.chunk_budget = Some(v);
        }
        if let Some(v) = self.afd_delta_ep {
            rt.delta_ep_ns = (v * 1e3).round() as u64;
        }
        if let Some(v) = self.moe_routing {
            rt.moe_routing = match v {
                RoutingArg::Balanced => MoeRouting::Balanced,
                RoutingArg::Skew => MoeRouting::Skew,
            };
        }
        if let Some(v) = &self.reconfig {
            rt.reconfig = Some(parse_reconfig(v)?);
        }
        spec.validate()?;
        Ok(())
    }
}

impl From<ExecArg> for ExecMode {
    fn from(v: ExecArg) -> Self {
        match v {
            ExecArg::Sequential => ExecMode::Sequential,
            ExecArg::Drivers => ExecMode::Drivers,
            ExecArg::Threaded => ExecMode::Threaded,
        }
    }
}

fn open(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(path.to_path_buf(), e))
}

/// Runs a parsed command line, writing reports under `--out-dir`.
pub fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Simulate {
            spec,
            overrides,
            output,
        } => {
            let mut spec = load_spec(&spec)?;
            overrides.apply(&mut spec)?;
            let fid = load_cost_model(&overrides.cost_model, spec.runtime.launch_overhead_ns)?;
            let reqs = requests_for(&spec)?;
            std::fs::create_dir_all(&output.out_dir).map_err(|e| Error::Io(output.out_dir.clone(), e))?;
            let mut trace = output.event_trace.as_deref().map(open).transpose()?;
            let out = run(
                &spec,
                &fid,
                reqs,
                SimOptions::default(),
                output.exec.into(),
                trace.as_mut().map(|w| w as &mut dyn Write),
            )?;
            if let (Some(w), Some(p)) = (trace.as_mut(), &output.event_trace) {
                w.flush().map_err(|e| Error::Io(p.clone(), e))?;
            }
            write_records(&output.out_dir.join("requests.jsonl"), &out.records)?;
            write_summary(&output.out_dir.join("summary.json"), &out.summary)?;
            let s = &out.summary;
            Ok(format!(
                "{} requests ({} rejected), makespan {:.1} ms, {:.1} tok/s, p50/p95 TTFT {:.1}/{:.1} ms, p50/p95 TPOT {:.2}/{:.2} ms",
                s.requests, s.rejected, s.makespan_ms, s.throughput_tok_s, s.ttft_ms.p50, s.ttft_ms.p95, s.tpot_ms.p50, s.tpot_ms.p95
            ))
        }
        Command::Sweep {
            grid,
            cost_model,
            output,
        } => {
            let grid = load_grid(&grid)?;
            let fid = load_cost_model(&cost_model, servesim_core::config::RuntimeSpec::default().launch_overhead_ns)?;
            let report = sweep(&grid, &fid)?;
            write_frontier(&output.out_dir.join("frontier.csv"), &report)?;
            let front = report.frontier.as_ref().map_or(0, |f| f.points.len());
            Ok(format!(
                "{} candidates, {} simulated, {} on the frontier",
                report.outcomes.len(),
                report.simulated,
                front
            ))
        }
        Command::Score {
            alloc,
            spec,
            cost_model,
            output,
        } => {
            let text = std::fs::read_to_string(&alloc).map_err(|e| Error::Io(alloc.clone(), e))?;
            let spec = spec.as_deref().map(load_spec).transpose()?;
            let overhead = spec.as_ref().map_or(
                servesim_core::config::RuntimeSpec::default().launch_overhead_ns,
                |s| s.runtime.launch_overhead_ns,
            );
            let fid = load_cost_model(&cost_model, overhead)?;
            let rep = score(&text, spec.as_ref(), &fid)?;
            std::fs::create_dir_all(&output.out_dir).map_err(|e| Error::Io(output.out_dir.clone(), e))?;
            let path = output.out_dir.join("score.json");
            let mut w = open(&path)?;
            serde_json::to_writer_pretty(&mut w, &rep)?;
            w.flush().map_err(|e| Error::Io(path, e))?;
            let g = rep.score.gates;
            Ok(format!(
                "SR {:.3}, CE {:.3}, gates: alignment {}, sla {}, roi {}",
                rep.score.sr, rep.score.ce, g.alignment, g.sla, g.roi
            ))
        }
    }
}
