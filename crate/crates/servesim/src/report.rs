//! Report files: `requests.jsonl`, `summary.json`, `frontier.csv`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use servesim_core::metrics::{CandidateOutcome, LifecycleRecord, SummaryReport, SweepReport};

use crate::{Error, Result};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io(dir.to_path_buf(), e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(path.to_path_buf(), e))
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(path.to_path_buf(), e)
}

pub fn write_records(path: &Path, records: &[LifecycleRecord]) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

pub fn write_summary(path: &Path, summary: &SummaryReport) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, summary)?;
    w.write_all(b"\n").map_err(io(path))?;
    w.flush().map_err(io(path))
}

/// One row per candidate; `on_frontier` and `best` mark SLA-feasible
/// non-dominated points and each architecture's best point.
pub fn write_frontier(path: &Path, report: &SweepReport) -> Result<()> {
    let mut w = create(path)?;
    writeln!(
        w,
        "label,architecture,status,speed_tok_s_user,throughput_tok_s_gpu,p95_tpot_ms,p95_ttft_ms,on_frontier,best"
    )
    .map_err(io(path))?;
    for (label, outcome) in &report.outcomes {
        match outcome {
            CandidateOutcome::Skipped(why) => {
                writeln!(w, "{label},,skipped: {},,,,,false,false", why.replace(',', ";")).map_err(io(path))?;
            }
            CandidateOutcome::Simulated(p) => {
                let idx = report
                    .frontier
                    .as_ref()
                    .and_then(|f| f.points.iter().position(|q| q.label == p.label));
                let best = report
                    .frontier
                    .as_ref()
                    .zip(idx)
                    .is_some_and(|(f, i)| f.best.get(&p.architecture) == Some(&i));
                writeln!(
                    w,
                    "{label},{},simulated,{:.4},{:.4},{:.4},{:.4},{},{}",
                    p.architecture,
                    p.speed,
                    p.throughput,
                    p.p95_tpot_ms,
                    p.p95_ttft_ms,
                    idx.is_some(),
                    best
                )
                .map_err(io(path))?;
            }
        }
    }
    w.flush().map_err(io(path))
}
