//! Request streams: synthetic patterns, multi-round agentic sessions, and
//! replayed traces.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::units::{ms, secs_to_ns, Nanos};
use crate::{Error, Result};

/// New prompt tokens and decode tokens of one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub prompt: u64,
    pub decode: u64,
}

impl RoundPlan {
    pub const fn new(prompt: u64, decode: u64) -> Self {
        RoundPlan { prompt, decode }
    }
}

/// Speculative-decoding token counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MtpCounters {
    pub planned: u64,
    pub verified: u64,
    pub accepted: u64,
    pub committed: u64,
    pub cycles: u64,
}

/// A stateful request: one or more rounds of prefill followed by decode.
///
/// Every round re-prefills the whole session context (earlier rounds plus the
/// new prompt); with prefix caching the earlier part is usually a cache hit.
/// The prefill pass emits the round's first decode token.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: u64,
    pub session: u64,
    /// Content identity for block hashes; equal values share prefixes.
    pub content: u64,
    pub arrival: Nanos,
    pub plan: Vec<RoundPlan>,
    /// Current round, 1-based.
    pub round: u32,
    pub tool_delay: Nanos,
    /// Tokens of completed rounds (prompt and decode).
    pub context: u64,
    /// Current-round prefill progress over `prompt_len()`.
    pub prefilled: u64,
    /// Current-round decode tokens committed.
    pub committed: u64,
    /// New prompt tokens prefilled over all rounds (context recompute excluded).
    pub new_prefilled_total: u64,
    pub decoded_total: u64,
    pub mtp: MtpCounters,
    pub affinity: Option<u32>,
    pub rng: ChaCha8Rng,
}

impl Request {
    pub fn new(id: u64, arrival: Nanos, plan: Vec<RoundPlan>, tool_delay: Nanos, seed: u64) -> Self {
        Request {
            id,
            session: id,
            content: id,
            arrival,
            plan,
            round: 1,
            tool_delay,
            context: 0,
            prefilled: 0,
            committed: 0,
            new_prefilled_total: 0,
            decoded_total: 0,
            mtp: MtpCounters::default(),
            affinity: None,
            rng: ChaCha8Rng::seed_from_u64(seed ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        }
    }

    pub fn rounds_total(&self) -> u32 {
        self.plan.len() as u32
    }

    pub fn current(&self) -> RoundPlan {
        self.plan[self.round as usize - 1]
    }

    pub fn is_answer_round(&self) -> bool {
        self.round == self.rounds_total()
    }

    /// Tokens the current round's prefill covers.
    pub fn prompt_len(&self) -> u64 {
        self.context + self.current().prompt
    }

    pub fn remaining_prefill(&self) -> u64 {
        self.prompt_len() - self.prefilled
    }

    pub fn remaining_decode(&self) -> u64 {
        self.current().decode - self.committed
    }

    /// Tokens currently held in the KV cache for this request.
    pub fn kv_tokens(&self) -> u64 {
        self.prefilled + self.committed.saturating_sub(1)
    }

    pub fn round_done(&self) -> bool {
        self.prefilled == self.prompt_len() && self.committed == self.current().decode
    }

    pub fn total_prompt(&self) -> u64 {
        self.plan.iter().map(|r| r.prompt).sum()
    }

    pub fn total_decode(&self) -> u64 {
        self.plan.iter().map(|r| r.decode).sum()
    }

    /// Records `n` freshly computed prefill tokens (cache hits excluded).
    pub fn add_prefill(&mut self, n: u64) {
        let before = self.prefilled;
        self.prefilled += n;
        debug_assert!(self.prefilled <= self.prompt_len());
        // Only the part beyond the carried context counts as new prompt work.
        let new_lo = before.max(self.context);
        if self.prefilled > new_lo {
            self.new_prefilled_total += self.prefilled - new_lo;
        }
    }

    /// Commits up to `n` decode tokens; returns how many were committed.
    pub fn commit(&mut self, n: u64) -> u64 {
        let c = n.min(self.remaining_decode());
        self.committed += c;
        self.decoded_total += c;
        c
    }
}

/// Result of finishing a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionStep {
    Requeue { at: Nanos, replica: Option<u32> },
    Final,
}

/// Closes the current round. Non-final rounds come back after the tool delay
/// on the same replica.
pub fn advance_session(req: &mut Request, completion: Nanos) -> Result<SessionStep> {
    if !req.round_done() {
        return Err(Error::RoundIncomplete);
    }
    if req.round >= req.rounds_total() {
        return Ok(SessionStep::Final);
    }
    req.context = req.prompt_len() + req.current().decode;
    req.round += 1;
    req.prefilled = 0;
    req.committed = 0;
    Ok(SessionStep::Requeue {
        at: completion + req.tool_delay,
        replica: req.affinity,
    })
}

/// Agentic session template (five rounds; the last is answer-visible).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Short,
    HeavyTail,
}

impl Template {
    pub fn rounds(self) -> [RoundPlan; 5] {
        let r = RoundPlan::new;
        match self {
            Template::Short => [r(4096, 96), r(1024, 64), r(512, 64), r(512, 64), r(256, 192)],
            Template::HeavyTail => [r(32768, 96), r(16384, 64), r(8192, 64), r(4096, 64), r(256, 192)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    PrefillHeavy,
    DecodeHeavy,
    Balanced,
    Fixed { prompt: u64, decode: u64 },
    /// Agentic sessions; `mix` is the heavy-tail fraction.
    Agentic { mix: f64 },
    /// Replayed trace file; loaded by the host, lengths ignored here.
    Trace { path: String },
}

impl Pattern {
    fn lengths(&self) -> Option<(u64, u64)> {
        match *self {
            Pattern::PrefillHeavy => Some((2048, 256)),
            Pattern::DecodeHeavy => Some((256, 2048)),
            Pattern::Balanced => Some((1024, 1024)),
            Pattern::Fixed { prompt, decode } => Some((prompt, decode)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrival {
    Burst,
    Rate { qps: f64 },
    Poisson { qps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub pattern: Pattern,
    pub num_requests: u64,
    pub arrival: Arrival,
    pub seed: u64,
    /// Uniform relative jitter on synthetic lengths, in `[0, 1)`.
    pub jitter: f64,
    pub tool_delay_ns: Nanos,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            pattern: Pattern::PrefillHeavy,
            num_requests: 64,
            arrival: Arrival::Burst,
            seed: 0,
            jitter: 0.0,
            tool_delay_ns: ms(50),
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_requests == 0 && !matches!(self.pattern, Pattern::Trace { .. }) {
            return Err(Error::InvalidWorkload("request count must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::InvalidWorkload("jitter must be in [0, 1)".into()));
        }
        match self.arrival {
            Arrival::Rate { qps } | Arrival::Poisson { qps } if !(qps > 0.0) => {
                return Err(Error::InvalidWorkload("arrival rate must be positive".into()))
            }
            _ => {}
        }
        if let Pattern::Agentic { mix } = self.pattern {
            if !(0.0..=1.0).contains(&mix) {
                return Err(Error::InvalidWorkload("agentic mix must be in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

fn arrivals(arrival: Arrival, n: u64, rng: &mut ChaCha8Rng) -> Vec<Nanos> {
    let mut t = 0.0f64;
    (0..n)
        .map(|i| match arrival {
            Arrival::Burst => 0,
            Arrival::Rate { qps } => secs_to_ns(i as f64 / qps),
            Arrival::Poisson { qps } => {
                let at = secs_to_ns(t);
                let u: f64 = rng.random();
                t += -libm::log(1.0 - u) / qps;
                at
            }
        })
        .collect()
}

fn jittered(v: u64, j: f64, rng: &mut ChaCha8Rng) -> u64 {
    if j == 0.0 || v == 0 {
        return v;
    }
    let f: f64 = rng.random_range(1.0 - j..1.0 + j);
    libm::round(v as f64 * f).max(1.0) as u64
}

/// Generates the configured synthetic stream, sorted by arrival.
pub fn synthesize(cfg: &WorkloadConfig) -> Result<Vec<Request>> {
    cfg.validate()?;
    let n = cfg.num_requests;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let times = arrivals(cfg.arrival, n, &mut rng);
    let mut out = match &cfg.pattern {
        Pattern::Agentic { mix } => make_agentic(*mix, n, cfg.seed)?,
        Pattern::Trace { .. } => {
            return Err(Error::InvalidWorkload("trace workloads are loaded from a file".into()))
        }
        p => {
            let (pl, dl) = p.lengths().expect("synthetic pattern");
            (0..n)
                .map(|i| {
                    let plan = vec![RoundPlan::new(
                        jittered(pl, cfg.jitter, &mut rng).max(1),
                        jittered(dl, cfg.jitter, &mut rng),
                    )];
                    Request::new(i, 0, plan, cfg.tool_delay_ns, cfg.seed)
                })
                .collect::<Vec<_>>()
        }
    };
    for (r, t) in out.iter_mut().zip(times) {
        r.arrival = t;
        r.tool_delay = cfg.tool_delay_ns;
    }
    Ok(out)
}

/// `n` five-round sessions at time 0; exactly `round(mix * n)` of them use the
/// heavy-tail template, chosen by a seeded shuffle.
pub fn make_agentic(mix: f64, n: u64, seed: u64) -> Result<Vec<Request>> {
    if !(0.0..=1.0).contains(&mix) {
        return Err(Error::InvalidWorkload("agentic mix must be in [0, 1]".into()));
    }
    let heavy = libm::round(mix * n as f64) as usize;
    let mut kinds: Vec<Template> = (0..n as usize)
        .map(|i| if i < heavy { Template::HeavyTail } else { Template::Short })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA6E7_71C0);
    kinds.shuffle(&mut rng);
    Ok(kinds
        .into_iter()
        .enumerate()
        .map(|(i, t)| Request::new(i as u64, 0, t.rounds().to_vec(), ms(50), seed))
        .collect())
}

fn field<T: core::str::FromStr>(s: Option<&str>, name: &str, line: usize) -> Result<T> {
    let s = s.ok_or_else(|| Error::InvalidWorkload(format!("line {line}: missing {name}")))?;
    s.trim()
        .parse()
        .map_err(|_| Error::InvalidWorkload(format!("line {line}: bad {name} {:?}", s.trim())))
}

/// Parses a trace: one record per line,
/// `arrival_ms, input_len, output_len[, session_id[, round_plan]]`, where
/// `round_plan` lists further rounds as `prompt/decode` pairs separated by
/// `;`. Blank lines and lines starting with `#` are skipped. Records sharing
/// a session id share prompt content.
pub fn parse_trace(text: &str, tool_delay: Nanos, seed: u64) -> Result<Vec<Request>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let mut parts = l.split(',');
        let arrival_ms: f64 = field(parts.next(), "arrival_ms", line)?;
        if !(arrival_ms >= 0.0) {
            return Err(Error::InvalidWorkload(format!("line {line}: negative arrival")));
        }
        let input: u64 = field(parts.next(), "input_len", line)?;
        let output: u64 = field(parts.next(), "output_len", line)?;
        let mut plan = vec![RoundPlan::new(input, output)];
        let id = out.len() as u64;
        let mut req = Request::new(id, secs_to_ns(arrival_ms / 1e3), Vec::new(), tool_delay, seed);
        if let Some(s) = parts.next().map(str::trim).filter(|s| !s.is_empty()) {
            let sid: u64 = field(Some(s), "session_id", line)?;
            req.session = sid;
            req.content = sid.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ 0x5E55;
        }
        if let Some(rp) = parts.next().map(str::trim).filter(|s| !s.is_empty()) {
            for pair in rp.split(';') {
                let (p, d) = pair
                    .split_once('/')
                    .ok_or_else(|| Error::InvalidWorkload(format!("line {line}: bad round {pair:?}")))?;
                plan.push(RoundPlan::new(field(Some(p), "round prompt", line)?, field(Some(d), "round decode", line)?));
            }
        }
        if parts.next().is_some() {
            return Err(Error::InvalidWorkload(format!("line {line}: too many fields")));
        }
        if plan.iter().all(|r| r.prompt == 0) {
            return Err(Error::InvalidWorkload(format!("line {line}: empty prompt")));
        }
        req.plan = plan;
        out.push(req);
    }
    if out.is_empty() {
        return Err(Error::Empty("trace"));
    }
    out.sort_by_key(|r| r.arrival);
    Ok(out)
}
