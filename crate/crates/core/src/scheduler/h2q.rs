//! History-aware two-queue ordering with bounded release.
//!
//! Sessions are split into a short queue `Q_S` and a long-history queue
//! `Q_L`. A session enters `Q_L` for good once a prefill spills across
//! passes; it is classified `Q_L` on arrival if it has consumed more than
//! `C` new tokens or its current round exceeds `L` tokens. Ordering ranks a
//! one-shot release slice first, then a liveness slice (after `B`
//! consecutive short slices), then `Q_S`, then `Q_L`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::Serialize;

use crate::config::H2qParams;
use crate::units::Nanos;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Queue {
    Short,
    Long,
}

/// Per-session history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct H2qSessionState {
    /// Sticky long-history flag `z`.
    pub sticky: bool,
    /// Cumulative served new prompt tokens `H`.
    pub served: u64,
    /// Prefill total recorded at the last round completion.
    pub t_last: u64,
    /// One-shot carryover credit `c`.
    pub carry: bool,
    /// Current-round prompt length.
    pub ell: u64,
    pub queue: Option<Queue>,
}

/// `Q_L` iff sticky, over the service cap, or a long round (strictly).
pub fn h2q_classify(s: &H2qSessionState, p: &H2qParams) -> Queue {
    if s.sticky || s.served > p.service_cap || s.ell > p.long_round {
        Queue::Long
    } else {
        Queue::Short
    }
}

/// Scheduler-visible view of one slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct H2qSlice {
    pub id: u64,
    pub session: u64,
    pub waiting: bool,
    pub decode: bool,
    pub arrival: Nanos,
    pub ell: u64,
    pub queue: Queue,
    pub carry: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct H2qOrder {
    pub order: Vec<u64>,
    pub release: Option<u64>,
    pub liveness: Option<u64>,
}

fn oldest<'a>(it: impl Iterator<Item = &'a H2qSlice>) -> Option<&'a H2qSlice> {
    it.min_by_key(|s| (s.arrival, s.id))
}

/// Ranks running and waiting slices.
pub fn h2q_order(slices: &[H2qSlice], eta: u64, p: &H2qParams) -> H2qOrder {
    let oldest_waiting_short = slices
        .iter()
        .filter(|s| s.waiting && s.queue == Queue::Short)
        .map(|s| s.arrival)
        .min();
    let release = oldest(
        slices
            .iter()
            .filter(|s| s.carry && oldest_waiting_short.is_none_or(|a| s.arrival <= a)),
    )
    .map(|s| s.id);
    let liveness = if eta >= p.liveness {
        oldest(slices.iter().filter(|s| s.queue == Queue::Long)).map(|s| s.id)
    } else {
        None
    };
    let rank = |s: &H2qSlice| -> i8 {
        if Some(s.id) == release {
            -2
        } else if Some(s.id) == liveness {
            -1
        } else if s.queue == Queue::Short {
            0
        } else {
            1
        }
    };
    let mut keyed: Vec<_> = slices
        .iter()
        .map(|s| {
            let r = rank(s);
            let key = if r == 0 {
                (s.ell, s.decode as u8, s.arrival)
            } else {
                (0, (!s.decode) as u8, s.arrival)
            };
            ((r, key, s.id), s.id)
        })
        .collect();
    keyed.sort_unstable();
    H2qOrder {
        order: keyed.into_iter().map(|(_, id)| id).collect(),
        release,
        liveness,
    }
}

/// Outcome of one scheduled slice, fed back after the batch ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceOutcome {
    pub session: u64,
    pub queue: Queue,
    pub new_tokens: u64,
    pub round_done: bool,
    /// Prefill total at round completion (context of the next round).
    pub round_total: u64,
    pub partial_prefill: bool,
    pub was_release: bool,
}

/// Scheduler-wide H2Q-BR state.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct H2qState {
    pub sessions: BTreeMap<u64, H2qSessionState>,
    pub eta: u64,
    pub last_release: Option<u64>,
}

impl H2qState {
    /// Arrival or re-entry of a slice whose total prefill is `prefill_total`.
    pub fn on_arrival(&mut self, session: u64, prefill_total: u64, p: &H2qParams) -> Queue {
        let s = self.sessions.entry(session).or_default();
        s.ell = prefill_total.saturating_sub(s.t_last);
        let q = h2q_classify(s, p);
        s.queue = Some(q);
        q
    }

    pub fn session(&self, session: u64) -> H2qSessionState {
        self.sessions.get(&session).copied().unwrap_or_default()
    }

    /// Applies a finished batch.
    pub fn on_completion(&mut self, outcomes: &[SliceOutcome]) {
        let mut any_long = false;
        let mut shorts = 0;
        for o in outcomes {
            let s = self.sessions.entry(o.session).or_default();
            s.served += o.new_tokens;
            if o.round_done {
                s.t_last = o.round_total;
            }
            if o.partial_prefill {
                s.sticky = true;
                s.carry = true;
                s.queue = Some(Queue::Long);
            }
            if o.was_release {
                s.carry = false;
            }
            match o.queue {
                Queue::Long => any_long = true,
                Queue::Short => shorts += 1,
            }
        }
        if any_long {
            self.eta = 0;
        } else {
            self.eta += shorts;
        }
    }
}
