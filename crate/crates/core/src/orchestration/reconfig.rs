use serde::Serialize;

use crate::config::{Parallelism, ReconfigSpec};
use crate::units::Nanos;

/// One-shot layout switch armed with a trigger fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayoutSwitchPolicy {
    pub threshold: f64,
    pub target: Parallelism,
    pub cost_ns: Nanos,
    pub fired: bool,
}

impl LayoutSwitchPolicy {
    pub fn new(spec: &ReconfigSpec) -> Self {
        LayoutSwitchPolicy {
            threshold: spec.threshold,
            target: spec.target,
            cost_ns: spec.cost_ns,
            fired: false,
        }
    }
}

/// Fires once, when the active share of the batch falls strictly below the
/// threshold.
pub fn maybe_reconfigure(policy: &mut LayoutSwitchPolicy, active: u64, total: u64) -> Option<Parallelism> {
    if policy.fired || total == 0 || (active as f64) >= policy.threshold * total as f64 {
        return None;
    }
    policy.fired = true;
    Some(policy.target)
}
