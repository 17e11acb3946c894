//! Time and size units.
//!
//! Simulated time is an integer count of nanoseconds. Cost models work in
//! floating-point seconds and convert with [`secs_to_ns`], which always rounds
//! up so that a positive cost never collapses to zero.

/// Simulated time in nanoseconds.
pub type Nanos = u64;

pub const NS_PER_US: Nanos = 1_000;
pub const NS_PER_MS: Nanos = 1_000_000;
pub const NS_PER_SEC: Nanos = 1_000_000_000;

pub const KIB: u64 = 1024;
pub const MIB: u64 = 1024 * 1024;
pub const GIB: u64 = 1024 * 1024 * 1024;

/// Converts seconds to nanoseconds, rounding up.
pub fn secs_to_ns(secs: f64) -> Nanos {
    if !(secs > 0.0) {
        return 0;
    }
    let ns = secs * 1e9;
    // Guard against 2.0e-3 * 1e9 landing a hair above an integer.
    let rounded = libm::round(ns);
    if libm::fabs(ns - rounded) < 1e-6 {
        rounded as Nanos
    } else {
        libm::ceil(ns) as Nanos
    }
}

pub fn ms(v: u64) -> Nanos {
    v * NS_PER_MS
}

pub fn us(v: u64) -> Nanos {
    v * NS_PER_US
}

pub fn ns_to_secs(ns: Nanos) -> f64 {
    ns as f64 / 1e9
}

pub fn ns_to_ms(ns: Nanos) -> f64 {
    ns as f64 / 1e6
}

/// `ceil(a / b)` for positive integers.
pub fn div_ceil(a: u64, b: u64) -> u64 {
    if b == 0 {
        return 0;
    }
    a.div_ceil(b)
}
