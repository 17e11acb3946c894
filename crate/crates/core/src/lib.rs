//! Deterministic discrete-event model of LLM serving clusters.
//!
//! The crate is `no_std` (with `alloc`) so the whole model stays pure: it
//! never touches files, clocks, or threads. IO, the command line, and the
//! threaded per-cluster executor live in the `servesim` companion crate.
//!
//! Layout:
//!
//! - [`config`]: serving spec, parallel layouts, simulation plan.
//! - [`des`]: event ordering, per-cluster drivers, channels.
//! - [`workload`]: synthetic, agentic, and replayed request streams.
//! - [`fidelity`]: operator, memory, transfer, and collective cost models.
//! - [`scheduler`]: KV block pool and the batch scheduling policies.
//! - [`adapters`]: CUDA-graph padding, MTP, prefix caching, chunked prefill.
//! - [`orchestration`]: role-specific event handling and the simulation loop.
//! - [`metrics`]: lifecycle records, summaries, Pareto sweeps, allocation scores.

#![no_std]

extern crate alloc;

pub mod adapters;
pub mod config;
pub mod des;
pub mod error;
pub mod fidelity;
pub mod metrics;
pub mod orchestration;
pub mod scheduler;
pub mod units;
pub mod workload;

pub use error::{Error, Result};
pub use units::Nanos;
