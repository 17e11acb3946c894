//! File formats, the threaded cluster executor, and the command line for the
//! `servesim-core` serving model.

pub mod cli;
pub mod exec;
pub mod report;
pub mod spec_file;
pub mod sweep_file;

use std::path::PathBuf;

pub use exec::{run, ExecMode};
pub use spec_file::{load_spec, parse_spec};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] servesim_core::Error),
    #[error("spec: {0}")]
    Spec(String),
    #[error("parse: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
