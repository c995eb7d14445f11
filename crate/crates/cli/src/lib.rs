//! Pipeline plumbing for the `tres-diag` binary: durable file formats
//! (dataset directories, model checkpoints, attribution and ranking
//! artifacts), run configuration, and the subcommand implementations.
//!
//! Everything numeric lives in `tres-core`; this crate only moves bytes,
//! and it moves them deterministically — identical inputs produce
//! byte-identical outputs, which the reporting pipeline relies on.

pub mod attr_io;
pub mod commands;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod jsonw;
pub mod log_io;
pub mod model_io;
pub mod sig_io;
