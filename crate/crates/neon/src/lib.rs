//! File formats, parallel execution and the command-line driver for
//! [`neon_core`].
//!
//! - [`checkpoint`]: binary parameter checkpoints.
//! - [`fields`]: field tables in the dataset CSV layout and file-backed problems.
//! - [`config`]: TOML run configurations.
//! - [`runlog`]: JSON-lines run logs and summary CSVs.
//! - [`plot`]: SVG convergence plots.
//! - [`exec`]: rayon restart executor and wall clock.
//! - [`cli`]: the `neon` command.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod exec;
pub mod fields;
pub mod plot;
pub mod runlog;

pub use error::{Error, Result};
