//! Model files, experiment configuration, reports and the `dualfilter`
//! command-line driver built on `dualfilter-core`.
//!
//! Exit statuses: 0 success, 2 bad input, 3 impossible observation,
//! 4 invariant violation.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod model_io;
pub mod report;

pub use error::{CliError, CliResult};
