//! Library side of the `bsm` command-line tool: configuration, the
//! experiment pipeline, manifests and the subcommand implementations.

// `!(x > 0.0)` deliberately rejects NaN together with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use error::CliError;
