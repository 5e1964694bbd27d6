//! Drivers behind the `ptd` binary: artifact generation, query runs with
//! reproducible manifests, the verification campaign, parameter sweeps and
//! the cost-model report.

pub mod bench;
pub mod commands;
pub mod costreport;
pub mod error;
pub mod manifest;

pub use error::{CliError, CliResult};
