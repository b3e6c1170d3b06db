//! File formats, the Monte Carlo experiment harness and the subcommands of
//! the `odmlab` binary.

pub mod commands;
pub mod error;
pub mod experiment;
pub mod formats;

pub use commands::{configure_threads, run, Cli, Command, ForecastReport};
pub use error::{CliError, CliResult, EXIT_DEGRADED, EXIT_OK, EXIT_USAGE};
pub use experiment::{run_experiment, ConsistencyReport, ExperimentConfig};
