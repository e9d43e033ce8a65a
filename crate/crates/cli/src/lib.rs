//! Command-line front end for `meterguard`: dataset synthesis, training,
//! λ sweeps, evaluation and solver benchmarks, driven by a TOML run config.

pub mod commands;
pub mod config;
mod error;

pub use commands::{cmd_bench, cmd_eval, cmd_sweep, cmd_synth, cmd_train, RunMetrics, SweepRow, TrainArtifacts};
pub use config::RunConfig;
pub use error::{CliError, Result};
