//! Command-line plumbing for the `deepfactor` binary: run configuration,
//! the subcommand implementations and diagnostics.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;

pub use cli::{diagnostic, main_with_args, run, Cli};
pub use commands::{
    cmd_efficiency_curve, cmd_eval, cmd_forecast, cmd_synth, cmd_train, load_data, EfficiencyRow, SynthSummary,
};
pub use config::{DataSection, EfficiencySection, ForecastSection, RunConfig};
pub use error::{CliError, CliResult};
