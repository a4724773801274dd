//! The `instrec` command-line pipeline: ingest a MusicNet-style dataset,
//! extract features, train, tune thresholds, evaluate, predict and plot.
//!
//! Each subcommand is a plain function taking the effective
//! [`PipelineConfig`], so the pipeline can also be driven from code.

pub mod commands;
pub mod config;
pub mod error;
pub mod rolls;

pub use commands::{cmd_eval, cmd_features, cmd_ingest, cmd_plot, cmd_predict, cmd_train, cmd_tune_thresholds};
pub use config::{PipelineConfig, PitchInput, CACHE_ENV};
pub use error::{CliError, CliResult};
pub use rolls::{ClipRoll, RollSet};
