//! Batch runner for stockcast experiments: configuration, subcommands and
//! report emission.

pub mod config;
pub mod plot;
pub mod runner;

pub use config::{ExperimentConfig, InputSpec, TrainOverride};
pub use runner::{cmd_explain, cmd_featurize, cmd_run, cmd_sweep, cmd_validate, RunManifest};
