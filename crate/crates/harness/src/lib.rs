//! Experiment engine for the EqzNet equalizers: TOML experiment configs,
//! seeded parallel BER sweeps, training runs, window calibration and the
//! derived gain and LLR tables.

pub mod calibration;
pub mod config;
pub mod experiment;
pub mod manifest;
pub mod report;
pub mod sweep;
pub mod training;

pub use config::{EqualizerSpec, ExperimentConfig, Mode};
pub use experiment::{Experiment, RunOptions};
pub use sweep::{run_sweep, BerRecord};
