//! Experiment harness for the IRS beamforming simulator.
//!
//! * [`config`]: TOML experiment configurations and the named sweep presets.
//! * [`models`]: training, saving and loading the phase/beam network pairs.
//! * [`runner`]: the Monte Carlo loop comparing the predictive scheme with
//!   the optimizer baselines, and the user-count scalability evaluation.
//! * [`report`]: CSV and JSON result emission.
//!
//! The `irsbf` binary exposes all of it on the command line.

pub mod config;
pub mod error;
pub mod models;
pub mod report;
pub mod runner;

pub use config::{preset_file, sweep_presets, ConfigFile, ExperimentConfig, Scale, Scheme, SweepVariable};
pub use error::{Error, Result};
pub use models::{train_for_experiment, train_models, DlpbModels, ModelSet};
pub use report::{emit_report, summarize, CellSummary, Summary};
pub use runner::{run_monte_carlo, scalability_eval, TrialResult};
