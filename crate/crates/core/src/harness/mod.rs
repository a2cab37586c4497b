//! Experiments on top of the simulator: configuration files, sweeps,
//! statistics, output files and the command-line front end.

pub mod burst;
pub mod cli;
pub mod config;
pub mod output;
pub mod ppo_run;
pub mod stats;
pub mod sweep;

pub use burst::{burstiness_report, BurstinessReport};
pub use cli::cli;
pub use config::{ExperimentConfig, LoadError};
pub use ppo_run::{train_and_eval_ppo, PpoReport};
pub use sweep::{sweep_delay, sweep_mat, RunSummary, TradeoffCurve};
