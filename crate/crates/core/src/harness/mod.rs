//! Synthetic environments and the experiment sweep.

pub mod config;
pub mod envs;
pub mod sweep;

pub use config::{AlphaSchedule, Dynamics, ExperimentConfig, SampleSize};
pub use sweep::{emit_plotdata, read_results_csv, run_cell, run_sweep, ResultRow, SweepContext};
