//! Experiment harness for the smoother-based L1 solvers: metrics, lambda
//! sweeps, scaling benchmarks, and the tomography pipeline behind the CLI.

pub mod config;
pub mod experiments;
pub mod metrics;

pub use config::{ExperimentConfig, ExperimentKind};
pub use experiments::{run_experiment, run_tomography, scaling_bench, sweep_lambda};
pub use metrics::{psnr, relative_error};
