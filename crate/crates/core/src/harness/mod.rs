//! Experiment harness: configuration, Monte Carlo sweeps, latency timing,
//! CSV output, and the dataset/training pipeline used by the CLI.

mod experiment;
mod pipeline;
mod report;
mod sweep;

pub use experiment::{ExperimentConfig, Method, SweepAxis, TestSource, TrialPoint};
pub use pipeline::{generate_and_write, train_on_dataset, ModelConfig, ModelKind, TrainingPlan};
pub use report::{csv_string, emit_csv, format_significant, parse_csv, ResultRow};
pub use sweep::{load_models, measure_latency, median_latency, run_latency, run_sweep, Models};

/// Stream tags under the master seed, next to the ones used by scenarios.
pub(crate) mod tags {
    pub const TRIAL: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const RANDOM_BASELINE: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const TRAIN: u64 = 6;
    pub const INIT: u64 = 7;
}
