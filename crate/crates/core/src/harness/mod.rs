//! Experiment orchestration: JSON configs, multi-trial batches with
//! per-trial RNG streams, CSV/JSON persistence, the bound-check, lower-bound
//! and sweep experiments, and the `elastic-lab` command line.
//!
//! Trial `k` runs on ChaCha stream `seeds.stream + k` of both base seeds, so
//! results do not depend on how many threads execute the batch.

pub mod cli;
mod config;
mod experiments;
mod output;
mod trials;

pub use config::{
    fingerprint_of, run_fingerprint, ExperimentConfig, LowerBoundConfig, ObjectiveSpec, Tolerance,
    VerifyCase,
};
pub use experiments::{
    bound_passes, bound_rows_table, gd_iterations, lower_bound, sweep, sweep_table, verify_bounds,
    verify_case, BoundRow, LowerBoundRow, SweepCell, MIN_VERIFY_TRIALS, SWEEP_AXES,
};
pub use output::{fmt_f64, write_json, write_records_csv, write_records_file, RECORD_COLUMNS};
pub use trials::{
    fold_trials, run_batch, run_trial, summarize, trial_seeds, BatchSummary, RunMetrics,
    RunSummary, Stat,
};
