//! Synthetic benchmark, training loop, evaluation and reporting.

mod config;
mod data;
mod gradcheck;
mod metrics;
mod record;
mod sweep;
mod train;

pub use config::{ExperimentConfig, Objective, TrainConfig, CONFIG_KEYS};
pub use data::{generate_dataset, Dataset, Sample, SyntheticTaskConfig};
pub use gradcheck::{run_gradcheck, GradcheckEntry, GradcheckReport};
pub use metrics::{edit_distance, token_error_rate, CorpusErrorRate};
pub use record::{EvalSummary, RunRecord};
pub use sweep::{summarize, sweep_grid, write_sweep_csv, Grid, SweepRow, SWEEP_CSV_HEADER};
pub use train::{evaluate, run_experiment, train, TrainOutcome};

/// Environment variable naming the default output directory of the CLI.
pub const OUT_DIR_ENV: &str = "CRCTC_OUT_DIR";
