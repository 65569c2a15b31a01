//! Training loop, checkpoints, evaluation and seed statistics.

mod checkpoint;
mod config;
mod metrics;
mod run;
mod stats;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, EpochLog, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use metrics::{evaluate_split, MetricsBreakdown, EVAL_BATCH};
pub use run::{
    train_run, RunOptions, RunResult, RunSummary, BEST_CHECKPOINT, CONFIG_FILE, LAST_CHECKPOINT, LOG_FILE, RESULT_FILE,
    TIMING_FILE,
};
pub use stats::{aggregate_seeds, mean_std, welch_t_test, MeanStd, SeedSummary, WelchResult};
