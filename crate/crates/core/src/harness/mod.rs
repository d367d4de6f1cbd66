//! Experiment driver: run configs, the train/evaluate loop, and reports.

use thiserror::Error;

use crate::envs::EnvError;
use crate::gdn::{AugmentError, CheckpointError, ModelError};
use crate::learn::LearnError;

pub mod config;
pub mod report;
pub mod run;

pub use config::{parse_override, parse_pairs, ModelStyle, RunConfig};
pub use report::{
    aggregate, aggregate_dir, best_during_training, read_metrics, write_csv, Aggregate,
    AggregateRow,
};
pub use run::{
    argmax, evaluate, run_experiment, run_experiment_with, ActMode, Actor, MetricRecord, RunMeta,
    RunOutcome, TrainLogRecord,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("bad value `{1}` for `{0}`")]
    BadValue(String, String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("`{0} = {1}` is not supported")]
    Unsupported(String, String),
    #[error("invalid run config: {0}")]
    Invalid(String),
    #[error("{0}")]
    Empty(String),
    #[error("metric schema violation: {0}")]
    Schema(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
