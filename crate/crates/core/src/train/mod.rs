//! Optimization, metrics, dataset splits and the multi-seed protocol.

mod experiment;
mod metrics;
mod optim;
mod schedule;
mod split;

use thiserror::Error;

pub use experiment::{
    evaluate, predict_rows, run_experiment, train_model, EpochLog, Experiment, ExperimentReport, PreparedDataset,
    SeedRun, TrainConfig, TrainOutcome,
};
pub use metrics::{higher_is_better, mean_std, metric_name, roc_auc, rmse, task_metric, MetricError};
pub use optim::{adam_step, Adam, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use schedule::{noam_lr, NoamSchedule};
pub use split::{random_split, scaffold_split, SplitAssignment, SplitKind, SplitRatios, MIN_SPLIT_SIZE};

use crate::diff::DiffError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid learning-rate schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    InvalidRatios([f64; 3]),
    #[error("dataset has {n} molecules; at least {min} are needed to split")]
    DatasetTooSmall { n: usize, min: usize },
    #[error("training subset is empty")]
    EmptyTrainSet,
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}
