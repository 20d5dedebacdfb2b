//! Configuration-driven experiments: dataset, base model, heads, evaluation, report.
//!
//! A run writes one `trial_<i>/` directory per trial holding the dataset
//! snapshot, weights, metadata and `evaluation.json`, and aggregates them into
//! `report.json`, `metrics.csv`, `samples.csv`, `plot.csv` and `report.txt`.

pub mod config;
pub mod evaluate;
pub mod predict;
pub mod report;
pub mod run;
pub mod stages;

pub use config::{DatasetConfig, ExperimentConfig, Task, TrainingMode};
pub use evaluate::{ClassificationSample, RegressionSample, Samples, TrialEvaluation};
pub use predict::TrialPredictor;
pub use report::{Aggregate, TrialFailure, UqReport};
pub use run::run;
pub use stages::{run_trial, TrialContext};
