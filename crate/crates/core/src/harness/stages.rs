//! The per-trial pipeline: data, base model, uncertainty heads, evaluation.
//!
//! Every stage has an in-memory form and a file form; the file forms read the
//! previous stage's artifacts from the trial directory, so stages can be re-run
//! independently and chained runs reproduce [`run_trial`] exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::base::{self, BaseClassifier, BaseRegressor};
use crate::cls_uq::{self, CalibrationNet, ClsUqConfig, TotalMarNet};
use crate::data::{self, Dataset, Split, SplitFractions};
use crate::error::{Error, Result};
use crate::harness::config::{DatasetConfig, ExperimentConfig, Task, TrainingMode};
use crate::harness::evaluate::{evaluate_classification, evaluate_regression, TrialEvaluation};
use crate::matrix::Matrix;
use crate::nn::{self, MlpSpec};
use crate::reg_uq::{self, RegUqConfig, RegUqMeta, RegUqNet};

pub const DATASET_FILE: &str = "dataset.csv";
pub const BASE_WEIGHTS: &str = "base.weights";
pub const BASE_META: &str = "base_meta.json";
pub const UQ_WEIGHTS: &str = "uq.weights";
pub const UQ_CALIB_WEIGHTS: &str = "uq_calib.weights";
pub const UQ_META: &str = "uq_meta.json";
pub const EVALUATION_FILE: &str = "evaluation.json";

/// Identifies one trial of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialContext {
    pub index: usize,
    pub seed: u64,
}

impl TrialContext {
    pub fn new(config: &ExperimentConfig, index: usize) -> Self {
        Self {
            index,
            seed: config.trial_seed(index),
        }
    }

    pub fn dir(&self, root: &Path) -> PathBuf {
        root.join(format!("trial_{}", self.index))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaseModel {
    Regressor(BaseRegressor),
    Classifier(BaseClassifier),
}

#[derive(Debug, Clone, PartialEq)]
pub enum UqModel {
    Regression(RegUqNet),
    Classification { total: TotalMarNet, calibration: CalibrationNet },
}

pub(crate) fn reg_uq_config(config: &ExperimentConfig, ctx: &TrialContext) -> RegUqConfig {
    RegUqConfig {
        seed: config.reg_uq.seed.wrapping_add(ctx.seed),
        ..config.reg_uq.clone()
    }
}

pub(crate) fn cls_uq_config(config: &ExperimentConfig, ctx: &TrialContext) -> ClsUqConfig {
    ClsUqConfig {
        seed: config.cls_uq.seed.wrapping_add(ctx.seed),
        ..config.cls_uq.clone()
    }
}

/// Raw (unstandardized) dataset with train/val/calib/test assignments.
pub fn generate(config: &ExperimentConfig, ctx: &TrialContext) -> Result<Dataset> {
    let seed = ctx.seed;
    let ds = match &config.dataset {
        DatasetConfig::Cubic { n_train, n_test, noise } => data::generate_cubic(*n_train, *n_test, noise, seed)?,
        DatasetConfig::Blobs {
            n,
            classes,
            radius,
            sigma,
            flip_rate,
            test_fraction,
        } => {
            let centers = data::circle_centers(*classes, *radius);
            let ds = data::generate_blobs(*n, &centers, *sigma, *flip_rate, seed)?;
            train_test(&ds, *test_fraction, seed)?
        }
        DatasetConfig::Csv {
            path,
            target_column,
            header,
            test_fraction,
        } => {
            if !path.is_file() {
                return Err(Error::Config(format!("CSV file not found: {}", path.display())));
            }
            let ds = data::load_csv(path, target_column, *header)?;
            train_test(&ds, *test_fraction, seed)?
        }
    };
    let calib = if config.task == Task::Classification {
        config.calib_fraction
    } else {
        0.0
    };
    let ds = data::holdout(&ds, Split::Train, Split::Calib, calib, seed.wrapping_add(2))?;
    // val is a fraction of the original training rows
    let val = config.val_fraction / (1.0 - calib);
    let ds = data::holdout(&ds, Split::Train, Split::Val, val, seed.wrapping_add(3))?;
    if ds.indices(Split::Train).is_empty() || ds.indices(Split::Test).is_empty() {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    if config.task == Task::Classification && ds.indices(Split::Calib).is_empty() {
        return Err(Error::Config("classification needs a non-empty calibration split".into()));
    }
    Ok(ds)
}

fn train_test(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<Dataset> {
    let fr = SplitFractions {
        train: 1.0 - test_fraction,
        val: 0.0,
        calib: 0.0,
    };
    data::split(ds, fr, seed.wrapping_add(1))
}

fn targets_column(y: &Matrix) -> Vec<f64> {
    y.as_slice().to_vec()
}

/// Train the base model; joint mode also returns the heads.
pub fn train_base(config: &ExperimentConfig, ctx: &TrialContext, ds: &Dataset) -> Result<(BaseModel, Option<UqModel>)> {
    let ds = data::standardize(ds)?;
    let (x, y) = ds.subset(Split::Train);
    match config.task {
        Task::Regression => {
            let y = targets_column(&y);
            match config.training_mode {
                TrainingMode::Posthoc => Ok((
                    BaseModel::Regressor(base::train_base_regressor(&x, &y, &config.base, ctx.seed)?),
                    None,
                )),
                TrainingMode::Joint => {
                    let (b, u) = base::train_joint_regressor(&x, &y, &config.base, &reg_uq_config(config, ctx), ctx.seed)?;
                    Ok((BaseModel::Regressor(b), Some(UqModel::Regression(u))))
                }
            }
        }
        Task::Classification => Ok((
            BaseModel::Classifier(base::train_base_classifier(&x, &y, &config.base, ctx.seed)?),
            None,
        )),
    }
}

/// Post-hoc heads on the frozen base model's features.
pub fn train_uq(config: &ExperimentConfig, ctx: &TrialContext, ds: &Dataset, base: &BaseModel) -> Result<UqModel> {
    let ds = data::standardize(ds)?;
    let (x, y) = ds.subset(Split::Train);
    match base {
        BaseModel::Regressor(b) => {
            let out = b.predict(&x)?;
            let resid: Vec<f64> = y
                .as_slice()
                .iter()
                .zip(out.predictions.as_slice())
                .map(|(t, p)| t - p)
                .collect();
            Ok(UqModel::Regression(reg_uq::train_reg_uq(
                &out.features,
                &resid,
                &reg_uq_config(config, ctx),
            )?))
        }
        BaseModel::Classifier(b) => {
            let cfg = cls_uq_config(config, ctx);
            let out = b.predict(&x)?;
            let t = cls_uq::build_cls_targets(&out.features, &out.predictions, &y)?;
            let total = cls_uq::train_total_mar_head(&t.features, &t.abs_residuals, &cfg)?;
            let (xc, yc) = ds.subset(Split::Calib);
            let oc = b.predict(&xc)?;
            let tc = cls_uq::build_cls_targets(&oc.features, &oc.predictions, &yc)?;
            let calibration = cls_uq::train_calibration_head(&tc, &cfg)?;
            Ok(UqModel::Classification { total, calibration })
        }
    }
}

pub fn evaluate(
    config: &ExperimentConfig,
    ctx: &TrialContext,
    ds: &Dataset,
    base: &BaseModel,
    uq: &UqModel,
) -> Result<TrialEvaluation> {
    match (base, uq) {
        (BaseModel::Regressor(b), UqModel::Regression(u)) => evaluate_regression(config, ctx, ds, b, u),
        (BaseModel::Classifier(b), UqModel::Classification { total, calibration }) => {
            evaluate_classification(config, ctx, ds, b, total, calibration)
        }
        _ => Err(Error::Config("base model and uncertainty heads belong to different tasks".into())),
    }
}

/// All stages in memory.
pub fn run_trial(config: &ExperimentConfig, ctx: &TrialContext) -> Result<TrialEvaluation> {
    let ds = generate(config, ctx)?;
    let (base, joint) = train_base(config, ctx, &ds)?;
    let uq = match joint {
        Some(u) => u,
        None => train_uq(config, ctx, &ds, &base)?,
    };
    evaluate(config, ctx, &ds, &base, &uq)
}

// ---- artifacts ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum BaseMeta {
    Regressor { spec: MlpSpec, y_mean: f64, y_std: f64 },
    Classifier { spec: MlpSpec, temperature: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum UqMeta {
    Regression {
        net: RegUqMeta,
    },
    Classification {
        total_spec: MlpSpec,
        calibration_spec: MlpSpec,
    },
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub(crate) fn file_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(file_err(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing stage artifact"),
        ))
    }
}

pub fn save_base(dir: &Path, base: &BaseModel) -> Result<()> {
    let (mlp, meta) = match base {
        BaseModel::Regressor(b) => (
            &b.mlp,
            BaseMeta::Regressor {
                spec: b.mlp.spec.clone(),
                y_mean: b.y_mean,
                y_std: b.y_std,
            },
        ),
        BaseModel::Classifier(b) => (
            &b.mlp,
            BaseMeta::Classifier {
                spec: b.mlp.spec.clone(),
                temperature: b.temperature,
            },
        ),
    };
    nn::save_weights(mlp, dir.join(BASE_WEIGHTS))?;
    write_json(&dir.join(BASE_META), &meta)
}

pub fn load_base(dir: &Path) -> Result<BaseModel> {
    let meta: BaseMeta = read_json(&require(dir.join(BASE_META))?)?;
    let weights = require(dir.join(BASE_WEIGHTS))?;
    Ok(match meta {
        BaseMeta::Regressor { spec, y_mean, y_std } => BaseModel::Regressor(BaseRegressor {
            mlp: nn::load_weights(weights, spec)?,
            y_mean,
            y_std,
        }),
        BaseMeta::Classifier { spec, temperature } => BaseModel::Classifier(BaseClassifier {
            mlp: nn::load_weights(weights, spec)?,
            temperature,
        }),
    })
}

pub fn save_uq(dir: &Path, uq: &UqModel) -> Result<()> {
    match uq {
        UqModel::Regression(net) => {
            nn::save_weights(&net.mlp, dir.join(UQ_WEIGHTS))?;
            write_json(&dir.join(UQ_META), &UqMeta::Regression { net: net.meta() })
        }
        UqModel::Classification { total, calibration } => {
            nn::save_weights(&total.mlp, dir.join(UQ_WEIGHTS))?;
            nn::save_weights(&calibration.mlp, dir.join(UQ_CALIB_WEIGHTS))?;
            write_json(
                &dir.join(UQ_META),
                &UqMeta::Classification {
                    total_spec: total.mlp.spec.clone(),
                    calibration_spec: calibration.mlp.spec.clone(),
                },
            )
        }
    }
}

pub fn load_uq(dir: &Path) -> Result<UqModel> {
    let meta: UqMeta = read_json(&require(dir.join(UQ_META))?)?;
    let weights = require(dir.join(UQ_WEIGHTS))?;
    Ok(match meta {
        UqMeta::Regression { net } => {
            UqModel::Regression(RegUqNet::from_parts(nn::load_weights(weights, net.spec.clone())?, &net)?)
        }
        UqMeta::Classification {
            total_spec,
            calibration_spec,
        } => UqModel::Classification {
            total: TotalMarNet {
                mlp: nn::load_weights(weights, total_spec)?,
            },
            calibration: CalibrationNet::from_mlp(nn::load_weights(
                require(dir.join(UQ_CALIB_WEIGHTS))?,
                calibration_spec,
            )?)?,
        },
    })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::read_csv(require(dir.join(DATASET_FILE))?)
}

// ---- file-backed stages ----

pub fn generate_stage(config: &ExperimentConfig, ctx: &TrialContext, root: &Path) -> Result<()> {
    let dir = ctx.dir(root);
    fs::create_dir_all(&dir).map_err(|e| file_err(&dir, e))?;
    generate(config, ctx)?.write_csv(dir.join(DATASET_FILE))
}

pub fn train_base_stage(config: &ExperimentConfig, ctx: &TrialContext, root: &Path) -> Result<()> {
    let dir = ctx.dir(root);
    let ds = load_dataset(&dir)?;
    let (base, joint) = train_base(config, ctx, &ds)?;
    save_base(&dir, &base)?;
    if let Some(uq) = joint {
        save_uq(&dir, &uq)?;
    }
    Ok(())
}

pub fn train_uq_stage(config: &ExperimentConfig, ctx: &TrialContext, root: &Path) -> Result<()> {
    let dir = ctx.dir(root);
    if config.training_mode == TrainingMode::Joint {
        // heads were written together with the base model
        require(dir.join(UQ_META))?;
        log::info!("trial {}: joint mode, heads already trained", ctx.index);
        return Ok(());
    }
    let ds = load_dataset(&dir)?;
    let base = load_base(&dir)?;
    save_uq(&dir, &train_uq(config, ctx, &ds, &base)?)
}

pub fn evaluate_stage(config: &ExperimentConfig, ctx: &TrialContext, root: &Path) -> Result<TrialEvaluation> {
    let dir = ctx.dir(root);
    let ds = load_dataset(&dir)?;
    let base = load_base(&dir)?;
    let uq = load_uq(&dir)?;
    let ev = evaluate(config, ctx, &ds, &base, &uq)?;
    write_json(&dir.join(EVALUATION_FILE), &ev)?;
    Ok(ev)
}

/// All four file-backed stages for one trial.
pub fn run_trial_stages(config: &ExperimentConfig, ctx: &TrialContext, root: &Path) -> Result<TrialEvaluation> {
    generate_stage(config, ctx, root)?;
    train_base_stage(config, ctx, root)?;
    train_uq_stage(config, ctx, root)?;
    evaluate_stage(config, ctx, root)
}
