//! Inference from a trained trial directory on raw (unstandardized) features.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cls_uq;
use crate::data::{self, Standardization};
use crate::error::{shape_err, Error, Result};
use crate::harness::config::Task;
use crate::harness::stages::{load_base, load_dataset, load_uq, BaseModel, UqModel};
use crate::matrix::Matrix;
use crate::reg_uq;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionPrediction {
    pub y_hat: f64,
    pub lower: f64,
    pub upper: f64,
    pub lower_calib: f64,
    pub upper_calib: f64,
    pub z: f64,
    pub z_upper: f64,
    pub z_lower: f64,
    pub sds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationPrediction {
    pub probabilities: Vec<f64>,
    /// Clamped corrected values, not renormalised.
    pub probabilities_calib: Vec<f64>,
    pub sds: f64,
    pub delta_c: f64,
    pub gate_applied: bool,
}

/// Base model, heads and the feature standardization of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialPredictor {
    pub standardization: Option<Standardization>,
    pub base: BaseModel,
    pub uq: UqModel,
}

impl TrialPredictor {
    /// Load `base*`, `uq*` and the dataset snapshot (for the standardization) from a trial directory.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let ds = data::standardize(&load_dataset(dir)?)?;
        let base = load_base(dir)?;
        let uq = load_uq(dir)?;
        let ok = matches!(
            (&base, &uq),
            (BaseModel::Regressor(_), UqModel::Regression(_)) | (BaseModel::Classifier(_), UqModel::Classification { .. })
        );
        if !ok {
            return Err(Error::Format(format!("{}: base model and heads belong to different tasks", dir.display())));
        }
        Ok(Self {
            standardization: ds.standardization,
            base,
            uq,
        })
    }

    pub fn task(&self) -> Task {
        match self.base {
            BaseModel::Regressor(_) => Task::Regression,
            BaseModel::Classifier(_) => Task::Classification,
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.base {
            BaseModel::Regressor(b) => b.mlp.input_dim(),
            BaseModel::Classifier(b) => b.mlp.input_dim(),
        }
    }

    /// 1 for regression, the class count for classification.
    pub fn output_dim(&self) -> usize {
        match &self.base {
            BaseModel::Regressor(_) => 1,
            BaseModel::Classifier(b) => b.mlp.output_dim(),
        }
    }

    fn prepare(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(shape_err("TrialPredictor", self.input_dim(), x.cols()));
        }
        Ok(match &self.standardization {
            Some(s) => s.apply(x),
            None => x.clone(),
        })
    }

    pub fn predict_regression(&self, x: &Matrix) -> Result<Vec<RegressionPrediction>> {
        let (BaseModel::Regressor(base), UqModel::Regression(net)) = (&self.base, &self.uq) else {
            return Err(Error::Config("not a regression model".into()));
        };
        let out = base.predict(&self.prepare(x)?)?;
        let heads = reg_uq::predict_reg_uq_batch(net, &out.features)?;
        heads
            .iter()
            .zip(out.predictions.as_slice())
            .map(|(h, &p)| {
                let plain = reg_uq::spi(p, h);
                let cal = reg_uq::calibrated_spi(p, h, &reg_uq::calibration_factors(h, reg_uq::DEFAULT_FACTOR_EPSILON));
                Ok(RegressionPrediction {
                    y_hat: p,
                    lower: plain.lower,
                    upper: plain.upper,
                    lower_calib: cal.lower,
                    upper_calib: cal.upper,
                    z: h.z,
                    z_upper: h.z_upper,
                    z_lower: h.z_lower,
                    sds: h.sds()?.value(),
                })
            })
            .collect()
    }

    pub fn predict_classification(&self, x: &Matrix, delta_0: f64) -> Result<Vec<ClassificationPrediction>> {
        let (BaseModel::Classifier(base), UqModel::Classification { total, calibration }) = (&self.base, &self.uq)
        else {
            return Err(Error::Config("not a classification model".into()));
        };
        if !(delta_0 > 0.0 && delta_0.is_finite()) {
            return Err(Error::Config(format!("delta_0 must be positive, got {delta_0}")));
        }
        let out = base.predict(&self.prepare(x)?)?;
        let z = total.predict(&out.features)?;
        let cal = calibration.predict(&out.features)?;
        (0..x.rows())
            .map(|i| {
                let p = out.predictions.row(i);
                let gate = cls_uq::calibration_quality(&cal[i], delta_0)?;
                let cp = cls_uq::calibrate_prediction(p, &cal[i], &gate)?;
                Ok(ClassificationPrediction {
                    probabilities: p.to_vec(),
                    probabilities_calib: cp.raw,
                    sds: crate::spa::sds_classification(p, z.row(i))?.value(),
                    delta_c: gate.delta_c,
                    gate_applied: gate.applied,
                })
            })
            .collect()
    }
}
