//! Classification uncertainty heads.
//!
//! Per class `k` the residual is `r_k = y_k − ŷ_k` for a one-hot label. The
//! total-MAR head regresses `|r_k|` on the training set; its conditional mean is
//! `P_k(1 − ŷ_k) + (1 − P_k)ŷ_k`, while the side MARs are simply `1 − ŷ_k` and
//! `ŷ_k`, which gives the classification SDS.
//!
//! The calibration head regresses the zero-included targets `|r_k|`,
//! `max(r_k, 0)` and `−min(r_k, 0)` on a disjoint calibration split. At its
//! optimum `z_C = z_C⁺ + z_C⁻` and `P_k = ŷ_k + z_C⁺ − z_C⁻`; the L1 defect of the
//! first identity gates the correction given by the second.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;
use crate::nn::{self, Activation, BatchGrad, Mlp, MlpSpec, OptimizerKind, OutputActivation, TrainConfig};
use crate::spa::{self, SdsScore};

pub const DEFAULT_DELTA_0: f64 = 0.01;
pub const PROB_FLOOR: f64 = 1e-9;

/// Per-class residual targets for a set of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ClsTargets {
    pub features: Matrix,
    /// `|y_k − ŷ_k|`
    pub abs_residuals: Matrix,
    /// `max(y_k − ŷ_k, 0)`
    pub pos_residuals: Matrix,
    /// `−min(y_k − ŷ_k, 0)`
    pub neg_residuals: Matrix,
}

pub(crate) fn check_probability_row(row: &[f64], i: usize) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Input(format!("row {i} is not a probability vector (sum {sum})")));
    }
    Ok(())
}

fn check_one_hot(row: &[f64], i: usize) -> Result<usize> {
    let mut hot = None;
    for (k, &v) in row.iter().enumerate() {
        if v == 1.0 && hot.is_none() {
            hot = Some(k);
        } else if v != 0.0 {
            return Err(Error::Input(format!("label row {i} is not one-hot")));
        }
    }
    hot.ok_or_else(|| Error::Input(format!("label row {i} is not one-hot")))
}

pub fn build_cls_targets(features: &Matrix, softmax: &Matrix, onehot: &Matrix) -> Result<ClsTargets> {
    if softmax.rows() != onehot.rows() || softmax.cols() != onehot.cols() {
        return Err(shape_err(
            "build_cls_targets",
            format!("{}x{}", softmax.rows(), softmax.cols()),
            format!("{}x{}", onehot.rows(), onehot.cols()),
        ));
    }
    if features.rows() != softmax.rows() {
        return Err(shape_err("build_cls_targets features", softmax.rows(), features.rows()));
    }
    let (n, k) = (softmax.rows(), softmax.cols());
    let mut abs = Matrix::zeros(n, k);
    let mut pos = Matrix::zeros(n, k);
    let mut neg = Matrix::zeros(n, k);
    for i in 0..n {
        check_probability_row(softmax.row(i), i)?;
        check_one_hot(onehot.row(i), i)?;
        for c in 0..k {
            let r = onehot.get(i, c) - softmax.get(i, c);
            abs.set(i, c, r.abs());
            pos.set(i, c, r.max(0.0));
            neg.set(i, c, -r.min(0.0));
        }
    }
    Ok(ClsTargets {
        features: features.clone(),
        abs_residuals: abs,
        pos_residuals: pos,
        neg_residuals: neg,
    })
}

/// Conditional total/upper/lower MARs of a class with frequency `p` and prediction `y_tilde`.
pub fn analytic_mars(p: f64, y_tilde: f64) -> (f64, f64, f64) {
    (p * (1.0 - y_tilde) + (1.0 - p) * y_tilde, 1.0 - y_tilde, y_tilde)
}

/// Zero-included MARs `(total, upper, lower)` for class frequency `p` and prediction `y_tilde`.
pub fn zero_included_mars(p: f64, y_tilde: f64) -> (f64, f64, f64) {
    (p * (1.0 - y_tilde) + (1.0 - p) * y_tilde, p * (1.0 - y_tilde), (1.0 - p) * y_tilde)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClsUqConfig {
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate at the last epoch as a fraction of the initial one.
    pub final_lr_fraction: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub delta_0: f64,
    /// Calibration head only: identity output layer refit by ridge least squares
    /// after gradient training, outputs clamped at zero.
    pub refit_output_layer: bool,
    /// Ridge penalty per sample for the refit.
    pub ridge: f64,
}

impl Default for ClsUqConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![32],
            activation: Activation::Relu,
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            final_lr_fraction: 0.01,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            delta_0: DEFAULT_DELTA_0,
            refit_output_layer: true,
            ridge: 1e-6,
        }
    }
}

impl ClsUqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if !(self.delta_0 > 0.0 && self.delta_0.is_finite()) {
            return Err(Error::Config(format!("delta_0 must be positive, got {}", self.delta_0)));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::Config(format!("ridge must be non-negative, got {}", self.ridge)));
        }
        self.train_config(0).validate()
    }

    fn train_config(&self, stream: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            seed: self.seed.wrapping_add(stream),
            final_lr_fraction: self.final_lr_fraction,
        }
    }

    fn spec(&self, input: usize, output: usize, out_act: OutputActivation, stream: u64) -> MlpSpec {
        let mut sizes = vec![input];
        sizes.extend_from_slice(&self.hidden_sizes);
        sizes.push(output);
        MlpSpec::new(sizes, self.activation, out_act, self.seed.wrapping_add(stream))
    }
}

/// Network predicting the per-class total MAR `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalMarNet {
    pub mlp: Mlp,
}

/// Network predicting `(z_C, z_C⁺, z_C⁻)`, laid out as three consecutive blocks of `K` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationNet {
    pub mlp: Mlp,
    pub num_classes: usize,
}

impl TotalMarNet {
    pub fn num_classes(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn predict(&self, features: &Matrix) -> Result<Matrix> {
        self.mlp.forward(features)
    }
}

impl CalibrationNet {
    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        let out = mlp.output_dim();
        if out % 3 != 0 {
            return Err(shape_err("CalibrationNet", "multiple of 3 outputs", out));
        }
        Ok(Self { mlp, num_classes: out / 3 })
    }

    pub fn predict(&self, features: &Matrix) -> Result<Vec<CalibrationOutput>> {
        let mut out = self.mlp.forward(features)?;
        // identity-output heads can dip below zero; MARs cannot
        out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        let k = self.num_classes;
        Ok(out
            .iter_rows()
            .map(|r| CalibrationOutput {
                z_c: r[..k].to_vec(),
                z_c_pos: r[k..2 * k].to_vec(),
                z_c_neg: r[2 * k..].to_vec(),
            })
            .collect())
    }
}

pub fn train_total_mar_head(features: &Matrix, abs_residuals: &Matrix, config: &ClsUqConfig) -> Result<TotalMarNet> {
    config.validate()?;
    if features.rows() != abs_residuals.rows() {
        return Err(shape_err("train_total_mar_head", features.rows(), abs_residuals.rows()));
    }
    let mut mlp = Mlp::new(config.spec(features.cols(), abs_residuals.cols(), OutputActivation::Softplus, 0))?;
    nn::fit(&mut mlp, features, &config.train_config(1), |idx, cache| {
        let (l, g) = nn::train::mse(&cache.output, &abs_residuals.select_rows(idx))?;
        Ok((l, BatchGrad::Output(g)))
    })?;
    Ok(TotalMarNet { mlp })
}

pub fn train_calibration_head(targets: &ClsTargets, config: &ClsUqConfig) -> Result<CalibrationNet> {
    config.validate()?;
    let k = targets.abs_residuals.cols();
    let n = targets.features.rows();
    // stacked [|r|, r+, r-] so one MSE over 3K columns is the sum of the three losses up to a factor 3
    let mut stacked = Matrix::zeros(n, 3 * k);
    for i in 0..n {
        let row = stacked.row_mut(i);
        row[..k].copy_from_slice(targets.abs_residuals.row(i));
        row[k..2 * k].copy_from_slice(targets.pos_residuals.row(i));
        row[2 * k..].copy_from_slice(targets.neg_residuals.row(i));
    }
    let out_act = if config.refit_output_layer {
        OutputActivation::Identity
    } else {
        OutputActivation::Softplus
    };
    let mut mlp = Mlp::new(config.spec(targets.features.cols(), 3 * k, out_act, 2))?;
    nn::fit(&mut mlp, &targets.features, &config.train_config(3), |idx, cache| {
        let (l, mut g) = nn::train::mse(&cache.output, &stacked.select_rows(idx))?;
        g.as_mut_slice().iter_mut().for_each(|v| *v *= 3.0);
        Ok((3.0 * l, BatchGrad::Output(g)))
    })?;
    if config.refit_output_layer {
        nn::train::refit_output_layer(&mut mlp, &targets.features, &stacked, config.ridge)?;
    }
    CalibrationNet::from_mlp(mlp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOutput {
    pub z_c: Vec<f64>,
    pub z_c_pos: Vec<f64>,
    pub z_c_neg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClsUqOutput {
    pub z_total: Vec<f64>,
    pub calibration: Option<CalibrationOutput>,
}

impl ClsUqOutput {
    pub fn sds(&self, softmax: &[f64]) -> Result<SdsScore> {
        spa::sds_classification(softmax, &self.z_total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationGate {
    pub delta_c: f64,
    pub delta_0: f64,
    pub applied: bool,
}

/// `δ_C = ‖z_C − z_C⁺ − z_C⁻‖₁`; the correction is applied only when `δ_C < δ₀`.
pub fn calibration_quality(cal: &CalibrationOutput, delta_0: f64) -> Result<CalibrationGate> {
    let k = cal.z_c.len();
    if cal.z_c_pos.len() != k || cal.z_c_neg.len() != k {
        return Err(shape_err("calibration_quality", k, cal.z_c_pos.len().max(cal.z_c_neg.len())));
    }
    let delta_c: f64 = (0..k).map(|c| (cal.z_c[c] - cal.z_c_pos[c] - cal.z_c_neg[c]).abs()).sum();
    Ok(CalibrationGate {
        delta_c,
        delta_0,
        applied: delta_c < delta_0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedProbabilities {
    /// Corrected per-class values clamped to `[1e-9, 1]`, not renormalised.
    pub raw: Vec<f64>,
    /// `raw` rescaled to sum to one.
    pub normalized: Vec<f64>,
    pub applied: bool,
}

pub fn calibrate_prediction(
    softmax: &[f64],
    cal: &CalibrationOutput,
    gate: &CalibrationGate,
) -> Result<CalibratedProbabilities> {
    if cal.z_c_pos.len() != softmax.len() || cal.z_c_neg.len() != softmax.len() {
        return Err(shape_err("calibrate_prediction", softmax.len(), cal.z_c_pos.len()));
    }
    if !gate.applied {
        return Ok(CalibratedProbabilities {
            raw: softmax.to_vec(),
            normalized: softmax.to_vec(),
            applied: false,
        });
    }
    let raw: Vec<f64> = softmax
        .iter()
        .zip(cal.z_c_pos.iter().zip(&cal.z_c_neg))
        .map(|(&p, (&up, &down))| (p + up - down).clamp(PROB_FLOOR, 1.0))
        .collect();
    let sum: f64 = raw.iter().sum();
    Ok(CalibratedProbabilities {
        normalized: raw.iter().map(|v| v / sum).collect(),
        raw,
        applied: true,
    })
}

/// Natural-log entropy `−Σ p log p`; zero entries contribute nothing.
pub fn predictive_entropy(p: &[f64]) -> Result<f64> {
    check_probability_row(p, 0)?;
    Ok(-p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>())
}

/// Row of predicted class and its probability.
pub fn argmax(row: &[f64]) -> (usize, f64) {
    row.iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
}
