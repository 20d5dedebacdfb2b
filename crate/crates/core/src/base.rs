//! Base predictors whose residuals the uncertainty heads model.
//!
//! Regression targets are standardized internally; classification logits can be
//! divided by a temperature at inference to make the model deliberately over- or
//! under-confident.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;
use crate::nn::{self, mlp::softmax_in_place, Activation, BatchGrad, Mlp, MlpSpec, OutputActivation, TrainConfig};
use crate::reg_uq::{self, RegUqConfig, RegUqNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseConfig {
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub train: TrainConfig,
    /// Logit divisor at inference (classification only); below 1 sharpens.
    pub temperature: f64,
}

impl Default for BaseConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![64, 64],
            activation: Activation::Relu,
            train: TrainConfig {
                epochs: 300,
                batch_size: 128,
                learning_rate: 3e-3,
                ..Default::default()
            },
            temperature: 1.0,
        }
    }
}

impl BaseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::Config("base model needs at least one non-empty hidden layer".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        self.train.validate()
    }

    pub fn spec(&self, input: usize, output: usize, out_act: OutputActivation, seed: u64) -> MlpSpec {
        let mut sizes = vec![input];
        sizes.extend_from_slice(&self.hidden_sizes);
        sizes.push(output);
        MlpSpec::new(sizes, self.activation, out_act, seed)
    }
}

/// MLP regressor on standardized targets.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseRegressor {
    pub mlp: Mlp,
    pub y_mean: f64,
    pub y_std: f64,
}

/// Point predictions and the penultimate features fed to the uncertainty heads.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseOutput {
    pub predictions: Matrix,
    pub features: Matrix,
}

fn target_stats(y: &[f64]) -> Result<(f64, f64)> {
    if y.is_empty() {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, if var > 0.0 { var.sqrt() } else { 1.0 }))
}

impl BaseRegressor {
    pub fn predict(&self, x: &Matrix) -> Result<BaseOutput> {
        let (features, mut out) = self.mlp.forward_with_features(x)?;
        out.as_mut_slice().iter_mut().for_each(|v| *v = *v * self.y_std + self.y_mean);
        Ok(BaseOutput {
            predictions: out,
            features,
        })
    }
}

pub fn train_base_regressor(x: &Matrix, y: &[f64], config: &BaseConfig, seed: u64) -> Result<BaseRegressor> {
    config.validate()?;
    if x.rows() != y.len() {
        return Err(shape_err("train_base_regressor", x.rows(), y.len()));
    }
    let (y_mean, y_std) = target_stats(y)?;
    let ys = Matrix::column(&y.iter().map(|v| (v - y_mean) / y_std).collect::<Vec<_>>());
    let mut mlp = Mlp::new(config.spec(x.cols(), 1, OutputActivation::Identity, seed))?;
    let mut cfg = config.train.clone();
    cfg.seed = cfg.seed.wrapping_add(seed);
    let hist = nn::fit(&mut mlp, x, &cfg, |idx, cache| {
        let (l, g) = nn::train::mse(&cache.output, &ys.select_rows(idx))?;
        Ok((l, BatchGrad::Output(g)))
    })?;
    log::debug!("base regressor final loss {:.5}", hist.last().copied().unwrap_or(f64::NAN));
    Ok(BaseRegressor { mlp, y_mean, y_std })
}

/// Train the base regressor and the five-head network together: the heads' loss
/// is backpropagated into the shared trunk, and residual targets come from the
/// current (detached) base predictions of each batch.
pub fn train_joint_regressor(
    x: &Matrix,
    y: &[f64],
    config: &BaseConfig,
    uq: &RegUqConfig,
    seed: u64,
) -> Result<(BaseRegressor, RegUqNet)> {
    config.validate()?;
    uq.validate()?;
    if x.rows() != y.len() {
        return Err(shape_err("train_joint_regressor", x.rows(), y.len()));
    }
    let (y_mean, y_std) = target_stats(y)?;
    let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();
    let mut base = Mlp::new(config.spec(x.cols(), 1, OutputActivation::Identity, seed))?;
    let mut head = Mlp::new(uq.mlp_spec(*config.hidden_sizes.last().expect("validated")))?;
    let mut base_opt = config.train.optimizer_for(&base)?;
    // the heads follow the base model's epoch count in joint mode
    let head_cfg = TrainConfig {
        epochs: config.train.epochs,
        ..uq.train_config()
    };
    let mut head_opt = head_cfg.optimizer_for(&head)?;
    let mut schedule = nn::train::BatchSchedule::new(x.rows(), config.train.batch_size, config.train.seed.wrapping_add(seed));
    for epoch in 0..config.train.epochs {
        base_opt.learning_rate = config.train.learning_rate_at(epoch);
        head_opt.learning_rate = head_cfg.learning_rate_at(epoch);
        for idx in schedule.epoch() {
            let bc = base.forward_cached(&x.select_rows(&idx))?;
            let target = Matrix::column(&idx.iter().map(|&i| ys[i]).collect::<Vec<_>>());
            let (task_loss, task_grad) = nn::train::mse(&bc.output, &target)?;
            let hc = head.forward_cached(bc.features())?;
            let resid: Vec<f64> = (0..idx.len()).map(|i| target.get(i, 0) - bc.output.get(i, 0)).collect();
            let abs: Vec<f64> = resid.iter().map(|r| r.abs()).collect();
            let signs: Vec<f64> = resid.iter().map(|r| r.signum()).collect();
            let (uq_loss, uq_grad) =
                reg_uq::five_head_loss(&hc.output, &abs, &signs, uq.tau_upper, uq.tau_lower, None)?;
            if !(task_loss + uq_loss).is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            let hg = head.backward(&hc, &uq_grad)?;
            let bg = base.backward_with_features(&bc, &task_grad, Some(&hg.input))?;
            head_opt.step(&mut head, &hg)?;
            base_opt.step(&mut base, &bg)?;
        }
    }
    let net = RegUqNet::from_parts(
        head,
        &reg_uq::RegUqMeta {
            spec: uq.mlp_spec(*config.hidden_sizes.last().expect("validated")),
            residual_scale: y_std,
            tau_upper: uq.tau_upper,
            tau_lower: uq.tau_lower,
        },
    )?;
    Ok((BaseRegressor { mlp: base, y_mean, y_std }, net))
}

/// Softmax classifier with an inference temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseClassifier {
    pub mlp: Mlp,
    pub temperature: f64,
}

impl BaseClassifier {
    /// Tempered class probabilities and penultimate features.
    pub fn predict(&self, x: &Matrix) -> Result<BaseOutput> {
        let cache = self.mlp.forward_cached(x)?;
        let mut probs = cache.logits().clone();
        for r in 0..probs.rows() {
            let row = probs.row_mut(r);
            row.iter_mut().for_each(|v| *v /= self.temperature);
            softmax_in_place(row);
        }
        Ok(BaseOutput {
            predictions: probs,
            features: cache.features().clone(),
        })
    }
}

pub fn train_base_classifier(x: &Matrix, onehot: &Matrix, config: &BaseConfig, seed: u64) -> Result<BaseClassifier> {
    config.validate()?;
    if x.rows() != onehot.rows() {
        return Err(shape_err("train_base_classifier", x.rows(), onehot.rows()));
    }
    let mut mlp = Mlp::new(config.spec(x.cols(), onehot.cols(), OutputActivation::Softmax, seed))?;
    let mut cfg = config.train.clone();
    cfg.seed = cfg.seed.wrapping_add(seed);
    nn::fit(&mut mlp, x, &cfg, |idx, cache| {
        let (l, g) = nn::train::softmax_cross_entropy(&cache.output, &onehot.select_rows(idx))?;
        Ok((l, BatchGrad::Logits(g)))
    })?;
    Ok(BaseClassifier {
        mlp,
        temperature: config.temperature,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BaseConfig {
        BaseConfig {
            hidden_sizes: vec![16],
            train: TrainConfig {
                epochs: 150,
                batch_size: 32,
                learning_rate: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn regressor_learns_line_in_original_units() {
        let xs: Vec<f64> = (0..200).map(|i| -1.0 + i as f64 / 100.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 100.0 + 50.0 * x).collect();
        let m = train_base_regressor(&Matrix::column(&xs), &ys, &small(), 1).unwrap();
        let out = m.predict(&Matrix::column(&[0.5])).unwrap();
        assert!((out.predictions.get(0, 0) - 125.0).abs() < 2.0, "{}", out.predictions.get(0, 0));
        assert_eq!(out.features.cols(), 16);
    }

    #[test]
    fn temperature_sharpens() {
        let x = Matrix::from_rows(&[vec![-1.0], vec![1.0], vec![-0.8], vec![0.9]]).unwrap();
        let y = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut m = train_base_classifier(&x, &y, &small(), 2).unwrap();
        let soft = m.predict(&x).unwrap().predictions;
        m.temperature = 0.5;
        let sharp = m.predict(&x).unwrap().predictions;
        for r in 0..4 {
            let top = crate::cls_uq::argmax(soft.row(r)).0;
            assert!(sharp.get(r, top) >= soft.get(r, top));
            assert!((sharp.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_training_runs_and_is_deterministic() {
        let xs: Vec<f64> = (0..256).map(|i| -1.0 + i as f64 / 128.0).collect();
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * x + if i % 2 == 0 { 0.1 } else { -0.1 }).collect();
        let x = Matrix::column(&xs);
        let mut cfg = small();
        cfg.train.epochs = 20;
        let uq = RegUqConfig {
            hidden_sizes: vec![8],
            ..Default::default()
        };
        let (b1, u1) = train_joint_regressor(&x, &ys, &cfg, &uq, 3).unwrap();
        let (b2, u2) = train_joint_regressor(&x, &ys, &cfg, &uq, 3).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(u1, u2);
        let feats = b1.predict(&x).unwrap().features;
        let outs = reg_uq::predict_reg_uq_batch(&u1, &feats).unwrap();
        assert!(outs.iter().all(|o| o.to_array().iter().all(|v| v.is_finite() && *v > 0.0)));
    }
}
