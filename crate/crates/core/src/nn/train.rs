//! Mini-batch training loop and the two standard losses.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;
use crate::nn::mlp::{ForwardCache, Mlp, OutputActivation};
use crate::nn::optim::{OptimizerKind, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Seeds the per-epoch shuffling.
    #[serde(default)]
    pub seed: u64,
    /// The learning rate decays linearly to this fraction of its initial value by the last epoch.
    #[serde(default = "one")]
    pub final_lr_fraction: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            final_lr_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::Config(format!("final_lr_fraction must lie in (0, 1], got {}", self.final_lr_fraction)));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let progress = epoch as f64 / self.epochs.max(1) as f64;
        self.learning_rate * (1.0 - (1.0 - self.final_lr_fraction) * progress)
    }

    pub fn optimizer_for(&self, mlp: &Mlp) -> Result<OptimizerState> {
        OptimizerState::new(self.optimizer, self.learning_rate, Some(mlp))
    }
}

/// Gradient produced by a batch loss, either at the network output or at the final logits.
#[derive(Debug, Clone)]
pub enum BatchGrad {
    Output(Matrix),
    Logits(Matrix),
}

/// Per-epoch shuffled index batches, deterministic in `seed`.
pub struct BatchSchedule {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    batch_size: usize,
}

impl BatchSchedule {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            batch_size: batch_size.max(1),
        }
    }

    /// Reshuffle and return this epoch's batches.
    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        self.order.shuffle(&mut self.rng);
        self.order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// Train `mlp` on `inputs`; `loss` maps `(row indices, forward cache)` to `(loss, gradient)`.
/// Returns the mean batch loss of each epoch.
pub fn fit<F>(mlp: &mut Mlp, inputs: &Matrix, cfg: &TrainConfig, mut loss: F) -> Result<Vec<f64>>
where
    F: FnMut(&[usize], &ForwardCache) -> Result<(f64, BatchGrad)>,
{
    cfg.validate()?;
    if inputs.rows() == 0 {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    let mut opt = cfg.optimizer_for(mlp)?;
    let mut schedule = BatchSchedule::new(inputs.rows(), cfg.batch_size, cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        opt.learning_rate = cfg.learning_rate_at(epoch);
        let batches = schedule.epoch();
        let mut total = 0.0;
        for idx in &batches {
            let x = inputs.select_rows(idx);
            let cache = mlp.forward_cached(&x)?;
            let (l, grad) = loss(idx, &cache)?;
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            total += l;
            let grads = match grad {
                BatchGrad::Output(g) => mlp.backward(&cache, &g)?,
                BatchGrad::Logits(g) => mlp.backward_logits(&cache, &g)?,
            };
            opt.step(mlp, &grads)?;
        }
        history.push(total / batches.len() as f64);
    }
    Ok(history)
}

/// Replace the final layer of an identity-output network by the ridge
/// least-squares fit of `targets` on the penultimate features of `inputs`.
///
/// The fit is linear in the targets, so any linear relation among target
/// columns is carried over exactly to the outputs.
pub fn refit_output_layer(mlp: &mut Mlp, inputs: &Matrix, targets: &Matrix, ridge: f64) -> Result<()> {
    if mlp.spec.output_activation != OutputActivation::Identity {
        return Err(Error::Config("output-layer refit needs an identity output".into()));
    }
    if inputs.rows() != targets.rows() || targets.cols() != mlp.output_dim() {
        return Err(shape_err("refit_output_layer", inputs.rows(), targets.rows()));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Config(format!("ridge must be non-negative, got {ridge}")));
    }
    let (features, _) = mlp.forward_with_features(inputs)?;
    let (n, h, k) = (features.rows(), features.cols(), targets.cols());
    // trailing column of ones carries the bias, which is not penalised
    let a = DMatrix::from_fn(n, h + 1, |i, j| if j < h { features.get(i, j) } else { 1.0 });
    let t = DMatrix::from_fn(n, k, |i, j| targets.get(i, j));
    let mut gram = a.transpose() * &a;
    for j in 0..h {
        gram[(j, j)] += ridge * n as f64;
    }
    let rhs = a.transpose() * t;
    let sol = match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => gram
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::Numeric(format!("output-layer refit failed: {e}")))?,
    };
    let layer = mlp.layers.last_mut().expect("validated network");
    for o in 0..k {
        for j in 0..h {
            layer.weights.set(o, j, sol[(j, o)]);
        }
        layer.biases[o] = sol[(h, o)];
    }
    Ok(())
}

/// `mean((out - target)^2)` over all `n*K` entries and its gradient.
pub fn mse(outputs: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if outputs.rows() != targets.rows() || outputs.cols() != targets.cols() {
        return Err(shape_err(
            "mse",
            format!("{}x{}", outputs.rows(), outputs.cols()),
            format!("{}x{}", targets.rows(), targets.cols()),
        ));
    }
    let count = outputs.as_slice().len().max(1) as f64;
    let mut grad = Matrix::zeros(outputs.rows(), outputs.cols());
    let mut loss = 0.0;
    for ((g, o), t) in grad.as_mut_slice().iter_mut().zip(outputs.as_slice()).zip(targets.as_slice()) {
        let d = o - t;
        loss += d * d;
        *g = 2.0 * d / count;
    }
    Ok((loss / count, grad))
}

/// Mean cross-entropy of softmax `probs` against one-hot `targets`; gradient w.r.t. the logits.
pub fn softmax_cross_entropy(probs: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if probs.rows() != targets.rows() || probs.cols() != targets.cols() {
        return Err(shape_err(
            "softmax_cross_entropy",
            format!("{}x{}", probs.rows(), probs.cols()),
            format!("{}x{}", targets.rows(), targets.cols()),
        ));
    }
    let n = probs.rows().max(1) as f64;
    let mut grad = Matrix::zeros(probs.rows(), probs.cols());
    let mut loss = 0.0;
    for ((g, &p), &y) in grad.as_mut_slice().iter_mut().zip(probs.as_slice()).zip(targets.as_slice()) {
        if y > 0.0 {
            loss -= y * p.max(1e-300).ln();
        }
        *g = (p - y) / n;
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::{Activation, MlpSpec, OutputActivation};

    #[test]
    fn refit_preserves_linear_relations_between_targets() {
        let (x, y) = toy();
        let t = Matrix::from_rows(
            &(0..x.rows())
                .map(|i| {
                    let (a, b) = (y.get(i, 0), (3.0 * x.get(i, 0)).sin());
                    vec![a + b, a, b]
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let spec = MlpSpec::new(vec![1, 12, 3], Activation::Relu, OutputActivation::Identity, 5);
        let mut mlp = Mlp::new(spec).unwrap();
        refit_output_layer(&mut mlp, &x, &t, 1e-6).unwrap();
        let out = mlp.forward(&x).unwrap();
        for r in out.iter_rows() {
            assert!((r[0] - r[1] - r[2]).abs() < 1e-9);
        }
        // least squares on fixed features cannot do worse than the initial layer
        let (before, _) = mse(&Mlp::new(mlp.spec.clone()).unwrap().forward(&x).unwrap(), &t).unwrap();
        let (after, _) = mse(&out, &t).unwrap();
        assert!(after < before);
    }

    #[test]
    fn refit_rejects_nonlinear_output() {
        let (x, y) = toy();
        let spec = MlpSpec::new(vec![1, 4, 1], Activation::Relu, OutputActivation::Softplus, 5);
        let mut mlp = Mlp::new(spec).unwrap();
        assert!(matches!(refit_output_layer(&mut mlp, &x, &y, 0.0), Err(Error::Config(_))));
    }

    fn toy() -> (Matrix, Matrix) {
        let xs: Vec<f64> = (0..64).map(|i| -1.0 + 2.0 * i as f64 / 63.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 * x * x - 0.2).collect();
        (Matrix::column(&xs), Matrix::column(&ys))
    }

    #[test]
    fn fit_reduces_mse() {
        let (x, y) = toy();
        let mut mlp = Mlp::new(MlpSpec::new(vec![1, 16, 1], Activation::Tanh, OutputActivation::Identity, 3)).unwrap();
        let cfg = TrainConfig {
            epochs: 300,
            batch_size: 16,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let hist = fit(&mut mlp, &x, &cfg, |idx, cache| {
            let (l, g) = mse(&cache.output, &y.select_rows(idx))?;
            Ok((l, BatchGrad::Output(g)))
        })
        .unwrap();
        assert!(hist.last().unwrap() < &(hist[0] * 0.05), "{:?}", (hist[0], hist.last()));
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = toy();
        let run = || {
            let mut mlp =
                Mlp::new(MlpSpec::new(vec![1, 8, 1], Activation::Relu, OutputActivation::Identity, 9)).unwrap();
            let cfg = TrainConfig {
                epochs: 20,
                batch_size: 10,
                learning_rate: 1e-2,
                seed: 4,
                ..Default::default()
            };
            fit(&mut mlp, &x, &cfg, |idx, cache| {
                let (l, g) = mse(&cache.output, &y.select_rows(idx))?;
                Ok((l, BatchGrad::Output(g)))
            })
            .unwrap();
            mlp
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn cross_entropy_gradient_is_p_minus_y() {
        let p = Matrix::from_rows(&[vec![0.7, 0.2, 0.1], vec![0.1, 0.1, 0.8]]).unwrap();
        let y = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let (l, g) = softmax_cross_entropy(&p, &y).unwrap();
        assert!((l - (-(0.7f64.ln()) - 0.1f64.ln()) / 2.0).abs() < 1e-12);
        assert!((g.get(1, 1) - (0.1 - 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn mse_shape_mismatch() {
        assert!(matches!(mse(&Matrix::zeros(2, 1), &Matrix::zeros(3, 1)), Err(Error::Shape { .. })));
    }
}
