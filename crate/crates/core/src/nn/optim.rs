use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;
use crate::nn::mlp::{Gradients, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// First/second moment buffers for one layer.
#[derive(Debug, Clone)]
struct Moments {
    weights: Matrix,
    biases: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    first: Vec<Moments>,
    second: Vec<Moments>,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate, None)
    }

    /// Adam with the usual defaults (0.9, 0.999, 1e-8), moments shaped after `mlp`.
    pub fn adam(learning_rate: f64, mlp: &Mlp) -> Result<Self> {
        Self::new(OptimizerKind::Adam, learning_rate, Some(mlp))
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64, mlp: Option<&Mlp>) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        let zeros = |m: &Mlp| -> Vec<Moments> {
            m.layers
                .iter()
                .map(|l| Moments {
                    weights: Matrix::zeros(l.out_dim(), l.in_dim()),
                    biases: vec![0.0; l.out_dim()],
                })
                .collect()
        };
        let (first, second) = match (kind, mlp) {
            (OptimizerKind::Adam, Some(m)) => (zeros(m), zeros(m)),
            (OptimizerKind::Adam, None) => {
                return Err(Error::Config("Adam needs the network to shape its moments".into()));
            }
            (OptimizerKind::Sgd, _) => (Vec::new(), Vec::new()),
        };
        Ok(Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first,
            second,
        })
    }

    /// Apply one update in place. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, mlp: &mut Mlp, grads: &Gradients) -> Result<()> {
        if grads.weights.len() != mlp.layers.len() || grads.biases.len() != mlp.layers.len() {
            return Err(shape_err("OptimizerState::step", mlp.layers.len(), grads.weights.len()));
        }
        for (l, layer) in mlp.layers.iter().enumerate() {
            let gw = &grads.weights[l];
            if gw.rows() != layer.out_dim() || gw.cols() != layer.in_dim() || grads.biases[l].len() != layer.out_dim() {
                return Err(shape_err(
                    "OptimizerState::step",
                    format!("layer {l}: {}x{}", layer.out_dim(), layer.in_dim()),
                    format!("{}x{}", gw.rows(), gw.cols()),
                ));
            }
            if !gw.is_finite() || grads.biases[l].iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient { layer: l });
            }
        }
        if self.kind == OptimizerKind::Adam && self.first.len() != mlp.layers.len() {
            return Err(shape_err("Adam moments", mlp.layers.len(), self.first.len()));
        }

        self.step_count += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (layer, (gw, gb)) in mlp.layers.iter_mut().zip(grads.weights.iter().zip(&grads.biases)) {
                    for (p, g) in layer.weights.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                        *p -= lr * g;
                    }
                    for (p, g) in layer.biases.iter_mut().zip(gb) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
                let t = self.step_count as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                };
                for (l, layer) in mlp.layers.iter_mut().enumerate() {
                    let (m, v) = (&mut self.first[l], &mut self.second[l]);
                    let params = layer.weights.as_mut_slice().iter_mut();
                    let moments = m.weights.as_mut_slice().iter_mut().zip(v.weights.as_mut_slice().iter_mut());
                    for ((p, g), (mw, vw)) in params.zip(grads.weights[l].as_slice()).zip(moments) {
                        update(p, *g, mw, vw);
                    }
                    let moments = m.biases.iter_mut().zip(v.biases.iter_mut());
                    for ((p, g), (mb, vb)) in layer.biases.iter_mut().zip(&grads.biases[l]).zip(moments) {
                        update(p, *g, mb, vb);
                    }
                }
            }
        }
        Ok(())
    }
}
