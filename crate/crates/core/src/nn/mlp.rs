use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and the activation `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Nonlinearity applied to the final layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Identity,
    Softmax,
    Softplus,
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    (z.max(0.0) + (-z.abs()).exp().ln_1p()).max(f64::MIN_POSITIVE)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// In-place numerically stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input dimension first, output dimension last.
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub output_activation: OutputActivation,
    #[serde(default)]
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, output_activation: OutputActivation, seed: u64) -> Self {
        Self {
            layer_sizes,
            activation,
            output_activation,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least an input and an output size, got {:?}",
                self.layer_sizes
            )));
        }
        if let Some(pos) = self.layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::Config(format!("layer {pos} has zero width")));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }
}

/// One dense layer, `weights` shaped `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    /// `out = x W^T + b` for a whole batch.
    fn affine(&self, x: &Matrix) -> Matrix {
        let (n, d_in, d_out) = (x.rows(), self.in_dim(), self.out_dim());
        let mut wt = vec![0.0; d_in * d_out];
        for o in 0..d_out {
            for (k, &w) in self.weights.row(o).iter().enumerate() {
                wt[k * d_out + o] = w;
            }
        }
        let mut out = Matrix::zeros(n, d_out);
        for i in 0..n {
            let oi = out.row_mut(i);
            oi.copy_from_slice(&self.biases);
            for (k, &xk) in x.row(i).iter().enumerate() {
                // ReLU inputs are often exactly zero
                if xk == 0.0 {
                    continue;
                }
                for (o, &w) in oi.iter_mut().zip(&wt[k * d_out..(k + 1) * d_out]) {
                    *o += xk * w;
                }
            }
        }
        out
    }
}

/// Intermediate values from a forward pass, needed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to every layer: `inputs[0]` is the batch, `inputs[l]` the activation after layer `l-1`.
    pub inputs: Vec<Matrix>,
    /// Pre-activation of every layer.
    pub pre: Vec<Matrix>,
    /// Final output after the output activation.
    pub output: Matrix,
}

impl ForwardCache {
    /// Penultimate activations (the input of the final layer).
    pub fn features(&self) -> &Matrix {
        self.inputs.last().expect("at least one layer")
    }

    /// Final-layer pre-activations (logits for softmax heads).
    pub fn logits(&self) -> &Matrix {
        self.pre.last().expect("at least one layer")
    }
}

/// Parameter gradients, laid out like [`Mlp::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    /// Gradient with respect to the batch input.
    pub input: Matrix,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp.layers.iter().map(|l| Matrix::zeros(l.out_dim(), l.in_dim())).collect(),
            biases: mlp.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
            input: Matrix::zeros(0, mlp.spec.input_dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// He-uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases, keyed by `spec.seed`.
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
                Layer {
                    weights: Matrix::from_vec(fan_out, fan_in, data).expect("sized above"),
                    biases: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    /// Assemble a network from explicit parameters, checking shapes against the spec.
    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.layer_sizes.len() - 1 {
            return Err(shape_err("Mlp::from_layers", spec.layer_sizes.len() - 1, layers.len()));
        }
        for (l, (layer, w)) in layers.iter().zip(spec.layer_sizes.windows(2)).enumerate() {
            if layer.in_dim() != w[0] || layer.out_dim() != w[1] || layer.biases.len() != w[1] {
                return Err(shape_err(
                    "Mlp::from_layers",
                    format!("layer {l}: {}x{}", w[1], w[0]),
                    format!("{}x{} (+{} biases)", layer.out_dim(), layer.in_dim(), layer.biases.len()),
                ));
            }
            if !layer.weights.is_finite() || layer.biases.iter().any(|b| !b.is_finite()) {
                return Err(Error::Numeric(format!("layer {l} has non-finite parameters")));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len() + l.biases.len()).sum()
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(shape_err("Mlp::forward", format!("{} input columns", self.input_dim()), batch.cols()));
        }
        Ok(())
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(batch)?.output)
    }

    /// Returns `(penultimate features, output)`.
    pub fn forward_with_features(&self, batch: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut cache = self.forward_cached(batch)?;
        let features = cache.inputs.pop().expect("at least one layer");
        Ok((features, cache.output))
    }

    pub fn forward_cached(&self, batch: &Matrix) -> Result<ForwardCache> {
        self.check_input(batch)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = batch.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&current);
            let mut a = z.clone();
            if l < last {
                let act = self.spec.activation;
                a.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            } else {
                match self.spec.output_activation {
                    OutputActivation::Identity => {}
                    OutputActivation::Softplus => a.as_mut_slice().iter_mut().for_each(|v| *v = softplus(*v)),
                    OutputActivation::Softmax => {
                        for r in 0..a.rows() {
                            softmax_in_place(a.row_mut(r));
                        }
                    }
                }
            }
            inputs.push(std::mem::replace(&mut current, a));
            pre.push(z);
        }
        Ok(ForwardCache {
            inputs,
            pre,
            output: current,
        })
    }

    /// Exact gradients given `loss_grad = dL/d(output)` for the cached batch.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: &Matrix) -> Result<Gradients> {
        self.backward_with_features(cache, loss_grad, None)
    }

    /// Like [`Mlp::backward`], optionally adding a gradient that arrives directly at the
    /// penultimate features (a second network consuming them).
    pub fn backward_with_features(
        &self,
        cache: &ForwardCache,
        loss_grad: &Matrix,
        feature_grad: Option<&Matrix>,
    ) -> Result<Gradients> {
        let out = &cache.output;
        if loss_grad.rows() != out.rows() || loss_grad.cols() != out.cols() {
            return Err(shape_err(
                "Mlp::backward",
                format!("{}x{}", out.rows(), out.cols()),
                format!("{}x{}", loss_grad.rows(), loss_grad.cols()),
            ));
        }
        let logits = cache.logits();
        let mut delta = Matrix::zeros(out.rows(), out.cols());
        match self.spec.output_activation {
            OutputActivation::Identity => delta = loss_grad.clone(),
            OutputActivation::Softplus => {
                for ((d, g), z) in delta.as_mut_slice().iter_mut().zip(loss_grad.as_slice()).zip(logits.as_slice()) {
                    *d = g * sigmoid(*z);
                }
            }
            OutputActivation::Softmax => {
                for r in 0..out.rows() {
                    let p = out.row(r);
                    let g = loss_grad.row(r);
                    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
                    for (k, d) in delta.row_mut(r).iter_mut().enumerate() {
                        *d = p[k] * (g[k] - dot);
                    }
                }
            }
        }
        self.backward_logits_with_features(cache, delta, feature_grad)
    }

    /// Backpropagate a gradient taken with respect to the final pre-activation.
    pub fn backward_logits(&self, cache: &ForwardCache, logit_grad: &Matrix) -> Result<Gradients> {
        let logits = cache.logits();
        if logit_grad.rows() != logits.rows() || logit_grad.cols() != logits.cols() {
            return Err(shape_err(
                "Mlp::backward_logits",
                format!("{}x{}", logits.rows(), logits.cols()),
                format!("{}x{}", logit_grad.rows(), logit_grad.cols()),
            ));
        }
        self.backward_logits_with_features(cache, logit_grad.clone(), None)
    }

    fn backward_logits_with_features(
        &self,
        cache: &ForwardCache,
        mut delta: Matrix,
        feature_grad: Option<&Matrix>,
    ) -> Result<Gradients> {
        let n_layers = self.layers.len();
        let mut grads = Gradients::zeros_like(self);
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let x = &cache.inputs[l];
            let gw = &mut grads.weights[l];
            let gb = &mut grads.biases[l];
            for i in 0..x.rows() {
                let xi = x.row(i);
                let di = delta.row(i);
                for (o, &d) in di.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, &xv) in gw.row_mut(o).iter_mut().zip(xi) {
                        *g += d * xv;
                    }
                }
            }
            // gradient w.r.t. this layer's input
            let mut dx = Matrix::zeros(x.rows(), layer.in_dim());
            for i in 0..x.rows() {
                let di = delta.row(i);
                let dxi = dx.row_mut(i);
                for (o, &d) in di.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (g, &w) in dxi.iter_mut().zip(layer.weights.row(o)) {
                        *g += d * w;
                    }
                }
            }
            if l == n_layers - 1 {
                if let Some(fg) = feature_grad {
                    if fg.rows() != dx.rows() || fg.cols() != dx.cols() {
                        return Err(shape_err(
                            "Mlp::backward feature gradient",
                            format!("{}x{}", dx.rows(), dx.cols()),
                            format!("{}x{}", fg.rows(), fg.cols()),
                        ));
                    }
                    for (a, b) in dx.as_mut_slice().iter_mut().zip(fg.as_slice()) {
                        *a += b;
                    }
                }
            }
            if l == 0 {
                grads.input = dx;
            } else {
                let act = self.spec.activation;
                let z = &cache.pre[l - 1];
                let a = &cache.inputs[l];
                for ((g, &zv), &av) in dx.as_mut_slice().iter_mut().zip(z.as_slice()).zip(a.as_slice()) {
                    *g *= act.derivative(zv, av);
                }
                delta = dx;
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sizes: &[usize], out: OutputActivation, seed: u64) -> MlpSpec {
        MlpSpec::new(sizes.to_vec(), Activation::Relu, out, seed)
    }

    #[test]
    fn init_shapes_follow_spec() {
        let mlp = Mlp::new(spec(&[1, 64, 64, 1], OutputActivation::Identity, 7)).unwrap();
        let shapes: Vec<_> = mlp.layers.iter().map(|l| (l.out_dim(), l.in_dim())).collect();
        assert_eq!(shapes, vec![(64, 1), (64, 64), (1, 64)]);
    }

    #[test]
    fn init_is_deterministic() {
        let a = Mlp::new(spec(&[13, 50, 5], OutputActivation::Identity, 0)).unwrap();
        let b = Mlp::new(spec(&[13, 50, 5], OutputActivation::Identity, 0)).unwrap();
        assert_eq!(a, b);
        let c = Mlp::new(spec(&[13, 50, 5], OutputActivation::Identity, 1)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(matches!(Mlp::new(spec(&[1], OutputActivation::Identity, 3)), Err(Error::Config(_))));
        assert!(matches!(Mlp::new(spec(&[], OutputActivation::Identity, 3)), Err(Error::Config(_))));
        assert!(matches!(Mlp::new(spec(&[2, 0, 1], OutputActivation::Identity, 3)), Err(Error::Config(_))));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut mlp = Mlp::new(spec(&[3, 4, 2], OutputActivation::Identity, 1)).unwrap();
        for l in &mut mlp.layers {
            l.weights.as_mut_slice().fill(0.0);
            l.biases.fill(0.0);
        }
        let out = mlp.forward(&Matrix::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]]).unwrap()).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_layer_hand_computation() {
        let layer = Layer {
            weights: Matrix::from_vec(1, 1, vec![2.0]).unwrap(),
            biases: vec![1.0],
        };
        let mlp = Mlp::from_layers(spec(&[1, 1], OutputActivation::Identity, 0), vec![layer]).unwrap();
        let out = mlp.forward(&Matrix::column(&[3.0])).unwrap();
        assert_eq!(out.get(0, 0), 7.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mlp = Mlp::new(spec(&[4, 8, 5], OutputActivation::Softmax, 11)).unwrap();
        let batch = Matrix::from_rows(&[vec![10.0, -3.0, 2.0, 0.0], vec![-50.0, 40.0, 1.0, 7.0]]).unwrap();
        let out = mlp.forward(&batch).unwrap();
        for r in out.iter_rows() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn softplus_is_positive() {
        for z in [-800.0, -40.0, -1.0, 0.0, 3.0, 700.0] {
            assert!(softplus(z) > 0.0, "softplus({z})");
        }
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let mlp = Mlp::new(spec(&[3, 2], OutputActivation::Identity, 0)).unwrap();
        assert!(matches!(mlp.forward(&Matrix::zeros(2, 4)), Err(Error::Shape { .. })));
        let cache = mlp.forward_cached(&Matrix::zeros(2, 3)).unwrap();
        assert!(matches!(mlp.backward(&cache, &Matrix::zeros(2, 3)), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_loss_grad_gives_zero_gradients() {
        let mlp = Mlp::new(spec(&[3, 5, 2], OutputActivation::Softplus, 2)).unwrap();
        let batch = Matrix::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap();
        let cache = mlp.forward_cached(&batch).unwrap();
        let g = mlp.backward(&cache, &Matrix::zeros(1, 2)).unwrap();
        assert!(g.weights.iter().all(|w| w.as_slice().iter().all(|&v| v == 0.0)));
        assert!(g.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn linear_mse_gradient_matches_hand_derivation() {
        // L = (w x + b - y)^2  =>  dL/dw = 2 (yhat - y) x, dL/db = 2 (yhat - y)
        let layer = Layer {
            weights: Matrix::from_vec(1, 2, vec![0.5, -1.0]).unwrap(),
            biases: vec![0.25],
        };
        let mlp = Mlp::from_layers(spec(&[2, 1], OutputActivation::Identity, 0), vec![layer]).unwrap();
        let x = Matrix::from_rows(&[vec![2.0, 3.0]]).unwrap();
        let y = 1.0;
        let cache = mlp.forward_cached(&x).unwrap();
        let yhat = cache.output.get(0, 0);
        assert_eq!(yhat, 0.5 * 2.0 - 3.0 + 0.25);
        let g = mlp.backward(&cache, &Matrix::column(&[2.0 * (yhat - y)])).unwrap();
        assert_eq!(g.weights[0].as_slice(), &[2.0 * (yhat - y) * 2.0, 2.0 * (yhat - y) * 3.0]);
        assert_eq!(g.biases[0], vec![2.0 * (yhat - y)]);
    }
}
