//! Regression uncertainty heads.
//!
//! A single MLP on the frozen base model's penultimate features predicts five
//! non-negative values per input: the upper and lower residual-magnitude
//! quantiles `(q⁺, q⁻)` and the total, upper and lower MARs `(z, z⁺, z⁻)`.
//! The quantile heads give the split-point prediction interval
//! `[ŷ − q⁻, ŷ + q⁺]`; the MAR heads give the SDS and the factors that
//! inflate whichever side the harmonic identity says is too narrow.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;
use crate::nn::{self, Activation, Mlp, MlpSpec, OptimizerKind, OutputActivation, TrainConfig};
use crate::spa::{self, MarTriple, ResidualSets, SdsScore};

pub const HEAD_Q_UPPER: usize = 0;
pub const HEAD_Q_LOWER: usize = 1;
pub const HEAD_Z: usize = 2;
pub const HEAD_Z_UPPER: usize = 3;
pub const HEAD_Z_LOWER: usize = 4;
pub const NUM_HEADS: usize = 5;

/// Where the empirical coverage inside the QR loss is measured.
///
/// Per-batch coverage is noisy and settles a few points below `tau`; the full
/// set is re-measured every `coverage_refresh_steps` optimizer steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchCoverageMode {
    PerBatch,
    #[default]
    FullSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegUqConfig {
    pub tau_upper: f64,
    pub tau_lower: f64,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Linear decay target for the learning rate, as a fraction of `learning_rate`.
    pub final_lr_fraction: f64,
    pub batch_coverage_mode: BatchCoverageMode,
    /// In full-set mode, optimizer steps between coverage re-measurements.
    pub coverage_refresh_steps: usize,
}

impl Default for RegUqConfig {
    fn default() -> Self {
        Self {
            tau_upper: 0.95,
            tau_lower: 0.95,
            hidden_sizes: vec![64],
            activation: Activation::Relu,
            epochs: 300,
            batch_size: 128,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            final_lr_fraction: 0.1,
            batch_coverage_mode: BatchCoverageMode::FullSet,
            coverage_refresh_steps: 4,
        }
    }
}

impl RegUqConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, tau) in [("tau_upper", self.tau_upper), ("tau_lower", self.tau_lower)] {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {tau}")));
            }
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if self.coverage_refresh_steps == 0 {
            return Err(Error::Config("coverage_refresh_steps must be positive".into()));
        }
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            seed: self.seed.wrapping_add(1),
            final_lr_fraction: self.final_lr_fraction,
        }
    }

    pub fn mlp_spec(&self, feature_dim: usize) -> MlpSpec {
        let mut sizes = Vec::with_capacity(self.hidden_sizes.len() + 2);
        sizes.push(feature_dim);
        sizes.extend_from_slice(&self.hidden_sizes);
        sizes.push(NUM_HEADS);
        MlpSpec::new(sizes, self.activation, OutputActivation::Softplus, self.seed)
    }
}

/// Feature rows paired with a scalar target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    /// Row index into the source feature matrix.
    pub rows: Vec<usize>,
    pub features: Matrix,
    pub targets: Vec<f64>,
}

impl TrainingSet {
    fn from_pairs(features: &Matrix, pairs: &[(usize, f64)]) -> Self {
        let rows: Vec<usize> = pairs.iter().map(|&(i, _)| i).collect();
        Self {
            features: features.select_rows(&rows),
            targets: pairs.iter().map(|&(_, r)| r.abs()).collect(),
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// The five training sets; the quantile and MAR sets of one side hold the same rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RegTrainingSets {
    pub qr_upper: TrainingSet,
    pub qr_lower: TrainingSet,
    pub mar: TrainingSet,
    pub mar_upper: TrainingSet,
    pub mar_lower: TrainingSet,
}

pub fn build_reg_training_sets(features: &Matrix, residuals: &[f64]) -> Result<RegTrainingSets> {
    if features.rows() != residuals.len() {
        return Err(shape_err("build_reg_training_sets", features.rows(), residuals.len()));
    }
    let sets = ResidualSets::from_residuals(residuals)?;
    sets.require_both_sides()?;
    let upper = TrainingSet::from_pairs(features, &sets.upper);
    let lower = TrainingSet::from_pairs(features, &sets.lower);
    Ok(RegTrainingSets {
        qr_upper: upper.clone(),
        qr_lower: lower.clone(),
        mar: TrainingSet::from_pairs(features, &sets.all),
        mar_upper: upper,
        mar_lower: lower,
    })
}

/// Calibration-aware quantile loss. With empirical coverage `p̂ = mean 1{y ≤ q}`:
/// under-coverage penalises `mean (y − q)·1{y > q}`, over-coverage penalises
/// `mean (q − y)·1{y < q}`, and exact coverage costs nothing.
/// Returns the loss and its gradient with respect to each predicted quantile.
pub fn qr_loss(predicted: &[f64], targets: &[f64], tau: f64) -> Result<(f64, Vec<f64>)> {
    if predicted.len() != targets.len() {
        return Err(shape_err("qr_loss", predicted.len(), targets.len()));
    }
    let coverage = empirical_coverage(predicted, targets);
    qr_loss_at_coverage(predicted, targets, tau, coverage)
}

pub fn empirical_coverage(predicted: &[f64], targets: &[f64]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(targets).filter(|(q, y)| y <= q).count() as f64 / predicted.len() as f64
}

/// [`qr_loss`] with the coverage supplied by the caller (e.g. measured on the full set).
pub fn qr_loss_at_coverage(predicted: &[f64], targets: &[f64], tau: f64, coverage: f64) -> Result<(f64, Vec<f64>)> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!("tau must lie in (0, 1), got {tau}")));
    }
    let n = predicted.len();
    let mut grad = vec![0.0; n];
    if n == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / n as f64;
    let mut loss = 0.0;
    if coverage < tau {
        for ((g, &q), &y) in grad.iter_mut().zip(predicted).zip(targets) {
            if y > q {
                loss += (y - q) * inv;
                *g = -inv;
            }
        }
    } else if coverage > tau {
        for ((g, &q), &y) in grad.iter_mut().zip(predicted).zip(targets) {
            if y < q {
                loss += (q - y) * inv;
                *g = inv;
            }
        }
    }
    Ok((loss, grad))
}

/// Five-head loss for one batch.
///
/// `abs_residuals[i]` and `signs[i]` (`+1`/`-1`) describe batch row `i`; `outputs`
/// is `b x 5` in residual units. Side losses only see rows of their side.
/// `coverage` overrides the per-batch empirical coverage of the two quantile heads.
pub fn five_head_loss(
    outputs: &Matrix,
    abs_residuals: &[f64],
    signs: &[f64],
    tau_upper: f64,
    tau_lower: f64,
    coverage: Option<(f64, f64)>,
) -> Result<(f64, Matrix)> {
    let b = outputs.rows();
    if outputs.cols() != NUM_HEADS || abs_residuals.len() != b || signs.len() != b {
        return Err(shape_err("five_head_loss", format!("{b}x{NUM_HEADS}"), format!("{b}x{}", outputs.cols())));
    }
    let mut grad = Matrix::zeros(b, NUM_HEADS);
    let mut loss = 0.0;

    let inv_b = 1.0 / b.max(1) as f64;
    for i in 0..b {
        let d = outputs.get(i, HEAD_Z) - abs_residuals[i];
        loss += d * d * inv_b;
        grad.set(i, HEAD_Z, 2.0 * d * inv_b);
    }

    for (sign, q_head, z_head, tau, cov) in [
        (1.0, HEAD_Q_UPPER, HEAD_Z_UPPER, tau_upper, coverage.map(|c| c.0)),
        (-1.0, HEAD_Q_LOWER, HEAD_Z_LOWER, tau_lower, coverage.map(|c| c.1)),
    ] {
        let rows: Vec<usize> = (0..b).filter(|&i| signs[i] == sign).collect();
        if rows.is_empty() {
            continue;
        }
        let inv = 1.0 / rows.len() as f64;
        let q: Vec<f64> = rows.iter().map(|&i| outputs.get(i, q_head)).collect();
        let y: Vec<f64> = rows.iter().map(|&i| abs_residuals[i]).collect();
        let cov = cov.unwrap_or_else(|| empirical_coverage(&q, &y));
        let (l, g) = qr_loss_at_coverage(&q, &y, tau, cov)?;
        loss += l;
        for (&i, gi) in rows.iter().zip(g) {
            grad.set(i, q_head, gi);
        }
        for &i in &rows {
            let d = outputs.get(i, z_head) - abs_residuals[i];
            loss += d * d * inv;
            grad.set(i, z_head, 2.0 * d * inv);
        }
    }
    Ok((loss, grad))
}

/// Trained five-head network. Heads are fitted to residuals divided by
/// `residual_scale` (the training MAR) and mapped back on prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct RegUqNet {
    pub mlp: Mlp,
    pub residual_scale: f64,
    pub tau_upper: f64,
    pub tau_lower: f64,
}

/// Serializable description of a [`RegUqNet`] apart from its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegUqMeta {
    pub spec: MlpSpec,
    pub residual_scale: f64,
    pub tau_upper: f64,
    pub tau_lower: f64,
}

impl RegUqNet {
    pub fn meta(&self) -> RegUqMeta {
        RegUqMeta {
            spec: self.mlp.spec.clone(),
            residual_scale: self.residual_scale,
            tau_upper: self.tau_upper,
            tau_lower: self.tau_lower,
        }
    }

    pub fn from_parts(mlp: Mlp, meta: &RegUqMeta) -> Result<Self> {
        if mlp.output_dim() != NUM_HEADS {
            return Err(shape_err("RegUqNet", NUM_HEADS, mlp.output_dim()));
        }
        if !(meta.residual_scale > 0.0 && meta.residual_scale.is_finite()) {
            return Err(Error::Format(format!("invalid residual scale {}", meta.residual_scale)));
        }
        Ok(Self {
            mlp,
            residual_scale: meta.residual_scale,
            tau_upper: meta.tau_upper,
            tau_lower: meta.tau_lower,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.mlp.input_dim()
    }
}

/// Split-point training targets of the nonzero-residual rows, in residual-scale units.
pub(crate) struct ScaledTargets {
    pub rows: Vec<usize>,
    pub abs: Vec<f64>,
    pub signs: Vec<f64>,
    pub scale: f64,
}

pub(crate) fn scaled_targets(residuals: &[f64]) -> Result<ScaledTargets> {
    let sets = ResidualSets::from_residuals(residuals)?;
    sets.require_both_sides()?;
    let scale = spa::empirical_mars(&sets)?.total;
    Ok(ScaledTargets {
        rows: sets.all.iter().map(|&(i, _)| i).collect(),
        abs: sets.all.iter().map(|&(_, r)| r.abs() / scale).collect(),
        signs: sets.all.iter().map(|&(_, r)| r.signum()).collect(),
        scale,
    })
}

/// Full-set coverage of both quantile heads.
pub(crate) fn full_set_coverage(mlp: &Mlp, features: &Matrix, abs: &[f64], signs: &[f64]) -> Result<(f64, f64)> {
    let out = mlp.forward(features)?;
    let side = |s: f64, head: usize| {
        let (mut hit, mut n) = (0usize, 0usize);
        for i in 0..abs.len() {
            if signs[i] == s {
                n += 1;
                if abs[i] <= out.get(i, head) {
                    hit += 1;
                }
            }
        }
        hit as f64 / n.max(1) as f64
    };
    Ok((side(1.0, HEAD_Q_UPPER), side(-1.0, HEAD_Q_LOWER)))
}

/// Train the five-head network on frozen features and base-model residuals `y − ŷ`.
pub fn train_reg_uq(features: &Matrix, residuals: &[f64], config: &RegUqConfig) -> Result<RegUqNet> {
    config.validate()?;
    if features.rows() != residuals.len() {
        return Err(shape_err("train_reg_uq", features.rows(), residuals.len()));
    }
    let targets = scaled_targets(residuals)?;
    let x = features.select_rows(&targets.rows);
    let mut mlp = Mlp::new(config.mlp_spec(features.cols()))?;
    let mode = config.batch_coverage_mode;
    let (tau_u, tau_l) = (config.tau_upper, config.tau_lower);

    let mut full_cov = None;
    let mut steps = 0usize;
    let mut opt = config.train_config().optimizer_for(&mlp)?;
    let mut schedule = nn::train::BatchSchedule::new(x.rows(), config.batch_size, config.train_config().seed);
    for epoch in 0..config.epochs {
        opt.learning_rate = config.train_config().learning_rate_at(epoch);
        for idx in schedule.epoch() {
            if mode == BatchCoverageMode::FullSet && steps % config.coverage_refresh_steps == 0 {
                full_cov = Some(full_set_coverage(&mlp, &x, &targets.abs, &targets.signs)?);
            }
            let xb = x.select_rows(&idx);
            let cache = mlp.forward_cached(&xb)?;
            let abs: Vec<f64> = idx.iter().map(|&i| targets.abs[i]).collect();
            let signs: Vec<f64> = idx.iter().map(|&i| targets.signs[i]).collect();
            let (loss, grad) = five_head_loss(&cache.output, &abs, &signs, tau_u, tau_l, full_cov)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            let grads = mlp.backward(&cache, &grad)?;
            opt.step(&mut mlp, &grads)?;
            steps += 1;
        }
    }
    log::debug!("reg-uq trained: {steps} steps, residual scale {:.4}", targets.scale);
    Ok(RegUqNet {
        mlp,
        residual_scale: targets.scale,
        tau_upper: tau_u,
        tau_lower: tau_l,
    })
}

/// Five head values for one input, in the units of the residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegUqOutput {
    pub q_upper: f64,
    pub q_lower: f64,
    pub z: f64,
    pub z_upper: f64,
    pub z_lower: f64,
}

impl RegUqOutput {
    fn from_row(row: &[f64], scale: f64) -> Self {
        Self {
            q_upper: row[HEAD_Q_UPPER] * scale,
            q_lower: row[HEAD_Q_LOWER] * scale,
            z: row[HEAD_Z] * scale,
            z_upper: row[HEAD_Z_UPPER] * scale,
            z_lower: row[HEAD_Z_LOWER] * scale,
        }
    }

    pub fn to_array(&self) -> [f64; NUM_HEADS] {
        [self.q_upper, self.q_lower, self.z, self.z_upper, self.z_lower]
    }

    pub fn mars(&self) -> MarTriple {
        MarTriple {
            total: self.z,
            upper: self.z_upper,
            lower: self.z_lower,
        }
    }

    pub fn sds(&self) -> Result<SdsScore> {
        spa::sds(&self.mars())
    }
}

pub fn predict_reg_uq(net: &RegUqNet, feature: &[f64]) -> Result<RegUqOutput> {
    if feature.len() != net.feature_dim() {
        return Err(shape_err("predict_reg_uq", net.feature_dim(), feature.len()));
    }
    let out = net.mlp.forward(&Matrix::from_vec(1, feature.len(), feature.to_vec())?)?;
    Ok(RegUqOutput::from_row(out.row(0), net.residual_scale))
}

pub fn predict_reg_uq_batch(net: &RegUqNet, features: &Matrix) -> Result<Vec<RegUqOutput>> {
    let out = net.mlp.forward(features)?;
    Ok(out.iter_rows().map(|r| RegUqOutput::from_row(r, net.residual_scale)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub lower: f64,
    pub upper: f64,
    pub calibrated: bool,
    pub scale_upper: f64,
    pub scale_lower: f64,
}

impl PredictionInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }
}

/// `[ŷ − q⁻, ŷ + q⁺]`.
pub fn spi(point_prediction: f64, out: &RegUqOutput) -> PredictionInterval {
    PredictionInterval {
        lower: point_prediction - out.q_lower,
        upper: point_prediction + out.q_upper,
        calibrated: false,
        scale_upper: 1.0,
        scale_lower: 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFactors {
    pub upper: f64,
    pub lower: f64,
}

pub const DEFAULT_FACTOR_EPSILON: f64 = 1e-8;

/// Interval inflation implied by the harmonic identity.
///
/// Solving `z = H(z⁺, z⁻)` for one side gives `z⁺_C = z·z⁻/(2z⁻ − z)` and
/// `z⁻_C = z·z⁺/(2z⁺ − z)`; each factor is `max(z±, z±_C)/z±`. A side whose
/// denominator or MAR is at most `epsilon`, or whose implied MAR is not
/// positive, is left unscaled.
pub fn calibration_factors(out: &RegUqOutput, epsilon: f64) -> CalibrationFactors {
    let factor = |side: f64, other: f64| -> f64 {
        let denom = 2.0 * other - out.z;
        if side <= epsilon || denom <= epsilon || !denom.is_finite() {
            return 1.0;
        }
        let implied = out.z * other / denom;
        if !(implied > 0.0) || !implied.is_finite() {
            return 1.0;
        }
        side.max(implied) / side
    };
    CalibrationFactors {
        upper: factor(out.z_upper, out.z_lower),
        lower: factor(out.z_lower, out.z_upper),
    }
}

/// `[ŷ − s⁻·q⁻, ŷ + s⁺·q⁺]`.
pub fn calibrated_spi(point_prediction: f64, out: &RegUqOutput, factors: &CalibrationFactors) -> PredictionInterval {
    PredictionInterval {
        lower: point_prediction - factors.lower * out.q_lower,
        upper: point_prediction + factors.upper * out.q_upper,
        calibrated: true,
        scale_upper: factors.upper,
        scale_lower: factors.lower,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out(q_upper: f64, q_lower: f64, z: f64, z_upper: f64, z_lower: f64) -> RegUqOutput {
        RegUqOutput {
            q_upper,
            q_lower,
            z,
            z_upper,
            z_lower,
        }
    }

    #[test]
    fn training_sets_by_definition() {
        let h = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]]).unwrap();
        let sets = build_reg_training_sets(&h, &[2.0, -3.0, 0.0]).unwrap();
        assert_eq!(sets.qr_upper.rows, vec![0]);
        assert_eq!(sets.qr_upper.targets, vec![2.0]);
        assert_eq!(sets.qr_upper.features.row(0), &[0.0, 1.0]);
        assert_eq!(sets.qr_lower.rows, vec![1]);
        assert_eq!(sets.qr_lower.targets, vec![3.0]);
        assert_eq!(sets.mar.rows, vec![0, 1]);
        assert_eq!(sets.mar.targets, vec![2.0, 3.0]);
        assert_eq!(sets.mar_upper, sets.qr_upper);
        assert_eq!(sets.mar_lower, sets.qr_lower);
    }

    #[test]
    fn one_sided_residuals_name_lower_side() {
        let h = Matrix::zeros(2, 1);
        let err = build_reg_training_sets(&h, &[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::SideUndefined(crate::error::Side::Lower)));
    }

    #[test]
    fn duplicate_features_keep_both_targets() {
        let h = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let sets = build_reg_training_sets(&h, &[0.5, -0.5]).unwrap();
        assert_eq!(sets.mar.targets, vec![0.5, 0.5]);
    }

    #[test]
    fn qr_loss_full_coverage_branch() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let q = [5.0; 4];
        let (l, g) = qr_loss(&q, &y, 0.95).unwrap();
        assert!((l - (4.0 + 3.0 + 2.0 + 1.0) / 4.0).abs() < 1e-15);
        assert_eq!(g, vec![0.25; 4]);
    }

    #[test]
    fn qr_loss_exact_coverage_is_zero() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let (l, g) = qr_loss(&[3.0; 4], &y, 0.75).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn qr_loss_undercoverage_branch() {
        let (l, g) = qr_loss(&[2.0; 4], &[1.0, 2.0, 3.0, 4.0], 0.95).unwrap();
        assert!((l - 0.75).abs() < 1e-15);
        assert_eq!(g, vec![0.0, 0.0, -0.25, -0.25]);
    }

    #[test]
    fn qr_loss_rejects_bad_tau() {
        assert!(matches!(qr_loss(&[1.0], &[1.0], 1.0), Err(Error::Domain(_))));
        assert!(matches!(qr_loss(&[1.0], &[1.0], 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn spi_cases() {
        let pi = spi(10.0, &out(2.0, 3.0, 1.0, 1.0, 1.0));
        assert_eq!((pi.lower, pi.upper, pi.calibrated), (7.0, 12.0, false));
        let pi = spi(4.0, &out(0.0, 0.0, 1.0, 1.0, 1.0));
        assert_eq!((pi.lower, pi.upper), (4.0, 4.0));
        let pi = spi(-1.0, &out(2.5, 2.5, 1.0, 1.0, 1.0));
        assert_eq!((pi.lower + pi.upper) / 2.0, -1.0);
    }

    #[test]
    fn factors_at_consistency_fixed_point() {
        let f = calibration_factors(&out(1.0, 1.0, 4.0 / 3.0, 1.0, 2.0), DEFAULT_FACTOR_EPSILON);
        assert!((f.upper - 1.0).abs() < 1e-12 && (f.lower - 1.0).abs() < 1e-12, "{f:?}");
    }

    #[test]
    fn factors_inflate_when_total_exceeds_harmonic() {
        let f = calibration_factors(&out(1.0, 1.0, 1.2, 1.0, 1.0), DEFAULT_FACTOR_EPSILON);
        assert!((f.upper - 1.5).abs() < 1e-12);
        assert!((f.lower - 1.5).abs() < 1e-12);
    }

    #[test]
    fn factors_guard_singular_denominator() {
        // 2 z- - z = 0
        let f = calibration_factors(&out(1.0, 1.0, 2.0, 3.0, 1.0), DEFAULT_FACTOR_EPSILON);
        assert_eq!(f.upper, 1.0);
        let f = calibration_factors(&out(1.0, 1.0, 1.0, 0.0, 1.0), DEFAULT_FACTOR_EPSILON);
        assert_eq!(f.upper, 1.0);
    }

    #[test]
    fn calibrated_spi_cases() {
        let o = out(1.0, 1.0, 1.0, 1.0, 1.0);
        let same = calibrated_spi(3.0, &o, &CalibrationFactors { upper: 1.0, lower: 1.0 });
        let plain = spi(3.0, &o);
        assert_eq!((same.lower, same.upper), (plain.lower, plain.upper));
        assert!(same.calibrated);
        let pi = calibrated_spi(0.0, &o, &CalibrationFactors { upper: 1.5, lower: 2.0 });
        assert_eq!((pi.lower, pi.upper), (-2.0, 1.5));
    }

    #[test]
    fn five_head_loss_masks_sides() {
        let outputs = Matrix::from_rows(&[vec![1.0; 5], vec![1.0; 5]]).unwrap();
        let (_, g) = five_head_loss(&outputs, &[2.0, 3.0], &[1.0, -1.0], 0.9, 0.9, None).unwrap();
        // row 0 is upper: no gradient on lower heads
        assert_eq!(g.get(0, HEAD_Q_LOWER), 0.0);
        assert_eq!(g.get(0, HEAD_Z_LOWER), 0.0);
        assert_eq!(g.get(1, HEAD_Q_UPPER), 0.0);
        assert_eq!(g.get(1, HEAD_Z_UPPER), 0.0);
        assert_eq!(g.get(0, HEAD_Z_UPPER), 2.0 * (1.0 - 2.0));
        assert_eq!(g.get(0, HEAD_Z), 2.0 * (1.0 - 2.0) / 2.0);
    }
}
