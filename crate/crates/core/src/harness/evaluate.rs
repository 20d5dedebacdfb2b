//! Test-split evaluation of one trial.
//!
//! Metric names: the plain name is over the whole test split, `_id` restricts
//! to in-distribution rows, `_calib` uses calibrated intervals or probabilities
//! (`_calib_id` both).

use serde::{Deserialize, Serialize};

use crate::base::{BaseClassifier, BaseRegressor};
use crate::cls_uq::{self, CalibrationNet, TotalMarNet};
use crate::data::{self, Dataset, Split};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Task};
use crate::harness::stages::TrialContext;
use crate::metrics::{self, MetricReport};
use crate::reg_uq::{self, RegUqNet};
use crate::spa;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSample {
    /// Row index in the trial's dataset.
    pub row: usize,
    /// Raw (unstandardized) features.
    pub x: Vec<f64>,
    pub y: f64,
    pub y_hat: f64,
    pub lower: f64,
    pub upper: f64,
    pub lower_calib: f64,
    pub upper_calib: f64,
    pub q_upper: f64,
    pub q_lower: f64,
    pub z: f64,
    pub z_upper: f64,
    pub z_lower: f64,
    pub scale_upper: f64,
    pub scale_lower: f64,
    pub sds: f64,
    pub in_distribution: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ood_flag: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSample {
    pub row: usize,
    pub x: Vec<f64>,
    pub label: usize,
    pub predicted: usize,
    pub confidence: f64,
    pub predicted_calib: usize,
    pub confidence_calib: f64,
    pub probabilities: Vec<f64>,
    /// Clamped corrected values, not renormalised.
    pub probabilities_calib: Vec<f64>,
    pub entropy: f64,
    pub entropy_calib: f64,
    pub sds: f64,
    pub delta_c: f64,
    pub gate_applied: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ood_flag: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Samples {
    Regression(Vec<RegressionSample>),
    Classification(Vec<ClassificationSample>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEvaluation {
    pub trial: usize,
    pub seed: u64,
    pub task: Task,
    /// SDS cutoff from the validation split, when it is large enough.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ood_cutoff: Option<f64>,
    pub metrics: MetricReport,
    pub samples: Samples,
}

fn ood_cutoff(scores: &[f64], alpha: f64) -> Result<Option<spa::OodThreshold>> {
    match spa::ood_threshold(scores, alpha) {
        Ok(t) => Ok(Some(t)),
        Err(Error::InsufficientData { needed, have }) => {
            log::warn!("validation split has {have} rows (< {needed}); no OOD threshold");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Insert a metric, skipping values that are undefined for this subset
/// (an empty side, a constant score) instead of failing the trial.
fn try_insert(report: &mut MetricReport, name: &str, value: Result<f64>) -> Result<()> {
    match value {
        Ok(v) => report.insert(name, v),
        Err(Error::SideUndefined(_) | Error::InsufficientData { .. }) => Ok(()),
        Err(Error::Numeric(m)) | Err(Error::Domain(m)) => {
            log::debug!("metric {name} skipped: {m}");
            Ok(())
        }
        Err(e) => Err(e),
    }
}

fn mean(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

fn pick<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

pub fn evaluate_regression(
    config: &ExperimentConfig,
    ctx: &TrialContext,
    raw: &Dataset,
    base: &BaseRegressor,
    uq: &RegUqNet,
) -> Result<TrialEvaluation> {
    let ds = data::standardize(raw)?;
    let predict = |split: Split| -> Result<(Vec<usize>, Vec<f64>, Vec<reg_uq::RegUqOutput>)> {
        let rows = ds.indices(split);
        let (x, _) = ds.subset(split);
        if rows.is_empty() {
            return Ok((rows, Vec::new(), Vec::new()));
        }
        let out = base.predict(&x)?;
        let heads = reg_uq::predict_reg_uq_batch(uq, &out.features)?;
        Ok((rows, out.predictions.as_slice().to_vec(), heads))
    };

    let (_, _, val_heads) = predict(Split::Val)?;
    let val_sds = val_heads.iter().map(|h| h.sds().map(|s| s.value())).collect::<Result<Vec<_>>>()?;
    let threshold = ood_cutoff(&val_sds, config.ood_alpha)?;

    let (rows, preds, heads) = predict(Split::Test)?;
    let n = rows.len();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let (row, h, p) = (rows[i], &heads[i], preds[i]);
        let plain = reg_uq::spi(p, h);
        let factors = reg_uq::calibration_factors(h, reg_uq::DEFAULT_FACTOR_EPSILON);
        let cal = reg_uq::calibrated_spi(p, h, &factors);
        let sds = h.sds()?.value();
        samples.push(RegressionSample {
            row,
            x: raw.features.row(row).to_vec(),
            y: raw.targets.get(row, 0),
            y_hat: p,
            lower: plain.lower,
            upper: plain.upper,
            lower_calib: cal.lower,
            upper_calib: cal.upper,
            q_upper: h.q_upper,
            q_lower: h.q_lower,
            z: h.z,
            z_upper: h.z_upper,
            z_lower: h.z_lower,
            scale_upper: factors.upper,
            scale_lower: factors.lower,
            sds,
            in_distribution: raw.in_distribution[row],
            ood_flag: threshold.map(|t| t.flag(sds)),
        });
    }

    let ys: Vec<f64> = samples.iter().map(|s| s.y).collect();
    let yh: Vec<f64> = samples.iter().map(|s| s.y_hat).collect();
    let plain: Vec<(f64, f64)> = samples.iter().map(|s| (s.lower, s.upper)).collect();
    let calib: Vec<(f64, f64)> = samples.iter().map(|s| (s.lower_calib, s.upper_calib)).collect();
    let sds: Vec<f64> = samples.iter().map(|s| s.sds).collect();
    let all: Vec<usize> = (0..n).collect();
    let id: Vec<usize> = (0..n).filter(|&i| samples[i].in_distribution).collect();
    let ood: Vec<usize> = (0..n).filter(|&i| !samples[i].in_distribution).collect();

    let alpha = config.interval_alpha();
    let (tu, tl) = (uq.tau_upper, uq.tau_lower);
    let mut report = MetricReport::new(n);
    let subsets: Vec<(&str, &[usize])> = if ood.is_empty() {
        vec![("", &all)]
    } else {
        vec![("", &all), ("_id", &id)]
    };
    for (suffix, idx) in subsets {
        if idx.is_empty() {
            continue;
        }
        let (y, p) = (pick(&ys, idx), pick(&yh, idx));
        report.insert(format!("rmse{suffix}"), metrics::rmse(&p, &y)?)?;
        for (tag, ints) in [("", &plain), ("_calib", &calib)] {
            let iv = pick(ints, idx);
            let name = |m: &str| format!("{m}{tag}{suffix}");
            report.insert(name("picp"), metrics::picp(&iv, &y)?)?;
            report.insert(name("winkler"), metrics::winkler(&iv, &y, alpha)?)?;
            report.insert(name("mean_width"), mean(&iv.iter().map(|(l, u)| u - l).collect::<Vec<_>>())?)?;
            report.insert_binned(name("piece"), metrics::piece(&iv, &y, alpha, config.piece_bins)?)?;
            match metrics::split_coverage(&iv, &p, &y) {
                Ok(c) => {
                    report.insert(name("coverage_upper"), c.upper)?;
                    report.insert(name("coverage_lower"), c.lower)?;
                    report.insert(name("piece_plus"), (c.upper - tu).abs())?;
                    report.insert(name("piece_minus"), (c.lower - tl).abs())?;
                }
                Err(Error::SideUndefined(_)) => {}
                Err(e) => return Err(e),
            }
        }
        let col = |f: fn(&RegressionSample) -> f64| mean(&idx.iter().map(|&i| f(&samples[i])).collect::<Vec<_>>());
        report.insert(format!("z_mean{suffix}"), col(|s| s.z)?)?;
        report.insert(format!("z_upper_mean{suffix}"), col(|s| s.z_upper)?)?;
        report.insert(format!("z_lower_mean{suffix}"), col(|s| s.z_lower)?)?;
        report.insert(format!("sds_mean{suffix}"), col(|s| s.sds)?)?;
        let err: Vec<f64> = y.iter().zip(&p).map(|(a, b)| (a - b).abs()).collect();
        try_insert(&mut report, &format!("spearman_sds_error{suffix}"), metrics::spearman(&pick(&sds, idx), &err))?;
    }
    if !id.is_empty() && !ood.is_empty() {
        report.insert("auroc_ood", metrics::auroc(&pick(&sds, &ood), &pick(&sds, &id))?)?;
    }
    if let Some(t) = threshold {
        report.insert("ood_cutoff", t.cutoff)?;
        for (name, idx) in [("ood_flag_rate_id", &id), ("ood_flag_rate_ood", &ood)] {
            if !idx.is_empty() {
                let flagged = idx.iter().filter(|&&i| t.flag(sds[i])).count();
                report.insert(name, flagged as f64 / idx.len() as f64)?;
            }
        }
    }
    Ok(TrialEvaluation {
        trial: ctx.index,
        seed: ctx.seed,
        task: Task::Regression,
        ood_cutoff: threshold.map(|t| t.cutoff),
        metrics: report,
        samples: Samples::Regression(samples),
    })
}

pub fn evaluate_classification(
    config: &ExperimentConfig,
    ctx: &TrialContext,
    raw: &Dataset,
    base: &BaseClassifier,
    total: &TotalMarNet,
    calibration: &CalibrationNet,
) -> Result<TrialEvaluation> {
    let ds = data::standardize(raw)?;
    let delta_0 = config.cls_uq.delta_0;
    let scores = |split: Split| -> Result<(Vec<usize>, crate::Matrix, crate::Matrix, crate::Matrix)> {
        let rows = ds.indices(split);
        let (x, _) = ds.subset(split);
        let out = base.predict(&x)?;
        let z = total.predict(&out.features)?;
        Ok((rows, out.predictions, out.features, z))
    };

    let (val_rows, val_p, _, val_z) = scores(Split::Val)?;
    let val_sds = (0..val_rows.len())
        .map(|i| spa::sds_classification(val_p.row(i), val_z.row(i)).map(|s| s.value()))
        .collect::<Result<Vec<_>>>()?;
    let threshold = ood_cutoff(&val_sds, config.ood_alpha)?;

    let (rows, probs, feats, z) = scores(Split::Test)?;
    let cal = calibration.predict(&feats)?;
    let labels = raw.labels();
    let mut samples = Vec::with_capacity(rows.len());
    for (i, &row) in rows.iter().enumerate() {
        let p = probs.row(i);
        let (predicted, confidence) = cls_uq::argmax(p);
        let gate = cls_uq::calibration_quality(&cal[i], delta_0)?;
        let cp = cls_uq::calibrate_prediction(p, &cal[i], &gate)?;
        let (predicted_calib, confidence_calib) = cls_uq::argmax(&cp.raw);
        let sds = spa::sds_classification(p, z.row(i))?.value();
        samples.push(ClassificationSample {
            row,
            x: raw.features.row(row).to_vec(),
            label: labels[row],
            predicted,
            confidence,
            predicted_calib,
            confidence_calib,
            probabilities: p.to_vec(),
            entropy: cls_uq::predictive_entropy(p)?,
            entropy_calib: cls_uq::predictive_entropy(&cp.normalized)?,
            probabilities_calib: cp.raw,
            sds,
            delta_c: gate.delta_c,
            gate_applied: gate.applied,
            ood_flag: threshold.map(|t| t.flag(sds)),
        });
    }

    let n = samples.len();
    let mut report = MetricReport::new(n);
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let pred: Vec<usize> = samples.iter().map(|s| s.predicted).collect();
    let pred_c: Vec<usize> = samples.iter().map(|s| s.predicted_calib).collect();
    let correct: Vec<bool> = samples.iter().map(|s| s.predicted == s.label).collect();
    let correct_c: Vec<bool> = samples.iter().map(|s| s.predicted_calib == s.label).collect();
    let col = |f: fn(&ClassificationSample) -> f64| samples.iter().map(f).collect::<Vec<f64>>();
    let sds = col(|s| s.sds);
    report.insert("accuracy", metrics::accuracy(&pred, &labels)?)?;
    report.insert("accuracy_calib", metrics::accuracy(&pred_c, &labels)?)?;
    report.insert_binned("ece", metrics::ece(&col(|s| s.confidence), &correct, config.ece_bins)?)?;
    report.insert_binned("ece_calib", metrics::ece(&col(|s| s.confidence_calib), &correct_c, config.ece_bins)?)?;
    report.insert("gate_rate", mean(&col(|s| f64::from(u8::from(s.gate_applied))))?)?;
    report.insert("delta_c_mean", mean(&col(|s| s.delta_c))?)?;
    report.insert("entropy_mean", mean(&col(|s| s.entropy))?)?;
    report.insert("entropy_calib_mean", mean(&col(|s| s.entropy_calib))?)?;
    report.insert("sds_mean", mean(&sds)?)?;
    let wrong: Vec<bool> = correct.iter().map(|c| !c).collect();
    if wrong.iter().any(|&w| w) && correct.iter().any(|&c| c) {
        report.insert("auroc_error", metrics::auroc_labeled(&sds, &wrong)?)?;
    }
    let err: Vec<f64> = wrong.iter().map(|&w| f64::from(u8::from(w))).collect();
    try_insert(&mut report, "spearman_sds_error", metrics::spearman(&sds, &err))?;
    if let Some(t) = threshold {
        report.insert("ood_cutoff", t.cutoff)?;
        report.insert("ood_flag_rate", sds.iter().filter(|&&s| t.flag(s)).count() as f64 / n.max(1) as f64)?;
    }
    Ok(TrialEvaluation {
        trial: ctx.index,
        seed: ctx.seed,
        task: Task::Classification,
        ood_cutoff: threshold.map(|t| t.cutoff),
        metrics: report,
        samples: Samples::Classification(samples),
    })
}
