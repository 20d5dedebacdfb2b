//! Split-point analysis.
//!
//! Residuals `r = y - ŷ` are split by sign into an upper set (`r > 0`,
//! underestimation) and a lower set (`r < 0`, overestimation); exact zeros are
//! counted and left out. From those sets come the three mean absolute residuals
//! (total, upper, lower). When the split point is the mean, the total equals the
//! harmonic mean of the two side values; the self-consistency discrepancy score
//! (SDS) measures how far a MAR triple is from that identity without dividing:
//!
//! ```text
//! SDS = | 2·MAR⁺·MAR⁻ − MAR·(MAR⁺ + MAR⁻) |
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result, Side};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualSets {
    /// Every nonzero residual with its row index.
    pub all: Vec<(usize, f64)>,
    pub upper: Vec<(usize, f64)>,
    pub lower: Vec<(usize, f64)>,
    pub zero_count: usize,
}

impl ResidualSets {
    pub fn from_residuals(residuals: &[f64]) -> Result<Self> {
        let mut sets = ResidualSets::default();
        for (i, &r) in residuals.iter().enumerate() {
            if r.is_nan() {
                return Err(Error::Numeric(format!("NaN residual at row {i}")));
            }
            if r > 0.0 {
                sets.upper.push((i, r));
                sets.all.push((i, r));
            } else if r < 0.0 {
                sets.lower.push((i, r));
                sets.all.push((i, r));
            } else {
                sets.zero_count += 1;
            }
        }
        Ok(sets)
    }

    pub fn len(&self) -> usize {
        self.all.len() + self.zero_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fails with the name of the first empty side.
    pub fn require_both_sides(&self) -> Result<()> {
        if self.upper.is_empty() {
            return Err(Error::SideUndefined(Side::Upper));
        }
        if self.lower.is_empty() {
            return Err(Error::SideUndefined(Side::Lower));
        }
        Ok(())
    }
}

/// Residuals `targets - predictions`, partitioned by sign.
pub fn partition_residuals(predictions: &[f64], targets: &[f64]) -> Result<ResidualSets> {
    if predictions.len() != targets.len() {
        return Err(shape_err("partition_residuals", predictions.len(), targets.len()));
    }
    if let Some(i) = predictions.iter().chain(targets).position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite value at position {}", i % predictions.len().max(1))));
    }
    let residuals: Vec<f64> = targets.iter().zip(predictions).map(|(y, p)| y - p).collect();
    ResidualSets::from_residuals(&residuals)
}

/// Total, upper-side and lower-side mean absolute residuals (or deviations).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarTriple {
    pub total: f64,
    pub upper: f64,
    pub lower: f64,
}

impl MarTriple {
    pub fn new(total: f64, upper: f64, lower: f64) -> Result<Self> {
        let t = Self { total, upper, lower };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("total", self.total), ("upper", self.upper), ("lower", self.lower)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Numeric(format!("{name} MAR must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

pub fn empirical_mars(sets: &ResidualSets) -> Result<MarTriple> {
    sets.require_both_sides()?;
    let mean = |xs: &[(usize, f64)], f: fn(f64) -> f64| xs.iter().map(|&(_, r)| f(r)).sum::<f64>() / xs.len() as f64;
    Ok(MarTriple {
        total: mean(&sets.all, f64::abs),
        upper: mean(&sets.upper, |r| r),
        lower: mean(&sets.lower, |r| -r),
    })
}

/// `2ab / (a + b)`.
pub fn harmonic_mean(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!("harmonic mean needs positive finite inputs, got ({a}, {b})")));
    }
    Ok(2.0 * a * b / (a + b))
}

/// Mean absolute deviations of `samples` around split point `t` (values equal to `t` excluded).
pub fn split_deviations(t: f64, samples: &[f64]) -> Result<MarTriple> {
    let residuals: Vec<f64> = samples.iter().map(|y| y - t).collect();
    empirical_mars(&ResidualSets::from_residuals(&residuals)?)
}

/// `|MAD − H(MAD⁺, MAD⁻)|` of the empirical distribution of `samples` around `t`.
pub fn self_consistency_discrepancy(t: f64, samples: &[f64]) -> Result<f64> {
    let d = split_deviations(t, samples)?;
    Ok((d.total - harmonic_mean(d.upper, d.lower)?).abs())
}

/// Self-consistency discrepancy score.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SdsScore(pub f64);

impl SdsScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Division-free discrepancy of one MAR triple.
#[inline]
pub fn sds_raw(total: f64, upper: f64, lower: f64) -> f64 {
    (2.0 * upper * lower - total * (upper + lower)).abs()
}

pub fn sds(mars: &MarTriple) -> Result<SdsScore> {
    mars.validate()?;
    Ok(SdsScore(sds_raw(mars.total, mars.upper, mars.lower)))
}

/// Classification SDS: per class the side MARs are `1 − ŷ_k` and `ŷ_k`, so the
/// per-class term reduces to `|2ŷ_k(1 − ŷ_k) − z_k|`; classes are summed (L1).
pub fn sds_classification(softmax: &[f64], z_total: &[f64]) -> Result<SdsScore> {
    if softmax.len() != z_total.len() {
        return Err(shape_err("sds_classification", softmax.len(), z_total.len()));
    }
    let sum: f64 = softmax.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || softmax.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Domain(format!("not a probability vector (sum {sum})")));
    }
    if z_total.iter().any(|z| !z.is_finite() || *z < 0.0) {
        return Err(Error::Numeric("total MAR estimates must be finite and non-negative".into()));
    }
    let s = softmax
        .iter()
        .zip(z_total)
        .map(|(&p, &z)| sds_raw(z, 1.0 - p, p))
        .sum();
    Ok(SdsScore(s))
}

/// Sample quantile with linear interpolation between order statistics (Hyndman–Fan type 7).
pub fn quantile_type7(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("quantile level must lie in [0, 1], got {p}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub const MIN_REFERENCE_SCORES: usize = 20;

/// Cutoff on SDS derived from an in-distribution reference sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodThreshold {
    pub cutoff: f64,
    pub alpha: f64,
}

impl OodThreshold {
    /// Strictly above the cutoff.
    pub fn flag(&self, score: f64) -> bool {
        score > self.cutoff
    }
}

pub fn ood_threshold(reference_scores: &[f64], alpha: f64) -> Result<OodThreshold> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if reference_scores.len() < MIN_REFERENCE_SCORES {
        return Err(Error::InsufficientData {
            needed: MIN_REFERENCE_SCORES,
            have: reference_scores.len(),
        });
    }
    if reference_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("reference scores must be finite".into()));
    }
    Ok(OodThreshold {
        cutoff: quantile_type7(reference_scores, alpha)?,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rs(sets: &[(usize, f64)]) -> Vec<f64> {
        sets.iter().map(|&(_, r)| r).collect()
    }

    #[test]
    fn partition_by_sign() {
        let s = partition_residuals(&[1.0, 1.0, 1.0], &[2.0, 0.0, 1.0]).unwrap();
        assert_eq!(s.upper, vec![(0, 1.0)]);
        assert_eq!(s.lower, vec![(1, -1.0)]);
        assert_eq!(s.zero_count, 1);

        let s = partition_residuals(&[4.0, 5.0], &[4.0, 5.0]).unwrap();
        assert!(s.all.is_empty() && s.upper.is_empty() && s.lower.is_empty());
        assert_eq!(s.zero_count, 2);

        let s = partition_residuals(&[0.0, 0.0], &[3.0, -5.0]).unwrap();
        assert_eq!(rs(&s.upper), vec![3.0]);
        assert_eq!(rs(&s.lower), vec![-5.0]);
    }

    #[test]
    fn partition_errors() {
        assert!(matches!(partition_residuals(&[1.0], &[1.0, 2.0]), Err(Error::Shape { .. })));
        assert!(matches!(partition_residuals(&[f64::NAN], &[1.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn mars_by_hand() {
        let m = empirical_mars(&ResidualSets::from_residuals(&[2.0, 4.0, -3.0]).unwrap()).unwrap();
        assert_eq!((m.total, m.upper, m.lower), (3.0, 3.0, 3.0));

        let m = empirical_mars(&ResidualSets::from_residuals(&[1.7, -1.7]).unwrap()).unwrap();
        assert_eq!((m.total, m.upper, m.lower), (1.7, 1.7, 1.7));

        // mean residual zero: total equals H(upper, lower) = H(1, 2) = 4/3
        let m = empirical_mars(&ResidualSets::from_residuals(&[1.0, 1.0, -2.0]).unwrap()).unwrap();
        assert!((m.total - 4.0 / 3.0).abs() < 1e-15);
        assert!((harmonic_mean(m.upper, m.lower).unwrap() - m.total).abs() < 1e-15);
    }

    #[test]
    fn one_sided_mars_name_the_empty_side() {
        let err = empirical_mars(&ResidualSets::from_residuals(&[1.0, 2.0]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::SideUndefined(Side::Lower)));
        let err = empirical_mars(&ResidualSets::from_residuals(&[-1.0, 0.0]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::SideUndefined(Side::Upper)));
    }

    #[test]
    fn harmonic_mean_cases() {
        assert_eq!(harmonic_mean(5.0, 5.0).unwrap(), 5.0);
        assert!((harmonic_mean(1.0, 2.0).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert!(matches!(harmonic_mean(0.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(harmonic_mean(-1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn discrepancy_cases() {
        assert!(self_consistency_discrepancy(0.0, &[-1.0, 1.0]).unwrap() < 1e-12);
        assert!(self_consistency_discrepancy(1.0, &[0.0, 0.0, 3.0]).unwrap() < 1e-12);
        // off the mean: MAD = 7/6, MAD+ = 5/2, MAD- = 1/2, H = 5/6
        let off = self_consistency_discrepancy(0.5, &[0.0, 0.0, 3.0]).unwrap();
        assert!((off - 1.0 / 3.0).abs() < 1e-12, "{off}");
        assert!(matches!(self_consistency_discrepancy(5.0, &[1.0, 2.0]), Err(Error::SideUndefined(Side::Upper))));
    }

    #[test]
    fn sds_cases() {
        assert!(sds(&MarTriple::new(4.0 / 3.0, 1.0, 2.0).unwrap()).unwrap().value() < 1e-15);
        assert_eq!(sds(&MarTriple::new(1.0, 2.0, 2.0).unwrap()).unwrap().value(), 4.0);
        assert_eq!(sds(&MarTriple::new(0.0, 0.0, 0.0).unwrap()).unwrap().value(), 0.0);
        assert!(sds(&MarTriple { total: f64::NAN, upper: 1.0, lower: 1.0 }).is_err());
    }

    #[test]
    fn classification_sds_cases() {
        assert!(sds_classification(&[0.5, 0.5], &[0.5, 0.5]).unwrap().value().abs() < 1e-15);
        assert!((sds_classification(&[0.9, 0.1], &[0.0, 0.0]).unwrap().value() - 0.36).abs() < 1e-12);
        assert!(sds_classification(&[0.7, 0.3], &[0.42, 0.42]).unwrap().value() < 1e-12);
        assert!(matches!(sds_classification(&[0.7, 0.3], &[0.4]), Err(Error::Shape { .. })));
    }

    #[test]
    fn ood_threshold_cases() {
        let scores: Vec<f64> = (1..=100).map(f64::from).collect();
        let th = ood_threshold(&scores, 0.95).unwrap();
        assert!((th.cutoff - 95.05).abs() < 1e-12);

        let th = ood_threshold(&[2.5; 30], 0.95).unwrap();
        assert_eq!(th.cutoff, 2.5);
        assert!(!th.flag(2.5));
        assert!(th.flag(2.6));

        assert!(matches!(ood_threshold(&scores, 1.0), Err(Error::Domain(_))));
        assert!(matches!(ood_threshold(&scores[..19], 0.9), Err(Error::InsufficientData { needed: 20, have: 19 })));
    }
}
