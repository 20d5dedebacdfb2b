//! Accuracy, interval, calibration and ranking metrics.
//!
//! Intervals are `(lower, upper)` pairs. All functions reject empty or
//! mismatched inputs instead of returning NaN.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

fn same_len(context: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(shape_err(context, a, b));
    }
    if a == 0 {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    same_len("rmse", preds.len(), targets.len())?;
    let sse: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / preds.len() as f64).sqrt())
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    same_len("accuracy", predicted.len(), labels.len())?;
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean Winkler score at miscoverage `alpha`: width plus `2/alpha` times the distance outside.
pub fn winkler(intervals: &[(f64, f64)], targets: &[f64], alpha: f64) -> Result<f64> {
    same_len("winkler", intervals.len(), targets.len())?;
    check_alpha(alpha)?;
    let total: f64 = intervals
        .iter()
        .zip(targets)
        .map(|(&(lo, hi), &y)| {
            let width = hi - lo;
            if y < lo {
                width + 2.0 / alpha * (lo - y)
            } else if y > hi {
                width + 2.0 / alpha * (y - hi)
            } else {
                width
            }
        })
        .sum();
    Ok(total / targets.len() as f64)
}

/// Fraction of targets inside their (closed) interval.
pub fn picp(intervals: &[(f64, f64)], targets: &[f64]) -> Result<f64> {
    same_len("picp", intervals.len(), targets.len())?;
    let inside = intervals.iter().zip(targets).filter(|(&(lo, hi), &y)| lo <= y && y <= hi).count();
    Ok(inside as f64 / targets.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub count: usize,
    /// Observed coverage (PIECE) or accuracy (ECE).
    pub observed: f64,
    /// Nominal coverage (PIECE) or mean confidence (ECE).
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedScore {
    pub value: f64,
    pub bins: Vec<BinStat>,
    /// Set when fewer samples than bins forced a single bin.
    pub single_bin_fallback: bool,
}

/// Equal-frequency bins over interval width; `Σ (|B|/N) |coverage(B) − (1 − alpha)|`.
pub fn piece(intervals: &[(f64, f64)], targets: &[f64], alpha: f64, n_bins: usize) -> Result<BinnedScore> {
    same_len("piece", intervals.len(), targets.len())?;
    check_alpha(alpha)?;
    if n_bins == 0 {
        return Err(Error::Domain("piece needs at least one bin".into()));
    }
    let n = targets.len();
    let fallback = n < n_bins;
    let m = if fallback { 1 } else { n_bins };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let wa = intervals[a].1 - intervals[a].0;
        let wb = intervals[b].1 - intervals[b].0;
        wa.total_cmp(&wb).then(a.cmp(&b))
    });
    let nominal = 1.0 - alpha;
    let mut value = 0.0;
    let mut bins = Vec::with_capacity(m);
    for b in 0..m {
        let members = &order[b * n / m..(b + 1) * n / m];
        let inside = members
            .iter()
            .filter(|&&i| intervals[i].0 <= targets[i] && targets[i] <= intervals[i].1)
            .count();
        let cov = inside as f64 / members.len() as f64;
        value += members.len() as f64 / n as f64 * (cov - nominal).abs();
        bins.push(BinStat {
            count: members.len(),
            observed: cov,
            expected: nominal,
        });
    }
    Ok(BinnedScore {
        value,
        bins,
        single_bin_fallback: fallback,
    })
}

/// Per-side coverage: among rows with `y > ŷ` the fraction with `y − ŷ ≤ upper − ŷ`,
/// and among rows with `y < ŷ` the fraction with `ŷ − y ≤ ŷ − lower`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCoverage {
    pub upper: f64,
    pub lower: f64,
    pub n_upper: usize,
    pub n_lower: usize,
}

pub fn split_coverage(intervals: &[(f64, f64)], preds: &[f64], targets: &[f64]) -> Result<SplitCoverage> {
    same_len("split_coverage", intervals.len(), targets.len())?;
    same_len("split_coverage", preds.len(), targets.len())?;
    let (mut nu, mut cu, mut nl, mut cl) = (0usize, 0usize, 0usize, 0usize);
    for ((&(lo, hi), &p), &y) in intervals.iter().zip(preds).zip(targets) {
        let r = y - p;
        if r > 0.0 {
            nu += 1;
            cu += usize::from(r <= hi - p);
        } else if r < 0.0 {
            nl += 1;
            cl += usize::from(-r <= p - lo);
        }
    }
    if nu == 0 {
        return Err(Error::SideUndefined(crate::Side::Upper));
    }
    if nl == 0 {
        return Err(Error::SideUndefined(crate::Side::Lower));
    }
    Ok(SplitCoverage {
        upper: cu as f64 / nu as f64,
        lower: cl as f64 / nl as f64,
        n_upper: nu,
        n_lower: nl,
    })
}

/// `(|cov⁺ − τ⁺|, |cov⁻ − τ⁻|)`.
pub fn piece_split(
    intervals: &[(f64, f64)],
    preds: &[f64],
    targets: &[f64],
    tau_upper: f64,
    tau_lower: f64,
) -> Result<(f64, f64)> {
    let c = split_coverage(intervals, preds, targets)?;
    Ok(((c.upper - tau_upper).abs(), (c.lower - tau_lower).abs()))
}

/// Equal-width expected calibration error. Bin `m` (1-based) covers `((m−1)/M, m/M]`, with 0 in the first bin.
pub fn ece(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<BinnedScore> {
    same_len("ece", confidences.len(), correct.len())?;
    if n_bins == 0 {
        return Err(Error::Domain("ece needs at least one bin".into()));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::Domain(format!("confidence {c} outside [0, 1]")));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = ece_bin(c, n_bins);
        count[b] += 1;
        conf_sum[b] += c;
        hits[b] += usize::from(ok);
    }
    let n = confidences.len() as f64;
    let mut value = 0.0;
    let mut bins = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        if count[b] == 0 {
            bins.push(BinStat {
                count: 0,
                observed: 0.0,
                expected: 0.0,
            });
            continue;
        }
        let acc = hits[b] as f64 / count[b] as f64;
        let conf = conf_sum[b] / count[b] as f64;
        value += count[b] as f64 / n * (acc - conf).abs();
        bins.push(BinStat {
            count: count[b],
            observed: acc,
            expected: conf,
        });
    }
    Ok(BinnedScore {
        value,
        bins,
        single_bin_fallback: false,
    })
}

pub(crate) fn ece_bin(c: f64, n_bins: usize) -> usize {
    let m = n_bins as f64;
    let mut b = ((c * m).ceil() as usize).clamp(1, n_bins);
    // c·M can round across an edge; settle against the edges as written
    if b > 1 && c <= (b - 1) as f64 / m {
        b -= 1;
    } else if b < n_bins && c > b as f64 / m {
        b += 1;
    }
    b - 1
}

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

fn check_finite(context: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("{context}: non-finite input")));
    }
    Ok(())
}

/// Probability that a random positive scores above a random negative, ties counted one half.
pub fn auroc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            have: positive.len().min(negative.len()),
        });
    }
    check_finite("auroc", positive)?;
    check_finite("auroc", negative)?;
    let all: Vec<f64> = positive.iter().chain(negative).copied().collect();
    let ranks = average_ranks(&all);
    let np = positive.len() as f64;
    let nn = negative.len() as f64;
    let rank_sum: f64 = ranks[..positive.len()].iter().sum();
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// AUROC from scores and binary labels (`true` = positive).
pub fn auroc_labeled(scores: &[f64], labels: &[bool]) -> Result<f64> {
    same_len("auroc", scores.len(), labels.len())?;
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    auroc(&pos, &neg)
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len("spearman", a.len(), b.len())?;
    if a.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, have: a.len() });
    }
    check_finite("spearman", a)?;
    check_finite("spearman", b)?;
    pearson_of_ranks(&average_ranks(a), &average_ranks(b))
}

pub(crate) fn pearson_of_ranks(ra: &[f64], rb: &[f64]) -> Result<f64> {
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Numeric("spearman undefined for constant input".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Named scalar metrics for one evaluation, with stable (sorted) JSON keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_samples: usize,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bins: BTreeMap<String, Vec<BinStat>>,
}

impl MetricReport {
    pub fn new(n_samples: usize) -> Self {
        Self {
            n_samples,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64) -> Result<()> {
        let name = name.into();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("metric {name} is not finite")));
        }
        self.metrics.insert(name, value);
        Ok(())
    }

    pub fn insert_binned(&mut self, name: impl Into<String>, score: BinnedScore) -> Result<()> {
        let name = name.into();
        self.insert(name.clone(), score.value)?;
        self.bins.insert(name, score.bins);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_example() {
        assert!((rmse(&[1.0, 2.0], &[1.0, 4.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn winkler_cases() {
        let iv = [(0.0, 2.0)];
        assert_eq!(winkler(&iv, &[1.0], 0.05).unwrap(), 2.0);
        assert!((winkler(&iv, &[3.0], 0.05).unwrap() - 42.0).abs() < 1e-12);
        assert!((winkler(&iv, &[-1.0], 0.05).unwrap() - 42.0).abs() < 1e-12);
        assert!(winkler(&iv, &[1.0], 0.0).is_err());
    }

    #[test]
    fn picp_counts_closed_interval() {
        let iv = [(0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0)];
        assert_eq!(picp(&iv, &[0.0, 1.0, 0.5, 2.0]).unwrap(), 0.75);
    }

    #[test]
    fn piece_perfect_and_miss() {
        let iv: Vec<(f64, f64)> = (0..20).map(|i| (0.0, 1.0 + i as f64)).collect();
        let y = vec![0.5; 20];
        let s = piece(&iv, &y, 0.05, 10).unwrap();
        assert!((s.value - 0.05).abs() < 1e-12);
        let y = vec![-5.0; 20];
        assert!((piece(&iv, &y, 0.05, 10).unwrap().value - 0.95).abs() < 1e-12);
    }

    #[test]
    fn piece_small_sample_fallback() {
        let s = piece(&[(0.0, 1.0); 3], &[0.5, 0.5, 2.0], 0.5, 10).unwrap();
        assert!(s.single_bin_fallback);
        assert_eq!(s.bins.len(), 1);
        assert!((s.value - (2.0 / 3.0 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn piece_split_example() {
        // 3 of 4 upper residuals inside, all lower residuals inside
        let iv = [(-1.0, 1.0); 6];
        let preds = [0.0; 6];
        let y = [0.5, 0.5, 0.9, 2.0, -0.5, -0.5];
        let (u, l) = piece_split(&iv, &preds, &y, 0.95, 0.95).unwrap();
        assert!((u - 0.2).abs() < 1e-12);
        assert!((l - 0.05).abs() < 1e-12);
    }

    #[test]
    fn ece_cases() {
        let s = ece(&[0.9, 0.9, 0.9, 0.9], &[true, true, true, false], 15).unwrap();
        assert!((s.value - 0.15).abs() < 1e-12);
        // two equal bins with gaps 0.1 and 0.3
        let s = ece(&[0.4, 0.4, 0.7, 0.7], &[false, true, true, true], 2).unwrap();
        assert!((s.value - 0.2).abs() < 1e-12, "{}", s.value);
        let s = ece(&[0.7; 10], &[true, true, true, true, true, true, true, false, false, false], 15).unwrap();
        assert!(s.value < 1e-12);
        assert!(ece(&[1.2], &[true], 15).is_err());
    }

    #[test]
    fn ece_bin_edges() {
        assert_eq!(ece_bin(0.0, 10), 0);
        assert_eq!(ece_bin(0.1, 10), 0);
        assert_eq!(ece_bin(0.11, 10), 1);
        assert_eq!(ece_bin(1.0, 10), 9);
        // 0.3 * 10 rounds above 3
        assert_eq!(ece_bin(0.3, 10), 2);
        assert_eq!(ece_bin(0.7, 10), 6);
    }

    #[test]
    fn auroc_cases() {
        assert_eq!(auroc(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.0, 1.0], &[2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(auroc(&[1.0; 3], &[1.0; 4]).unwrap(), 0.5);
        assert!(matches!(auroc(&[], &[1.0]), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn spearman_cases() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&a, &[10.0, 20.0, 25.0, 100.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(spearman(&a, &[1.0; 4]).is_err());
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn report_keys_sorted_and_finite() {
        let mut r = MetricReport::new(3);
        r.insert("rmse", 1.0).unwrap();
        r.insert("auroc_ood", 0.9).unwrap();
        assert!(r.insert("picp", f64::NAN).is_err());
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.find("auroc_ood").unwrap() < json.find("rmse").unwrap());
    }
}
