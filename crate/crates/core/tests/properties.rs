//! Property tests for the numerical invariants of the core routines.

use proptest::prelude::*;

use spcuq::cls_uq::{self, CalibrationOutput};
use spcuq::data::Standardization;
use spcuq::metrics;
use spcuq::nn::{self, Activation, Mlp, MlpSpec, OutputActivation};
use spcuq::reg_uq::{self, RegUqOutput};
use spcuq::spa::{self, MarTriple};
use spcuq::Matrix;

fn samples() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, 2..60)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn mad_at_mean_is_harmonic_mean_of_sides(xs in samples()) {
        let m = mean(&xs);
        // all samples equal to the mean leaves a side empty
        prop_assume!(xs.iter().any(|x| *x > m) && xs.iter().any(|x| *x < m));
        let d = spa::self_consistency_discrepancy(m, &xs).unwrap();
        prop_assert!(d < 1e-10, "discrepancy {d}");
    }

    #[test]
    fn discrepancy_grows_away_from_mean(xs in prop::collection::vec(-10.0..10.0f64, 20..60), shift in 0.5..3.0f64) {
        let m = mean(&xs);
        let t = m + shift;
        prop_assume!(xs.iter().any(|x| *x > t) && xs.iter().any(|x| *x < t));
        let at_mean = spa::self_consistency_discrepancy(m, &xs).unwrap();
        let off = spa::self_consistency_discrepancy(t, &xs).unwrap();
        prop_assert!(off > at_mean);
    }

    #[test]
    fn sds_is_zero_on_self_consistent_triples(a in 0.01..100.0f64, b in 0.01..100.0f64) {
        let h = spa::harmonic_mean(a, b).unwrap();
        let s = spa::sds(&MarTriple::new(h, a, b).unwrap()).unwrap().value();
        prop_assert!(s <= 1e-12 * (a * b).max(1.0), "sds {s}");
    }

    #[test]
    fn sds_is_quadratically_homogeneous(z in 0.0..10.0f64, a in 0.0..10.0f64, b in 0.0..10.0f64, c in 0.1..10.0f64) {
        let s = spa::sds_raw(z, a, b);
        let sc = spa::sds_raw(c * z, c * a, c * b);
        prop_assert!((sc - c * c * s).abs() <= 1e-9 * (1.0 + sc.abs()));
    }

    #[test]
    fn sds_increases_with_total_mar_error(a in 0.1..10.0f64, b in 0.1..10.0f64, e1 in 0.0..5.0f64, e2 in 0.0..5.0f64) {
        let h = spa::harmonic_mean(a, b).unwrap();
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(spa::sds_raw(h + lo, a, b) <= spa::sds_raw(h + hi, a, b) + 1e-12);
    }

    #[test]
    fn harmonic_mean_lies_between_min_and_mean(a in 1e-3..1e3f64, b in 1e-3..1e3f64) {
        let h = spa::harmonic_mean(a, b).unwrap();
        prop_assert!(h >= a.min(b) * (1.0 - 1e-12));
        prop_assert!(h <= (a + b) / 2.0 * (1.0 + 1e-12));
    }

    #[test]
    fn calibration_factors_never_shrink(q in 0.1..5.0f64, z in 0.01..5.0f64, zu in 0.01..5.0f64, zl in 0.01..5.0f64) {
        let out = RegUqOutput { q_upper: q, q_lower: q, z, z_upper: zu, z_lower: zl };
        let f = reg_uq::calibration_factors(&out, reg_uq::DEFAULT_FACTOR_EPSILON);
        prop_assert!(f.upper >= 1.0 && f.lower >= 1.0);
        let iv = reg_uq::calibrated_spi(0.0, &out, &f);
        prop_assert!(iv.upper >= q - 1e-12 && iv.lower <= -q + 1e-12);
    }

    #[test]
    fn consistent_heads_need_no_inflation(zu in 0.05..5.0f64, zl in 0.05..5.0f64) {
        let z = spa::harmonic_mean(zu, zl).unwrap();
        let out = RegUqOutput { q_upper: 1.0, q_lower: 1.0, z, z_upper: zu, z_lower: zl };
        let f = reg_uq::calibration_factors(&out, reg_uq::DEFAULT_FACTOR_EPSILON);
        prop_assert!((f.upper - 1.0).abs() < 1e-9 && (f.lower - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_included_mars_satisfy_both_identities(p in 0.0..=1.0f64, y in 0.0..=1.0f64) {
        let (t, u, l) = cls_uq::zero_included_mars(p, y);
        prop_assert!((t - (u + l)).abs() < 1e-12);
        prop_assert!((p - (y + u - l)).abs() < 1e-12);
    }

    #[test]
    fn exact_calibration_output_opens_gate_and_recovers_p(raw in prop::collection::vec(0.01..1.0f64, 2..6), yraw in prop::collection::vec(0.01..1.0f64, 2..6)) {
        let k = raw.len().min(yraw.len());
        let s: f64 = raw[..k].iter().sum();
        let p: Vec<f64> = raw[..k].iter().map(|v| v / s).collect();
        let sy: f64 = yraw[..k].iter().sum();
        let y: Vec<f64> = yraw[..k].iter().map(|v| v / sy).collect();
        let mut total = vec![0.0; k];
        let mut upper = vec![0.0; k];
        let mut lower = vec![0.0; k];
        for c in 0..k {
            let (t, u, l) = cls_uq::zero_included_mars(p[c], y[c]);
            total[c] = t;
            upper[c] = u;
            lower[c] = l;
        }
        let cal = CalibrationOutput { z_c: total, z_c_pos: upper, z_c_neg: lower };
        let gate = cls_uq::calibration_quality(&cal, cls_uq::DEFAULT_DELTA_0).unwrap();
        prop_assert!(gate.applied);
        let out = cls_uq::calibrate_prediction(&y, &cal, &gate).unwrap();
        for c in 0..k {
            prop_assert!((out.raw[c] - p[c]).abs() < 1e-9);
        }
    }

    #[test]
    fn classification_sds_vanishes_at_analytic_totals(raw in prop::collection::vec(0.01..1.0f64, 2..8)) {
        let s: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let z: Vec<f64> = p.iter().map(|q| 2.0 * q * (1.0 - q)).collect();
        prop_assert!(spa::sds_classification(&p, &z).unwrap().value() < 1e-12);
    }

    #[test]
    fn auroc_is_antisymmetric(a in prop::collection::vec(-5.0..5.0f64, 1..30), b in prop::collection::vec(-5.0..5.0f64, 1..30)) {
        let ab = metrics::auroc(&a, &b).unwrap();
        let ba = metrics::auroc(&b, &a).unwrap();
        prop_assert!((ab + ba - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn auroc_is_invariant_to_monotone_maps(a in prop::collection::vec(-5.0..5.0f64, 1..30), b in prop::collection::vec(-5.0..5.0f64, 1..30)) {
        let f = |v: &[f64]| v.iter().map(|x| x.exp()).collect::<Vec<_>>();
        prop_assert_eq!(metrics::auroc(&a, &b).unwrap(), metrics::auroc(&f(&a), &f(&b)).unwrap());
    }

    #[test]
    fn spearman_is_bounded_and_symmetric(pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 3..40)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let Ok(r) = metrics::spearman(&a, &b) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            prop_assert!((r - metrics::spearman(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((metrics::spearman(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ece_is_bounded(rows in prop::collection::vec((0.0..=1.0f64, any::<bool>()), 1..80), bins in 1usize..20) {
        let (c, ok): (Vec<f64>, Vec<bool>) = rows.into_iter().unzip();
        let e = metrics::ece(&c, &ok, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&e.value));
        prop_assert_eq!(e.bins.iter().map(|b| b.count).sum::<usize>(), c.len());
    }

    #[test]
    fn winkler_is_at_least_the_width(rows in prop::collection::vec((-5.0..5.0f64, 0.0..4.0f64, -8.0..8.0f64), 1..40), alpha in 0.01..0.5f64) {
        let iv: Vec<(f64, f64)> = rows.iter().map(|&(l, w, _)| (l, l + w)).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let width = iv.iter().map(|(l, u)| u - l).sum::<f64>() / iv.len() as f64;
        prop_assert!(metrics::winkler(&iv, &y, alpha).unwrap() >= width - 1e-12);
        let p = metrics::picp(&iv, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn standardization_round_trips(vals in prop::collection::vec(-1e3..1e3f64, 6..60)) {
        let rows = vals.len() / 3;
        let m = Matrix::from_vec(rows, 3, vals[..rows * 3].to_vec()).unwrap();
        let idx: Vec<usize> = (0..rows).collect();
        let s = Standardization::fit(&m, &idx).unwrap();
        let back = s.invert(&s.apply(&m));
        for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn weights_round_trip_bitwise(seed in any::<u64>(), h in 1usize..8) {
        let mlp = Mlp::new(MlpSpec::new(vec![3, h, 2], Activation::Tanh, OutputActivation::Softplus, seed)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        nn::save_weights(&mlp, &path).unwrap();
        prop_assert_eq!(nn::load_weights(&path, mlp.spec.clone()).unwrap(), mlp);
    }
}
