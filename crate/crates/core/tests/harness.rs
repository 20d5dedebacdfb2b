use std::fs;
use std::path::Path;
use std::process::Command;

use spcuq::data::NoiseSpec;
use spcuq::harness::report::{self, REPORT_JSON};
use spcuq::harness::stages::{self, TrialContext};
use spcuq::harness::{self, DatasetConfig, ExperimentConfig, Samples, Task, TrainingMode};

fn small_cubic() -> ExperimentConfig {
    let mut c = ExperimentConfig::new(
        Task::Regression,
        DatasetConfig::Cubic {
            n_train: 300,
            n_test: 150,
            noise: NoiseSpec::gaussian(),
        },
    );
    c.base.hidden_sizes = vec![16, 16];
    c.base.train.epochs = 30;
    c.reg_uq.hidden_sizes = vec![16];
    c.reg_uq.epochs = 20;
    c.trials = 2;
    c
}

fn small_blobs() -> ExperimentConfig {
    let mut c = ExperimentConfig::new(
        Task::Classification,
        DatasetConfig::Blobs {
            n: 400,
            classes: 3,
            radius: 2.0,
            sigma: 1.0,
            flip_rate: 0.1,
            test_fraction: 0.25,
        },
    );
    c.base.hidden_sizes = vec![16];
    c.base.train.epochs = 20;
    c.cls_uq.epochs = 20;
    c.base.temperature = 0.5;
    c
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spcuq"))
}

#[test]
fn run_twice_gives_byte_identical_report() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = small_cubic();
    cfg.trials = 1;
    harness::run(&cfg, a.path(), 1).unwrap();
    harness::run(&cfg, b.path(), 1).unwrap();
    for f in [REPORT_JSON, "metrics.csv", "samples.csv", "plot.csv", "report.txt"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn parallel_run_matches_sequential() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small_cubic();
    let seq = harness::run(&cfg, a.path(), 1).unwrap();
    let par = harness::run(&cfg, b.path(), 2).unwrap();
    assert_eq!(seq, par);
}

#[test]
fn file_stages_reproduce_in_memory_trial() {
    for cfg in [small_cubic(), small_blobs()] {
        let dir = tempfile::tempdir().unwrap();
        let ctx = TrialContext::new(&cfg, 1);
        let chained = stages::run_trial_stages(&cfg, &ctx, dir.path()).unwrap();
        let direct = harness::run_trial(&cfg, &ctx).unwrap();
        assert_eq!(chained, direct);
    }
}

#[test]
fn regression_report_contents() {
    let dir = tempfile::tempdir().unwrap();
    let r = harness::run(&small_cubic(), dir.path(), 1).unwrap();
    assert_eq!(r.trials.len(), 2);
    assert!(r.failures.is_empty());
    for m in ["rmse", "rmse_id", "picp_id", "piece_id", "piece_plus_calib_id", "winkler", "auroc_ood"] {
        let a = r.aggregate.get(m).unwrap_or_else(|| panic!("missing {m}"));
        assert_eq!(a.n, 2);
        assert!(a.se >= 0.0);
    }
    // aggregate recomputable from the per-trial values
    let vals: Vec<f64> = r.trials.iter().map(|t| t.metrics.get("rmse").unwrap()).collect();
    assert!((r.mean("rmse").unwrap() - (vals[0] + vals[1]) / 2.0).abs() < 1e-12);
    let Samples::Regression(rows) = &r.trials[0].samples else {
        panic!("wrong sample kind")
    };
    assert_eq!(rows.len(), 150);
    assert!(rows.iter().all(|s| s.lower <= s.y_hat && s.y_hat <= s.upper));
    assert!(rows.iter().all(|s| s.lower_calib <= s.lower && s.upper <= s.upper_calib));
    let plot = fs::read_to_string(dir.path().join("plot.csv")).unwrap();
    assert!(plot.starts_with("trial,x,y,y_hat,lower,upper,lower_calib,upper_calib,sds,in_distribution"));
    assert_eq!(plot.lines().count(), 1 + 2 * 150);
    let again = report::collect(dir.path()).unwrap();
    assert_eq!(again, r);
}

#[test]
fn classification_report_contents() {
    let dir = tempfile::tempdir().unwrap();
    let r = harness::run(&small_blobs(), dir.path(), 1).unwrap();
    for m in ["accuracy", "ece", "ece_calib", "gate_rate", "delta_c_mean"] {
        assert!(r.mean(m).is_some(), "missing {m}");
    }
    let Samples::Classification(rows) = &r.trials[0].samples else {
        panic!("wrong sample kind")
    };
    for s in rows {
        assert_eq!(s.gate_applied, s.delta_c < 0.01);
        if !s.gate_applied {
            assert_eq!(s.probabilities, s.probabilities_calib);
        }
        assert!((s.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn joint_mode_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_cubic();
    cfg.trials = 1;
    cfg.training_mode = TrainingMode::Joint;
    let r = harness::run(&cfg, dir.path(), 1).unwrap();
    assert!(r.mean("rmse").unwrap().is_finite());
}

#[test]
fn failing_trials_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_cubic();
    cfg.trials = 2;
    fs::create_dir_all(dir.path()).unwrap();
    // a plain file where trial 1's directory should go
    fs::write(dir.path().join("trial_1"), b"not a directory").unwrap();
    let r = harness::run(&cfg, dir.path(), 1).unwrap();
    assert_eq!(r.trials.len(), 1);
    assert_eq!(r.failures.len(), 1);
    assert_eq!(r.failures[0].trial, 1);
    assert_eq!(report::collect(dir.path()).unwrap().failures, r.failures);
}

fn write_cfg(dir: &Path, cfg: &ExperimentConfig) -> std::path::PathBuf {
    let p = dir.join("cfg.json");
    fs::write(&p, cfg.to_json()).unwrap();
    p
}

#[test]
fn cli_stage_chain_equals_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_cubic();
    cfg.trials = 1;
    let cfg_path = write_cfg(tmp.path(), &cfg);
    let (staged, whole) = (tmp.path().join("staged"), tmp.path().join("whole"));
    let ok = |c: &mut Command| assert!(c.env("SPCUQ_LOG", "error").status().unwrap().success());
    ok(bin().args(["generate", "--config"]).arg(&cfg_path).arg("--output").arg(&staged));
    for s in ["train-base", "train-uq", "evaluate"] {
        ok(bin().arg(s).arg("--output").arg(&staged));
    }
    ok(bin().arg("report").arg("--output").arg(&staged));
    ok(bin().args(["run", "--config"]).arg(&cfg_path).arg("--output").arg(&whole));
    assert_eq!(
        fs::read(staged.join(REPORT_JSON)).unwrap(),
        fs::read(whole.join(REPORT_JSON)).unwrap()
    );
}

#[test]
fn cli_generate_with_noise_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_cfg(tmp.path(), &small_cubic());
    let out = tmp.path().join("g");
    let st = bin()
        .args(["generate", "--noise", "trimodal", "--trial", "0", "--config"])
        .arg(&cfg_path)
        .arg("--output")
        .arg(&out)
        .env("SPCUQ_LOG", "error")
        .status()
        .unwrap();
    assert!(st.success());
    let saved = ExperimentConfig::load(out.join("config.json")).unwrap();
    assert!(matches!(saved.dataset, DatasetConfig::Cubic { noise: NoiseSpec::Trimodal { .. }, .. }));
    assert!(out.join("trial_0/dataset.csv").is_file());
    assert!(!out.join("trial_1").exists());
}

#[test]
fn cli_errors() {
    let tmp = tempfile::tempdir().unwrap();
    // report on a missing directory
    let o = bin().args(["report", "--output"]).arg(tmp.path().join("nope")).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    // missing CSV is rejected before any training
    let mut cfg = ExperimentConfig::new(
        Task::Regression,
        DatasetConfig::Csv {
            path: tmp.path().join("missing.csv"),
            target_column: "y".into(),
            header: true,
            test_fraction: 0.2,
        },
    );
    cfg.trials = 1;
    let raw = serde_json::to_string(&cfg).unwrap();
    let p = tmp.path().join("csv.json");
    fs::write(&p, raw).unwrap();
    let out = tmp.path().join("csv_run");
    let o = bin().args(["run", "--config"]).arg(&p).arg("--output").arg(&out).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("not found"));
    assert!(!out.exists());
    // unknown config key
    fs::write(&p, r#"{"schema_version":1,"task":"regression","dataset":{"kind":"cubic","noise":{"kind":"none"}},"bogus":1}"#).unwrap();
    let o = bin().args(["run", "--config"]).arg(&p).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

#[test]
fn csv_regression_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let csv_path = tmp.path().join("table.csv");
    let mut text = String::from("a,b,target\n");
    for i in 0..240 {
        let a = (i as f64 * 0.37).sin() * 3.0;
        let b = (i % 17) as f64 / 4.0;
        let noise = ((i * 7919) % 101) as f64 / 50.0 - 1.0;
        text.push_str(&format!("{a},{b},{}\n", 2.0 * a - b + noise));
    }
    fs::write(&csv_path, text).unwrap();
    let mut cfg = ExperimentConfig::new(
        Task::Regression,
        DatasetConfig::Csv {
            path: csv_path,
            target_column: "target".into(),
            header: true,
            test_fraction: 0.2,
        },
    );
    cfg.base.hidden_sizes = vec![16];
    cfg.base.train.epochs = 40;
    cfg.reg_uq.epochs = 20;
    let r = harness::run(&cfg, &tmp.path().join("out"), 1).unwrap();
    assert!(r.mean("rmse").unwrap() < 3.0);
    // all rows are in-distribution, so there are no `_id` duplicates and no OOD AUROC
    assert!(r.mean("rmse_id").is_none());
    assert!(r.mean("auroc_ood").is_none());
}

#[test]
fn trial_predictor_matches_evaluation() {
    use spcuq::harness::TrialPredictor;
    use spcuq::Matrix;
    for cfg in [small_cubic(), small_blobs()] {
        let dir = tempfile::tempdir().unwrap();
        let ctx = TrialContext::new(&cfg, 0);
        let ev = stages::run_trial_stages(&cfg, &ctx, dir.path()).unwrap();
        let p = TrialPredictor::load(ctx.dir(dir.path())).unwrap();
        assert_eq!(p.task(), cfg.task);
        match &ev.samples {
            Samples::Regression(rows) => {
                let x = Matrix::from_rows(&rows.iter().map(|s| s.x.clone()).collect::<Vec<_>>()).unwrap();
                let out = p.predict_regression(&x).unwrap();
                for (s, o) in rows.iter().zip(&out) {
                    assert!((s.y_hat - o.y_hat).abs() < 1e-9);
                    assert!((s.upper_calib - o.upper_calib).abs() < 1e-9);
                    assert!((s.sds - o.sds).abs() < 1e-9);
                }
                assert!(p.predict_classification(&x, 0.01).is_err());
            }
            Samples::Classification(rows) => {
                let x = Matrix::from_rows(&rows.iter().map(|s| s.x.clone()).collect::<Vec<_>>()).unwrap();
                let out = p.predict_classification(&x, cfg.cls_uq.delta_0).unwrap();
                for (s, o) in rows.iter().zip(&out) {
                    assert_eq!(s.gate_applied, o.gate_applied);
                    assert!((s.sds - o.sds).abs() < 1e-9);
                    assert!((s.probabilities_calib[0] - o.probabilities_calib[0]).abs() < 1e-9);
                }
                assert_eq!(p.output_dim(), 3);
            }
        }
        assert!(p.predict_regression(&Matrix::zeros(1, 5)).is_err());
    }
}
