//! Cross-trial aggregation and report files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::Task;
use crate::harness::evaluate::{Samples, TrialEvaluation};
use crate::harness::stages::{file_err, read_json, write_json, EVALUATION_FILE};

pub const REPORT_JSON: &str = "report.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const SAMPLES_CSV: &str = "samples.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const PLOT_CSV: &str = "plot.csv";
pub const FAILURES_JSON: &str = "failures.json";

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, se, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqReport {
    pub schema_version: u32,
    pub task: Task,
    pub aggregate: BTreeMap<String, Aggregate>,
    pub failures: Vec<TrialFailure>,
    pub trials: Vec<TrialEvaluation>,
}

/// Per-metric aggregate over the trials that report it.
pub fn aggregate(trials: &[TrialEvaluation]) -> BTreeMap<String, Aggregate> {
    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for t in trials {
        for (k, v) in &t.metrics.metrics {
            values.entry(k).or_default().push(*v);
        }
    }
    values
        .into_iter()
        .filter_map(|(k, v)| Aggregate::of(&v).map(|a| (k.to_owned(), a)))
        .collect()
}

impl UqReport {
    pub fn new(task: Task, mut trials: Vec<TrialEvaluation>, mut failures: Vec<TrialFailure>) -> Self {
        trials.sort_by_key(|t| t.trial);
        failures.sort_by_key(|f| f.trial);
        Self {
            schema_version: crate::harness::config::SCHEMA_VERSION,
            task,
            aggregate: aggregate(&trials),
            failures,
            trials,
        }
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.aggregate.get(metric).map(|a| a.mean)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is always serializable");
        s.push('\n');
        s
    }

    /// Aligned `metric  mean ± se  n` table.
    pub fn render_table(&self) -> String {
        let task = match self.task {
            Task::Regression => "regression",
            Task::Classification => "classification",
        };
        let mut out = format!(
            "task: {task}\ntrials: {} completed, {} failed\n\n",
            self.trials.len(),
            self.failures.len()
        );
        let rows: Vec<(String, String, String, String)> = self
            .aggregate
            .iter()
            .map(|(k, a)| (k.clone(), fmt_num(a.mean), fmt_num(a.se), a.n.to_string()))
            .collect();
        let head = ("metric".to_string(), "mean".to_string(), "se".to_string(), "n".to_string());
        let w0 = rows.iter().map(|r| r.0.len()).chain([head.0.len()]).max().unwrap_or(0);
        let w1 = rows.iter().map(|r| r.1.len()).chain([head.1.len()]).max().unwrap_or(0);
        let w2 = rows.iter().map(|r| r.2.len()).chain([head.2.len()]).max().unwrap_or(0);
        out.push_str(&format!("{:<w0$}  {:>w1$}    {:>w2$}  {}\n", head.0, head.1, head.2, head.3));
        for r in &rows {
            out.push_str(&format!("{:<w0$}  {:>w1$} ± {:>w2$}  {}\n", r.0, r.1, r.2, r.3));
        }
        for f in &self.failures {
            out.push_str(&format!("\ntrial {} (seed {}) failed: {}", f.trial, f.seed, f.error));
        }
        if !self.failures.is_empty() {
            out.push('\n');
        }
        out
    }

    /// `report.json`, `metrics.csv`, `samples.csv`, `plot.csv` and `report.txt` in `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| file_err(dir, e))?;
        fs::write(dir.join(REPORT_JSON), self.to_json())?;
        fs::write(dir.join(REPORT_TXT), self.render_table())?;
        self.write_metrics_csv(&dir.join(METRICS_CSV))?;
        self.write_samples_csv(&dir.join(SAMPLES_CSV))?;
        self.write_plot_csv(&dir.join(PLOT_CSV))
    }

    fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        let mut w = writer(path)?;
        rec(&mut w, ["trial", "seed", "metric", "value"])?;
        for t in &self.trials {
            for (k, v) in &t.metrics.metrics {
                rec(&mut w, [t.trial.to_string(), t.seed.to_string(), k.clone(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    fn dims(&self) -> (usize, usize) {
        let mut d = (0, 0);
        for t in &self.trials {
            match &t.samples {
                Samples::Regression(s) => d.0 = d.0.max(s.first().map_or(0, |r| r.x.len())),
                Samples::Classification(s) => {
                    d.0 = d.0.max(s.first().map_or(0, |r| r.x.len()));
                    d.1 = d.1.max(s.first().map_or(0, |r| r.probabilities.len()));
                }
            }
        }
        d
    }

    fn write_samples_csv(&self, path: &Path) -> Result<()> {
        let mut w = writer(path)?;
        let (dx, k) = self.dims();
        let xs = (0..dx).map(|i| format!("x{i}"));
        let mut header: Vec<String> = vec!["trial".into(), "row".into()];
        header.extend(xs);
        match self.task {
            Task::Regression => header.extend(
                [
                    "y", "y_hat", "lower", "upper", "lower_calib", "upper_calib", "q_upper", "q_lower", "z", "z_upper",
                    "z_lower", "scale_upper", "scale_lower", "sds", "in_distribution", "ood_flag",
                ]
                .map(String::from),
            ),
            Task::Classification => {
                header.extend(
                    ["label", "predicted", "confidence", "predicted_calib", "confidence_calib"].map(String::from),
                );
                header.extend((0..k).map(|c| format!("p{c}")));
                header.extend((0..k).map(|c| format!("p_calib{c}")));
                header.extend(
                    ["entropy", "entropy_calib", "sds", "delta_c", "gate_applied", "ood_flag"].map(String::from),
                );
            }
        }
        rec(&mut w, &header)?;
        for t in &self.trials {
            match &t.samples {
                Samples::Regression(rows) => {
                    for s in rows {
                        let mut r = vec![t.trial.to_string(), s.row.to_string()];
                        r.extend(s.x.iter().map(f64::to_string));
                        r.extend(
                            [
                                s.y, s.y_hat, s.lower, s.upper, s.lower_calib, s.upper_calib, s.q_upper, s.q_lower, s.z,
                                s.z_upper, s.z_lower, s.scale_upper, s.scale_lower, s.sds,
                            ]
                            .iter()
                            .map(f64::to_string),
                        );
                        r.push(flag(s.in_distribution));
                        r.push(s.ood_flag.map(flag).unwrap_or_default());
                        rec(&mut w, &r)?;
                    }
                }
                Samples::Classification(rows) => {
                    for s in rows {
                        let mut r = vec![t.trial.to_string(), s.row.to_string()];
                        r.extend(s.x.iter().map(f64::to_string));
                        r.extend([
                            s.label.to_string(),
                            s.predicted.to_string(),
                            s.confidence.to_string(),
                            s.predicted_calib.to_string(),
                            s.confidence_calib.to_string(),
                        ]);
                        r.extend(s.probabilities.iter().map(f64::to_string));
                        r.extend(s.probabilities_calib.iter().map(f64::to_string));
                        r.extend([s.entropy, s.entropy_calib, s.sds, s.delta_c].iter().map(f64::to_string));
                        r.push(flag(s.gate_applied));
                        r.push(s.ood_flag.map(flag).unwrap_or_default());
                        rec(&mut w, &r)?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Regression: one row per test point sorted by the first feature, with
    /// prediction, both interval pairs and SDS. Classification: features,
    /// prediction, confidence and SDS.
    fn write_plot_csv(&self, path: &Path) -> Result<()> {
        let mut w = writer(path)?;
        let (dx, _) = self.dims();
        match self.task {
            Task::Regression => rec(
                &mut w,
                [
                    "trial", "x", "y", "y_hat", "lower", "upper", "lower_calib", "upper_calib", "sds", "in_distribution",
                ],
            )?,
            Task::Classification => {
                let mut h: Vec<String> = vec!["trial".into()];
                h.extend((0..dx).map(|i| format!("x{i}")));
                h.extend(["label", "predicted", "confidence", "confidence_calib", "sds"].map(String::from));
                rec(&mut w, &h)?;
            }
        }
        for t in &self.trials {
            match &t.samples {
                Samples::Regression(rows) => {
                    let mut order: Vec<usize> = (0..rows.len()).collect();
                    order.sort_by(|&a, &b| rows[a].x[0].total_cmp(&rows[b].x[0]).then(a.cmp(&b)));
                    for i in order {
                        let s = &rows[i];
                        let mut r = vec![t.trial.to_string()];
                        r.extend(
                            [s.x[0], s.y, s.y_hat, s.lower, s.upper, s.lower_calib, s.upper_calib, s.sds]
                                .iter()
                                .map(f64::to_string),
                        );
                        r.push(flag(s.in_distribution));
                        rec(&mut w, &r)?;
                    }
                }
                Samples::Classification(rows) => {
                    for s in rows {
                        let mut r = vec![t.trial.to_string()];
                        r.extend(s.x.iter().map(f64::to_string));
                        r.extend([
                            s.label.to_string(),
                            s.predicted.to_string(),
                            s.confidence.to_string(),
                            s.confidence_calib.to_string(),
                            s.sds.to_string(),
                        ]);
                        rec(&mut w, &r)?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

fn fmt_num(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.4e}")
    } else {
        format!("{v:.4}")
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn rec<I, T>(w: &mut csv::Writer<fs::File>, record: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(record).map_err(|e| Error::Format(e.to_string()))
}

/// Trial directories `trial_<n>` under `root`, sorted by `n`.
pub fn trial_dirs(root: &Path) -> Result<Vec<(usize, std::path::PathBuf)>> {
    let entries = fs::read_dir(root).map_err(|e| file_err(root, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry?;
        let name = entry.file_name();
        let Some(idx) = name.to_str().and_then(|n| n.strip_prefix("trial_")).and_then(|n| n.parse().ok()) else {
            continue;
        };
        if entry.path().is_dir() {
            out.push((idx, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

/// Rebuild the report from the `evaluation.json` of every trial under `root`
/// plus recorded failures, if any.
pub fn collect(root: &Path) -> Result<UqReport> {
    let mut trials = Vec::new();
    for (_, dir) in trial_dirs(root)? {
        let path = dir.join(EVALUATION_FILE);
        if path.is_file() {
            trials.push(read_json::<TrialEvaluation>(&path)?);
        }
    }
    let fpath = root.join(FAILURES_JSON);
    let failures: Vec<TrialFailure> = if fpath.is_file() { read_json(&fpath)? } else { Vec::new() };
    let Some(first) = trials.first() else {
        return Err(file_err(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no trial evaluations found"),
        ));
    };
    if trials.iter().any(|t| t.task != first.task) {
        return Err(Error::Format("trial evaluations mix regression and classification".into()));
    }
    Ok(UqReport::new(first.task, trials, failures))
}

pub fn write_failures(root: &Path, failures: &[TrialFailure]) -> Result<()> {
    let path = root.join(FAILURES_JSON);
    if failures.is_empty() {
        if path.is_file() {
            fs::remove_file(&path)?;
        }
        return Ok(());
    }
    write_json(&path, &failures)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_mean_and_standard_error() {
        let a = Aggregate::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(a.mean, 2.5);
        // sample sd = sqrt(5/3)
        assert!((a.se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(Aggregate::of(&[7.0]).unwrap().se, 0.0);
        assert!(Aggregate::of(&[]).is_none());
    }

    #[test]
    fn number_formatting() {
        assert_eq!(fmt_num(8.48), "8.4800");
        assert_eq!(fmt_num(0.0), "0.0000");
        assert_eq!(fmt_num(2.5e-5), "2.5000e-5");
    }
}
