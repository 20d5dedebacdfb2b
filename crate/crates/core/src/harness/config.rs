//! Experiment configuration (JSON, versioned, unknown keys rejected).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::base::BaseConfig;
use crate::cls_uq::ClsUqConfig;
use crate::data::NoiseSpec;
use crate::error::{Error, Result};
use crate::reg_uq::RegUqConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    #[default]
    Posthoc,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Cubic {
        #[serde(default = "default_cubic_train")]
        n_train: usize,
        #[serde(default = "default_cubic_test")]
        n_test: usize,
        noise: NoiseSpec,
    },
    Blobs {
        n: usize,
        classes: usize,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default)]
        flip_rate: f64,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    Csv {
        path: PathBuf,
        target_column: String,
        #[serde(default = "yes")]
        header: bool,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
}

fn default_cubic_train() -> usize {
    2000
}
fn default_cubic_test() -> usize {
    1000
}
fn default_radius() -> f64 {
    2.0
}
fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub task: Task,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub base: BaseConfig,
    #[serde(default)]
    pub reg_uq: RegUqConfig,
    #[serde(default)]
    pub cls_uq: ClsUqConfig,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Trial `i` uses `seed + i` unless `seeds` is given.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub training_mode: TrainingMode,
    /// Fraction of the training rows held out for validation (OOD threshold).
    #[serde(default = "default_val")]
    pub val_fraction: f64,
    /// Fraction of the training rows held out to train the classification calibration head.
    #[serde(default = "default_calib")]
    pub calib_fraction: f64,
    #[serde(default = "default_ood_alpha")]
    pub ood_alpha: f64,
    #[serde(default = "default_piece_bins")]
    pub piece_bins: usize,
    #[serde(default = "default_ece_bins")]
    pub ece_bins: usize,
    /// Miscoverage level for Winkler and PIECE; defaults to `1 − (τ⁺ + τ⁻)/2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval_alpha: Option<f64>,
}

fn default_trials() -> usize {
    1
}
fn default_output() -> PathBuf {
    PathBuf::from("spcuq-out")
}
fn default_val() -> f64 {
    0.1
}
fn default_calib() -> f64 {
    0.1
}
fn default_ood_alpha() -> f64 {
    0.95
}
fn default_piece_bins() -> usize {
    10
}
fn default_ece_bins() -> usize {
    15
}

impl ExperimentConfig {
    /// Minimal config for a dataset with every other field at its default.
    pub fn new(task: Task, dataset: DatasetConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            task,
            dataset,
            base: BaseConfig::default(),
            reg_uq: RegUqConfig::default(),
            cls_uq: ClsUqConfig::default(),
            trials: default_trials(),
            seed: 0,
            seeds: None,
            output_dir: default_output(),
            training_mode: TrainingMode::Posthoc,
            val_fraction: default_val(),
            calib_fraction: default_calib(),
            ood_alpha: default_ood_alpha(),
            piece_bins: default_piece_bins(),
            ece_bins: default_ece_bins(),
            interval_alpha: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    /// Everything that can be checked without touching the data.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be positive".into()));
        }
        if let Some(seeds) = &self.seeds {
            if seeds.len() < self.trials {
                return Err(Error::Config(format!("{} seeds given for {} trials", seeds.len(), self.trials)));
            }
        }
        for (name, f) in [("val_fraction", self.val_fraction), ("calib_fraction", self.calib_fraction)] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {f}")));
            }
        }
        if self.val_fraction + self.calib_fraction >= 1.0 {
            return Err(Error::Config("val_fraction + calib_fraction must leave training rows".into()));
        }
        if !(self.ood_alpha > 0.0 && self.ood_alpha < 1.0) {
            return Err(Error::Config(format!("ood_alpha must be in (0, 1), got {}", self.ood_alpha)));
        }
        if self.piece_bins == 0 || self.ece_bins == 0 {
            return Err(Error::Config("bin counts must be positive".into()));
        }
        if let Some(a) = self.interval_alpha {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::Config(format!("interval_alpha must be in (0, 1), got {a}")));
            }
        }
        self.base.validate()?;
        match self.task {
            Task::Regression => self.reg_uq.validate()?,
            Task::Classification => {
                self.cls_uq.validate()?;
                if self.training_mode == TrainingMode::Joint {
                    return Err(Error::Config("joint training is only available for regression".into()));
                }
            }
        }
        match &self.dataset {
            DatasetConfig::Cubic { n_train, n_test, noise } => {
                if self.task != Task::Regression {
                    return Err(Error::Config("the cubic dataset is a regression task".into()));
                }
                if *n_train == 0 || *n_test == 0 {
                    return Err(Error::Config("cubic dataset needs train and test rows".into()));
                }
                noise.validate()?;
            }
            DatasetConfig::Blobs {
                n,
                classes,
                radius,
                sigma,
                flip_rate,
                test_fraction,
            } => {
                if self.task != Task::Classification {
                    return Err(Error::Config("the blobs dataset is a classification task".into()));
                }
                if *classes < 2 || *n == 0 {
                    return Err(Error::Config("blobs need at least two classes and one row".into()));
                }
                if !(radius.is_finite() && *sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::Config("blob radius must be finite and sigma positive".into()));
                }
                if !(0.0..1.0).contains(flip_rate) {
                    return Err(Error::Config(format!("flip_rate must be in [0, 1), got {flip_rate}")));
                }
                check_test_fraction(*test_fraction)?;
            }
            DatasetConfig::Csv { path, test_fraction, .. } => {
                if self.task != Task::Regression {
                    return Err(Error::Config("CSV datasets are regression tables".into()));
                }
                check_test_fraction(*test_fraction)?;
                if !path.is_file() {
                    return Err(Error::Config(format!("CSV file not found: {}", path.display())));
                }
            }
        }
        Ok(())
    }

    pub fn trial_seed(&self, index: usize) -> u64 {
        match &self.seeds {
            Some(s) => s[index],
            None => self.seed.wrapping_add(index as u64),
        }
    }

    pub fn interval_alpha(&self) -> f64 {
        self.interval_alpha
            .unwrap_or(1.0 - 0.5 * (self.reg_uq.tau_upper + self.reg_uq.tau_lower))
    }

    /// Swap the noise law of a cubic dataset.
    pub fn set_noise(&mut self, noise: NoiseSpec) -> Result<()> {
        match &mut self.dataset {
            DatasetConfig::Cubic { noise: n, .. } => {
                *n = noise;
                Ok(())
            }
            _ => Err(Error::Config("--noise only applies to the cubic dataset".into())),
        }
    }
}

fn check_test_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("test_fraction must be in (0, 1), got {f}")))
    }
}
