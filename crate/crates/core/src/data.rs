//! Datasets: the cubic benchmark, Gaussian blobs, CSV tables, standardization and splits.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Additive noise law; samples are centred by subtracting the law's mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    Lognormal { mu: f64, sigma: f64 },
    Trimodal { weights: [f64; 3], means: [f64; 3], sigma: f64 },
    Gaussian { sigma: f64 },
    None,
}

impl NoiseSpec {
    pub fn lognormal() -> Self {
        NoiseSpec::Lognormal { mu: 1.5, sigma: 1.0 }
    }

    pub fn trimodal() -> Self {
        NoiseSpec::Trimodal {
            weights: [0.4, 0.3, 0.3],
            means: [0.0, 40.0, -10.0],
            sigma: 1.0,
        }
    }

    pub fn gaussian() -> Self {
        NoiseSpec::Gaussian { sigma: 8.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let sigma = match self {
            NoiseSpec::Lognormal { sigma, .. } | NoiseSpec::Gaussian { sigma } => *sigma,
            NoiseSpec::Trimodal { weights, sigma, .. } => {
                let sum: f64 = weights.iter().sum();
                if weights.iter().any(|w| *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!("mixture weights must be non-negative and sum to 1, got {sum}")));
                }
                *sigma
            }
            NoiseSpec::None => return Ok(()),
        };
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma must be positive, got {sigma}")));
        }
        Ok(())
    }

    /// Mean of the uncentred law.
    pub fn mean(&self) -> f64 {
        match self {
            NoiseSpec::Lognormal { mu, sigma } => (mu + sigma * sigma / 2.0).exp(),
            NoiseSpec::Trimodal { weights, means, .. } => weights.iter().zip(means).map(|(w, m)| w * m).sum(),
            NoiseSpec::Gaussian { .. } | NoiseSpec::None => 0.0,
        }
    }

    /// Mean-centred noise sampler.
    pub fn sampler(&self) -> Result<NoiseSampler> {
        self.validate()?;
        let kind = match *self {
            NoiseSpec::Lognormal { mu, sigma } => {
                SamplerKind::Lognormal(LogNormal::new(mu, sigma).map_err(|e| Error::Config(e.to_string()))?)
            }
            NoiseSpec::Trimodal { weights, means, sigma } => SamplerKind::Mixture {
                weights,
                means,
                unit: Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?,
            },
            NoiseSpec::Gaussian { sigma } => {
                SamplerKind::Gaussian(Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?)
            }
            NoiseSpec::None => SamplerKind::None,
        };
        Ok(NoiseSampler { kind, offset: self.mean() })
    }
}

impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lognormal" => Ok(Self::lognormal()),
            "trimodal" => Ok(Self::trimodal()),
            "gaussian" => Ok(Self::gaussian()),
            "none" => Ok(NoiseSpec::None),
            other => Err(Error::Config(format!("unknown noise law '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Lognormal(LogNormal<f64>),
    Mixture { weights: [f64; 3], means: [f64; 3], unit: Normal<f64> },
    Gaussian(Normal<f64>),
    None,
}

#[derive(Debug, Clone)]
pub struct NoiseSampler {
    kind: SamplerKind,
    offset: f64,
}

impl NoiseSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let raw = match &self.kind {
            SamplerKind::Lognormal(d) => d.sample(rng),
            SamplerKind::Mixture { weights, means, unit } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut comp = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        comp = i;
                        break;
                    }
                }
                means[comp] + unit.sample(rng)
            }
            SamplerKind::Gaussian(d) => d.sample(rng),
            SamplerKind::None => 0.0,
        };
        raw - self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Calib,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Calib => "calib",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "calib" => Ok(Split::Calib),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split label '{other}'"))),
        }
    }
}

/// Per-column affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Column statistics over `rows`; zero-variance columns get unit scale.
    pub fn fit(m: &Matrix, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InsufficientData { needed: 1, have: 0 });
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; m.cols()];
        for &r in rows {
            for (acc, v) in mean.iter_mut().zip(m.row(r)) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n);
        let mut var = vec![0.0; m.cols()];
        for &r in rows {
            for ((acc, v), mu) in var.iter_mut().zip(m.row(r)).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let std = var.iter().map(|v| if *v > 0.0 { (v / n).sqrt() } else { 1.0 }).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        out
    }

    pub fn invert(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.std[c] + self.mean[c];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    /// One column for regression, one-hot rows for classification.
    pub targets: Matrix,
    pub split: Vec<Split>,
    pub in_distribution: Vec<bool>,
    /// Feature standardization, if applied.
    pub standardization: Option<Standardization>,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub source: String,
}

impl Dataset {
    pub fn new(features: Matrix, targets: Matrix, source: impl Into<String>) -> Result<Self> {
        if features.rows() != targets.rows() {
            return Err(crate::error::shape_err("Dataset", features.rows(), targets.rows()));
        }
        let n = features.rows();
        Ok(Self {
            feature_names: (0..features.cols()).map(|i| format!("x{i}")).collect(),
            target_names: (0..targets.cols()).map(|i| format!("y{i}")).collect(),
            features,
            targets,
            split: vec![Split::Train; n],
            in_distribution: vec![true; n],
            standardization: None,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn subset(&self, split: Split) -> (Matrix, Matrix) {
        let idx = self.indices(split);
        (self.features.select_rows(&idx), self.targets.select_rows(&idx))
    }

    /// Class index per row, for one-hot targets.
    pub fn labels(&self) -> Vec<usize> {
        self.targets.iter_rows().map(|r| crate::cls_uq::argmax(r).0).collect()
    }

    /// Write a CSV snapshot: `f:` feature columns, `t:` target columns, then `split` and `in_distribution`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
        let mut header: Vec<String> = self.feature_names.iter().map(|n| format!("f:{n}")).collect();
        header.extend(self.target_names.iter().map(|n| format!("t:{n}")));
        header.push("split".into());
        header.push("in_distribution".into());
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(f64::to_string).collect();
            rec.extend(self.targets.row(i).iter().map(f64::to_string));
            rec.push(self.split[i].to_string());
            rec.push(u8::from(self.in_distribution[i]).to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a snapshot produced by [`Dataset::write_csv`].
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(csv_err)?;
        let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
        let feat: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with("f:")).collect();
        let targ: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with("t:")).collect();
        let split_col = header.iter().position(|h| h == "split");
        let id_col = header.iter().position(|h| h == "in_distribution");
        let (Some(split_col), Some(id_col)) = (split_col, id_col) else {
            return Err(Error::Format(format!("{}: not a dataset snapshot", path.display())));
        };
        if feat.is_empty() || targ.is_empty() {
            return Err(Error::Format(format!("{}: snapshot has no feature or target columns", path.display())));
        }
        let (mut fx, mut ty, mut split, mut id) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != header.len() {
                return Err(Error::Format(format!("row {row}: expected {} fields, got {}", header.len(), rec.len())));
            }
            for &c in &feat {
                fx.push(parse_cell(&rec[c], row, c)?);
            }
            for &c in &targ {
                ty.push(parse_cell(&rec[c], row, c)?);
            }
            split.push(rec[split_col].parse::<Split>().map_err(|e| Error::Format(format!("row {row}: {e}")))?);
            id.push(match &rec[id_col] {
                "1" => true,
                "0" => false,
                other => return Err(Error::Format(format!("row {row}: bad in_distribution flag '{other}'"))),
            });
        }
        let n = split.len();
        let mut ds = Dataset::new(
            Matrix::from_vec(n, feat.len(), fx)?,
            Matrix::from_vec(n, targ.len(), ty)?,
            path.display().to_string(),
        )?;
        ds.feature_names = feat.iter().map(|&c| header[c][2..].to_owned()).collect();
        ds.target_names = targ.iter().map(|&c| header[c][2..].to_owned()).collect();
        ds.split = split;
        ds.in_distribution = id;
        Ok(ds)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn parse_cell(s: &str, row: usize, col: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("row {row}, column {col}: non-numeric cell '{s}'")))
}

/// `y = x³ + ε − E[ε]`; train x ~ U[−4, 4], test x ~ U[−6, 6] with |x| > 4 flagged OOD.
pub fn generate_cubic(n_train: usize, n_test: usize, noise: &NoiseSpec, seed: u64) -> Result<Dataset> {
    let sampler = noise.sampler()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_train + n_test;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let half = if i < n_train { 4.0 } else { 6.0 };
        let x: f64 = rng.gen_range(-half..=half);
        xs.push(x);
        ys.push(x * x * x + sampler.sample(&mut rng));
    }
    let mut ds = Dataset::new(Matrix::column(&xs), Matrix::column(&ys), format!("cubic:{noise:?}"))?;
    ds.feature_names = vec!["x".into()];
    ds.target_names = vec!["y".into()];
    for i in n_train..n {
        ds.split[i] = Split::Test;
        ds.in_distribution[i] = xs[i].abs() <= 4.0;
    }
    Ok(ds)
}

/// Load a numeric CSV table. `target_column` is a header name, or a 0-based index when `header` is false.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str, header: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .from_path(path)
        .map_err(csv_err)?;
    let names: Option<Vec<String>> = if header {
        Some(rdr.headers().map_err(csv_err)?.iter().map(|s| s.trim().to_owned()).collect())
    } else {
        None
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let vals = rec.iter().enumerate().map(|(c, s)| parse_cell(s, row, c)).collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if vals.len() != first.len() {
                return Err(Error::Format(format!("row {row}: expected {} fields, got {}", first.len(), vals.len())));
            }
        }
        rows.push(vals);
    }
    let width = names.as_ref().map(Vec::len).or_else(|| rows.first().map(Vec::len)).unwrap_or(0);
    if let Some(pos) = rows.iter().position(|r| r.len() != width) {
        return Err(Error::Format(format!("row {pos}: expected {width} fields, got {}", rows[pos].len())));
    }
    let target = match &names {
        Some(n) => n.iter().position(|h| h == target_column),
        None => target_column.parse::<usize>().ok().filter(|&i| i < width),
    }
    .ok_or_else(|| Error::Format(format!("unknown target column '{target_column}'")))?;
    if rows.is_empty() {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    let n = rows.len();
    let mut fx = Vec::with_capacity(n * (width - 1));
    let mut ty = Vec::with_capacity(n);
    for r in &rows {
        for (c, v) in r.iter().enumerate() {
            if c == target {
                ty.push(*v);
            } else {
                fx.push(*v);
            }
        }
    }
    let mut ds = Dataset::new(Matrix::from_vec(n, width - 1, fx)?, Matrix::column(&ty), path.display().to_string())?;
    if let Some(names) = names {
        ds.target_names = vec![names[target].clone()];
        ds.feature_names = names.into_iter().enumerate().filter(|(c, _)| *c != target).map(|(_, s)| s).collect();
    }
    Ok(ds)
}

/// Standardize features with statistics of the train rows.
pub fn standardize(ds: &Dataset) -> Result<Dataset> {
    if ds.standardization.is_some() {
        return Err(Error::Input("dataset is already standardized".into()));
    }
    let stats = Standardization::fit(&ds.features, &ds.indices(Split::Train))?;
    let mut out = ds.clone();
    out.features = stats.apply(&ds.features);
    out.standardization = Some(stats);
    Ok(out)
}

/// Undo [`standardize`].
pub fn destandardize(ds: &Dataset) -> Result<Dataset> {
    let stats = ds
        .standardization
        .as_ref()
        .ok_or_else(|| Error::Input("dataset is not standardized".into()))?;
    let mut out = ds.clone();
    out.features = stats.invert(&ds.features);
    out.standardization = None;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    #[serde(default)]
    pub val: f64,
    #[serde(default)]
    pub calib: f64,
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.calib];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || parts.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::Config(format!("split fractions must be in [0, 1] and sum to at most 1: {self:?}")));
        }
        Ok(())
    }
}

/// Reassign every row to train/val/calib by the given fractions under a seeded shuffle; the remainder is test.
pub fn split(ds: &Dataset, fractions: SplitFractions, seed: u64) -> Result<Dataset> {
    fractions.validate()?;
    let n = ds.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (fractions.train * n as f64).round() as usize;
    let n_val = (fractions.val * n as f64).round() as usize;
    let n_calib = ((fractions.calib * n as f64).round() as usize).min(n - (n_train + n_val).min(n));
    let mut out = ds.clone();
    for (pos, &i) in order.iter().enumerate() {
        out.split[i] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else if pos < n_train + n_val + n_calib {
            Split::Calib
        } else {
            Split::Test
        };
    }
    Ok(out)
}

/// Move a seeded `fraction` of the `from` rows to split `to`.
pub fn holdout(ds: &Dataset, from: Split, to: Split, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("holdout fraction must be in [0, 1), got {fraction}")));
    }
    let mut idx = ds.indices(from);
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = (fraction * idx.len() as f64).round() as usize;
    let mut out = ds.clone();
    for &i in &idx[..take] {
        out.split[i] = to;
    }
    Ok(out)
}

/// `k` centers evenly spaced on a circle of the given radius.
pub fn circle_centers(k: usize, radius: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
            vec![radius * a.cos(), radius * a.sin()]
        })
        .collect()
}

fn check_blob_params(centers: &[Vec<f64>], sigma: f64, flip: f64) -> Result<()> {
    if centers.len() < 2 {
        return Err(Error::Config("blobs need at least two classes".into()));
    }
    let d = centers[0].len();
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return Err(Error::Config("blob centers must share a positive dimension".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("blob sigma must be positive, got {sigma}")));
    }
    if !(0.0..1.0).contains(&flip) {
        return Err(Error::Config(format!("label flip rate must be in [0, 1), got {flip}")));
    }
    Ok(())
}

/// Isotropic Gaussian clusters with uniform class priors. With probability
/// `flip_rate` a row's label is replaced by a uniformly chosen other class.
pub fn generate_blobs(n: usize, centers: &[Vec<f64>], sigma: f64, flip_rate: f64, seed: u64) -> Result<Dataset> {
    check_blob_params(centers, sigma, flip_rate)?;
    let k = centers.len();
    let d = centers[0].len();
    let unit = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fx = Vec::with_capacity(n * d);
    let mut ty = vec![0.0; n * k];
    for i in 0..n {
        let class = rng.gen_range(0..k);
        for &c in &centers[class] {
            fx.push(c + unit.sample(&mut rng));
        }
        let mut label = class;
        if rng.gen::<f64>() < flip_rate {
            let other = rng.gen_range(0..k - 1);
            label = if other >= class { other + 1 } else { other };
        }
        ty[i * k + label] = 1.0;
    }
    let mut ds = Dataset::new(Matrix::from_vec(n, d, fx)?, Matrix::from_vec(n, k, ty)?, "blobs")?;
    ds.target_names = (0..k).map(|c| format!("class{c}")).collect();
    Ok(ds)
}

/// True label distribution at `x` under the blob model.
pub fn blob_class_probabilities(x: &[f64], centers: &[Vec<f64>], sigma: f64, flip_rate: f64) -> Result<Vec<f64>> {
    check_blob_params(centers, sigma, flip_rate)?;
    if x.len() != centers[0].len() {
        return Err(crate::error::shape_err("blob_class_probabilities", centers[0].len(), x.len()));
    }
    let logs: Vec<f64> = centers
        .iter()
        .map(|c| -c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * sigma * sigma))
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let s: f64 = w.iter().sum();
    let k = centers.len() as f64;
    Ok(w.iter()
        .map(|v| {
            let post = v / s;
            (1.0 - flip_rate) * post + flip_rate * (1.0 - post) / (k - 1.0)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_defaults_and_ood_flags() {
        let ds = generate_cubic(2000, 1000, &NoiseSpec::gaussian(), 1).unwrap();
        assert_eq!(ds.indices(Split::Train).len(), 2000);
        assert_eq!(ds.indices(Split::Test).len(), 1000);
        for i in 0..ds.len() {
            let x = ds.features.get(i, 0);
            assert_eq!(ds.in_distribution[i], x.abs() <= 4.0);
            if ds.split[i] == Split::Train {
                assert!(x.abs() <= 4.0);
            }
        }
        assert!(ds.in_distribution.iter().any(|f| !f));
    }

    #[test]
    fn noiseless_cubic_is_exact() {
        let ds = generate_cubic(50, 50, &NoiseSpec::None, 2).unwrap();
        for i in 0..ds.len() {
            let x = ds.features.get(i, 0);
            assert_eq!(ds.targets.get(i, 0), x * x * x);
        }
    }

    #[test]
    fn lognormal_offset() {
        assert!((NoiseSpec::lognormal().mean() - 2f64.exp()).abs() < 1e-12);
        assert!((NoiseSpec::trimodal().mean() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn bad_noise_rejected() {
        assert!(NoiseSpec::Gaussian { sigma: 0.0 }.validate().is_err());
        let bad = NoiseSpec::Trimodal {
            weights: [0.5, 0.3, 0.3],
            means: [0.0; 3],
            sigma: 1.0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn noise_spec_json_shape() {
        let s: NoiseSpec = serde_json::from_str(r#"{"kind":"gaussian","sigma":8}"#).unwrap();
        assert_eq!(s, NoiseSpec::gaussian());
        assert!(serde_json::from_str::<NoiseSpec>(r#"{"kind":"gaussian","sigma":8,"x":1}"#).is_err());
    }

    #[test]
    fn split_nine_to_one() {
        let ds = Dataset::new(Matrix::zeros(100, 2), Matrix::zeros(100, 1), "t").unwrap();
        let f = SplitFractions {
            train: 0.9,
            val: 0.0,
            calib: 0.0,
        };
        let a = split(&ds, f, 7).unwrap();
        assert_eq!(a.indices(Split::Train).len(), 90);
        assert_eq!(a.indices(Split::Test).len(), 10);
        assert_eq!(a, split(&ds, f, 7).unwrap());
        assert_ne!(a.split, split(&ds, f, 8).unwrap().split);
        assert!(split(&ds, SplitFractions { train: 0.8, val: 0.3, calib: 0.0 }, 1).is_err());
    }

    #[test]
    fn holdout_moves_fraction() {
        let ds = Dataset::new(Matrix::zeros(100, 1), Matrix::zeros(100, 1), "t").unwrap();
        let h = holdout(&ds, Split::Train, Split::Calib, 0.1, 3).unwrap();
        assert_eq!(h.indices(Split::Calib).len(), 10);
        assert_eq!(h.indices(Split::Train).len(), 90);
    }

    #[test]
    fn standardize_roundtrip() {
        let ds = generate_cubic(100, 20, &NoiseSpec::gaussian(), 3).unwrap();
        let s = standardize(&ds).unwrap();
        let train = s.indices(Split::Train);
        let m: f64 = train.iter().map(|&i| s.features.get(i, 0)).sum::<f64>() / train.len() as f64;
        assert!(m.abs() < 1e-12);
        let back = destandardize(&s).unwrap();
        for (a, b) in back.features.as_slice().iter().zip(ds.features.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn blob_probabilities_at_center() {
        let centers = circle_centers(2, 10.0);
        let p = blob_class_probabilities(&centers[0], &centers, 0.5, 0.3).unwrap();
        assert!((p[0] - 0.7).abs() < 1e-12 && (p[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn separated_blobs_without_flips_are_pure() {
        let centers = circle_centers(3, 20.0);
        let ds = generate_blobs(300, &centers, 0.5, 0.0, 4).unwrap();
        let labels = ds.labels();
        for i in 0..ds.len() {
            let p = blob_class_probabilities(ds.features.row(i), &centers, 0.5, 0.0).unwrap();
            assert_eq!(crate::cls_uq::argmax(&p).0, labels[i]);
        }
        assert_eq!(ds, generate_blobs(300, &centers, 0.5, 0.0, 4).unwrap());
    }

    #[test]
    fn snapshot_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let ds = generate_cubic(30, 30, &NoiseSpec::trimodal(), 5).unwrap();
        ds.write_csv(&p).unwrap();
        let back = Dataset::read_csv(&p).unwrap();
        assert_eq!(back.features, ds.features);
        assert_eq!(back.targets, ds.targets);
        assert_eq!(back.split, ds.split);
        assert_eq!(back.in_distribution, ds.in_distribution);
    }

    #[test]
    fn load_csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "a,b,y\n1,2,3\n4,5,6\n").unwrap();
        let ds = load_csv(&p, "y", true).unwrap();
        assert_eq!(ds.features.cols(), 2);
        assert_eq!(ds.targets.col_values(0), vec![3.0, 6.0]);
        assert!(matches!(load_csv(&p, "z", true), Err(Error::Format(_))));
        std::fs::write(&p, "a,b,y\n1,2,3\n4,5\n").unwrap();
        let e = load_csv(&p, "y", true).unwrap_err().to_string();
        assert!(e.contains("row 1"), "{e}");
        std::fs::write(&p, "a,b,y\n1,2,3\n4,x,6\n").unwrap();
        let e = load_csv(&p, "y", true).unwrap_err().to_string();
        assert!(e.contains("row 1"), "{e}");
        std::fs::write(&p, "1,2,3\n4,5,6\n").unwrap();
        assert_eq!(load_csv(&p, "0", false).unwrap().targets.col_values(0), vec![1.0, 4.0]);
    }
}
