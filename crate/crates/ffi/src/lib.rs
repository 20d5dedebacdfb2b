//! C ABI for `spcuq`.
//!
//! Every fallible function returns a [`SpcuqStatus`] and writes results through
//! out-pointers. On failure the message is kept per thread and can be read with
//! [`spcuq_last_error`]. Panics are caught at the boundary and reported as
//! `SPCUQ_STATUS_PANIC`.
//!
//! A [`SpcuqModel`] is an opaque handle to a trained trial directory. It is
//! immutable once loaded, so one handle may be used from several threads at
//! once; it must be released with [`spcuq_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use spcuq::harness::{self, ExperimentConfig, Task, TrialPredictor};
use spcuq::{metrics, reg_uq, spa, Error, Matrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpcuqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Numeric = 4,
    Domain = 5,
    InsufficientData = 6,
    Format = 7,
    Io = 8,
    Config = 9,
    /// Some trials of an experiment failed; the others were reported.
    PartialFailure = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpcuqTask {
    Regression = 0,
    Classification = 1,
}

/// One regression prediction with plain and calibrated intervals.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpcuqRegPrediction {
    pub y_hat: f64,
    pub lower: f64,
    pub upper: f64,
    pub lower_calib: f64,
    pub upper_calib: f64,
    pub z: f64,
    pub z_upper: f64,
    pub z_lower: f64,
    pub sds: f64,
}

/// Opaque trained model.
pub struct SpcuqModel {
    inner: TrialPredictor,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SpcuqStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) => SpcuqStatus::Config,
            Error::Shape { .. } => SpcuqStatus::Shape,
            Error::Numeric(_) | Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } => SpcuqStatus::Numeric,
            Error::SideUndefined(_) | Error::Domain(_) => SpcuqStatus::Domain,
            Error::InsufficientData { .. } => SpcuqStatus::InsufficientData,
            Error::Format(_) | Error::Json(_) => SpcuqStatus::Format,
            Error::Input(_) => SpcuqStatus::InvalidArgument,
            Error::Io(_) => SpcuqStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SpcuqStatus::NullPointer, format!("{what} is NULL"))
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<SpcuqStatus, Failure>) -> SpcuqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            SpcuqStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn write<T>(p: *mut T, v: T, what: &str) -> Result<SpcuqStatus, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(v);
    Ok(SpcuqStatus::Ok)
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SpcuqStatus::InvalidArgument, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn flags(v: &[u8]) -> Vec<bool> {
    v.iter().map(|&b| b != 0).collect()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spcuq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the most recent failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn spcuq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn spcuq_status_name(status: SpcuqStatus) -> *const c_char {
    let s: &'static str = match status {
        SpcuqStatus::Ok => "ok\0",
        SpcuqStatus::NullPointer => "null pointer\0",
        SpcuqStatus::InvalidArgument => "invalid argument\0",
        SpcuqStatus::Shape => "shape mismatch\0",
        SpcuqStatus::Numeric => "numeric error\0",
        SpcuqStatus::Domain => "domain error\0",
        SpcuqStatus::InsufficientData => "insufficient data\0",
        SpcuqStatus::Format => "format error\0",
        SpcuqStatus::Io => "i/o error\0",
        SpcuqStatus::Config => "configuration error\0",
        SpcuqStatus::PartialFailure => "some trials failed\0",
        SpcuqStatus::Panic => "internal panic\0",
    };
    s.as_ptr().cast()
}

// ---- scalar and array functions ----

/// `2ab/(a+b)` for positive `a`, `b`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spcuq_harmonic_mean(a: f64, b: f64, out: *mut f64) -> SpcuqStatus {
    guard(|| write(out, spa::harmonic_mean(a, b)?, "out"))
}

/// Self-consistency discrepancy score of one `(MAR, MAR⁺, MAR⁻)` triple.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spcuq_sds(total: f64, upper: f64, lower: f64, out: *mut f64) -> SpcuqStatus {
    guard(|| write(out, spa::sds(&spa::MarTriple::new(total, upper, lower)?)?.value(), "out"))
}

/// `|MAR(t) − H(MAR⁺(t), MAR⁻(t))|` over `n` samples split at `t`.
///
/// # Safety
/// `samples` must point to `n` doubles; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spcuq_self_consistency_discrepancy(
    t: f64,
    samples: *const f64,
    n: usize,
    out: *mut f64,
) -> SpcuqStatus {
    guard(|| {
        let s = slice(samples, n, "samples")?;
        write(out, spa::self_consistency_discrepancy(t, s)?, "out")
    })
}

/// Classification SDS of a probability vector and its per-class total MAR estimates.
///
/// # Safety
/// `softmax` and `z_total` must point to `k` doubles; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spcuq_sds_classification(
    softmax: *const f64,
    z_total: *const f64,
    k: usize,
    out: *mut f64,
) -> SpcuqStatus {
    guard(|| {
        let p = slice(softmax, k, "softmax")?;
        let z = slice(z_total, k, "z_total")?;
        write(out, spa::sds_classification(p, z)?.value(), "out")
    })
}

/// Interval scale factors `(s⁺, s⁻)` from the five head outputs.
///
/// # Safety
/// `out_upper` and `out_lower` must be valid for one write each.
#[no_mangle]
pub unsafe extern "C" fn spcuq_calibration_factors(
    q_upper: f64,
    q_lower: f64,
    z: f64,
    z_upper: f64,
    z_lower: f64,
    out_upper: *mut f64,
    out_lower: *mut f64,
) -> SpcuqStatus {
    guard(|| {
        let o = reg_uq::RegUqOutput {
            q_upper,
            q_lower,
            z,
            z_upper,
            z_lower,
        };
        let f = reg_uq::calibration_factors(&o, reg_uq::DEFAULT_FACTOR_EPSILON);
        write(out_upper, f.upper, "out_upper")?;
        write(out_lower, f.lower, "out_lower")
    })
}

/// AUROC of `scores` with `labels[i] != 0` as the positive class (ties count one half).
///
/// # Safety
/// `scores` and `labels` must point to `n` elements; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spcuq_auroc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> SpcuqStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let l = slice(labels, n, "labels")?;
        write(out, metrics::auroc_labeled(s, &flags(l))?, "out")
    })
}

/// Equal-width expected calibration error.
///
/// # Safety
/// `confidences` and `correct` must point to `n` elements; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spcuq_ece(
    confidences: *const f64,
    correct: *const u8,
    n: usize,
    n_bins: usize,
    out: *mut f64,
) -> SpcuqStatus {
    guard(|| {
        let c = slice(confidences, n, "confidences")?;
        let k = slice(correct, n, "correct")?;
        write(out, metrics::ece(c, &flags(k), n_bins)?.value, "out")
    })
}

/// Spearman rank correlation with average ranks for ties.
///
/// # Safety
/// `a` and `b` must point to `n` doubles; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spcuq_spearman(a: *const f64, b: *const f64, n: usize, out: *mut f64) -> SpcuqStatus {
    guard(|| {
        let (a, b) = (slice(a, n, "a")?, slice(b, n, "b")?);
        write(out, metrics::spearman(a, b)?, "out")
    })
}

unsafe fn intervals(lower: *const f64, upper: *const f64, n: usize) -> Result<Vec<(f64, f64)>, Failure> {
    let (l, u) = (slice(lower, n, "lower")?, slice(upper, n, "upper")?);
    Ok(l.iter().copied().zip(u.iter().copied()).collect())
}

/// Fraction of targets inside their closed interval.
///
/// # Safety
/// `lower`, `upper` and `targets` must point to `n` doubles; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spcuq_picp(
    lower: *const f64,
    upper: *const f64,
    targets: *const f64,
    n: usize,
    out: *mut f64,
) -> SpcuqStatus {
    guard(|| {
        let iv = intervals(lower, upper, n)?;
        write(out, metrics::picp(&iv, slice(targets, n, "targets")?)?, "out")
    })
}

/// Mean Winkler interval score at miscoverage level `alpha`.
///
/// # Safety
/// `lower`, `upper` and `targets` must point to `n` doubles; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spcuq_winkler(
    lower: *const f64,
    upper: *const f64,
    targets: *const f64,
    n: usize,
    alpha: f64,
    out: *mut f64,
) -> SpcuqStatus {
    guard(|| {
        let iv = intervals(lower, upper, n)?;
        write(out, metrics::winkler(&iv, slice(targets, n, "targets")?, alpha)?, "out")
    })
}

// ---- experiments and models ----

/// Run the experiment described by a JSON config file. `output_dir` may be
/// NULL to use the directory named in the config. Returns
/// `SPCUQ_STATUS_PARTIAL_FAILURE` when some trials failed.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `output_dir` NULL or one.
#[no_mangle]
pub unsafe extern "C" fn spcuq_run_experiment(
    config_path: *const c_char,
    output_dir: *const c_char,
    workers: usize,
) -> SpcuqStatus {
    guard(|| {
        let mut cfg = ExperimentConfig::load(path(config_path, "config_path")?)?;
        if !output_dir.is_null() {
            cfg.output_dir = path(output_dir, "output_dir")?;
        }
        let report = harness::run(&cfg, &cfg.output_dir, workers)?;
        if report.failures.is_empty() {
            Ok(SpcuqStatus::Ok)
        } else {
            let msgs: Vec<String> = report
                .failures
                .iter()
                .map(|f| format!("trial {}: {}", f.trial, f.error))
                .collect();
            Err(Failure(SpcuqStatus::PartialFailure, msgs.join("; ")))
        }
    })
}

/// Load a trained trial directory (`trial_<i>` of an experiment).
///
/// # Safety
/// `trial_dir` must be a NUL-terminated string; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spcuq_model_load(trial_dir: *const c_char, out: *mut *mut SpcuqModel) -> SpcuqStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = TrialPredictor::load(path(trial_dir, "trial_dir")?)?;
        write(out, Box::into_raw(Box::new(SpcuqModel { inner })), "out")
    })
}

/// Release a model; NULL is ignored.
///
/// # Safety
/// `model` must come from [`spcuq_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn spcuq_model_free(model: *mut SpcuqModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn model_ref<'a>(m: *const SpcuqModel) -> Result<&'a TrialPredictor, Failure> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

/// # Safety
/// `model` must be a live handle; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spcuq_model_task(model: *const SpcuqModel, out: *mut SpcuqTask) -> SpcuqStatus {
    guard(|| {
        let t = match model_ref(model)?.task() {
            Task::Regression => SpcuqTask::Regression,
            Task::Classification => SpcuqTask::Classification,
        };
        write(out, t, "out")
    })
}

/// Number of raw input features.
///
/// # Safety
/// `model` must be a live handle; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spcuq_model_input_dim(model: *const SpcuqModel, out: *mut usize) -> SpcuqStatus {
    guard(|| write(out, model_ref(model)?.input_dim(), "out"))
}

/// 1 for regression, the number of classes for classification.
///
/// # Safety
/// `model` must be a live handle; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spcuq_model_output_dim(model: *const SpcuqModel, out: *mut usize) -> SpcuqStatus {
    guard(|| write(out, model_ref(model)?.output_dim(), "out"))
}

unsafe fn features(x: *const f64, n: usize, d: usize) -> Result<Matrix, Failure> {
    let len = n
        .checked_mul(d)
        .ok_or_else(|| Failure(SpcuqStatus::InvalidArgument, "n * d overflows".into()))?;
    Ok(Matrix::from_vec(n, d, slice(x, len, "x")?.to_vec())?)
}

/// Predict `n` rows of `d` raw features (row-major) with a regression model.
///
/// # Safety
/// `x` must point to `n * d` doubles and `out` to `n` writable records.
#[no_mangle]
pub unsafe extern "C" fn spcuq_model_predict_regression(
    model: *const SpcuqModel,
    x: *const f64,
    n: usize,
    d: usize,
    out: *mut SpcuqRegPrediction,
) -> SpcuqStatus {
    guard(|| {
        let m = model_ref(model)?;
        let preds = m.predict_regression(&features(x, n, d)?)?;
        let out = slice_mut(out, n, "out")?;
        for (o, p) in out.iter_mut().zip(preds) {
            *o = SpcuqRegPrediction {
                y_hat: p.y_hat,
                lower: p.lower,
                upper: p.upper,
                lower_calib: p.lower_calib,
                upper_calib: p.upper_calib,
                z: p.z,
                z_upper: p.z_upper,
                z_lower: p.z_lower,
                sds: p.sds,
            };
        }
        Ok(SpcuqStatus::Ok)
    })
}

/// Predict `n` rows with a classification model. `probs` and `probs_calib`
/// receive `n * K` values (row-major, K from [`spcuq_model_output_dim`]);
/// `probs_calib` holds the gated, clamped, unnormalised corrections.
/// `sds`, `delta_c` and `gate` receive `n` values each. Any output may be NULL
/// to skip it.
///
/// # Safety
/// `x` must point to `n * d` doubles; non-NULL outputs must have the sizes above.
#[no_mangle]
pub unsafe extern "C" fn spcuq_model_predict_classification(
    model: *const SpcuqModel,
    x: *const f64,
    n: usize,
    d: usize,
    delta_0: f64,
    probs: *mut f64,
    probs_calib: *mut f64,
    sds: *mut f64,
    delta_c: *mut f64,
    gate: *mut u8,
) -> SpcuqStatus {
    guard(|| {
        let m = model_ref(model)?;
        let k = m.output_dim();
        let preds = m.predict_classification(&features(x, n, d)?, delta_0)?;
        let opt = |p: *mut f64, len: usize| -> Result<Option<&mut [f64]>, Failure> {
            if p.is_null() {
                Ok(None)
            } else {
                slice_mut(p, len, "output").map(Some)
            }
        };
        let (mut probs, mut probs_calib) = (opt(probs, n * k)?, opt(probs_calib, n * k)?);
        let (mut sds, mut delta_c) = (opt(sds, n)?, opt(delta_c, n)?);
        let mut gate = if gate.is_null() { None } else { Some(slice_mut(gate, n, "gate")?) };
        for (i, p) in preds.iter().enumerate() {
            if let Some(o) = probs.as_deref_mut() {
                o[i * k..(i + 1) * k].copy_from_slice(&p.probabilities);
            }
            if let Some(o) = probs_calib.as_deref_mut() {
                o[i * k..(i + 1) * k].copy_from_slice(&p.probabilities_calib);
            }
            if let Some(o) = sds.as_deref_mut() {
                o[i] = p.sds;
            }
            if let Some(o) = delta_c.as_deref_mut() {
                o[i] = p.delta_c;
            }
            if let Some(o) = gate.as_deref_mut() {
                o[i] = u8::from(p.gate_applied);
            }
        }
        Ok(SpcuqStatus::Ok)
    })
}
