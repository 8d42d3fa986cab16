//! C ABI for uqaudit.
//!
//! Every function returns a [`UqStatus`]; on failure the message is
//! available from [`uq_last_error`] on the same thread. Objects cross the
//! boundary as opaque handles that must be released with their `_free`
//! function. Output pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use uqaudit::audit::{parse_config, with_threads, Audit, MultiRunOptions, RecordStore, RunConfig};
use uqaudit::conformal::{calibrate_with, QuantileRule};
use uqaudit::parity::{self, Classification, ParityMetric};
use uqaudit::resampling::{plus_interval, IntervalMethod, PredictiveMatrix};
use uqaudit::stability::{self, StabilityProfile};
use uqaudit::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Validation = 3,
    Config = 4,
    Io = 5,
    Runtime = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UqParityMetric {
    EqualizedOddsTpr = 0,
    EqualizedOddsFpr = 1,
    DisparateImpact = 2,
    StatisticalParityDifference = 3,
    AccuracyParity = 4,
    LabelStabilityRatio = 5,
    JitterParity = 6,
    StdParity = 7,
    IqrParity = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UqClassification {
    Parity = 0,
    Discrimination = 1,
    ReverseDiscrimination = 2,
    Undefined = 3,
}

/// Member-by-sample predictive matrix.
pub struct UqMatrix {
    inner: PredictiveMatrix,
    profile: Option<StabilityProfile>,
}

/// Parsed audit configuration.
pub struct UqConfig {
    inner: RunConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> UqStatus {
    match e {
        Error::Config(_) => UqStatus::Config,
        Error::Io { .. } | Error::CorruptRecord { .. } | Error::Csv(_) => UqStatus::Io,
        e if e.is_user_error() => UqStatus::Validation,
        _ => UqStatus::Runtime,
    }
}

struct Fail(UqStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Fail {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(UqStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> UqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            UqStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            UqStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail(UqStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

fn opt_out(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn uq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a matrix from `members * samples` probabilities in row-major
/// order (member-major).
///
/// # Safety
/// `probabilities` must point to `members * samples` doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn uq_matrix_new(
    probabilities: *const f64,
    members: usize,
    samples: usize,
    threshold: f64,
    out_matrix: *mut *mut UqMatrix,
) -> UqStatus {
    guard(|| {
        let slot = out(out_matrix, "out_matrix")?;
        let len = members
            .checked_mul(samples)
            .ok_or_else(|| Fail(UqStatus::InvalidArgument, "matrix size overflows".into()))?;
        let data = slice(probabilities, len, "probabilities")?;
        if members == 0 || samples == 0 {
            return Err(Fail(UqStatus::InvalidArgument, "matrix must be nonempty".into()));
        }
        let rows = data.chunks(samples).map(<[f64]>::to_vec).collect();
        let inner = PredictiveMatrix::from_probabilities(rows, threshold)?;
        *slot = Box::into_raw(Box::new(UqMatrix { inner, profile: None }));
        Ok(())
    })
}

/// # Safety
/// `matrix` must come from [`uq_matrix_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uq_matrix_free(matrix: *mut UqMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

unsafe fn profile<'a>(matrix: *mut UqMatrix) -> Result<&'a StabilityProfile, Fail> {
    let m = matrix.as_mut().ok_or_else(|| null("matrix"))?;
    if m.profile.is_none() {
        m.profile = Some(StabilityProfile::from_matrix(&m.inner, false)?);
    }
    Ok(m.profile.as_ref().expect("profile set"))
}

unsafe fn copy_per_sample(
    matrix: *mut UqMatrix,
    dst: *mut f64,
    len: usize,
    pick: fn(&StabilityProfile) -> &[f64],
) -> UqStatus {
    guard(|| {
        let values = pick(profile(matrix)?);
        if len != values.len() {
            return Err(Fail(
                UqStatus::InvalidArgument,
                format!("output holds {len} values but the matrix has {} samples", values.len()),
            ));
        }
        if dst.is_null() {
            return Err(null("out_values"));
        }
        std::slice::from_raw_parts_mut(dst, len).copy_from_slice(values);
        Ok(())
    })
}

/// Number of samples (columns).
///
/// # Safety
/// `matrix` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn uq_matrix_samples(matrix: *const UqMatrix, out_samples: *mut usize) -> UqStatus {
    guard(|| {
        let m = matrix.as_ref().ok_or_else(|| null("matrix"))?;
        *out(out_samples, "out_samples")? = m.inner.samples();
        Ok(())
    })
}

/// Per-sample label stability; `out_values` holds `len == samples` doubles.
///
/// # Safety
/// `matrix` must be a live handle and `out_values` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn uq_matrix_label_stability(matrix: *mut UqMatrix, out_values: *mut f64, len: usize) -> UqStatus {
    copy_per_sample(matrix, out_values, len, |p| &p.label_stability)
}

/// Per-sample jitter.
///
/// # Safety
/// As for [`uq_matrix_label_stability`].
#[no_mangle]
pub unsafe extern "C" fn uq_matrix_jitter(matrix: *mut UqMatrix, out_values: *mut f64, len: usize) -> UqStatus {
    copy_per_sample(matrix, out_values, len, |p| &p.jitter)
}

/// Per-sample standard deviation (denominator b - 1).
///
/// # Safety
/// As for [`uq_matrix_label_stability`].
#[no_mangle]
pub unsafe extern "C" fn uq_matrix_std(matrix: *mut UqMatrix, out_values: *mut f64, len: usize) -> UqStatus {
    copy_per_sample(matrix, out_values, len, |p| &p.std)
}

/// Per-sample interquartile range.
///
/// # Safety
/// As for [`uq_matrix_label_stability`].
#[no_mangle]
pub unsafe extern "C" fn uq_matrix_iqr(matrix: *mut UqMatrix, out_values: *mut f64, len: usize) -> UqStatus {
    copy_per_sample(matrix, out_values, len, |p| &p.iqr)
}

/// Mean pairwise jitter over all member pairs.
///
/// # Safety
/// `matrix` must be a live handle; `out_jitter` writable.
#[no_mangle]
pub unsafe extern "C" fn uq_matrix_mean_jitter(matrix: *const UqMatrix, out_jitter: *mut f64) -> UqStatus {
    guard(|| {
        let m = matrix.as_ref().ok_or_else(|| null("matrix"))?;
        *out(out_jitter, "out_jitter")? = stability::jitter(&m.inner.labels)?;
        Ok(())
    })
}

/// Split conformal quantile of `n` nonconformity scores; +inf when the
/// calibration set is too small for `alpha`.
///
/// # Safety
/// `scores` must point to `n` doubles; `out_q_hat` writable.
#[no_mangle]
pub unsafe extern "C" fn uq_conformal_quantile(
    scores: *const f64,
    n: usize,
    alpha: f64,
    uncorrected: bool,
    out_q_hat: *mut f64,
) -> UqStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let rule = if uncorrected { QuantileRule::Uncorrected } else { QuantileRule::FiniteSample };
        let rec = calibrate_with(s, alpha, rule)?;
        *out(out_q_hat, "out_q_hat")? = rec.q_hat;
        Ok(())
    })
}

/// Jackknife+ bounds from `n` leave-one-out centers at the test point and
/// their residuals. Out-of-range order indices give -inf / +inf.
///
/// # Safety
/// `centers` and `residuals` must point to `n` doubles; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn uq_jackknife_plus_bounds(
    centers: *const f64,
    residuals: *const f64,
    n: usize,
    alpha: f64,
    out_lower: *mut f64,
    out_upper: *mut f64,
) -> UqStatus {
    guard(|| {
        let c = slice(centers, n, "centers")?;
        let r = slice(residuals, n, "residuals")?;
        let lo = out(out_lower, "out_lower")?;
        let hi = out(out_upper, "out_upper")?;
        let iv = plus_interval(c, r, alpha, IntervalMethod::JackknifePlus)?;
        *lo = iv.lower;
        *hi = iv.upper;
        Ok(())
    })
}

fn undefined_in(v: f64) -> Option<f64> {
    (!v.is_nan()).then_some(v)
}

/// `dis - priv`. NaN inputs mark undefined values; the result is NaN when
/// undefined.
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uq_parity_difference(dis: f64, privileged: f64, out_value: *mut f64) -> UqStatus {
    guard(|| {
        *out(out_value, "out_value")? = opt_out(parity::diff_metric(undefined_in(dis), undefined_in(privileged)));
        Ok(())
    })
}

/// `dis / priv`; NaN when undefined or `priv` is zero.
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uq_parity_ratio(dis: f64, privileged: f64, out_value: *mut f64) -> UqStatus {
    guard(|| {
        *out(out_value, "out_value")? = opt_out(parity::ratio_metric(undefined_in(dis), undefined_in(privileged)));
        Ok(())
    })
}

fn metric_of(m: UqParityMetric) -> ParityMetric {
    match m {
        UqParityMetric::EqualizedOddsTpr => ParityMetric::EqualizedOddsTpr,
        UqParityMetric::EqualizedOddsFpr => ParityMetric::EqualizedOddsFpr,
        UqParityMetric::DisparateImpact => ParityMetric::DisparateImpact,
        UqParityMetric::StatisticalParityDifference => ParityMetric::StatisticalParityDifference,
        UqParityMetric::AccuracyParity => ParityMetric::AccuracyParity,
        UqParityMetric::LabelStabilityRatio => ParityMetric::LabelStabilityRatio,
        UqParityMetric::JitterParity => ParityMetric::JitterParity,
        UqParityMetric::StdParity => ParityMetric::StdParity,
        UqParityMetric::IqrParity => ParityMetric::IqrParity,
    }
}

/// Classifies a parity value (NaN = undefined).
///
/// # Safety
/// `out_class` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uq_classify(
    metric: UqParityMetric,
    value: f64,
    favorable_positive: bool,
    tolerance: f64,
    out_class: *mut UqClassification,
) -> UqStatus {
    guard(|| {
        let slot = out(out_class, "out_class")?;
        let c = parity::classify_disparity(metric_of(metric), undefined_in(value), favorable_positive, tolerance)?;
        *slot = match c {
            Classification::Parity => UqClassification::Parity,
            Classification::Discrimination => UqClassification::Discrimination,
            Classification::ReverseDiscrimination => UqClassification::ReverseDiscrimination,
            Classification::Undefined => UqClassification::Undefined,
        };
        Ok(())
    })
}

/// Parses a YAML or JSON audit config.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_config` writable.
#[no_mangle]
pub unsafe extern "C" fn uq_config_load(path: *const c_char, out_config: *mut *mut UqConfig) -> UqStatus {
    guard(|| {
        let slot = out(out_config, "out_config")?;
        let inner = parse_config(path_arg(path, "path")?)?;
        *slot = Box::into_raw(Box::new(UqConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `config` must come from [`uq_config_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uq_config_free(config: *mut UqConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Ensemble size the config resolved to.
///
/// # Safety
/// `config` must be a live handle; `out_size` writable.
#[no_mangle]
pub unsafe extern "C" fn uq_config_ensemble_size(config: *const UqConfig, out_size: *mut usize) -> UqStatus {
    guard(|| {
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        *out(out_size, "out_size")? = c.inner.ensemble.size;
        Ok(())
    })
}

/// Runs every (seed, model) pair of the config, persisting records into
/// `out_dir`. Completed records are resumed. `threads` = 0 uses every
/// core.
///
/// # Safety
/// `config` must be a live handle, `out_dir` NUL-terminated, outputs
/// writable.
#[no_mangle]
pub unsafe extern "C" fn uq_audit_run(
    config: *const UqConfig,
    out_dir: *const c_char,
    threads: usize,
    out_runs: *mut usize,
    out_failed: *mut usize,
) -> UqStatus {
    guard(|| {
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        let dir = path_arg(out_dir, "out_dir")?;
        let runs = out(out_runs, "out_runs")?;
        let failed = out(out_failed, "out_failed")?;
        let audit = Audit::new(c.inner.clone())?;
        let store = RecordStore::open(dir)?;
        let outcome = with_threads(threads, || {
            audit.run_multi_seed(&store, MultiRunOptions { resume: true, stop_after: None })
        })??;
        *runs = outcome.records.len();
        *failed = outcome.failed;
        Ok(())
    })
}
