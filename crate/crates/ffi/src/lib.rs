//! C ABI over the `aftmed` library.
//!
//! Datasets and fits are opaque heap handles released with their `_free`
//! functions. Every fallible call returns an [`AftmedStatus`]; on failure a
//! message for the calling thread is available from
//! [`aftmed_last_error_message`].

use aftmed::aft::{self, AftFit, AftSpec, TimeScale};
use aftmed::mediation::{self, BootstrapConfig, Contrast};
use aftmed::survdata::{self, Dataset, Schema, Subject, SurvivalOutcome};
use aftmed::StandardLaw;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

/// Result codes shared by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AftmedStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    FitError = 4,
    NotConverged = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AftmedLaw {
    Normal = 0,
    Weibull = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AftmedTimeScale {
    /// Identity for normal, log for Weibull.
    Default = 0,
    Log = 1,
    Identity = 2,
}

/// Point estimates and standard errors; unavailable SEs are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AftmedEstimates {
    pub nde: f64,
    pub nie_product: f64,
    pub nie_difference: f64,
    pub total_product: f64,
    pub total_difference: f64,
    pub se_nde: f64,
    pub se_nie_product: f64,
    pub se_nie_difference: f64,
    pub se_total_product: f64,
    pub se_total_difference: f64,
    pub bootstrap_dropped: usize,
}

/// Opaque dataset handle.
pub struct AftmedDataset(Dataset);

/// Opaque fitted-model handle.
pub struct AftmedFit(AftFit);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: AftmedStatus, msg: impl Into<String>) -> AftmedStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> AftmedStatus) -> AftmedStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(AftmedStatus::Panic, "internal panic"),
    }
}

fn spec(law: AftmedLaw, scale: AftmedTimeScale, include_mediator: bool) -> AftSpec {
    let (law, default) = match law {
        AftmedLaw::Normal => (StandardLaw::Normal, TimeScale::Identity),
        AftmedLaw::Weibull => (StandardLaw::ExtremeValueMin, TimeScale::Log),
    };
    let ts = match scale {
        AftmedTimeScale::Default => default,
        AftmedTimeScale::Log => TimeScale::Log,
        AftmedTimeScale::Identity => TimeScale::Identity,
    };
    if include_mediator {
        AftSpec::full(law, ts)
    } else {
        AftSpec::reduced(law, ts)
    }
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, AftmedStatus> {
    if p.is_null() {
        return Err(fail(AftmedStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(AftmedStatus::InvalidArgument, "string is not UTF-8"))
}

/// Message describing the last failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn aftmed_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn aftmed_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads a CSV file. `schema_toml` may be NULL for the default column names.
///
/// # Safety
/// `path` and a non-null `schema_toml` must be NUL-terminated strings, and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aftmed_dataset_read_csv(
    path: *const c_char,
    schema_toml: *const c_char,
    out: *mut *mut AftmedDataset,
) -> AftmedStatus {
    guard(|| {
        if out.is_null() {
            return fail(AftmedStatus::NullPointer, "out is null");
        }
        let path = match c_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let schema = if schema_toml.is_null() {
            Schema::default()
        } else {
            let text = match c_str(schema_toml) {
                Ok(t) => t,
                Err(s) => return s,
            };
            match Schema::from_toml_str(text) {
                Ok(s) => s,
                Err(e) => return fail(AftmedStatus::DataError, e.to_string()),
            }
        };
        match survdata::read_csv(Path::new(path), &schema) {
            Ok(d) => {
                *out = Box::into_raw(Box::new(AftmedDataset(d)));
                AftmedStatus::Ok
            }
            Err(e) => fail(AftmedStatus::DataError, format!("{path}: {e}")),
        }
    })
}

/// Builds a dataset from parallel arrays of length `n`. A NaN `time2` marks
/// right censoring at `time1`; `time1 == time2` is an exact event; otherwise
/// the event lies in `(time1, time2)`.
///
/// # Safety
/// All four arrays must hold `n` readable values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aftmed_dataset_from_arrays(
    n: usize,
    time1: *const f64,
    time2: *const f64,
    exposure: *const f64,
    mediator: *const f64,
    out: *mut *mut AftmedDataset,
) -> AftmedStatus {
    guard(|| {
        if out.is_null() || time1.is_null() || time2.is_null() || exposure.is_null() || mediator.is_null() {
            return fail(AftmedStatus::NullPointer, "null array or out pointer");
        }
        if n == 0 {
            return fail(AftmedStatus::InvalidArgument, "dataset is empty");
        }
        let (t1, t2) = (std::slice::from_raw_parts(time1, n), std::slice::from_raw_parts(time2, n));
        let (a, m) = (std::slice::from_raw_parts(exposure, n), std::slice::from_raw_parts(mediator, n));
        let mut subjects = Vec::with_capacity(n);
        for i in 0..n {
            let outcome = if t2[i].is_nan() {
                SurvivalOutcome::right_censored(t1[i])
            } else if t1[i] == t2[i] {
                SurvivalOutcome::exact(t1[i])
            } else {
                SurvivalOutcome::interval(t1[i], t2[i])
            };
            let outcome = match outcome {
                Ok(o) => o,
                Err(e) => return fail(AftmedStatus::DataError, format!("row {}: {e}", i + 1)),
            };
            if !a[i].is_finite() || !m[i].is_finite() {
                return fail(AftmedStatus::DataError, format!("row {}: non-finite exposure or mediator", i + 1));
            }
            subjects.push(Subject {
                outcome,
                exposure: a[i],
                mediator: m[i],
                covariates: Vec::new(),
            });
        }
        match Dataset::new(subjects, Vec::new()) {
            Ok(d) => {
                *out = Box::into_raw(Box::new(AftmedDataset(d)));
                AftmedStatus::Ok
            }
            Err(e) => fail(AftmedStatus::DataError, e.to_string()),
        }
    })
}

/// Number of subjects, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aftmed_dataset_len(dataset: *const AftmedDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aftmed_dataset_free(dataset: *mut AftmedDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Fits an AFT model. A fit that stops short of convergence is still
/// returned through `out`, with status `NotConverged`.
///
/// # Safety
/// `dataset` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aftmed_fit(
    dataset: *const AftmedDataset,
    law: AftmedLaw,
    time_scale: AftmedTimeScale,
    include_mediator: bool,
    out: *mut *mut AftmedFit,
) -> AftmedStatus {
    guard(|| {
        let (Some(d), false) = (dataset.as_ref(), out.is_null()) else {
            return fail(AftmedStatus::NullPointer, "null dataset or out pointer");
        };
        match aft::fit(&spec(law, time_scale, include_mediator), &d.0, None) {
            Ok(f) => {
                let converged = f.converged;
                *out = Box::into_raw(Box::new(AftmedFit(f)));
                if converged {
                    AftmedStatus::Ok
                } else {
                    fail(AftmedStatus::NotConverged, "Newton iterations did not converge")
                }
            }
            Err(e) => fail(AftmedStatus::FitError, e.to_string()),
        }
    })
}

/// Number of regression coefficients (excluding the log scale).
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aftmed_fit_num_coefficients(fit: *const AftmedFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.coefficients.len())
}

/// Copies the coefficients into `buf`, which must hold at least
/// `aftmed_fit_num_coefficients` values.
///
/// # Safety
/// `fit` must be a live handle and `buf` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn aftmed_fit_coefficients(fit: *const AftmedFit, buf: *mut f64, len: usize) -> AftmedStatus {
    let (Some(f), false) = (fit.as_ref(), buf.is_null()) else {
        return fail(AftmedStatus::NullPointer, "null fit or buffer");
    };
    let c = &f.0.coefficients;
    if len < c.len() {
        return fail(AftmedStatus::BufferTooSmall, format!("need {} slots", c.len()));
    }
    ptr::copy_nonoverlapping(c.as_ptr(), buf, c.len());
    AftmedStatus::Ok
}

/// Copies coefficient standard errors into `buf` (NaN when the information
/// matrix could not be inverted).
///
/// # Safety
/// As for [`aftmed_fit_coefficients`].
#[no_mangle]
pub unsafe extern "C" fn aftmed_fit_std_errors(fit: *const AftmedFit, buf: *mut f64, len: usize) -> AftmedStatus {
    let (Some(f), false) = (fit.as_ref(), buf.is_null()) else {
        return fail(AftmedStatus::NullPointer, "null fit or buffer");
    };
    let p = f.0.coefficients.len();
    if len < p {
        return fail(AftmedStatus::BufferTooSmall, format!("need {p} slots"));
    }
    let se = f.0.std_errors().unwrap_or_else(|| vec![f64::NAN; p + 1]);
    ptr::copy_nonoverlapping(se.as_ptr(), buf, p);
    AftmedStatus::Ok
}

/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aftmed_fit_log_scale(fit: *const AftmedFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.0.log_scale)
}

/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aftmed_fit_loglik(fit: *const AftmedFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.0.loglik)
}

/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aftmed_fit_converged(fit: *const AftmedFit) -> bool {
    fit.as_ref().is_some_and(|f| f.0.converged)
}

/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aftmed_fit_free(fit: *mut AftmedFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Runs the full mediation analysis. `bootstrap` of 0 skips the bootstrap;
/// otherwise it must be at least 2.
///
/// # Safety
/// `dataset` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aftmed_mediate(
    dataset: *const AftmedDataset,
    law: AftmedLaw,
    time_scale: AftmedTimeScale,
    a: f64,
    a_star: f64,
    bootstrap: usize,
    seed: u64,
    out: *mut AftmedEstimates,
) -> AftmedStatus {
    guard(|| {
        let (Some(d), false) = (dataset.as_ref(), out.is_null()) else {
            return fail(AftmedStatus::NullPointer, "null dataset or out pointer");
        };
        if !a.is_finite() || !a_star.is_finite() || bootstrap == 1 {
            return fail(AftmedStatus::InvalidArgument, "contrast must be finite and bootstrap 0 or >= 2");
        }
        let boot = (bootstrap >= 2).then_some(BootstrapConfig {
            replicates: bootstrap,
            seed,
            level: 0.95,
        });
        let est = match mediation::analyze(&d.0, &spec(law, time_scale, true), Contrast::new(a, a_star), boot.as_ref()) {
            Ok(e) => e,
            Err(mediation::MediationError::NotConverged { model }) => {
                return fail(AftmedStatus::NotConverged, format!("{model} model did not converge"))
            }
            Err(e) => return fail(AftmedStatus::FitError, e.to_string()),
        };
        *out = AftmedEstimates {
            nde: est.nde,
            nie_product: est.nie_product,
            nie_difference: est.nie_difference,
            total_product: est.total_product,
            total_difference: est.total_difference,
            se_nde: est.se_nde,
            se_nie_product: est.se_nie_product,
            se_nie_difference: est.se_nie_difference.unwrap_or(f64::NAN),
            se_total_product: est.se_total_product.unwrap_or(f64::NAN),
            se_total_difference: est.se_total_difference,
            bootstrap_dropped: est.bootstrap_dropped.unwrap_or(0),
        };
        AftmedStatus::Ok
    })
}
