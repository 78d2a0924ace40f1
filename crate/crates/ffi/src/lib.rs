//! C interface to vo2fit: load a saved model bundle, run predictions and
//! latent extraction, and call the standalone metric and feature helpers.
//!
//! Every fallible function returns a [`Vo2Status`]. On failure the message
//! is kept per thread and can be read with [`vo2_last_error_message`].
//! Panics never cross the boundary; they surface as `VO2_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use vo2fit::evalmetrics;
use vo2fit::featurize;
use vo2fit::latentspace;
use vo2fit::models::{self, Estimator, ModelBundle};
use vo2fit::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vo2Status {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    LayoutMismatch = 5,
    Unsupported = 6,
    Metric = 7,
    Panic = 99,
}

/// Opaque handle to a loaded model bundle.
pub struct Vo2Bundle {
    inner: ModelBundle,
}

/// Point metrics; `pearson` and `mape` are NaN when undefined.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Vo2RegressionMetrics {
    pub rmse: f64,
    pub r2: f64,
    pub pearson: f64,
    pub mse: f64,
    pub mae: f64,
    pub std_mae: f64,
    pub mape: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> Vo2Status {
    match e {
        Error::Io { .. } => Vo2Status::Io,
        Error::Json(_) | Error::Csv(_) | Error::Toml(_) => Vo2Status::Parse,
        Error::LayoutMismatch { .. } => Vo2Status::LayoutMismatch,
        Error::Unsupported(_) => Vo2Status::Unsupported,
        Error::Metric(_) => Vo2Status::Metric,
        _ => Vo2Status::InvalidArgument,
    }
}

/// Run `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (Vo2Status, String)>) -> Vo2Status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Vo2Status::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            Vo2Status::Panic
        }
    }
}

fn lib<T>(r: vo2fit::Result<T>) -> Result<T, (Vo2Status, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(name: &str) -> (Vo2Status, String) {
    (Vo2Status::NullPointer, format!("{name} is null"))
}

fn invalid(msg: impl Into<String>) -> (Vo2Status, String) {
    (Vo2Status::InvalidArgument, msg.into())
}

/// # Safety
/// `p` must be null or valid for `len` reads.
unsafe fn input<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], (Vo2Status, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or valid for `len` writes.
unsafe fn output<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], (Vo2Status, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes). Returns the full message length in bytes,
/// excluding the terminator, so callers can size a retry.
///
/// # Safety
/// `buf` must be null or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn vo2_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// NUL-terminated library version; static, do not free.
#[no_mangle]
pub extern "C" fn vo2_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a bundle written by the vo2fit pipeline. On success `*out` owns a
/// handle that must be released with [`vo2_bundle_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn vo2_bundle_load(path: *const c_char, out: *mut *mut Vo2Bundle) -> Vo2Status {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let inner = lib(ModelBundle::load(Path::new(path)))?;
        *out = Box::into_raw(Box::new(Vo2Bundle { inner }));
        Ok(())
    })
}

/// # Safety
/// `bundle` must be null or a handle from [`vo2_bundle_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vo2_bundle_free(bundle: *mut Vo2Bundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// # Safety
/// `bundle` must be a live handle or null.
unsafe fn bundle_ref<'a>(bundle: *const Vo2Bundle) -> Result<&'a ModelBundle, (Vo2Status, String)> {
    bundle.as_ref().map(|b| &b.inner).ok_or_else(|| null("bundle"))
}

/// Number of raw features per input row.
///
/// # Safety
/// `bundle` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn vo2_bundle_input_len(bundle: *const Vo2Bundle, out: *mut usize) -> Vo2Status {
    guard(|| {
        let b = bundle_ref(bundle)?;
        *out.as_mut().ok_or_else(|| null("out"))? = b.metadata.input_len;
        Ok(())
    })
}

/// Width of the latent representation. `VO2_STATUS_UNSUPPORTED` for linear
/// and equation bundles.
///
/// # Safety
/// `bundle` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn vo2_bundle_latent_dim(bundle: *const Vo2Bundle, out: *mut usize) -> Vo2Status {
    guard(|| {
        let b = bundle_ref(bundle)?;
        let Estimator::Dense(t) = &b.estimator else {
            return Err((Vo2Status::Unsupported, format!("{} bundles have no latent space", b.estimator.name())));
        };
        *out.as_mut().ok_or_else(|| null("out"))? = t.net.latent_dim();
        Ok(())
    })
}

/// # Safety
/// `rows` must hold `n_rows * n_cols` values.
unsafe fn raw_rows<'a>(
    b: &ModelBundle,
    rows: *const f64,
    n_rows: usize,
    n_cols: usize,
) -> Result<Vec<&'a [f64]>, (Vo2Status, String)> {
    if n_cols != b.metadata.input_len {
        return Err((
            Vo2Status::LayoutMismatch,
            format!("bundle expects {} features per row, got {n_cols}", b.metadata.input_len),
        ));
    }
    let n = n_rows.checked_mul(n_cols).ok_or_else(|| invalid("row count overflows"))?;
    let flat = input(rows, n, "rows")?;
    Ok(flat.chunks(n_cols.max(1)).collect())
}

/// Predict for `n_rows` row-major raw feature rows of width `n_cols`,
/// writing `n_rows` values to `out`. Classifier bundles write probabilities.
///
/// # Safety
/// `bundle` must be a live handle; `rows` valid for `n_rows * n_cols`
/// reads; `out` valid for `n_rows` writes.
#[no_mangle]
pub unsafe extern "C" fn vo2_bundle_predict(
    bundle: *const Vo2Bundle,
    rows: *const f64,
    n_rows: usize,
    n_cols: usize,
    out: *mut f64,
) -> Vo2Status {
    guard(|| {
        let b = bundle_ref(bundle)?;
        let x = raw_rows(b, rows, n_rows, n_cols)?;
        let out = output(out, n_rows, "out")?;
        let pred = lib(b.predict(&b.metadata.layout_version, &x))?;
        out.copy_from_slice(&pred);
        Ok(())
    })
}

/// Last-hidden-layer activations, row-major `n_rows * latent_dim`.
///
/// # Safety
/// As for [`vo2_bundle_predict`], with `out` valid for
/// `n_rows * latent_dim` writes.
#[no_mangle]
pub unsafe extern "C" fn vo2_bundle_latent(
    bundle: *const Vo2Bundle,
    rows: *const f64,
    n_rows: usize,
    n_cols: usize,
    out: *mut f64,
) -> Vo2Status {
    guard(|| {
        let b = bundle_ref(bundle)?;
        let x = raw_rows(b, rows, n_rows, n_cols)?;
        let ids: Vec<String> = (0..n_rows).map(|i| i.to_string()).collect();
        let e = lib(latentspace::extract_latent(b, &ids, &b.metadata.layout_version, &x))?;
        let out = output(out, n_rows * e.width(), "out")?;
        for (dst, row) in out.chunks_mut(e.width().max(1)).zip(&e.rows) {
            dst.copy_from_slice(row);
        }
        Ok(())
    })
}

/// Heart-rate ratio estimate from age (years) and resting heart rate (bpm).
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn vo2_equation_baseline(age: f64, rhr: f64, out: *mut f64) -> Vo2Status {
    guard(|| {
        let v = lib(models::equation_baseline(age, rhr))?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Sine/cosine encoding of a month in 1..=12.
///
/// # Safety
/// `sin_out` and `cos_out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn vo2_cyclical_month(month: u32, sin_out: *mut f64, cos_out: *mut f64) -> Vo2Status {
    guard(|| {
        let (s, c) = lib(featurize::cyclical_month(month))?;
        *sin_out.as_mut().ok_or_else(|| null("sin_out"))? = s;
        *cos_out.as_mut().ok_or_else(|| null("cos_out"))? = c;
        Ok(())
    })
}

/// Area under the ROC curve; a nonzero label byte marks a positive.
///
/// # Safety
/// `labels` and `scores` must be valid for `n` reads; `out` for a write.
#[no_mangle]
pub unsafe extern "C" fn vo2_auroc(labels: *const u8, scores: *const f64, n: usize, out: *mut f64) -> Vo2Status {
    guard(|| {
        let labels: Vec<bool> = input(labels, n, "labels")?.iter().map(|&l| l != 0).collect();
        let scores = input(scores, n, "scores")?;
        let v = lib(evalmetrics::auroc(&labels, scores))?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// # Safety
/// `y_true` and `y_pred` must be valid for `n` reads; `out` for a write.
#[no_mangle]
pub unsafe extern "C" fn vo2_regression_metrics(
    y_true: *const f64,
    y_pred: *const f64,
    n: usize,
    out: *mut Vo2RegressionMetrics,
) -> Vo2Status {
    guard(|| {
        let t = input(y_true, n, "y_true")?;
        let p = input(y_pred, n, "y_pred")?;
        let m = lib(evalmetrics::regression_metrics(t, p))?;
        *out.as_mut().ok_or_else(|| null("out"))? = Vo2RegressionMetrics {
            rmse: m.rmse,
            r2: m.r2,
            pearson: m.pearson.unwrap_or(f64::NAN),
            mse: m.mse,
            mae: m.mae,
            std_mae: m.std_mae,
            mape: m.mape.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}
