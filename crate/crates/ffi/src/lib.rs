//! C interface to the latte forecasting engine.
//!
//! Every entry point returns a [`LatteStatus`]. On failure a description is
//! available from [`latte_last_error`] on the same thread. Arrays are
//! row-major `double` buffers whose lengths are passed explicitly; output
//! buffers are allocated by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use latte::dataio::{Scaler, SeriesMatrix};
use latte::latte::{load_checkpoint, LatteModel};
use latte::metrics::{crps_empirical, crps_sum, nmse, EnsembleForecast};
use latte::LatteError;

/// Result of every call. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatteStatus {
    Ok = 0,
    NullArgument = 1,
    Config = 2,
    Dimension = 3,
    Contract = 4,
    Parse = 5,
    Io = 6,
    Numeric = 7,
    Domain = 8,
    UndefinedMetric = 9,
    Panic = 10,
}

/// CRPS-Sum normalization selector for [`latte_crps_sum`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatteCrpsSumMode {
    /// Divided by the mean absolute realized sum.
    Normalized = 0,
    Raw = 1,
}

/// A trained model together with the normalization of its inputs.
pub struct LatteHandle {
    model: LatteModel,
    scaler: Scaler,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("NUL bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &LatteError) -> LatteStatus {
    match err {
        LatteError::Config(_) | LatteError::Json(_) => LatteStatus::Config,
        LatteError::Dimension(_) => LatteStatus::Dimension,
        LatteError::Contract(_) => LatteStatus::Contract,
        LatteError::Parse { .. } => LatteStatus::Parse,
        LatteError::Io(_) => LatteStatus::Io,
        LatteError::Numeric(_) => LatteStatus::Numeric,
        LatteError::Domain { .. } => LatteStatus::Domain,
        LatteError::UndefinedMetric { .. } => LatteStatus::UndefinedMetric,
    }
}

enum Failure {
    Null(&'static str),
    Core(LatteError),
}

impl From<LatteError> for Failure {
    fn from(e: LatteError) -> Self {
        Failure::Core(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> LatteStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LatteStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is NULL"));
            LatteStatus::NullArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            LatteStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn check_len(got: usize, want: usize, what: &str) -> Result<(), Failure> {
    if got != want {
        return Err(LatteError::dim(format!("{what} holds {got} values, expected {want}")).into());
    }
    Ok(())
}

/// Message describing the last failure on this thread, or NULL. The pointer
/// stays valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn latte_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint written by `latte train`. Release with [`latte_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn latte_model_load(path: *const c_char, out: *mut *mut LatteHandle) -> LatteStatus {
    guard(|| {
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| LatteError::config("path is not valid UTF-8"))?;
        let (model, scaler) = load_checkpoint(Path::new(path))?;
        *out = Box::into_raw(Box::new(LatteHandle { model, scaler }));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from [`latte_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn latte_model_free(handle: *mut LatteHandle) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Writes series count, latent dimension, context length and horizon. Any
/// output pointer may be NULL.
///
/// # Safety
/// `handle` must be a live handle; non-NULL outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn latte_model_dims(
    handle: *const LatteHandle,
    num_series: *mut usize,
    latent_dim: *mut usize,
    context_len: *mut usize,
    horizon: *mut usize,
) -> LatteStatus {
    guard(|| {
        let h = handle.as_ref().ok_or(Failure::Null("handle"))?;
        let c = h.model.config();
        for (p, v) in [
            (num_series, c.num_series),
            (latent_dim, c.latent_dim),
            (context_len, c.context_len),
            (horizon, c.horizon),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Samples `samples` forecast paths of `horizon` steps. `context` is
/// `[rows, N]` in original units (the last context-length rows are used);
/// `out` receives `[samples, horizon, N]` in original units.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn latte_model_forecast(
    handle: *const LatteHandle,
    context: *const f64,
    context_len: usize,
    horizon: usize,
    samples: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> LatteStatus {
    guard(|| {
        let h = handle.as_ref().ok_or(Failure::Null("handle"))?;
        let n = h.model.num_series();
        let mut rows = slice(context, context_len, "context")?.to_vec();
        check_len(out_len, samples * horizon * n, "output buffer")?;
        let out = slice_mut(out, out_len, "out")?;
        h.scaler.apply_rows(&mut rows)?;
        let ens = h.model.forecast(&rows, horizon, samples, seed)?.descale(&h.scaler)?;
        out.copy_from_slice(&ens.samples);
        Ok(())
    })
}

/// Latent code of every row of `values` (`[rows, N]`, original units, no
/// missing cells); `out` receives `[rows, D]`.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn latte_model_export_latent(
    handle: *const LatteHandle,
    values: *const f64,
    rows: usize,
    out: *mut f64,
    out_len: usize,
) -> LatteStatus {
    guard(|| {
        let h = handle.as_ref().ok_or(Failure::Null("handle"))?;
        let n = h.model.num_series();
        let values = slice(values, rows * n, "values")?;
        check_len(out_len, rows * h.model.latent_dim(), "output buffer")?;
        let out = slice_mut(out, out_len, "out")?;
        let names = (0..n).map(|i| format!("s{i}")).collect();
        let series = SeriesMatrix::from_time_major(names, values)?;
        let codes = h.model.export_latent(&h.scaler.apply(&series)?)?;
        out.copy_from_slice(codes.data());
        Ok(())
    })
}

/// Empirical CRPS of `n` samples against the realized value `y`.
///
/// # Safety
/// `samples` must hold `n` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn latte_crps_empirical(samples: *const f64, n: usize, y: f64, out: *mut f64) -> LatteStatus {
    guard(|| {
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        *out = crps_empirical(slice(samples, n, "samples")?, y)?;
        Ok(())
    })
}

/// CRPS-Sum of `[num_samples, horizon, num_series]` samples against
/// `[horizon, num_series]` truth.
///
/// # Safety
/// Buffers must hold the stated number of doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn latte_crps_sum(
    samples: *const f64,
    truth: *const f64,
    num_samples: usize,
    horizon: usize,
    num_series: usize,
    mode: LatteCrpsSumMode,
    out: *mut f64,
) -> LatteStatus {
    guard(|| {
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        let samples = slice(samples, num_samples * horizon * num_series, "samples")?;
        let truth = slice(truth, horizon * num_series, "truth")?;
        let names = (0..num_series).map(|i| format!("s{i}")).collect();
        let f = EnsembleForecast::new(samples.to_vec(), truth.to_vec(), num_samples, horizon, names)?;
        let c = crps_sum(&f)?;
        *out = match mode {
            LatteCrpsSumMode::Normalized => c.normalized,
            LatteCrpsSumMode::Raw => c.raw,
        };
        Ok(())
    })
}

/// Per-series NMSE of `[horizon, num_series]` point forecasts; `out`
/// receives `num_series` values.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn latte_nmse(
    pred: *const f64,
    truth: *const f64,
    horizon: usize,
    num_series: usize,
    out: *mut f64,
) -> LatteStatus {
    guard(|| {
        let len = horizon * num_series;
        let pred = slice(pred, len, "pred")?;
        let truth = slice(truth, len, "truth")?;
        let out = slice_mut(out, num_series, "out")?;
        let names: Vec<String> = (0..num_series).map(|i| format!("s{i}")).collect();
        out.copy_from_slice(&nmse(pred, truth, horizon, &names)?);
        Ok(())
    })
}
