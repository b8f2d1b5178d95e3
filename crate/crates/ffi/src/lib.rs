//! C ABI over the `oplearn` learners and experiment runner.
//!
//! Every fallible call returns an [`OplStatus`]; on failure a message is
//! available from [`opl_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use oplearn::error::Error;
use oplearn::harness::{run_experiment, write_log, ExperimentConfig};
use oplearn::learners::{Ogd, OnlineLearner, RateSchedule, Regularizer};
use oplearn::optimistic::{default_sigma, paired_error_mode, Oftrl};
use oplearn::sets::{FeasibleSet, NormKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OplStatus {
    Ok = 0,
    NullPointer = 1,
    DimensionMismatch = 2,
    InvalidParameter = 3,
    Domain = 4,
    Unsupported = 5,
    Infeasible = 6,
    Protocol = 7,
    Config = 8,
    Numerical = 9,
    Io = 10,
    Panic = 11,
}

/// Regularizer choice for [`opl_learner_oftrl`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OplRegularizer {
    Quadratic = 0,
    QuadraticProximal = 1,
    Entropic = 2,
}

/// Opaque feasible set.
pub struct OplSet(FeasibleSet);

/// Opaque online learner.
pub struct OplLearner(Box<dyn OnlineLearner>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> OplStatus {
    match e {
        Error::DimensionMismatch { .. } => OplStatus::DimensionMismatch,
        Error::Parameter(_) => OplStatus::InvalidParameter,
        Error::Domain(_) => OplStatus::Domain,
        Error::Unsupported(_) => OplStatus::Unsupported,
        Error::Infeasible(_) => OplStatus::Infeasible,
        Error::Protocol(_) => OplStatus::Protocol,
        Error::Config(_) | Error::Json(_) => OplStatus::Config,
        Error::Numerical(_) => OplStatus::Numerical,
        Error::Io(_) | Error::Csv(_) => OplStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> OplStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OplStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            OplStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            OplStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Fail::Lib(Error::Parameter(format!("{what}: {e}"))))
}

fn check_len(expected: usize, got: usize) -> Result<(), Fail> {
    if expected != got {
        return Err(Fail::Lib(Error::DimensionMismatch { expected, got }));
    }
    Ok(())
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn opl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn opl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `{x ∈ [0,1]^n : Σx ≤ cap}`.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn opl_set_capped_simplex(n: usize, cap: f64, out: *mut *mut OplSet) -> OplStatus {
    guard(|| emit(out, OplSet(FeasibleSet::capped_simplex(n, cap)?)))
}

/// `[lo, hi]^n`.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn opl_set_box(n: usize, lo: f64, hi: f64, out: *mut *mut OplSet) -> OplStatus {
    guard(|| emit(out, OplSet(FeasibleSet::uniform_box(n, lo, hi)?)))
}

/// The probability simplex in `n` dimensions.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn opl_set_unit_simplex(n: usize, out: *mut *mut OplSet) -> OplStatus {
    guard(|| emit(out, OplSet(FeasibleSet::unit_simplex(n)?)))
}

/// Euclidean ball of `radius` around the origin.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn opl_set_ball(n: usize, radius: f64, out: *mut *mut OplSet) -> OplStatus {
    guard(|| emit(out, OplSet(FeasibleSet::ball(n, radius)?)))
}

/// # Safety
/// `set` must be a handle from an `opl_set_*` constructor, or NULL.
#[no_mangle]
pub unsafe extern "C" fn opl_set_free(set: *mut OplSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Dimension of `set`, 0 for NULL.
///
/// # Safety
/// `set` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn opl_set_dim(set: *const OplSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.dim())
}

/// Euclidean diameter of `set`.
///
/// # Safety
/// `set` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn opl_set_diameter(set: *const OplSet, out: *mut f64) -> OplStatus {
    guard(|| {
        let s = set.as_ref().ok_or(Fail::Null("set"))?;
        let out = out.as_mut().ok_or(Fail::Null("out"))?;
        *out = s.0.diameter(NormKind::L2)?;
        Ok(())
    })
}

/// Euclidean projection of `x` onto `set`, written to `out`. `x` and `out`
/// may alias.
///
/// # Safety
/// `x` and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn opl_set_project(set: *const OplSet, x: *const f64, out: *mut f64, len: usize) -> OplStatus {
    guard(|| {
        let s = set.as_ref().ok_or(Fail::Null("set"))?;
        check_len(s.0.dim(), len)?;
        let p = s.0.project(slice(x, len, "x")?)?;
        slice_mut(out, len, "out")?.copy_from_slice(&p);
        Ok(())
    })
}

/// OGD with the anytime step `D/(L√t)`. The set is copied.
///
/// # Safety
/// `set` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn opl_learner_ogd(set: *const OplSet, lipschitz: f64, out: *mut *mut OplLearner) -> OplStatus {
    guard(|| {
        let s = set.as_ref().ok_or(Fail::Null("set"))?;
        let d = s.0.diameter(NormKind::L2)?;
        let ogd = Ogd::new(s.0.clone(), RateSchedule::Anytime { diameter: d, lipschitz })?;
        emit(out, OplLearner(Box::new(ogd)))
    })
}

/// Optimistic FTRL. A non-positive `sigma` selects the default `1/(√2 D)`.
/// The set is copied.
///
/// # Safety
/// `set` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn opl_learner_oftrl(
    set: *const OplSet,
    regularizer: OplRegularizer,
    sigma: f64,
    out: *mut *mut OplLearner,
) -> OplStatus {
    guard(|| {
        let s = set.as_ref().ok_or(Fail::Null("set"))?;
        let reg = match regularizer {
            OplRegularizer::Quadratic => Regularizer::Quadratic,
            OplRegularizer::QuadraticProximal => Regularizer::QuadraticProximal,
            OplRegularizer::Entropic => Regularizer::Entropic,
        };
        let sigma = if sigma > 0.0 { sigma } else { default_sigma(&s.0)? };
        let l = Oftrl::new(s.0.clone(), reg, paired_error_mode(reg), sigma)?;
        emit(out, OplLearner(Box::new(l)))
    })
}

/// # Safety
/// `learner` must be a handle from an `opl_learner_*` constructor, or NULL.
#[no_mangle]
pub unsafe extern "C" fn opl_learner_free(learner: *mut OplLearner) {
    if !learner.is_null() {
        drop(Box::from_raw(learner));
    }
}

/// # Safety
/// `learner` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn opl_learner_dim(learner: *const OplLearner) -> usize {
    learner.as_ref().map_or(0, |l| l.0.dim())
}

/// Writes the next decision to `out`. `hint` is the predicted gradient, or
/// NULL for none.
///
/// # Safety
/// `hint` (when non-NULL) and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn opl_learner_decide(learner: *mut OplLearner, hint: *const f64, out: *mut f64, len: usize) -> OplStatus {
    guard(|| {
        let l = learner.as_mut().ok_or(Fail::Null("learner"))?;
        check_len(l.0.dim(), len)?;
        let hint = if hint.is_null() { None } else { Some(slice(hint, len, "hint")?) };
        let x = l.0.decide(hint)?;
        slice_mut(out, len, "out")?.copy_from_slice(&x);
        Ok(())
    })
}

/// Reveals the loss gradient of the slot just played.
///
/// # Safety
/// `grad` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn opl_learner_observe(learner: *mut OplLearner, grad: *const f64, len: usize) -> OplStatus {
    guard(|| {
        let l = learner.as_mut().ok_or(Fail::Null("learner"))?;
        check_len(l.0.dim(), len)?;
        l.0.observe(slice(grad, len, "grad")?)?;
        Ok(())
    })
}

/// Accumulated prediction error; NaN for learners that do not track it.
///
/// # Safety
/// `learner` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn opl_learner_error_sum(learner: *const OplLearner) -> f64 {
    learner.as_ref().and_then(|l| l.0.error_sum()).unwrap_or(f64::NAN)
}

/// Runs the TOML experiment `config`. On success `summary_json` receives the
/// run summary (free with [`opl_string_free`]); the slot log is written to
/// `log_path` unless it is NULL.
///
/// # Safety
/// `config` and `log_path` (when non-NULL) must be NUL-terminated UTF-8;
/// `summary_json` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn opl_run_experiment(config: *const c_char, log_path: *const c_char, summary_json: *mut *mut c_char) -> OplStatus {
    guard(|| {
        let text = string(config, "config")?;
        if summary_json.is_null() {
            return Err(Fail::Null("summary_json"));
        }
        let cfg = ExperimentConfig::from_toml(text)?;
        let out = run_experiment(&cfg)?;
        if !log_path.is_null() {
            let path = string(log_path, "log_path")?;
            let file = std::fs::File::create(path).map_err(Error::from)?;
            write_log(&out.records, std::io::BufWriter::new(file))?;
        }
        let json = serde_json::to_string(&out.summary).map_err(Error::from)?;
        *summary_json = CString::new(json).map_err(|e| Error::Numerical(e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn opl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
