//! C ABI over the camera library.
//!
//! Every fallible function returns a [`CameraStatus`] and writes its results
//! through out-pointers. On failure, [`camera_last_error`] returns a message
//! for the calling thread. Strings returned by the library must be released
//! with [`camera_string_free`]; models with [`camera_gp_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use camera::acquisition::{ei_bichon, ei_ranjan, CostModel};
use camera::camera::{run, RunConfig};
use camera::cli::resolve_problem;
use camera::mfgp::{Dataset, Domain, FitOptions, GpModel, InputFidelityPoint, LimitState};
use camera::testbed::{brute_force_pf, BenchmarkProblem};
use camera::{Error, MultifidelityModel};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CameraStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Evaluation = 5,
    Io = 6,
    Panic = 7,
}

/// Opaque fitted Gaussian process.
pub struct CameraGp {
    model: GpModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

fn status_of(e: &Error) -> CameraStatus {
    match e {
        Error::Config { .. } | Error::UnknownProblem(_) => CameraStatus::Config,
        Error::SingularKernel { .. } | Error::NonFiniteWeight { .. } | Error::EmptySample => CameraStatus::Numerical,
        Error::Evaluation { .. } | Error::External(_) => CameraStatus::Evaluation,
        Error::Io(_) | Error::Csv(_) => CameraStatus::Io,
        Error::Iteration { source, .. } => status_of(source),
        _ => CameraStatus::InvalidArgument,
    }
}

/// Runs `f` behind a panic guard and records any error for the calling thread.
fn guard(f: impl FnOnce() -> Result<(), (CameraStatus, String)>) -> CameraStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CameraStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside camera library");
            CameraStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (CameraStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (CameraStatus, String) {
    (CameraStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (CameraStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (CameraStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (CameraStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), (CameraStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = v;
    Ok(())
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn camera_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn camera_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Closed-form Bichon expected feasibility for `g = rho * f - a`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn camera_ei_bichon(
    mean: f64,
    sd: f64,
    rho: f64,
    a: f64,
    eta: f64,
    out: *mut f64,
) -> CameraStatus {
    guard(|| {
        let limit = LimitState::new(rho, a).map_err(lib_err)?;
        put(out, ei_bichon(mean, sd, &limit, eta), "out")
    })
}

/// Closed-form Ranjan expected improvement for `g = rho * f - a`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn camera_ei_ranjan(
    mean: f64,
    sd: f64,
    rho: f64,
    a: f64,
    eta: f64,
    out: *mut f64,
) -> CameraStatus {
    guard(|| {
        let limit = LimitState::new(rho, a).map_err(lib_err)?;
        put(out, ei_ranjan(mean, sd, &limit, eta), "out")
    })
}

/// Exponential query cost `c0 * (c2 + exp(-c1 * (1 - s)))`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn camera_cost_exponential(c0: f64, c1: f64, c2: f64, s: f64, out: *mut f64) -> CameraStatus {
    guard(|| {
        let m = CostModel::exponential(c0, c1, c2);
        m.validate(&camera::mfgp::FidelitySpace::Continuous).map_err(lib_err)?;
        put(out, m.eval(s).map_err(lib_err)?, "out")
    })
}

/// Evaluates a named benchmark at `(x, s)`.
///
/// # Safety
/// `name` must be a NUL-terminated string, `x` must hold `dim` values and
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn camera_benchmark_eval(
    name: *const c_char,
    x: *const f64,
    dim: usize,
    s: f64,
    out: *mut f64,
) -> CameraStatus {
    guard(|| {
        let b = BenchmarkProblem::from_name(str_arg(name, "name")?).map_err(lib_err)?;
        let x = slice_arg(x, dim, "x")?;
        put(out, b.evaluate(x, s).map_err(lib_err)?, "out")
    })
}

/// Brute-force failure probability of a named benchmark at `s = 1`.
///
/// # Safety
/// `name` must be a NUL-terminated string; the out-pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn camera_truth(
    name: *const c_char,
    n: usize,
    seed: u64,
    p_hat: *mut f64,
    std_error: *mut f64,
) -> CameraStatus {
    guard(|| {
        let b = BenchmarkProblem::from_name(str_arg(name, "name")?).map_err(lib_err)?;
        if n == 0 {
            return Err((CameraStatus::InvalidArgument, "n must be positive".into()));
        }
        let est = brute_force_pf(&b, n, seed).map_err(lib_err)?;
        put(p_hat, est.p_hat, "p_hat")?;
        put(std_error, est.std_error(), "std_error")
    })
}

/// Fits a Gaussian process over `[lower, upper] x [0, 1]`.
///
/// `x` is row-major with `n * dim` values; `s` and `y` hold `n` values.
///
/// # Safety
/// All arrays must hold the stated number of values and `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn camera_gp_fit(
    x: *const f64,
    s: *const f64,
    y: *const f64,
    n: usize,
    dim: usize,
    lower: *const f64,
    upper: *const f64,
    restarts: usize,
    seed: u64,
    out: *mut *mut CameraGp,
) -> CameraStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if dim == 0 {
            return Err((CameraStatus::InvalidArgument, "dim must be positive".into()));
        }
        let xs = slice_arg(x, n * dim, "x")?;
        let ss = slice_arg(s, n, "s")?;
        let ys = slice_arg(y, n, "y")?;
        let domain = Domain::continuous(
            slice_arg(lower, dim, "lower")?.to_vec(),
            slice_arg(upper, dim, "upper")?.to_vec(),
        )
        .map_err(lib_err)?;
        let mut data = Dataset::new();
        for i in 0..n {
            let p = InputFidelityPoint::new(xs[i * dim..(i + 1) * dim].to_vec(), ss[i]);
            domain.check(&p).map_err(lib_err)?;
            data.push(p, ys[i], 1.0).map_err(lib_err)?;
        }
        let opts = FitOptions {
            restarts: restarts.max(1),
            seed,
            ..FitOptions::default()
        };
        let model = GpModel::fit(data, domain, &opts).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(CameraGp { model }));
        Ok(())
    })
}

/// Posterior mean and variance at `(x, s)`.
///
/// # Safety
/// `gp` must come from this library, `x` must hold the model's dimension and
/// the out-pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn camera_gp_predict(
    gp: *const CameraGp,
    x: *const f64,
    dim: usize,
    s: f64,
    mean: *mut f64,
    variance: *mut f64,
) -> CameraStatus {
    guard(|| {
        let gp = gp.as_ref().ok_or_else(|| null("gp"))?;
        let d = gp.model.domain().dim();
        if dim != d {
            return Err((
                CameraStatus::InvalidArgument,
                format!("expected {d} coordinates, got {dim}"),
            ));
        }
        let (m, v) = gp
            .model
            .posterior(&InputFidelityPoint::new(slice_arg(x, dim, "x")?.to_vec(), s));
        put(mean, m, "mean")?;
        put(variance, v, "variance")
    })
}

/// Serializes a model; free the result with [`camera_string_free`].
///
/// # Safety
/// `gp` must come from this library and `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn camera_gp_to_json(gp: *const CameraGp, out: *mut *mut c_char) -> CameraStatus {
    guard(|| {
        let gp = gp.as_ref().ok_or_else(|| null("gp"))?;
        let json = gp.model.to_json().map_err(lib_err)?;
        put(out, to_c_string(json), "out")
    })
}

/// Restores a model saved with [`camera_gp_to_json`].
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn camera_gp_from_json(json: *const c_char, out: *mut *mut CameraGp) -> CameraStatus {
    guard(|| {
        let model = GpModel::from_json(str_arg(json, "json")?).map_err(lib_err)?;
        put(out, Box::into_raw(Box::new(CameraGp { model })), "out")
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `gp` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn camera_gp_free(gp: *mut CameraGp) {
    if !gp.is_null() {
        drop(Box::from_raw(gp));
    }
}

/// Runs one experiment from a JSON config and returns its summary JSON.
/// Free the result with [`camera_string_free`].
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn camera_run_json(config_json: *const c_char, out: *mut *mut c_char) -> CameraStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(config_json, "config_json")?;
        let config: RunConfig = serde_json::from_str(text).map_err(|e| (CameraStatus::Config, e.to_string()))?;
        let problem = resolve_problem(&config).map_err(lib_err)?;
        let record = run(&config, &problem).map_err(|f| lib_err(f.error))?;
        *out = to_c_string(record.summary_json().map_err(lib_err)?);
        Ok(())
    })
}
