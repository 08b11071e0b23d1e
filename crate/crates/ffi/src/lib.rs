//! C ABI over the depctl toolkit.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_from_json`
//! and released by the matching `*_free`. Every fallible call returns a
//! [`DepctlStatus`]; the message of the last failure on the calling thread is
//! available from [`depctl_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use depctl::channel::capacity_flat;
use depctl::harness;
use depctl::queueing::{delay_path, lindley};
use depctl::{CapacityParams, ComplexMatrix, Csit, DistributionSpec, Error, ExperimentConfig, RandomStream, Verdict};
use num_complex::Complex64;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DepctlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    ParameterDomain = 4,
    Domain = 5,
    Contract = 6,
    ResamplePolicy = 7,
    Io = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DepctlVerdict {
    Holds = 0,
    Fails = 1,
    Inconclusive = 2,
    Completed = 3,
}

/// Counter-based random stream.
pub struct DepctlStream {
    inner: RandomStream,
}

/// Marginal law parsed from its JSON form.
pub struct DepctlDistribution {
    inner: DistributionSpec,
}

/// Validated experiment config.
pub struct DepctlExperiment {
    inner: ExperimentConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: DepctlStatus, msg: impl Into<String>) -> DepctlStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &Error) -> DepctlStatus {
    match e {
        Error::ParameterDomain(_) => DepctlStatus::ParameterDomain,
        Error::Domain(_) => DepctlStatus::Domain,
        Error::Contract(_) => DepctlStatus::Contract,
        Error::ResamplePolicy { .. } => DepctlStatus::ResamplePolicy,
        Error::Config { .. } | Error::Json(_) => DepctlStatus::Config,
        Error::Io { .. } => DepctlStatus::Io,
    }
}

fn from_error(e: Error) -> DepctlStatus {
    let s = status_of(&e);
    fail(s, e.to_string())
}

/// Runs `f`, turning panics into `DepctlStatus::Panic`.
fn guard(f: impl FnOnce() -> DepctlStatus) -> DepctlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(DepctlStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, DepctlStatus> {
    if p.is_null() {
        return Err(fail(DepctlStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DepctlStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), DepctlStatus> {
    if p.is_null() {
        Err(fail(DepctlStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn depctl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn depctl_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn depctl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `label` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn depctl_stream_new(seed: u64, label: *const c_char, out: *mut *mut DepctlStream) -> DepctlStatus {
    guard(|| {
        try_ffi!(non_null(out, "out"));
        let label = try_ffi!(str_arg(label, "label"));
        *out = Box::into_raw(Box::new(DepctlStream {
            inner: RandomStream::new(seed, label),
        }));
        DepctlStatus::Ok
    })
}

/// Child stream identified by `label`; the parent is unchanged.
///
/// # Safety
/// `stream` must be a live handle, `label` nul-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn depctl_stream_derive(
    stream: *const DepctlStream,
    label: *const c_char,
    out: *mut *mut DepctlStream,
) -> DepctlStatus {
    guard(|| {
        try_ffi!(non_null(stream, "stream"));
        try_ffi!(non_null(out, "out"));
        let label = try_ffi!(str_arg(label, "label"));
        *out = Box::into_raw(Box::new(DepctlStream {
            inner: (*stream).inner.derive(label),
        }));
        DepctlStatus::Ok
    })
}

/// Independent substream `index`, as used for per-path parallelism.
///
/// # Safety
/// `stream` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn depctl_stream_substream(
    stream: *const DepctlStream,
    index: u64,
    out: *mut *mut DepctlStream,
) -> DepctlStatus {
    guard(|| {
        try_ffi!(non_null(stream, "stream"));
        try_ffi!(non_null(out, "out"));
        *out = Box::into_raw(Box::new(DepctlStream {
            inner: (*stream).inner.substream(index),
        }));
        DepctlStatus::Ok
    })
}

/// Next uniform in (0, 1).
///
/// # Safety
/// `stream` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn depctl_stream_uniform(stream: *mut DepctlStream, out: *mut f64) -> DepctlStatus {
    guard(|| {
        try_ffi!(non_null(stream, "stream"));
        try_ffi!(non_null(out, "out"));
        *out = (*stream).inner.open01();
        DepctlStatus::Ok
    })
}

/// # Safety
/// `stream` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn depctl_stream_free(stream: *mut DepctlStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}

/// Parses a law such as `{"family":"pareto1","alpha":2.0,"xm":1.0}`.
///
/// # Safety
/// `json` must be nul-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn depctl_distribution_from_json(
    json: *const c_char,
    out: *mut *mut DepctlDistribution,
) -> DepctlStatus {
    guard(|| {
        try_ffi!(non_null(out, "out"));
        let text = try_ffi!(str_arg(json, "json"));
        let spec: DistributionSpec = match serde_json::from_str(text) {
            Ok(s) => s,
            Err(e) => return fail(DepctlStatus::Config, e.to_string()),
        };
        if let Err(e) = spec.validate() {
            return from_error(e);
        }
        *out = Box::into_raw(Box::new(DepctlDistribution { inner: spec }));
        DepctlStatus::Ok
    })
}

/// Fills `out[0..n]` with draws, advancing `stream`.
///
/// # Safety
/// Handles must be live and `out` must have room for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn depctl_distribution_sample(
    dist: *const DepctlDistribution,
    stream: *mut DepctlStream,
    out: *mut f64,
    n: usize,
) -> DepctlStatus {
    guard(|| {
        try_ffi!(non_null(dist, "dist"));
        try_ffi!(non_null(stream, "stream"));
        try_ffi!(non_null(out, "out"));
        match (*dist).inner.sample(&mut (*stream).inner, n) {
            Ok(v) => {
                ptr::copy_nonoverlapping(v.as_ptr(), out, n);
                DepctlStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `dist` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn depctl_distribution_cdf(dist: *const DepctlDistribution, x: f64, out: *mut f64) -> DepctlStatus {
    guard(|| {
        try_ffi!(non_null(dist, "dist"));
        try_ffi!(non_null(out, "out"));
        *out = (*dist).inner.cdf(x);
        DepctlStatus::Ok
    })
}

/// # Safety
/// `dist` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn depctl_distribution_sf(dist: *const DepctlDistribution, x: f64, out: *mut f64) -> DepctlStatus {
    guard(|| {
        try_ffi!(non_null(dist, "dist"));
        try_ffi!(non_null(out, "out"));
        *out = (*dist).inner.sf(x);
        DepctlStatus::Ok
    })
}

/// # Safety
/// `dist` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn depctl_distribution_quantile(
    dist: *const DepctlDistribution,
    u: f64,
    out: *mut f64,
) -> DepctlStatus {
    guard(|| {
        try_ffi!(non_null(dist, "dist"));
        try_ffi!(non_null(out, "out"));
        match (*dist).inner.quantile(u) {
            Ok(q) => {
                *out = q;
                DepctlStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `dist` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn depctl_distribution_free(dist: *mut DepctlDistribution) {
    if !dist.is_null() {
        drop(Box::from_raw(dist));
    }
}

/// Capacity in bits/s of a flat channel given as row-major real and imaginary parts.
///
/// # Safety
/// `h_re` and `h_im` must each hold `n_r * n_t` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn depctl_capacity_flat(
    h_re: *const f64,
    h_im: *const f64,
    n_r: usize,
    n_t: usize,
    w: f64,
    rho: f64,
    csit_known: bool,
    out: *mut f64,
) -> DepctlStatus {
    guard(|| {
        try_ffi!(non_null(h_re, "h_re"));
        try_ffi!(non_null(h_im, "h_im"));
        try_ffi!(non_null(out, "out"));
        let len = n_r * n_t;
        let re = std::slice::from_raw_parts(h_re, len);
        let im = std::slice::from_raw_parts(h_im, len);
        let data = re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect();
        let h = match ComplexMatrix::new(n_r, n_t, data) {
            Ok(h) => h,
            Err(e) => return from_error(e),
        };
        let csit = if csit_known { Csit::Known } else { Csit::Unknown };
        match capacity_flat(&h, &CapacityParams::new(w, rho, n_t, csit)) {
            Ok(c) => {
                *out = c.c;
                DepctlStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Backlog path of a queue with arrivals `a` and service `s`, both of length `len`.
///
/// # Safety
/// `a`, `s` and `out` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn depctl_lindley(a: *const f64, s: *const f64, len: usize, out: *mut f64) -> DepctlStatus {
    guard(|| {
        try_ffi!(non_null(a, "a"));
        try_ffi!(non_null(s, "s"));
        try_ffi!(non_null(out, "out"));
        let (a, s) = (std::slice::from_raw_parts(a, len), std::slice::from_raw_parts(s, len));
        match lindley(a, s) {
            Ok(b) => {
                ptr::copy_nonoverlapping(b.as_ptr(), out, len);
                DepctlStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Per-slot delay in slots; `censored[t]` is set when the work present at `t`
/// had not departed by the horizon.
///
/// # Safety
/// `a` and `s` must hold `len` doubles, `delays` `len` integers and `censored` `len` bools.
#[no_mangle]
pub unsafe extern "C" fn depctl_delay(
    a: *const f64,
    s: *const f64,
    len: usize,
    delays: *mut u64,
    censored: *mut bool,
) -> DepctlStatus {
    guard(|| {
        try_ffi!(non_null(a, "a"));
        try_ffi!(non_null(s, "s"));
        try_ffi!(non_null(delays, "delays"));
        try_ffi!(non_null(censored, "censored"));
        let (a, s) = (std::slice::from_raw_parts(a, len), std::slice::from_raw_parts(s, len));
        match delay_path(a, s) {
            Ok(d) => {
                ptr::copy_nonoverlapping(d.delays.as_ptr(), delays, len);
                ptr::copy_nonoverlapping(d.censored.as_ptr(), censored, len);
                DepctlStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Parses an experiment config. A nonzero `has_seed` makes `seed` override the config's seed.
///
/// # Safety
/// `json` must be nul-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn depctl_experiment_from_json(
    json: *const c_char,
    has_seed: bool,
    seed: u64,
    out: *mut *mut DepctlExperiment,
) -> DepctlStatus {
    guard(|| {
        try_ffi!(non_null(out, "out"));
        let text = try_ffi!(str_arg(json, "json"));
        match ExperimentConfig::from_json(text, has_seed.then_some(seed)) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(DepctlExperiment { inner: c }));
                DepctlStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Runs the experiment into `out_dir`. On success `verdict` is set and, when
/// `manifest_json` is non-null, it receives the run manifest (free with
/// [`depctl_string_free`]).
///
/// # Safety
/// `exp` must be a live handle, `out_dir` nul-terminated, `verdict` writable and
/// `manifest_json` null or writable.
#[no_mangle]
pub unsafe extern "C" fn depctl_experiment_run(
    exp: *const DepctlExperiment,
    out_dir: *const c_char,
    verdict: *mut DepctlVerdict,
    manifest_json: *mut *mut c_char,
) -> DepctlStatus {
    guard(|| {
        try_ffi!(non_null(exp, "exp"));
        try_ffi!(non_null(verdict, "verdict"));
        let dir = try_ffi!(str_arg(out_dir, "out_dir"));
        let m = match harness::run(&(*exp).inner, Path::new(dir)) {
            Ok(m) => m,
            Err(e) => return from_error(e),
        };
        *verdict = match m.verdict {
            Verdict::Holds => DepctlVerdict::Holds,
            Verdict::Fails => DepctlVerdict::Fails,
            Verdict::Inconclusive => DepctlVerdict::Inconclusive,
            Verdict::Completed => DepctlVerdict::Completed,
        };
        if !manifest_json.is_null() {
            let text = serde_json::to_string(&m).expect("manifest serializes");
            *manifest_json = CString::new(text).expect("JSON has no nul").into_raw();
        }
        DepctlStatus::Ok
    })
}

/// # Safety
/// `exp` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn depctl_experiment_free(exp: *mut DepctlExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}
