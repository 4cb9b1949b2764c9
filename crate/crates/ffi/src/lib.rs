//! C ABI over `msmd-core`.
//!
//! Objects are opaque handles created by `*_new`/`*_from_*` functions and released
//! with the matching `*_free`. Every fallible call returns an [`MsmdStatus`]; on
//! failure [`msmd_last_error`] describes the problem for the calling thread.
//! Strings returned to the caller are released with [`msmd_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use msmd_core::density::{geometric_mean, kl_divergence, GaussianDensity, Var, VarId};
use msmd_core::harness::{execute, ExperimentConfig};
use nalgebra::{DMatrix, DVector};
use msmd_core::Error;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MsmdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Layout = 5,
    Io = 6,
    /// A proposition suite ran and found violations.
    Violation = 7,
    Panic = 8,
    Other = 9,
}

/// A multivariate Gaussian over scalar variables.
pub struct MsmdGaussian {
    inner: GaussianDensity,
}

/// A resolved experiment configuration.
pub struct MsmdExperiment {
    inner: ExperimentConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> MsmdStatus {
    match e.root() {
        Error::Config { .. } | Error::Assignment { .. } | Error::Connectivity(_) | Error::Coverage(_) => {
            MsmdStatus::Config
        }
        Error::Numerical(_)
        | Error::Curvature(_)
        | Error::Underflow(_)
        | Error::Sinkhorn { .. }
        | Error::BoundedGradient(_)
        | Error::MessageDegeneracy { .. } => MsmdStatus::Numerical,
        Error::Layout(_) | Error::Contract(_) | Error::Protocol(_) => MsmdStatus::Layout,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => MsmdStatus::Io,
        _ => MsmdStatus::Other,
    }
}

struct Failure(MsmdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail(status: MsmdStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, converting errors and panics into a status and a thread-local message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MsmdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MsmdStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            MsmdStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(MsmdStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(MsmdStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(MsmdStatus::NullPointer, format!("`{name}` is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(MsmdStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(MsmdStatus::NullPointer, format!("`{name}` is null")))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Message of the last failed call on this thread; empty after a successful call.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn msmd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn msmd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn msmd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a Gaussian over scalar variables `var_ids[0..dim]` from a mean and a
/// row-major `dim × dim` covariance.
///
/// # Safety
/// `var_ids` and `mean` must hold `dim` elements, `covariance` `dim * dim`.
#[no_mangle]
pub unsafe extern "C" fn msmd_gaussian_from_moments(
    dim: usize,
    var_ids: *const usize,
    mean: *const f64,
    covariance: *const f64,
    out: *mut *mut MsmdGaussian,
) -> MsmdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if dim == 0 {
            return Err(fail(MsmdStatus::InvalidArgument, "dimension must be positive"));
        }
        let ids = slice_arg(var_ids, dim, "var_ids")?;
        let mean = slice_arg(mean, dim, "mean")?;
        let cov = slice_arg(covariance, dim * dim, "covariance")?;
        let vars = ids.iter().map(|&i| Var::scalar(i)).collect();
        let g = GaussianDensity::from_moments(vars, DVector::from_column_slice(mean), DMatrix::from_row_slice(dim, dim, cov))?;
        *out = Box::into_raw(Box::new(MsmdGaussian { inner: g }));
        Ok(())
    })
}

/// # Safety
/// `g` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn msmd_gaussian_free(g: *mut MsmdGaussian) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Total dimension of `g`, or 0 if `g` is null.
///
/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msmd_gaussian_dim(g: *const MsmdGaussian) -> usize {
    g.as_ref().map_or(0, |g| g.inner.dim())
}

/// Writes the mean into `out[0..len]`; `len` must equal the dimension.
///
/// # Safety
/// `g` must be a live handle and `out` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn msmd_gaussian_mean(g: *const MsmdGaussian, out: *mut f64, len: usize) -> MsmdStatus {
    guard(|| {
        let g = ref_arg(g, "g")?;
        let m = g.inner.mean()?;
        if len != m.len() || out.is_null() {
            return Err(fail(MsmdStatus::InvalidArgument, format!("need a buffer of {} doubles", m.len())));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(m.as_slice());
        Ok(())
    })
}

/// Writes the row-major covariance into `out[0..len]`; `len` must equal dim².
///
/// # Safety
/// `g` must be a live handle and `out` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn msmd_gaussian_covariance(g: *const MsmdGaussian, out: *mut f64, len: usize) -> MsmdStatus {
    guard(|| {
        let g = ref_arg(g, "g")?;
        let c = g.inner.covariance()?;
        let d = c.nrows();
        if len != d * d || out.is_null() {
            return Err(fail(MsmdStatus::InvalidArgument, format!("need a buffer of {} doubles", d * d)));
        }
        let buf = std::slice::from_raw_parts_mut(out, len);
        for r in 0..d {
            for k in 0..d {
                buf[r * d + k] = c[(r, k)];
            }
        }
        Ok(())
    })
}

/// `KL(p ‖ g)` for densities over the same variables.
///
/// # Safety
/// `p` and `g` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msmd_gaussian_kl(p: *const MsmdGaussian, g: *const MsmdGaussian, out: *mut f64) -> MsmdStatus {
    guard(|| {
        let (p, g, out) = (ref_arg(p, "p")?, ref_arg(g, "g")?, out_arg(out, "out")?);
        *out = kl_divergence(&p.inner, &g.inner)?;
        Ok(())
    })
}

/// Weighted geometric pooling `∝ Π p_k^{w_k}` of `n` densities over the same variables.
///
/// # Safety
/// `densities` and `weights` must hold `n` elements; each handle must be live.
#[no_mangle]
pub unsafe extern "C" fn msmd_gaussian_geometric_mean(
    densities: *const *const MsmdGaussian,
    weights: *const f64,
    n: usize,
    out: *mut *mut MsmdGaussian,
) -> MsmdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let hs = slice_arg(densities, n, "densities")?;
        let ws = slice_arg(weights, n, "weights")?;
        let refs = hs
            .iter()
            .map(|&h| ref_arg(h, "densities[k]").map(|g| &g.inner))
            .collect::<Result<Vec<_>, _>>()?;
        let g = geometric_mean(&refs, ws)?;
        *out = Box::into_raw(Box::new(MsmdGaussian { inner: g }));
        Ok(())
    })
}

/// Marginal of `g` over the scalar variables `keep[0..n]`.
///
/// # Safety
/// `g` must be a live handle and `keep` hold `n` ids.
#[no_mangle]
pub unsafe extern "C" fn msmd_gaussian_marginalize(
    g: *const MsmdGaussian,
    keep: *const usize,
    n: usize,
    out: *mut *mut MsmdGaussian,
) -> MsmdStatus {
    guard(|| {
        let (g, out) = (ref_arg(g, "g")?, out_arg(out, "out")?);
        let keep: Vec<VarId> = slice_arg(keep, n, "keep")?.iter().map(|&i| VarId(i)).collect();
        *out = Box::into_raw(Box::new(MsmdGaussian { inner: g.inner.marginalize(&keep)? }));
        Ok(())
    })
}

/// Loads a named preset (`localization-fig2`, `localization-fig3-sweep`, `mapping-desk`).
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msmd_experiment_from_preset(name: *const c_char, out: *mut *mut MsmdExperiment) -> MsmdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let config = ExperimentConfig::preset(str_arg(name, "name")?)?;
        *out = Box::into_raw(Box::new(MsmdExperiment { inner: config }));
        Ok(())
    })
}

/// Parses and validates a JSON experiment config.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msmd_experiment_from_json(json: *const c_char, out: *mut *mut MsmdExperiment) -> MsmdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let config = ExperimentConfig::from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(MsmdExperiment { inner: config }));
        Ok(())
    })
}

/// # Safety
/// `e` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn msmd_experiment_free(e: *mut MsmdExperiment) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Overrides the round count.
///
/// # Safety
/// `e` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn msmd_experiment_set_rounds(e: *mut MsmdExperiment, rounds: usize) -> MsmdStatus {
    guard(|| {
        out_arg(e, "e")?.inner.run.rounds = rounds;
        Ok(())
    })
}

/// Replaces every seed of the experiment.
///
/// # Safety
/// `e` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn msmd_experiment_set_seed(e: *mut MsmdExperiment, seed: u64) -> MsmdStatus {
    guard(|| {
        out_arg(e, "e")?.inner.override_seed(seed);
        Ok(())
    })
}

/// Sets the output directory.
///
/// # Safety
/// `e` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn msmd_experiment_set_output(e: *mut MsmdExperiment, dir: *const c_char) -> MsmdStatus {
    guard(|| {
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        out_arg(e, "e")?.inner.run.out = dir;
        Ok(())
    })
}

/// Sets the worker count; 0 uses every core.
///
/// # Safety
/// `e` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn msmd_experiment_set_jobs(e: *mut MsmdExperiment, jobs: usize) -> MsmdStatus {
    guard(|| {
        out_arg(e, "e")?.inner.run.jobs = (jobs > 0).then_some(jobs);
        Ok(())
    })
}

/// Resolved config as pretty JSON; release with [`msmd_string_free`].
///
/// # Safety
/// `e` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msmd_experiment_to_json(e: *const MsmdExperiment, out: *mut *mut c_char) -> MsmdStatus {
    guard(|| {
        let (e, out) = (ref_arg(e, "e")?, out_arg(out, "out")?);
        *out = into_c_string(e.inner.to_json());
        Ok(())
    })
}

/// Runs the experiment, writing traces, summary and manifest to its output directory.
/// `runs_written` (may be null) receives the number of trace files.
///
/// # Safety
/// `e` must be a live handle; `runs_written` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn msmd_experiment_run(e: *const MsmdExperiment, runs_written: *mut usize) -> MsmdStatus {
    guard(|| {
        let e = ref_arg(e, "e")?;
        let outcome = execute(&e.inner)?;
        if let Some(n) = runs_written.as_mut() {
            *n = outcome.manifest.runs.len();
        }
        Ok(())
    })
}

/// Runs a proposition suite. `report_json` (may be null) receives the JSON report,
/// released with [`msmd_string_free`]. Returns `Violation` if any enforced check failed.
///
/// # Safety
/// `name` must be a NUL-terminated string; `report_json` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn msmd_verify(name: *const c_char, seed: u64, report_json: *mut *mut c_char) -> MsmdStatus {
    let mut passed = true;
    let status = guard(|| {
        let report = msmd_core::verify::run_suite(str_arg(name, "name")?, seed)?;
        passed = report.passed;
        if let Some(out) = report_json.as_mut() {
            *out = into_c_string(serde_json::to_string(&report).map_err(Error::from)?);
        }
        Ok(())
    });
    if status == MsmdStatus::Ok && !passed {
        set_error("suite reported violations");
        return MsmdStatus::Violation;
    }
    status
}
