//! C ABI over `multifun_dag`.
//!
//! Handles are opaque pointers created by `mfdag_*_new`/`load`/`fit` calls and
//! released with the matching `_free`. Every fallible call returns an
//! [`MfdagStatus`]; on failure [`mfdag_last_error`] describes the cause for
//! the calling thread. Strings returned by the library must be released with
//! [`mfdag_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use multifun_dag::cli::{exit_code, parse_fit_config, run_method, Method};
use multifun_dag::io::read_dataset;
use multifun_dag::linalg::Mat;
use multifun_dag::synth::{generate_dataset, GroundTruth, SynthConfig};
use multifun_dag::{Error, FitConfig, FitReport, FunctionalDataset, ProblemShape};

/// Result codes. Numeric values match the command-line exit codes where
/// both exist.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfdagStatus {
    Ok = 0,
    /// Numerical failure inside the solver or the E-step.
    Numerical = 1,
    /// Invalid input, configuration or shape.
    InvalidInput = 2,
    /// File system error.
    Io = 3,
    /// EM stopped at its iteration cap; the model is still returned.
    NotConverged = 4,
    /// A required pointer argument was null.
    NullPointer = 5,
    /// Caller buffer is too small.
    BufferTooSmall = 6,
    /// Internal panic caught at the boundary.
    Panic = 7,
}

/// A dataset, optionally with its generating ground truth.
pub struct MfdagDataset {
    data: FunctionalDataset,
    truth: Option<GroundTruth>,
}

/// A fitted model with its report.
pub struct MfdagModel {
    report: FitReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> MfdagStatus {
    match exit_code(e) {
        1 => MfdagStatus::Numerical,
        3 => MfdagStatus::Io,
        _ => MfdagStatus::InvalidInput,
    }
}

/// Run `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<MfdagStatus, (MfdagStatus, String)>) -> MfdagStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            MfdagStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (MfdagStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MfdagStatus, String) {
    (MfdagStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MfdagStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (MfdagStatus::InvalidInput, format!("{what} is not UTF-8")))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn mfdag_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn mfdag_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by the library.
///
/// # Safety
/// `s` must be null or a pointer returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfdag_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Build a dataset from a row-major `n × (Σ_j l[j]·t)` array. Columns are
/// ordered node, then function, then grid point.
///
/// # Safety
/// `l` must point to `p` values, `values` to `len` values and `out` to
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn mfdag_dataset_new(
    p: usize,
    l: *const usize,
    t: usize,
    n: usize,
    values: *const f64,
    len: usize,
    out: *mut *mut MfdagDataset,
) -> MfdagStatus {
    guard(|| {
        if l.is_null() || values.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let l = std::slice::from_raw_parts(l, p).to_vec();
        // K is a placeholder until a fit chooses it.
        let k = vec![t.saturating_sub(1).clamp(1, 3); p];
        let shape = ProblemShape::new(l, k, t, n).map_err(lib_err)?;
        if len != n * shape.obs_len() {
            return Err((
                MfdagStatus::InvalidInput,
                format!("expected {} values, got {len}", n * shape.obs_len()),
            ));
        }
        let vals = std::slice::from_raw_parts(values, len);
        let data = FunctionalDataset::new(shape, Mat::from_row_slice(n, len / n.max(1), vals)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MfdagDataset { data, truth: None }));
        Ok(MfdagStatus::Ok)
    })
}

/// Load a dataset directory written by `multifun-dag generate`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mfdag_dataset_load(dir: *const c_char, out: *mut *mut MfdagDataset) -> MfdagStatus {
    guard(|| {
        let dir = c_str(dir, "dir")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let ds = read_dataset(Path::new(dir)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MfdagDataset {
            data: ds.data,
            truth: ds.truth,
        }));
        Ok(MfdagStatus::Ok)
    })
}

/// Sample a synthetic dataset: `p` nodes with `l0` functions each, `k0`
/// Fourier basis functions, `t` grid points and `n` samples.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfdag_generate(
    p: usize,
    l0: usize,
    k0: usize,
    t: usize,
    n: usize,
    edge_prob: f64,
    seed: u64,
    out: *mut *mut MfdagDataset,
) -> MfdagStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = SynthConfig {
            shape: ProblemShape::uniform(p, l0, k0, t, n).map_err(lib_err)?,
            edge_prob,
            seed,
            ..SynthConfig::default()
        };
        let (data, truth) = generate_dataset(&cfg).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MfdagDataset {
            data,
            truth: Some(truth),
        }));
        Ok(MfdagStatus::Ok)
    })
}

/// Number of nodes, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn mfdag_dataset_nodes(ds: *const MfdagDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.data.shape.p)
}

/// Copy the true adjacency (1.0 for an edge) into a row-major `p × p`
/// buffer. Fails with `InvalidInput` when the dataset has no ground truth.
///
/// # Safety
/// `ds` must be a live handle and `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn mfdag_dataset_true_adjacency(ds: *const MfdagDataset, buf: *mut f64, len: usize) -> MfdagStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let truth = ds
            .truth
            .as_ref()
            .ok_or((MfdagStatus::InvalidInput, "dataset has no ground truth".to_string()))?;
        let p = ds.data.shape.p;
        if len < p * p {
            return Err((MfdagStatus::BufferTooSmall, format!("need {} values", p * p)));
        }
        let out = std::slice::from_raw_parts_mut(buf, p * p);
        for i in 0..p {
            for j in 0..p {
                out[i * p + j] = if truth.adjacency_true[i][j] { 1.0 } else { 0.0 };
            }
        }
        Ok(MfdagStatus::Ok)
    })
}

/// Release a dataset handle.
///
/// # Safety
/// `ds` must be null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfdag_dataset_free(ds: *mut MfdagDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

unsafe fn fit_with(
    ds: *const MfdagDataset,
    cfg: FitConfig,
    method: Method,
    out: *mut *mut MfdagModel,
) -> Result<MfdagStatus, (MfdagStatus, String)> {
    let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
    if out.is_null() {
        return Err(null("out"));
    }
    let report = run_method(&ds.data, &cfg, method).map_err(lib_err)?;
    let converged = report.converged;
    *out = Box::into_raw(Box::new(MfdagModel { report }));
    Ok(if converged {
        MfdagStatus::Ok
    } else {
        MfdagStatus::NotConverged
    })
}

/// Fit the EM model with `k` basis functions per node and group-lasso
/// weight `lambda`, other settings at their defaults. On `NotConverged`
/// the model is still written to `out`.
///
/// # Safety
/// `ds` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mfdag_fit(
    ds: *const MfdagDataset,
    k: usize,
    lambda: f64,
    seed: u64,
    out: *mut *mut MfdagModel,
) -> MfdagStatus {
    guard(|| {
        let mut cfg = FitConfig {
            k: Some(multifun_dag::em::BasisCounts::Uniform(k)),
            ..FitConfig::default()
        };
        cfg.solver.lambda = lambda;
        cfg.seed = seed;
        cfg.validate().map_err(lib_err)?;
        fit_with(ds, cfg, Method::Multifun, out)
    })
}

/// Fit with a JSON config in the `fit --config` format, including
/// `"method"`.
///
/// # Safety
/// `ds` must be a live handle, `config_json` NUL-terminated and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mfdag_fit_json(
    ds: *const MfdagDataset,
    config_json: *const c_char,
    out: *mut *mut MfdagModel,
) -> MfdagStatus {
    guard(|| {
        let text = c_str(config_json, "config_json")?;
        let (cfg, method) = parse_fit_config(text).map_err(lib_err)?;
        fit_with(ds, cfg, method, out)
    })
}

/// Number of nodes in a model, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn mfdag_model_nodes(model: *const MfdagModel) -> usize {
    model.as_ref().map_or(0, |m| m.report.params.shape.p)
}

/// Copy the weighted adjacency `W` into a row-major `p × p` buffer.
///
/// # Safety
/// `model` must be a live handle and `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn mfdag_model_adjacency(model: *const MfdagModel, buf: *mut f64, len: usize) -> MfdagStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let w = &m.report.w.w;
        let p = w.nrows();
        if len < p * p {
            return Err((MfdagStatus::BufferTooSmall, format!("need {} values", p * p)));
        }
        let out = std::slice::from_raw_parts_mut(buf, p * p);
        for i in 0..p {
            for j in 0..p {
                out[i * p + j] = w[(i, j)];
            }
        }
        Ok(MfdagStatus::Ok)
    })
}

/// EM iterations the fit used.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn mfdag_model_iterations(model: *const MfdagModel) -> usize {
    model.as_ref().map_or(0, |m| m.report.iterations)
}

/// Serialize the model parameters as JSON (the on-disk model schema).
/// Returns null on failure; free the result with [`mfdag_string_free`].
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mfdag_model_to_json(model: *const MfdagModel) -> *mut c_char {
    let mut out = ptr::null_mut();
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let text = serde_json::to_string(&m.report.params).map_err(|e| lib_err(e.into()))?;
        out = CString::new(text)
            .map_err(|_| (MfdagStatus::InvalidInput, "model JSON contains NUL".to_string()))?
            .into_raw();
        Ok(MfdagStatus::Ok)
    });
    out
}

/// Release a model handle.
///
/// # Safety
/// `model` must be null or a handle from this library that was not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn mfdag_model_free(model: *mut MfdagModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
