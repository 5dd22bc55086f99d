//! C ABI over the unibasis library.
//!
//! Every function returns a [`UbStatus`]. On failure a message is stored per thread
//! and can be read with [`ub_last_error_message`]. Handles are opaque and must be
//! released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::DMatrix;
use unibasis::cli::RunConfig;
use unibasis::losses::{partition_thresholds, PartitionConfig};
use unibasis::metrics;
use unibasis::orthobasis::{cayley, skew_from_params};
use unibasis::tammes::{self, TammesConfig, TammesResult};
use unibasis::tensorstore::FeatureDataset;
use unibasis::trainer::{self, BasisModel};
use unibasis::{Error, ErrorKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UbStatus {
    Ok = 0,
    /// Invalid arguments or configuration.
    Usage = 1,
    /// Unreadable or inconsistent input data.
    Data = 2,
    /// Numerical breakdown.
    Numerical = 3,
    /// A required pointer was null.
    NullPointer = 4,
    /// A caller-supplied buffer is too small.
    BufferTooSmall = 5,
    /// Internal panic caught at the boundary.
    Internal = 6,
}

/// Row-major dense matrix.
pub struct UbMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

pub struct UbModel {
    inner: BasisModel,
}

pub struct UbTammes {
    inner: TammesResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(UbStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.kind() {
            ErrorKind::Usage => UbStatus::Usage,
            ErrorKind::Data => UbStatus::Data,
            ErrorKind::Numerical => UbStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(UbStatus::NullPointer, format!("{} is null", what))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> UbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_last_error();
            UbStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal error: {}", msg));
            UbStatus::Internal
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure(UbStatus::Usage, format!("{} is not valid UTF-8", what)))
}

unsafe fn out_ptr<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

fn matrix_handle(m: &DMatrix<f64>) -> *mut UbMatrix {
    let data = (0..m.nrows())
        .flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)]))
        .collect();
    boxed(UbMatrix {
        rows: m.nrows(),
        cols: m.ncols(),
        data,
    })
}

/// Message of the last failed call on this thread, or null. Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn ub_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ub_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Orthonormal `dim x dim` matrix from `dim*(dim-1)/2` strict-upper-triangle parameters (row-major).
///
/// # Safety
/// `theta` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ub_cayley(
    theta: *const f64,
    len: usize,
    dim: usize,
    out: *mut *mut UbMatrix,
) -> UbStatus {
    guard(|| {
        let theta = slice(theta, len, "theta")?;
        let basis = cayley(&skew_from_params(theta, dim)?)?;
        out_ptr(out, matrix_handle(basis.matrix()), "out")
    })
}

/// # Safety
/// `m` must be a live matrix handle; `rows` and `cols` writable.
#[no_mangle]
pub unsafe extern "C" fn ub_matrix_shape(
    m: *const UbMatrix,
    rows: *mut usize,
    cols: *mut usize,
) -> UbStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("matrix"))?;
        out_ptr(rows, m.rows, "rows")?;
        out_ptr(cols, m.cols, "cols")
    })
}

/// Copies the row-major entries into `buf`, which must hold `rows * cols` doubles.
///
/// # Safety
/// `m` must be a live matrix handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ub_matrix_copy(m: *const UbMatrix, buf: *mut f64, len: usize) -> UbStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("matrix"))?;
        if len < m.data.len() {
            return Err(Failure(
                UbStatus::BufferTooSmall,
                format!("buffer holds {} values, need {}", len, m.data.len()),
            ));
        }
        slice_mut(buf, len, "buf")?[..m.data.len()].copy_from_slice(&m.data);
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ub_matrix_free(m: *mut UbMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Inactive-classifier thresholds for `detectors` detectors; writes `detectors` values to `out`.
///
/// # Safety
/// `alpha` and `omega` must point to `partitions` doubles; `out` to `detectors` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ub_partition_thresholds(
    detectors: usize,
    alpha: *const f64,
    omega: *const f64,
    partitions: usize,
    tau: f64,
    gamma: f64,
    out: *mut f64,
) -> UbStatus {
    guard(|| {
        let cfg = PartitionConfig {
            alpha: slice(alpha, partitions, "alpha")?.to_vec(),
            omega: slice(omega, partitions, "omega")?.to_vec(),
            tau,
            gamma,
        };
        let nu = partition_thresholds(detectors, &cfg)?;
        slice_mut(out, detectors, "out")?.copy_from_slice(&nu);
        Ok(())
    })
}

/// Sum of clamped per-detector scores.
///
/// # Safety
/// `scores` must point to `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ub_score1(scores: *const f64, n: usize, out: *mut f64) -> UbStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        out_ptr(out, metrics::score1(s), "out")
    })
}

/// Sum over distinct labels of the best score carrying that label.
///
/// # Safety
/// `scores` and `labels` must point to `n` elements; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ub_score2(
    scores: *const f64,
    labels: *const u32,
    n: usize,
    out: *mut f64,
) -> UbStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let l: Vec<usize> = slice(labels, n, "labels")?
            .iter()
            .map(|&x| x as usize)
            .collect();
        out_ptr(out, metrics::score2(s, &l)?, "out")
    })
}

/// Trains on the train split of a feature manifest.
///
/// `config_toml` is a run configuration whose `[train]` table is used; null means defaults.
///
/// # Safety
/// Strings must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ub_train(
    features_manifest: *const c_char,
    config_toml: *const c_char,
    out: *mut *mut UbModel,
) -> UbStatus {
    guard(|| {
        let path = PathBuf::from(string(features_manifest, "features_manifest")?);
        let cfg = if config_toml.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_toml(&string(config_toml, "config_toml")?)?
        };
        let ds = FeatureDataset::load(&path)?;
        let model = trainer::train_basis(&ds, &cfg.train)?;
        out_ptr(out, boxed(UbModel { inner: model }), "out")
    })
}

/// # Safety
/// `dir` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ub_model_load(dir: *const c_char, out: *mut *mut UbModel) -> UbStatus {
    guard(|| {
        let dir = string(dir, "dir")?;
        let model = trainer::load_model(dir)?;
        out_ptr(out, boxed(UbModel { inner: model }), "out")
    })
}

/// # Safety
/// `model` must be a live handle; `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ub_model_save(model: *const UbModel, dir: *const c_char) -> UbStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        trainer::save_model(&m.inner, string(dir, "dir")?)?;
        Ok(())
    })
}

/// Layer dimension, detector count, shared standardized bias and margin parameter.
///
/// # Safety
/// `model` must be a live handle; every output pointer writable.
#[no_mangle]
pub unsafe extern "C" fn ub_model_info(
    model: *const UbModel,
    dim: *mut usize,
    detectors: *mut usize,
    b: *mut f64,
    t: *mut f64,
) -> UbStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        out_ptr(dim, m.layer_dim(), "dim")?;
        out_ptr(detectors, m.detectors, "detectors")?;
        out_ptr(b, m.b, "b")?;
        out_ptr(t, m.t, "t")
    })
}

/// Detector directions as a `detectors x dim` matrix.
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ub_model_directions(
    model: *const UbModel,
    out: *mut *mut UbMatrix,
) -> UbStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let w = m.detector_rows()?;
        out_ptr(out, matrix_handle(&w), "out")
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ub_model_free(model: *mut UbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Spreads `count` unit vectors in `dim` dimensions; `iterations == 0` uses the default budget.
///
/// # Safety
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ub_tammes_solve(
    count: usize,
    dim: usize,
    seed: u64,
    iterations: usize,
    out: *mut *mut UbTammes,
) -> UbStatus {
    guard(|| {
        let mut cfg = TammesConfig::default();
        if iterations > 0 {
            cfg.iterations = iterations;
        }
        let r = tammes::solve_min_angle(count, dim, seed, &cfg)?;
        out_ptr(out, boxed(UbTammes { inner: r }), "out")
    })
}

/// Pairwise angle statistics in degrees.
///
/// # Safety
/// `h` must be a live handle; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn ub_tammes_stats(
    h: *const UbTammes,
    min: *mut f64,
    max: *mut f64,
    mean: *mut f64,
    std: *mut f64,
) -> UbStatus {
    guard(|| {
        let s = h.as_ref().ok_or_else(|| null("handle"))?.inner.stats;
        out_ptr(min, s.min, "min")?;
        out_ptr(max, s.max, "max")?;
        out_ptr(mean, s.mean, "mean")?;
        out_ptr(std, s.std, "std")
    })
}

/// Unit vectors as a `count x dim` matrix.
///
/// # Safety
/// `h` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ub_tammes_vectors(
    h: *const UbTammes,
    out: *mut *mut UbMatrix,
) -> UbStatus {
    guard(|| {
        let v = &h.as_ref().ok_or_else(|| null("handle"))?.inner.vectors;
        out_ptr(out, matrix_handle(v), "out")
    })
}

/// # Safety
/// `h` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ub_tammes_free(h: *mut UbTammes) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}
