//! C ABI over `mocd-core`.
//!
//! Every function returns a [`MocdStatus`]; results go through out-pointers.
//! On failure the message is kept per thread and can be read with
//! [`mocd_last_error`]. Matrices are dense, row-major `double` arrays.
//! Models and datasets are opaque handles released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mocd_core::data::{load_dataset, MultiViewDataset};
use mocd_core::eval::{ccr_at_fpr, ccr_fpr_at, oscr_curve, PredictionRecord};
use mocd_core::mass::{adaptive_uncertainty, omix_masses, omix_soft_label_into};
use mocd_core::model::{hsic, Bandwidth, ModelState};
use mocd_core::omix::perception_coefficients;
use mocd_core::Error;
use ndarray::ArrayView2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MocdStatus {
    Ok = 0,
    NullPointer = 1,
    /// Argument outside the operation's domain, or mismatched sizes.
    InvalidArgument = 2,
    /// Non-finite model parameters or a similar unusable object.
    InvalidState = 3,
    Io = 4,
    /// Malformed input file, checkpoint or configuration.
    Parse = 5,
    Training = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

impl From<&Error> for MocdStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Domain(_) | Error::Shape(_) => MocdStatus::InvalidArgument,
            Error::State(_) => MocdStatus::InvalidState,
            Error::Io(_) => MocdStatus::Io,
            Error::Parse { .. } | Error::Checkpoint(_) | Error::Config(_) | Error::Json(_) => MocdStatus::Parse,
            Error::Training { .. } => MocdStatus::Training,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Internal failure: status plus message.
struct Fail(MocdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(MocdStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MocdStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(MocdStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MocdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MocdStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            MocdStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a>(p: *mut f64) -> Result<&'a mut f64, Fail> {
    out(p, "out")
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn matrix<'a>(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<ArrayView2<'a, f64>, Fail> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| invalid(format!("{what} is too large")))?;
    let data = slice(p, len, what)?;
    ArrayView2::from_shape((rows, cols), data).map_err(|e| invalid(e.to_string()))
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn mocd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Uncertainty budget `c * (1 - |lambda - 1/2|)`.
///
/// # Safety
/// `out` must be NULL or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn mocd_adaptive_uncertainty(lambda: f64, c: f64, out: *mut f64) -> MocdStatus {
    guard(|| {
        *out_ptr(out)? = adaptive_uncertainty(lambda, c)?;
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MocdMasses {
    pub m_i: f64,
    pub m_j: f64,
    /// Mass on the ambiguous pair `{i, j}`.
    pub m_amb: f64,
    /// Out-of-frame mass.
    pub m_empty: f64,
}

/// Mass assignment of a pair mixed with weight `lambda` under budget `u`.
///
/// # Safety
/// `out` must be NULL or point to a writable `MocdMasses`.
#[no_mangle]
pub unsafe extern "C" fn mocd_omix_masses(lambda: f64, u: f64, out: *mut MocdMasses) -> MocdStatus {
    guard(|| {
        let m = omix_masses(lambda, u)?;
        *self::out(out, "out")? = MocdMasses {
            m_i: m.m_i,
            m_j: m.m_j,
            m_amb: m.m_amb,
            m_empty: m.m_empty,
        };
        Ok(())
    })
}

/// Writes the `classes`-long soft label of mixing class `class_i` with
/// weight `lambda` and class `class_j` under budget `u`.
///
/// # Safety
/// `out` must be NULL or point to `classes` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mocd_omix_soft_label(
    lambda: f64,
    u: f64,
    class_i: usize,
    class_j: usize,
    classes: usize,
    out: *mut f64,
) -> MocdStatus {
    guard(|| {
        if class_i >= classes || class_j >= classes {
            return Err(invalid(format!(
                "classes {class_i}, {class_j} out of range for {classes}"
            )));
        }
        let m = omix_masses(lambda, u)?;
        omix_soft_label_into(&m, class_i, class_j, slice_mut(out, classes, "out")?);
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MocdCoefficients {
    pub w_i: f64,
    pub w_j: f64,
    pub w_unk: f64,
}

/// Weights of the three cross-entropy terms of the perception loss.
///
/// # Safety
/// `out` must be NULL or point to a writable `MocdCoefficients`.
#[no_mangle]
pub unsafe extern "C" fn mocd_perception_coefficients(lambda: f64, u: f64, out: *mut MocdCoefficients) -> MocdStatus {
    guard(|| {
        let w = perception_coefficients(lambda, u)?;
        *self::out(out, "out")? = MocdCoefficients {
            w_i: w.w_i,
            w_j: w.w_j,
            w_unk: w.w_unk,
        };
        Ok(())
    })
}

/// Biased HSIC of `z` (`n x dz`) and `h` (`n x dh`) with Gaussian kernels.
/// `sigma <= 0` selects the median heuristic for each argument.
///
/// # Safety
/// `z` and `h` must point to `n * dz` and `n * dh` readable doubles; `out`
/// must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn mocd_hsic(
    z: *const f64,
    n: usize,
    dz: usize,
    h: *const f64,
    dh: usize,
    sigma: f64,
    out: *mut f64,
) -> MocdStatus {
    guard(|| {
        let z = matrix(z, n, dz, "z")?;
        let h = matrix(h, n, dh, "h")?;
        let policy = if sigma > 0.0 {
            Bandwidth::Fixed(sigma)
        } else {
            Bandwidth::Median
        };
        *out_ptr(out)? = hsic(z, h, policy)?;
        Ok(())
    })
}

/// `1 - sqrt(2 known / (2 known + unknown))`.
///
/// # Safety
/// `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn mocd_openness(known: usize, unknown: usize, out: *mut f64) -> MocdStatus {
    guard(|| {
        *out_ptr(out)? = mocd_core::eval::openness(known, unknown)?;
        Ok(())
    })
}

/// One scored test sample.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MocdRecord {
    /// Confidence of the predicted class.
    pub score: f64,
    pub predicted: usize,
    /// True class; ignored for unknown samples.
    pub label: usize,
    /// Nonzero for samples of an unknown class.
    pub is_unknown: u8,
}

unsafe fn records(p: *const MocdRecord, n: usize) -> Result<Vec<PredictionRecord>, Fail> {
    Ok(slice(p, n, "records")?
        .iter()
        .map(|r| PredictionRecord::new(r.score, r.predicted, r.label, r.is_unknown != 0))
        .collect())
}

/// False-positive and correct-classification rates at score threshold `p`.
///
/// # Safety
/// `records` must point to `n` readable records; `fpr` and `ccr` must be
/// NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn mocd_ccr_fpr_at(
    records: *const MocdRecord,
    n: usize,
    p: f64,
    fpr: *mut f64,
    ccr: *mut f64,
) -> MocdStatus {
    guard(|| {
        let r = self::records(records, n)?;
        let (f, c) = ccr_fpr_at(&r, p)?;
        *out(fpr, "fpr")? = f;
        *out(ccr, "ccr")? = c;
        Ok(())
    })
}

/// Best CCR among operating points with FPR at most `q`, `q` in (0, 1].
///
/// # Safety
/// `records` must point to `n` readable records; `out` must be NULL or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mocd_ccr_at_fpr(records: *const MocdRecord, n: usize, q: f64, out: *mut f64) -> MocdStatus {
    guard(|| {
        let r = self::records(records, n)?;
        *out_ptr(out)? = ccr_at_fpr(&oscr_curve(&r)?, q)?;
        Ok(())
    })
}

/// Opaque dataset handle.
pub struct MocdDataset(MultiViewDataset);

/// Loads a dataset directory (`meta.json`, `view_<v>.csv`, `labels.csv`).
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn mocd_dataset_load(dir: *const c_char, out: *mut *mut MocdDataset) -> MocdStatus {
    guard(|| {
        let slot = self::out(out, "out")?;
        let d = load_dataset(path(dir)?)?;
        *slot = Box::into_raw(Box::new(MocdDataset(d)));
        Ok(())
    })
}

/// Releases a dataset. NULL is ignored.
///
/// # Safety
/// `dataset` must be NULL or a handle from [`mocd_dataset_load`] that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn mocd_dataset_free(dataset: *mut MocdDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Sample count, view count and class count.
///
/// # Safety
/// `dataset` must be a live handle; each out-pointer must be NULL or
/// writable (NULL outputs are skipped).
#[no_mangle]
pub unsafe extern "C" fn mocd_dataset_shape(
    dataset: *const MocdDataset,
    samples: *mut usize,
    views: *mut usize,
    classes: *mut usize,
) -> MocdStatus {
    guard(|| {
        let d = &dataset.as_ref().ok_or_else(|| null("dataset"))?.0;
        for (p, v) in [(samples, d.len()), (views, d.views.len()), (classes, d.class_count)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies view `view` (`samples x dim`, row-major) into `buffer` of
/// `capacity` doubles and stores its width in `dim`.
///
/// # Safety
/// `dataset` must be a live handle; `buffer` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn mocd_dataset_view(
    dataset: *const MocdDataset,
    view: usize,
    buffer: *mut f64,
    capacity: usize,
    dim: *mut usize,
) -> MocdStatus {
    guard(|| {
        let d = &dataset.as_ref().ok_or_else(|| null("dataset"))?.0;
        let x = d
            .views
            .get(view)
            .ok_or_else(|| invalid(format!("view {view} of {}", d.views.len())))?;
        *out(dim, "dim")? = x.ncols();
        if capacity < x.len() {
            return Err(invalid(format!("buffer holds {capacity} values, view has {}", x.len())));
        }
        let buf = slice_mut(buffer, x.len(), "buffer")?;
        for (b, v) in buf.iter_mut().zip(x.iter()) {
            *b = *v;
        }
        Ok(())
    })
}

/// Copies the `samples` labels into `labels`.
///
/// # Safety
/// `dataset` must be a live handle; `labels` must hold `samples` values.
#[no_mangle]
pub unsafe extern "C" fn mocd_dataset_labels(
    dataset: *const MocdDataset,
    labels: *mut usize,
    samples: usize,
) -> MocdStatus {
    guard(|| {
        let d = &dataset.as_ref().ok_or_else(|| null("dataset"))?.0;
        if samples != d.len() {
            return Err(invalid(format!("{samples} labels requested, dataset has {}", d.len())));
        }
        slice_mut(labels, samples, "labels")?.copy_from_slice(&d.labels);
        Ok(())
    })
}

/// Opaque trained-model handle.
pub struct MocdModel(ModelState);

/// Loads a checkpoint written by `mocd run`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn mocd_model_load(path: *const c_char, out: *mut *mut MocdModel) -> MocdStatus {
    guard(|| {
        let slot = self::out(out, "out")?;
        let m = ModelState::load(self::path(path)?)?;
        *slot = Box::into_raw(Box::new(MocdModel(m)));
        Ok(())
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle from [`mocd_model_load`] that has not
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn mocd_model_free(model: *mut MocdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of classes and views, and the width of every view written to
/// `view_dims` (capacity `max_views`). NULL outputs are skipped.
///
/// # Safety
/// `model` must be a live handle; `view_dims` must hold `max_views` values.
#[no_mangle]
pub unsafe extern "C" fn mocd_model_shape(
    model: *const MocdModel,
    classes: *mut usize,
    views: *mut usize,
    view_dims: *mut usize,
    max_views: usize,
) -> MocdStatus {
    guard(|| {
        let cfg = &model.as_ref().ok_or_else(|| null("model"))?.0.config;
        if let Some(c) = classes.as_mut() {
            *c = cfg.classes;
        }
        if let Some(v) = views.as_mut() {
            *v = cfg.view_dims.len();
        }
        if !view_dims.is_null() {
            let n = max_views.min(cfg.view_dims.len());
            slice_mut(view_dims, n, "view_dims")?.copy_from_slice(&cfg.view_dims[..n]);
        }
        Ok(())
    })
}

/// Predicts `samples` rows. `views[v]` is a row-major `samples x dim_v`
/// matrix. Outputs (any may be NULL): `probabilities` (`samples x classes`),
/// `scores` (max probability) and `predicted` class ids.
///
/// # Safety
/// `model` must be a live handle; `views` must hold one pointer per view,
/// each to `samples * dim_v` doubles; outputs must have the sizes above.
#[no_mangle]
pub unsafe extern "C" fn mocd_model_predict(
    model: *const MocdModel,
    views: *const *const f64,
    view_count: usize,
    samples: usize,
    probabilities: *mut f64,
    scores: *mut f64,
    predicted: *mut usize,
) -> MocdStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let dims = &m.config.view_dims;
        if view_count != dims.len() {
            return Err(invalid(format!("model has {} views, got {view_count}", dims.len())));
        }
        let ptrs = slice(views, view_count, "views")?;
        let xs = ptrs
            .iter()
            .zip(dims)
            .enumerate()
            .map(|(v, (&p, &d))| matrix(p, samples, d, &format!("view {v}")))
            .collect::<Result<Vec<_>, _>>()?;
        let p = m.predict(&xs)?;
        if !probabilities.is_null() {
            let out = slice_mut(probabilities, p.probabilities.len(), "probabilities")?;
            for (o, v) in out.iter_mut().zip(p.probabilities.iter()) {
                *o = *v;
            }
        }
        if !scores.is_null() {
            slice_mut(scores, samples, "scores")?.copy_from_slice(p.scores.as_slice().expect("contiguous"));
        }
        if !predicted.is_null() {
            slice_mut(predicted, samples, "predicted")?.copy_from_slice(&p.predicted());
        }
        Ok(())
    })
}
