//! C ABI over `depthac`.
//!
//! Every fallible function returns an [`AcdkStatus`]; on failure the
//! message is available from [`depthac_last_error_message`] on the same
//! thread until the next failing call. Buffers are caller-owned, row-major
//! `f64`, with channels interleaved for color images. Models are opaque
//! handles released with [`depthac_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use depthac::corruption::{apply, CorruptionKind, Severity};
use depthac::evalsuite::{absrel, align, delta1};
use depthac::losses::affine_invariant_slices;
use depthac::model::{load_checkpoint, save_checkpoint, ModelState};
use depthac::sdr::{sdr_loss_dense, DistanceMetric};
use depthac::{DisparityMap, Error, ImageBuffer, Rng};

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcdkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    Shape = 6,
    Checkpoint = 7,
    Panic = 8,
}

/// Distance used by the SDR loss.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcdkMetric {
    Euclidean = 0,
    Manhattan = 1,
}

/// Opaque model handle.
pub struct AcdkModel {
    inner: ModelState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AcdkStatus {
    match e {
        Error::MissingFile(_) | Error::Io { .. } => AcdkStatus::Io,
        Error::MalformedHeader(_)
        | Error::UnsupportedMaxval(_)
        | Error::Truncated { .. }
        | Error::Config { .. }
        | Error::MalformedLog { .. } => AcdkStatus::Format,
        Error::NonFinite(_) | Error::DegenerateScale | Error::SingularAlignment | Error::NonFiniteLoss { .. } => {
            AcdkStatus::Numeric
        }
        Error::ShapeMismatch(_) => AcdkStatus::Shape,
        Error::VersionMismatch { .. } | Error::CorruptCheckpoint(_) | Error::StaleCache(_) => AcdkStatus::Checkpoint,
        Error::InvalidParameter(_) | Error::OutOfRange(_) | Error::EmptyDataset(_) => AcdkStatus::InvalidArgument,
    }
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AcdkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AcdkStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            AcdkStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(msg);
            AcdkStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            AcdkStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, what: &'static str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn string(p: *const c_char, what: &'static str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map(str::to_owned).map_err(|_| Failure::Invalid(format!("{what} is not UTF-8")))
}

fn area(height: usize, width: usize, channels: usize) -> Result<usize, Failure> {
    height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(channels))
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::Invalid(format!("bad dimensions {height}x{width}x{channels}")))
}

/// Message of the last failing call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn depthac_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn depthac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Fresh model for 1- or 3-channel input, deterministic in `seed`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn depthac_model_init(seed: u64, channels: u32, out: *mut *mut AcdkModel) -> AcdkStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let inner = ModelState::init(seed, channels as usize)?;
        *out = Box::into_raw(Box::new(AcdkModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn depthac_model_load(path: *const c_char, out: *mut *mut AcdkModel) -> AcdkStatus {
    guard(|| {
        let path = PathBuf::from(string(path, "path")?);
        let out = out_ref(out, "out")?;
        *out = Box::into_raw(Box::new(AcdkModel { inner: load_checkpoint(path)? }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `path` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn depthac_model_save(model: *const AcdkModel, path: *const c_char) -> AcdkStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        save_checkpoint(&m.inner, PathBuf::from(string(path, "path")?))?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn depthac_model_free(model: *mut AcdkModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of scalar parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn depthac_model_param_count(model: *const AcdkModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.param_count())
}

/// Input channel count, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn depthac_model_input_channels(model: *const AcdkModel) -> u32 {
    model.as_ref().map_or(0, |m| m.inner.input_channels() as u32)
}

/// Disparity for an `height x width x channels` image in `[0, 1]`.
/// `out` receives `height * width` values.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn depthac_model_predict(
    model: *const AcdkModel,
    pixels: *const f64,
    height: usize,
    width: usize,
    channels: usize,
    out: *mut f64,
) -> AcdkStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let n = area(height, width, channels)?;
        let img = ImageBuffer::new(height, width, channels, slice(pixels, n, "pixels")?.to_vec())?;
        let pred = m.inner.predict(&img)?;
        slice_mut(out, height * width, "out")?.copy_from_slice(pred.data());
        Ok(())
    })
}

/// Applies the corruption named by `kind` (e.g. `"fog"`) at `severity`
/// 1..5. `out` receives as many values as `pixels`.
///
/// # Safety
/// `kind` must be nul-terminated; buffers must hold the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn depthac_corrupt(
    kind: *const c_char,
    severity: u8,
    seed: u64,
    pixels: *const f64,
    height: usize,
    width: usize,
    channels: usize,
    out: *mut f64,
) -> AcdkStatus {
    guard(|| {
        let kind: CorruptionKind = string(kind, "kind")?.parse()?;
        let sev = Severity::new(severity)?;
        let n = area(height, width, channels)?;
        let img = ImageBuffer::new(height, width, channels, slice(pixels, n, "pixels")?.to_vec())?;
        let res = apply(kind, &img, sev, &mut Rng::new(seed));
        slice_mut(out, n, "out")?.copy_from_slice(res.data());
        Ok(())
    })
}

/// Affine-invariant L1 loss between two length-`n` maps. `grad_pred` may
/// be null; otherwise it receives `n` values.
///
/// # Safety
/// Non-null buffers must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn depthac_affine_loss(
    pred: *const f64,
    target: *const f64,
    n: usize,
    value: *mut f64,
    grad_pred: *mut f64,
) -> AcdkStatus {
    guard(|| {
        let l = affine_invariant_slices(slice(pred, n, "pred")?, slice(target, n, "target")?, false)?;
        *out_ref(value, "value")? = l.value;
        if !grad_pred.is_null() {
            slice_mut(grad_pred, n, "grad_pred")?.copy_from_slice(&l.grad_pred);
        }
        Ok(())
    })
}

/// SDR loss of `student` against `reference` (both `height x width`,
/// non-negative) with square patches of side `patch`. `grad` may be null.
///
/// # Safety
/// Non-null buffers must hold `height * width` elements.
#[no_mangle]
pub unsafe extern "C" fn depthac_sdr_loss(
    student: *const f64,
    reference: *const f64,
    height: usize,
    width: usize,
    patch: usize,
    metric: AcdkMetric,
    value: *mut f64,
    grad: *mut f64,
) -> AcdkStatus {
    guard(|| {
        let n = area(height, width, 1)?;
        let s = DisparityMap::new(height, width, slice(student, n, "student")?.to_vec())?;
        let r = DisparityMap::new(height, width, slice(reference, n, "reference")?.to_vec())?;
        let metric = match metric {
            AcdkMetric::Euclidean => DistanceMetric::Euclidean,
            AcdkMetric::Manhattan => DistanceMetric::Manhattan,
        };
        let (v, g) = sdr_loss_dense(&s, &r, patch, metric)?;
        *out_ref(value, "value")? = v;
        if !grad.is_null() {
            slice_mut(grad, n, "grad")?.copy_from_slice(&g);
        }
        Ok(())
    })
}

/// AbsRel and δ1 of `pred` against `gt` after least-squares scale-shift
/// alignment over pixels with positive ground truth.
///
/// # Safety
/// Buffers must hold `height * width` elements; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn depthac_metrics(
    pred: *const f64,
    gt: *const f64,
    height: usize,
    width: usize,
    out_absrel: *mut f64,
    out_delta1: *mut f64,
) -> AcdkStatus {
    guard(|| {
        let n = area(height, width, 1)?;
        let p = DisparityMap::new(height, width, slice(pred, n, "pred")?.to_vec())?;
        let g = DisparityMap::new(height, width, slice(gt, n, "gt")?.to_vec())?;
        let pair = align(&p, &g, None)?;
        *out_ref(out_absrel, "out_absrel")? = absrel(&pair);
        *out_ref(out_delta1, "out_delta1")? = delta1(&pair);
        Ok(())
    })
}
