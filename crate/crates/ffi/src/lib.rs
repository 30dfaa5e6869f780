//! C ABI for fitting, applying and persisting `ebdp` classifiers.
//!
//! Every fallible function returns an [`EbdpStatus`]. On failure a message is
//! available from [`ebdp_last_error`] on the same thread until the next call.
//! Matrices are dense, row-major `double` arrays with one row per sample.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use ebdp::io::ModelFile;
use ebdp::vb::Init;
use ebdp::{ClassLabel, Error, LabeledDataset, LinearClassifier, Method, VbConfig};
use ndarray::Array2;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EbdpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidData = 3,
    Runtime = 4,
    Panic = 5,
}

/// Estimator applied to the fitted prior.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EbdpMethod {
    Dp = 0,
    SparseDp = 1,
    HardThresh = 2,
    SampleMean = 3,
}

impl From<EbdpMethod> for Method {
    fn from(m: EbdpMethod) -> Self {
        match m {
            EbdpMethod::Dp => Method::Dp,
            EbdpMethod::SparseDp => Method::SparseDp,
            EbdpMethod::HardThresh => Method::HardThresh,
            EbdpMethod::SampleMean => Method::SampleMean,
        }
    }
}

/// Starting assignments of the variational fit.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EbdpInit {
    Grid = 0,
    Random = 1,
}

impl From<EbdpInit> for Init {
    fn from(i: EbdpInit) -> Self {
        match i {
            EbdpInit::Grid => Init::Grid,
            EbdpInit::Random => Init::Random,
        }
    }
}

/// Fitting options. Obtain defaults from [`ebdp_fit_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EbdpFitOptions {
    pub alpha: f64,
    pub sigma2: f64,
    pub w: f64,
    pub truncation: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub batches: usize,
    pub kappa: f64,
    pub method: EbdpMethod,
    pub init: EbdpInit,
}

/// Opaque fitted model.
pub struct EbdpModel {
    file: ModelFile,
    classifier: LinearClassifier,
}

impl EbdpModel {
    fn new(file: ModelFile) -> Result<Self, Error> {
        let classifier = file.classifier()?;
        Ok(Self { file, classifier })
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

enum Failure {
    Null(&'static str),
    Argument(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EbdpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EbdpStatus::Ok,
        Ok(Err(Failure::Null(name))) => {
            set_last_error(format!("{name} is null"));
            EbdpStatus::NullPointer
        }
        Ok(Err(Failure::Argument(msg))) => {
            set_last_error(msg);
            EbdpStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            if e.is_validation() {
                EbdpStatus::InvalidData
            } else {
                EbdpStatus::Runtime
            }
        }
        Err(_) => {
            set_last_error("internal panic".into());
            EbdpStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: callers pass pointers that are null or valid for reads.
    unsafe { p.as_ref() }.ok_or(Failure::Null(name))
}

unsafe fn slice_of<'a, T>(p: *const T, len: usize, name: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_of_mut<'a, T>(
    p: *mut T,
    len: usize,
    name: &'static str,
) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

fn checked_len(rows: usize, cols: usize) -> Result<usize, Failure> {
    rows.checked_mul(cols)
        .ok_or_else(|| Failure::Argument("rows * cols overflows".into()))
}

/// Default options: alpha 1, sigma2 16, w 0.9, truncation 20, tol 1e-6,
/// 500 iterations, seed 0, one batch, kappa 0.5, sparse DP estimator,
/// grid initialization.
#[no_mangle]
pub extern "C" fn ebdp_fit_options_default() -> EbdpFitOptions {
    let vb = VbConfig::default();
    EbdpFitOptions {
        alpha: vb.alpha,
        sigma2: vb.sigma2,
        w: vb.w,
        truncation: vb.truncation,
        tol: vb.tol,
        max_iter: vb.max_iter,
        seed: vb.seed,
        batches: 1,
        kappa: 0.5,
        method: EbdpMethod::SparseDp,
        init: EbdpInit::Grid,
    }
}

/// Fits a model on `rows` samples of `cols` features. `labels` holds one
/// value per row, each 1 or 2. `options` may be null for the defaults.
/// On success `*out` owns a model to be released with [`ebdp_model_free`].
///
/// # Safety
/// `features` must point to `rows * cols` doubles, `labels` to `rows` bytes,
/// and `out` to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ebdp_fit(
    features: *const f64,
    rows: usize,
    cols: usize,
    labels: *const u8,
    options: *const EbdpFitOptions,
    out: *mut *mut EbdpModel,
) -> EbdpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = ptr::null_mut();
        let opts = if options.is_null() {
            ebdp_fit_options_default()
        } else {
            *non_null(options, "options")?
        };
        let x = slice_of(features, checked_len(rows, cols)?, "features")?;
        let raw = slice_of(labels, rows, "labels")?;
        let labels = raw
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                ClassLabel::from_int(v.into()).ok_or_else(|| {
                    Failure::Argument(format!("label at row {i} must be 1 or 2, got {v}"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let matrix = Array2::from_shape_vec((rows, cols), x.to_vec())
            .map_err(|e| Failure::Argument(e.to_string()))?;
        let data = LabeledDataset::new(matrix, labels)?;
        let vb = VbConfig {
            alpha: opts.alpha,
            sigma2: opts.sigma2,
            w: opts.w,
            truncation: opts.truncation,
            tol: opts.tol,
            max_iter: opts.max_iter,
            seed: opts.seed,
            init: opts.init.into(),
        };
        vb.validate()?;
        if !(opts.kappa > 0.0 && opts.kappa < 1.0) {
            return Err(Failure::Argument(format!(
                "kappa must lie in (0, 1), got {}",
                opts.kappa
            )));
        }
        let file = ModelFile::fit(&data, opts.method.into(), &vb, opts.batches, opts.kappa)?;
        *out = Box::into_raw(Box::new(EbdpModel::new(file)?));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a pointer returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ebdp_model_free(model: *mut EbdpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of features the model expects, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn ebdp_model_dim(model: *const EbdpModel) -> usize {
    model.as_ref().map_or(0, |m| m.classifier.dim())
}

/// Copies the estimated coefficient vector (length [`ebdp_model_dim`]) into `out`.
///
/// # Safety
/// `model` must be a live model and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ebdp_model_coefficients(
    model: *const EbdpModel,
    out: *mut f64,
    len: usize,
) -> EbdpStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let values = &m.file.eta.values;
        if len != values.len() {
            return Err(Failure::Argument(format!(
                "buffer holds {len} values, model has {}",
                values.len()
            )));
        }
        slice_of_mut(out, len, "out")?.copy_from_slice(values);
        Ok(())
    })
}

/// Scores and labels `rows` samples. `labels` receives 1 or 2 per row;
/// `scores` may be null. A positive score means class 1.
///
/// # Safety
/// `features` must point to `rows * cols` doubles, `labels` to `rows` bytes
/// and `scores` (when non-null) to `rows` doubles.
#[no_mangle]
pub unsafe extern "C" fn ebdp_model_predict(
    model: *const EbdpModel,
    features: *const f64,
    rows: usize,
    cols: usize,
    labels: *mut u8,
    scores: *mut f64,
) -> EbdpStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        if cols != m.classifier.dim() {
            return Err(Error::DimensionMismatch {
                what: "feature columns",
                expected: m.classifier.dim(),
                found: cols,
            }
            .into());
        }
        let x = slice_of(features, checked_len(rows, cols)?, "features")?;
        let labels = slice_of_mut(labels, rows, "labels")?;
        let mut scores = if scores.is_null() {
            None
        } else {
            Some(slice_of_mut(scores, rows, "scores")?)
        };
        for (i, row) in x.chunks_exact(cols.max(1)).take(rows).enumerate() {
            let s = m.classifier.score(row)?;
            labels[i] = ebdp::classifier::label_for(s).as_u8();
            if let Some(scores) = scores.as_deref_mut() {
                scores[i] = s;
            }
        }
        Ok(())
    })
}

/// Serializes the model as JSON. Free the string with [`ebdp_string_free`].
///
/// # Safety
/// `model` must be a live model and `out` writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ebdp_model_to_json(
    model: *const EbdpModel,
    out: *mut *mut c_char,
) -> EbdpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = ptr::null_mut();
        let m = non_null(model, "model")?;
        let json = m.file.to_json()?;
        *out = CString::new(json)
            .map_err(|e| Failure::Argument(e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// Parses a model from JSON written by [`ebdp_model_to_json`] or the CLI.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ebdp_model_from_json(
    json: *const c_char,
    out: *mut *mut EbdpModel,
) -> EbdpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = ptr::null_mut();
        if json.is_null() {
            return Err(Failure::Null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Failure::Argument(format!("json is not UTF-8: {e}")))?;
        let model = EbdpModel::new(ModelFile::from_json(text)?)?;
        *out = Box::into_raw(Box::new(model));
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ebdp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn ebdp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn ebdp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
