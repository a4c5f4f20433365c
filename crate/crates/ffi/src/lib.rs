//! C interface to `ddcn`.
//!
//! Objects are opaque heap handles created by `*_new`/`*_load` functions and
//! released with the matching `*_free`. Every fallible call returns a
//! [`DdcnStatus`]; on failure, [`ddcn_last_error`] describes the most recent
//! error on the calling thread. Panics never cross the boundary: they are
//! caught and reported as `DDCN_STATUS_PANIC`.
//!
//! Tensors cross as flat `float` buffers in row-major order: model inputs are
//! `(B, T, C, H, W)` and predictions `(B, C, H, W)`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ddcn::data::{load_dataset, save_dataset, synth_traffic, SynthSpec, TrafficDataset};
use ddcn::metrics::compute_metrics;
use ddcn::model::{Ddcn, ModelConfig};
use ddcn::{Error, Tensor};

/// Result of an FFI call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DdcnStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Bad configuration, shape or buffer length.
    InvalidArgument = 2,
    /// File could not be read or written.
    Io = 3,
    /// File contents are malformed.
    Format = 4,
    /// A non-finite value was produced.
    Numeric = 5,
    /// Internal panic; the handle involved should be considered unusable.
    Panic = 6,
}

/// Opaque model handle.
pub struct DdcnModel {
    inner: Ddcn<f32>,
}

/// Opaque dataset handle.
pub struct DdcnDataset {
    inner: TrafficDataset,
}

/// Error metrics over all evaluated elements.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DdcnMetrics {
    pub rmse: f64,
    pub mae: f64,
    /// Percent; only meaningful when `mape_defined` is nonzero.
    pub mape: f64,
    pub mape_defined: u8,
    pub n_evaluated: usize,
    pub n_masked: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(DdcnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => DdcnStatus::Io,
            Error::Format(_) | Error::Json(_) => DdcnStatus::Format,
            Error::NonFinite { .. } => DdcnStatus::Numeric,
            _ => DdcnStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(DdcnStatus::NullArgument, format!("{what} is null"))
}

fn invalid(msg: String) -> Fail {
    Fail(DdcnStatus::InvalidArgument, msg)
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DdcnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DdcnStatus::Ok
        }
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
            DdcnStatus::Panic
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn c_path(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    c_str(p, what).map(PathBuf::from)
}

unsafe fn model_config(json: *const c_char) -> Result<ModelConfig, Fail> {
    if json.is_null() {
        return Ok(ModelConfig::default());
    }
    let text = c_str(json, "config_json")?;
    serde_json::from_str(text).map_err(|e| invalid(format!("model config: {e}")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn ddcn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ddcn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a freshly initialized model. `config_json` is a JSON model
/// configuration; null selects the defaults.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ddcn_model_new(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut DdcnModel,
) -> DdcnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let cfg = model_config(config_json)?;
        let inner = Ddcn::new(&cfg, seed)?;
        *out = Box::into_raw(Box::new(DdcnModel { inner }));
        Ok(())
    })
}

/// Builds a model from `config_json` (null for defaults) and loads weights
/// from a checkpoint file.
///
/// # Safety
/// String arguments must be null-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ddcn_model_load(
    config_json: *const c_char,
    checkpoint_path: *const c_char,
    out: *mut *mut DdcnModel,
) -> DdcnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let cfg = model_config(config_json)?;
        let path = c_path(checkpoint_path, "checkpoint_path")?;
        let mut inner = Ddcn::new(&cfg, 0)?;
        inner.load_weights(&path)?;
        *out = Box::into_raw(Box::new(DdcnModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ddcn_model_save(model: *const DdcnModel, path: *const c_char) -> DdcnStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        m.inner.save(&c_path(path, "path")?)?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ddcn_model_free(model: *mut DdcnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ddcn_model_num_params(model: *const DdcnModel, out: *mut usize) -> DdcnStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out_ptr(out, "out")? = m.inner.num_params();
        Ok(())
    })
}

/// Writes the expected input shape `(B, T, C, H, W)` for `batch` into `shape[0..5]`.
///
/// # Safety
/// `model` must be a live handle; `shape` must point to 5 writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn ddcn_model_input_shape(
    model: *const DdcnModel,
    batch: usize,
    shape: *mut usize,
) -> DdcnStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if shape.is_null() {
            return Err(null("shape"));
        }
        let s = m.inner.net.input_shape(batch);
        std::slice::from_raw_parts_mut(shape, 5).copy_from_slice(&s);
        Ok(())
    })
}

/// Runs a forward pass on `batch` normalized windows. `input` holds
/// `batch·T·C·H·W` floats and `output` receives `batch·C·H·W` floats.
///
/// # Safety
/// `model` must be a live handle; the buffers must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ddcn_model_predict(
    model: *const DdcnModel,
    input: *const f32,
    input_len: usize,
    batch: usize,
    output: *mut f32,
    output_len: usize,
) -> DdcnStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if input.is_null() {
            return Err(null("input"));
        }
        if output.is_null() {
            return Err(null("output"));
        }
        if batch == 0 {
            return Err(invalid("batch must be at least 1".into()));
        }
        let shape = m.inner.net.input_shape(batch);
        let need_in: usize = shape.iter().product();
        let need_out = batch * shape[2] * shape[3] * shape[4];
        if input_len != need_in || output_len != need_out {
            return Err(invalid(format!(
                "buffer lengths {input_len}/{output_len} do not match {need_in}/{need_out} for input shape {shape:?}"
            )));
        }
        let data = std::slice::from_raw_parts(input, input_len).to_vec();
        let x = Tensor::new(shape.to_vec(), data)?;
        let y = m.inner.predict(&x)?;
        std::slice::from_raw_parts_mut(output, output_len).copy_from_slice(y.data());
        Ok(())
    })
}

/// Generates a synthetic dataset of `steps` frames on an `height × width` grid.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ddcn_dataset_synth(
    height: usize,
    width: usize,
    steps: usize,
    seed: u64,
    out: *mut *mut DdcnDataset,
) -> DdcnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let spec = SynthSpec {
            height,
            width,
            steps,
            seed,
            ..Default::default()
        };
        let inner = synth_traffic(&spec)?;
        *out = Box::into_raw(Box::new(DdcnDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ddcn_dataset_load(path: *const c_char, out: *mut *mut DdcnDataset) -> DdcnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let inner = load_dataset(&c_path(path, "path")?)?;
        *out = Box::into_raw(Box::new(DdcnDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ddcn_dataset_save(dataset: *const DdcnDataset, path: *const c_char) -> DdcnStatus {
    guard(|| {
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        save_dataset(&d.inner, &c_path(path, "path")?)?;
        Ok(())
    })
}

/// Writes `(steps, channels, height, width)` into `dims[0..4]`.
///
/// # Safety
/// `dataset` must be a live handle; `dims` must point to 4 writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn ddcn_dataset_dims(dataset: *const DdcnDataset, dims: *mut usize) -> DdcnStatus {
    guard(|| {
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        let m = &d.inner.meta;
        std::slice::from_raw_parts_mut(dims, 4).copy_from_slice(&[m.steps, m.channels, m.height, m.width]);
        Ok(())
    })
}

/// Copies the raw frames, `steps·C·H·W` floats in `(T, C, H, W)` order.
///
/// # Safety
/// `dataset` must be a live handle; `out` must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn ddcn_dataset_frames(dataset: *const DdcnDataset, out: *mut f32, len: usize) -> DdcnStatus {
    guard(|| {
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let src = d.inner.frames.data();
        if len != src.len() {
            return Err(invalid(format!("buffer holds {len} floats, dataset has {}", src.len())));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(src);
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ddcn_dataset_free(dataset: *mut DdcnDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// RMSE, MAE and MAPE of `pred` against `actual` (both `len` floats).
/// Targets with `|y| <= mape_threshold` are left out of MAPE.
///
/// # Safety
/// Both buffers must hold `len` floats; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ddcn_metrics(
    pred: *const f32,
    actual: *const f32,
    len: usize,
    mape_threshold: f64,
    out: *mut DdcnMetrics,
) -> DdcnStatus {
    guard(|| {
        if pred.is_null() || actual.is_null() {
            return Err(null("pred/actual"));
        }
        let out = out_ptr(out, "out")?;
        let p = Tensor::new(vec![len], std::slice::from_raw_parts(pred, len).to_vec())?;
        let a = Tensor::new(vec![len], std::slice::from_raw_parts(actual, len).to_vec())?;
        let r = compute_metrics(&p, &a, mape_threshold)?;
        *out = DdcnMetrics {
            rmse: r.rmse,
            mae: r.mae,
            mape: r.mape.unwrap_or(f64::NAN),
            mape_defined: r.mape.is_some() as u8,
            n_evaluated: r.n_evaluated,
            n_masked: r.n_masked,
        };
        Ok(())
    })
}
