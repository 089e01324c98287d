//! C ABI over `glance_core`: opaque model and regressor handles, pose
//! metrics and the BMI formula. Every fallible call returns a
//! `GlanceStatus`; the message of the most recent failure on the calling
//! thread is available through `glance_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use ndarray::{Array2, Array3};

use glance_core::body_model::{JointPositions, BodyParams, JOINT_COUNT, PARAM_DIM};
use glance_core::metrics;
use glance_core::model::{load_checkpoint, GlanceNet};
use glance_core::svr::{ScaledSvr, SvrConfig};
use glance_core::Error;

/// Status codes; values 1 to 9 mirror the library's error kinds.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GlanceStatus {
    Ok = 0,
    InvalidInput = 1,
    ShapeMismatch = 2,
    Degenerate = 3,
    NonFiniteLoss = 4,
    MissingDataset = 5,
    Config = 6,
    Format = 7,
    Io = 8,
    Json = 9,
    NullPointer = 20,
    InvalidUtf8 = 21,
    Panic = 22,
}

impl From<&Error> for GlanceStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidInput(_) => GlanceStatus::InvalidInput,
            Error::ShapeMismatch(_) => GlanceStatus::ShapeMismatch,
            Error::Degenerate(_) => GlanceStatus::Degenerate,
            Error::NonFiniteLoss { .. } => GlanceStatus::NonFiniteLoss,
            Error::MissingDataset(_) => GlanceStatus::MissingDataset,
            Error::Config(_) => GlanceStatus::Config,
            Error::Format { .. } => GlanceStatus::Format,
            Error::Io { .. } => GlanceStatus::Io,
            Error::Json(_) => GlanceStatus::Json,
        }
    }
}

/// Number of joints in the skeleton.
pub const GLANCE_JOINT_COUNT: usize = 24;
/// Length of one body-parameter vector: shape, pose, camera.
pub const GLANCE_PARAM_DIM: usize = 85;

const _: () = assert!(GLANCE_JOINT_COUNT == JOINT_COUNT && GLANCE_PARAM_DIM == PARAM_DIM);

/// Trained network loaded from a checkpoint.
pub struct GlanceModel {
    net: GlanceNet,
}

/// Standardized epsilon-SVR fitted on one target.
pub struct GlanceRegressor {
    svr: ScaledSvr,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(GlanceStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(GlanceStatus::from(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GlanceStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GlanceStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            GlanceStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(GlanceStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(GlanceStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn joints_arg(p: *const f64, what: &str) -> Result<JointPositions, Failure> {
    let s = slice_arg(p, 3 * JOINT_COUNT, what)?;
    Ok(JointPositions {
        joints: s.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn glance_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// excluding the terminator, or 0 when the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn glance_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Loads a checkpoint archive into a new model handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn glance_model_load(path: *const c_char, out: *mut *mut GlanceModel) -> GlanceStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let net = load_checkpoint(Path::new(path))?;
        *out = Box::into_raw(Box::new(GlanceModel { net }));
        Ok(())
    })
}

/// Creates a randomly initialized model from a JSON model configuration
/// (null for defaults).
///
/// # Safety
/// `config_json` must be null or NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn glance_model_new(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut GlanceModel,
) -> GlanceStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let config = if config_json.is_null() {
            Default::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(Error::from)?
        };
        let net = GlanceNet::new(config, seed)?;
        *out = Box::into_raw(Box::new(GlanceModel { net }));
        Ok(())
    })
}

/// Releases a model handle; null is ignored.
///
/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn glance_model_free(model: *mut GlanceModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Length of the per-frame spatio-temporal feature vector.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn glance_model_feature_dim(model: *const GlanceModel) -> usize {
    model.as_ref().map_or(0, |m| m.net.config.gru.output_dim())
}

/// Expected frame height and width.
///
/// # Safety
/// `model` must be a live handle; `height` and `width` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn glance_model_input_size(
    model: *const GlanceModel,
    height: *mut usize,
    width: *mut usize,
) -> GlanceStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if height.is_null() || width.is_null() {
            return Err(null("height/width"));
        }
        (*height, *width) = m.net.config.encoder.input_size;
        Ok(())
    })
}

unsafe fn frames_arg(frames: *const f32, t: usize, h: usize, w: usize) -> Result<Array3<f32>, Failure> {
    let s = slice_arg(frames, t * h * w, "frames")?;
    Array3::from_shape_vec((t, h, w), s.to_vec())
        .map_err(|e| Failure(GlanceStatus::ShapeMismatch, e.to_string()))
}

/// Predicts body parameters for every frame of a `t x h x w` C-order clip;
/// writes `t * GLANCE_PARAM_DIM` values to `out`.
///
/// # Safety
/// `frames` must hold `t * h * w` floats and `out` room for
/// `t * GLANCE_PARAM_DIM` doubles.
#[no_mangle]
pub unsafe extern "C" fn glance_model_predict(
    model: *const GlanceModel,
    frames: *const f32,
    t: usize,
    h: usize,
    w: usize,
    out: *mut f64,
) -> GlanceStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let clip = frames_arg(frames, t, h, w)?;
        let pred: Vec<BodyParams> = m.net.predict(&clip)?;
        let out = slice_out(out, t * PARAM_DIM, "out")?;
        for (dst, p) in out.chunks_exact_mut(PARAM_DIM).zip(&pred) {
            dst.copy_from_slice(&p.to_vector());
        }
        Ok(())
    })
}

/// Last-frame spatio-temporal feature of a clip; writes
/// `glance_model_feature_dim` values to `out`.
///
/// # Safety
/// As for `glance_model_predict`, with `out_len` doubles at `out`.
#[no_mangle]
pub unsafe extern "C" fn glance_model_sequence_feature(
    model: *const GlanceModel,
    frames: *const f32,
    t: usize,
    h: usize,
    w: usize,
    out: *mut f64,
    out_len: usize,
) -> GlanceStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let dim = m.net.config.gru.output_dim();
        if out_len != dim {
            return Err(Failure(
                GlanceStatus::ShapeMismatch,
                format!("feature length is {dim}, buffer holds {out_len}"),
            ));
        }
        let clip = frames_arg(frames, t, h, w)?;
        let f = m.net.sequence_feature(&clip)?;
        slice_out(out, dim, "out")?.copy_from_slice(f.last.as_slice().expect("contiguous"));
        Ok(())
    })
}

/// Root-aligned mean per-joint position error in millimeters between two
/// `GLANCE_JOINT_COUNT x 3` arrays in meters.
///
/// # Safety
/// `pred` and `gt` must each hold `3 * GLANCE_JOINT_COUNT` doubles.
#[no_mangle]
pub unsafe extern "C" fn glance_mpjpe(pred: *const f64, gt: *const f64, out_mm: *mut f64) -> GlanceStatus {
    guard(|| {
        let v = metrics::mpjpe(&joints_arg(pred, "pred")?, &joints_arg(gt, "gt")?)?;
        *out_mm.as_mut().ok_or_else(|| null("out_mm"))? = v;
        Ok(())
    })
}

/// Procrustes-aligned mean per-joint position error in millimeters.
///
/// # Safety
/// As for `glance_mpjpe`.
#[no_mangle]
pub unsafe extern "C" fn glance_pa_mpjpe(pred: *const f64, gt: *const f64, out_mm: *mut f64) -> GlanceStatus {
    guard(|| {
        let v = metrics::pa_mpjpe(&joints_arg(pred, "pred")?, &joints_arg(gt, "gt")?)?;
        *out_mm.as_mut().ok_or_else(|| null("out_mm"))? = v;
        Ok(())
    })
}

/// Body mass index from kilograms and meters.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn glance_bmi(weight_kg: f64, height_m: f64, out: *mut f64) -> GlanceStatus {
    guard(|| {
        let v = metrics::bmi(weight_kg, height_m)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Fits a regressor on `n` rows of `d` features (C order) and `n` targets.
/// `config_json` is null for defaults.
///
/// # Safety
/// `x` must hold `n * d` doubles, `y` `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn glance_regressor_fit(
    x: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    config_json: *const c_char,
    out: *mut *mut GlanceRegressor,
) -> GlanceStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let config: SvrConfig = if config_json.is_null() {
            SvrConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(Error::from)?
        };
        let xs = Array2::from_shape_vec((n, d), slice_arg(x, n * d, "x")?.to_vec())
            .map_err(|e| Failure(GlanceStatus::ShapeMismatch, e.to_string()))?;
        let ys = slice_arg(y, n, "y")?;
        let svr = ScaledSvr::fit(&xs, ys, &config)?;
        *out = Box::into_raw(Box::new(GlanceRegressor { svr }));
        Ok(())
    })
}

/// Predicts `n` targets from `n x d` features.
///
/// # Safety
/// `reg` must be live; `x` must hold `n * d` doubles and `out` `n`.
#[no_mangle]
pub unsafe extern "C" fn glance_regressor_predict(
    reg: *const GlanceRegressor,
    x: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
) -> GlanceStatus {
    guard(|| {
        let r = reg.as_ref().ok_or_else(|| null("reg"))?;
        let xs = Array2::from_shape_vec((n, d), slice_arg(x, n * d, "x")?.to_vec())
            .map_err(|e| Failure(GlanceStatus::ShapeMismatch, e.to_string()))?;
        let pred = r.svr.predict(&xs)?;
        slice_out(out, n, "out")?.copy_from_slice(&pred);
        Ok(())
    })
}

/// Releases a regressor handle; null is ignored.
///
/// # Safety
/// `reg` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn glance_regressor_free(reg: *mut GlanceRegressor) {
    if !reg.is_null() {
        drop(Box::from_raw(reg));
    }
}
