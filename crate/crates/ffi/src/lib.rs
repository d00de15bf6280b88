//! C ABI over the `safseg` toolkit.
//!
//! Every fallible function returns a [`SafsegStatus`]; on failure the
//! message is kept per thread and read back with
//! [`safseg_last_error_message`]. Models are opaque handles owned by the
//! caller and released with [`safseg_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use safseg::losses::{loss_value, LossTerm, SsimConfig};
use safseg::metrics::{self, ConfusionCounts};
use safseg::{Error, Mode, Model, NetworkConfig, Tensor};

/// Result codes of the C interface.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SafsegStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Config = 4,
    Format = 5,
    Numerical = 6,
    Missing = 7,
    Io = 8,
    Panic = 9,
}

/// Opaque float32 network.
pub struct SafsegModel {
    inner: Model<f32>,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SafsegCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SafsegMetrics {
    pub sp: f64,
    pub pc: f64,
    pub rc: f64,
    pub dc: f64,
    pub js: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> SafsegStatus {
    match e {
        Error::Shape(_) => SafsegStatus::Shape,
        Error::Config(_) => SafsegStatus::Config,
        Error::InvalidArgument(_) => SafsegStatus::InvalidArgument,
        Error::Format(_) | Error::Json(_) | Error::Image(_) => SafsegStatus::Format,
        Error::Numerical(_) => SafsegStatus::Numerical,
        Error::Missing(_) => SafsegStatus::Missing,
        Error::Io(_) => SafsegStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SafsegStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            SafsegStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SafsegStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            SafsegStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Error::InvalidArgument("path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn safseg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn safseg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a freshly initialised U-Net style network with every skip
/// connection and single-scale output.
///
/// # Safety
/// `out` must be valid for writing a pointer.
#[no_mangle]
pub unsafe extern "C" fn safseg_model_new(
    input_size: usize,
    depth: usize,
    width: usize,
    seed: u64,
    out: *mut *mut SafsegModel,
) -> SafsegStatus {
    guard(|| {
        let slot = self::out(out, "out")?;
        let cfg = NetworkConfig::unet(input_size, depth, width);
        let inner = Model::build(&cfg, seed)?;
        *slot = Box::into_raw(Box::new(SafsegModel { inner }));
        Ok(())
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn safseg_model_load(path: *const c_char, out: *mut *mut SafsegModel) -> SafsegStatus {
    guard(|| {
        let slot = self::out(out, "out")?;
        let inner = Model::load_file(self::path(path)?)?;
        *slot = Box::into_raw(Box::new(SafsegModel { inner }));
        Ok(())
    })
}

/// Writes a checkpoint file.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn safseg_model_save(model: *const SafsegModel, path: *const c_char) -> SafsegStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        m.inner.save_file(self::path(path)?)?;
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn safseg_model_free(model: *mut SafsegModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Network input height and width.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn safseg_model_input_size(
    model: *const SafsegModel,
    height: *mut usize,
    width: *mut usize,
) -> SafsegStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        let (h, w) = m.inner.config().input_size;
        *self::out(height, "height")? = h;
        *self::out(width, "width")? = w;
        Ok(())
    })
}

/// Number of trainable scalars.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn safseg_model_param_count(model: *const SafsegModel, count: *mut usize) -> SafsegStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        *self::out(count, "count")? = m.inner.param_count();
        Ok(())
    })
}

/// Tumour probabilities for `batch` images in `[B, 3, H, W]` layout.
/// `probs` receives `batch * H * W` values.
///
/// # Safety
/// `image` must hold `batch * 3 * height * width` floats and `probs`
/// `batch * height * width`.
#[no_mangle]
pub unsafe extern "C" fn safseg_model_predict(
    model: *const SafsegModel,
    image: *const f32,
    batch: usize,
    height: usize,
    width: usize,
    probs: *mut f32,
) -> SafsegStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        if batch == 0 {
            return Err(Error::InvalidArgument("batch must be positive".into()).into());
        }
        let n = batch * height * width;
        let data = slice(image, 3 * n, "image")?.to_vec();
        if probs.is_null() {
            return Err(Fail::Null("probs"));
        }
        let x = Tensor::new(vec![batch, 3, height, width], data)?;
        let y = m.inner.forward(&x, Mode::Eval)?;
        ptr::copy_nonoverlapping(y.data().as_ptr(), probs, n);
        Ok(())
    })
}

/// Pixel confusion counts of two binary masks.
///
/// # Safety
/// `pred` and `truth` must hold `len` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn safseg_confusion(
    pred: *const u8,
    truth: *const u8,
    len: usize,
    out: *mut SafsegCounts,
) -> SafsegStatus {
    guard(|| {
        let c = metrics::confusion(slice(pred, len, "pred")?, slice(truth, len, "truth")?)?;
        *self::out(out, "out")? = SafsegCounts { tp: c.tp, fp: c.fp, tn: c.tn, fn_: c.fn_ };
        Ok(())
    })
}

/// Specificity, precision, recall, Dice and Jaccard of confusion counts.
///
/// # Safety
/// `counts` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn safseg_metrics(counts: *const SafsegCounts, out: *mut SafsegMetrics) -> SafsegStatus {
    guard(|| {
        let c = counts.as_ref().ok_or(Fail::Null("counts"))?;
        let m = metrics::derive_metrics(&ConfusionCounts { tp: c.tp, fp: c.fp, tn: c.tn, fn_: c.fn_ });
        *self::out(out, "out")? = SafsegMetrics { sp: m.sp, pc: m.pc, rc: m.rc, dc: m.dc, js: m.js };
        Ok(())
    })
}

/// Mean clipped Jaccard over `n` slides.
///
/// # Safety
/// `js` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn safseg_s_wsi(js: *const f64, n: usize, threshold: f64, out: *mut f64) -> SafsegStatus {
    guard(|| {
        *self::out(out, "out")? = metrics::s_wsi(slice(js, n, "js")?, threshold)?;
        Ok(())
    })
}

/// Mean SSIM over all 11x11 uniform windows of two `height x width` maps.
///
/// # Safety
/// `x` and `y` must hold `height * width` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn safseg_ssim(
    x: *const f64,
    y: *const f64,
    height: usize,
    width: usize,
    out: *mut f64,
) -> SafsegStatus {
    guard(|| {
        let n = height * width;
        let xt = Tensor::new(vec![height, width], slice(x, n, "x")?.to_vec())?;
        let yt = Tensor::new(vec![height, width], slice(y, n, "y")?.to_vec())?;
        let loss = loss_value(LossTerm::Ssim, &xt, &yt, &SsimConfig::default())?;
        *self::out(out, "out")? = 1.0 - loss;
        Ok(())
    })
}

/// Number of patches covering a `height x width` raster.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn safseg_grid_count(
    height: usize,
    width: usize,
    patch: usize,
    overlap: usize,
    out: *mut usize,
) -> SafsegStatus {
    guard(|| {
        *self::out(out, "out")? = safseg::data::make_grid((height, width), patch, overlap)?.len();
        Ok(())
    })
}
