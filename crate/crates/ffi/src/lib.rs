//! C ABI over the translation engine.
//!
//! Every function returns an [`HgStatus`]; on failure a description is kept
//! per thread and read with [`hg_last_error`]. Models are opaque handles
//! released with [`hg_model_free`]. Images are planar 8-bit buffers of
//! `channels * height * width` bytes.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use harmonic_gan::data::{gen_synthetic_dataset, load_dataset, pair_scores, write_dataset, Image8, SynthConfig};
use harmonic_gan::error::Error;
use harmonic_gan::tensor::Real;
use harmonic_gan::train::{self, checkpoint, ModelState, Precision, TrainingConfig};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HgStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Config = 5,
    Shape = 6,
    NonFinite = 7,
    Diverged = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HgDirection {
    /// A -> B.
    Ab = 0,
    /// B -> A.
    Ba = 1,
}

/// Pixel metrics of one image against its ground truth.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HgMetrics {
    pub mae: f64,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

enum Model {
    F32(ModelState<f32>),
    F64(ModelState<f64>),
}

/// Trained generators loaded from a checkpoint.
pub struct HgModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HgStatus {
    match e {
        Error::ShapeMismatch { .. } | Error::InvalidShape { .. } | Error::NonScalarLoss(_) => HgStatus::Shape,
        Error::NonFinite { .. } => HgStatus::NonFinite,
        Error::Config(_) | Error::UnknownConfigKeys(_) => HgStatus::Config,
        Error::Format { .. } => HgStatus::Format,
        Error::Diverged { .. } => HgStatus::Diverged,
        Error::Io(_) => HgStatus::Io,
        _ => HgStatus::InvalidArgument,
    }
}

struct Fail(HgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(HgStatus::NullArgument, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HgStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            HgStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail(HgStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn image_arg(data: *const u8, channels: usize, height: usize, width: usize, what: &str) -> Result<Image8, Fail> {
    if data.is_null() {
        return Err(null(what));
    }
    let n = channels
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| Fail(HgStatus::InvalidArgument, "image dims overflow".into()))?;
    let bytes = unsafe { std::slice::from_raw_parts(data, n) }.to_vec();
    Ok(Image8::new(channels, height, width, bytes)?)
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn hg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hg_model_load(path: *const c_char, out: *mut *mut HgModel) -> HgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = unsafe { path_arg(path, "path") }?;
        let model = match checkpoint::read_config(&path)?.precision {
            Precision::F32 => Model::F32(checkpoint::load(&path)?),
            Precision::F64 => Model::F64(checkpoint::load(&path)?),
        };
        unsafe { *out = Box::into_raw(Box::new(HgModel(model))) };
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`hg_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hg_model_free(model: *mut HgModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Completed training steps of a model, 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hg_model_step(model: *const HgModel) -> u64 {
    match unsafe { model.as_ref() } {
        Some(HgModel(Model::F32(s))) => s.step,
        Some(HgModel(Model::F64(s))) => s.step,
        None => 0,
    }
}

fn translate_with<T: Real>(s: &ModelState<T>, dir: HgDirection, img: &Image8) -> harmonic_gan::error::Result<Image8> {
    let net = match dir {
        HgDirection::Ab => &s.g,
        HgDirection::Ba => &s.f,
    };
    Image8::from_tensor(&net.translate(&img.to_tensor::<T>())?)
}

/// Translates one image; `output` receives the same number of bytes.
/// `direction` is an [`HgDirection`] value.
///
/// # Safety
/// `input` and `output` must each hold `channels * height * width` bytes.
#[no_mangle]
pub unsafe extern "C" fn hg_translate(
    model: *const HgModel,
    direction: i32,
    channels: usize,
    height: usize,
    width: usize,
    input: *const u8,
    output: *mut u8,
) -> HgStatus {
    guard(|| {
        let model = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        let direction = match direction {
            0 => HgDirection::Ab,
            1 => HgDirection::Ba,
            d => return Err(Fail(HgStatus::InvalidArgument, format!("unknown direction {d}"))),
        };
        if output.is_null() {
            return Err(null("output"));
        }
        let img = unsafe { image_arg(input, channels, height, width, "input") }?;
        let out = match &model.0 {
            Model::F32(s) => translate_with(s, direction, &img)?,
            Model::F64(s) => translate_with(s, direction, &img)?,
        };
        unsafe { ptr::copy_nonoverlapping(out.data.as_ptr(), output, out.data.len()) };
        Ok(())
    })
}

/// MAE, MSE, PSNR and SSIM of `image` against `truth`.
///
/// # Safety
/// Both buffers must hold `channels * height * width` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hg_pair_metrics(
    image: *const u8,
    truth: *const u8,
    channels: usize,
    height: usize,
    width: usize,
    out: *mut HgMetrics,
) -> HgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let a = unsafe { image_arg(image, channels, height, width, "image") }?;
        let b = unsafe { image_arg(truth, channels, height, width, "truth") }?;
        let s = pair_scores(&a, &b)?;
        unsafe { *out = HgMetrics { mae: s.mae, mse: s.mse, psnr: s.psnr, ssim: s.ssim } };
        Ok(())
    })
}

/// Writes the synthetic grayscale dataset to `out_dir`.
///
/// # Safety
/// `out_dir` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hg_gen_data(
    out_dir: *const c_char,
    n_train: usize,
    n_test: usize,
    size: usize,
    lesion_prob: f64,
    seed: u64,
    force: bool,
) -> HgStatus {
    guard(|| {
        let dir = unsafe { path_arg(out_dir, "out_dir") }?;
        let cfg = SynthConfig { n_train, n_test, size, lesion_prob, seed, ..SynthConfig::default() };
        write_dataset(&dir, &gen_synthetic_dataset(&cfg)?, force)?;
        Ok(())
    })
}

/// Trains on `data_dir` into `out_dir`; `config_path` may be null for defaults.
///
/// # Safety
/// Non-null string arguments must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hg_train(
    data_dir: *const c_char,
    config_path: *const c_char,
    out_dir: *const c_char,
) -> HgStatus {
    guard(|| {
        let data = load_dataset(&unsafe { path_arg(data_dir, "data_dir") }?)?;
        let out = unsafe { path_arg(out_dir, "out_dir") }?;
        let cfg = if config_path.is_null() {
            TrainingConfig::default()
        } else {
            TrainingConfig::load(&unsafe { path_arg(config_path, "config_path") }?)?
        };
        match cfg.precision {
            Precision::F32 => drop(train::run(ModelState::<f32>::new(cfg)?, &data, &out, |_| {})?),
            Precision::F64 => drop(train::run(ModelState::<f64>::new(cfg)?, &data, &out, |_| {})?),
        }
        Ok(())
    })
}
