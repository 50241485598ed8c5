//! C ABI for loading datasets and checkpoints, reconstructing samples and
//! computing metrics.
//!
//! Every fallible function returns an [`HcStatus`]; on failure a message is
//! available from [`hc_last_error`] on the same thread. Handles are opaque
//! and must be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use hypercoil::coil_sim::DatasetManifest;
use hypercoil::evaluator::{psnr, ssim};
use hypercoil::task_codec::{embed_task, parse_bitstring, EMBED_WIDTH};
use hypercoil::trainer::{prepare_sample, Checkpoint};
use hypercoil::{Error, TaskVector};
use ndarray::Array2;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HcStatus {
    Ok = 0,
    InvalidArgument = 1,
    Io = 2,
    Format = 3,
    Numerical = 4,
    NullPointer = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Trained model loaded from a checkpoint directory.
pub struct HcModel {
    ckpt: Checkpoint,
}

/// Simulated dataset opened from its directory.
pub struct HcDataset {
    manifest: DatasetManifest,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &Error) -> HcStatus {
    match err {
        Error::InvalidArgument(_) => HcStatus::InvalidArgument,
        Error::Io { .. } => HcStatus::Io,
        Error::Format { .. } => HcStatus::Format,
        Error::Numerical(_) => HcStatus::Numerical,
    }
}

enum Fail {
    Lib(Error),
    Status(HcStatus, String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(HcStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HcStatus::Ok,
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            HcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Status(HcStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn hc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads `checkpoint.json` and `weights.bin` from `dir`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hc_model_load(dir: *const c_char, out: *mut *mut HcModel) -> HcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = PathBuf::from(str_arg(dir, "dir")?);
        let ckpt = Checkpoint::load(&path)?;
        *out = Box::into_raw(Box::new(HcModel { ckpt }));
        Ok(())
    })
}

/// Releases a model; NULL is ignored.
///
/// # Safety
/// `model` must come from [`hc_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hc_model_free(model: *mut HcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of learnable scalars in the model.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hc_model_param_count(model: *const HcModel, out: *mut usize) -> HcStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = model.ckpt.model.params.len();
        Ok(())
    })
}

/// Opens a dataset directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hc_dataset_load(dir: *const c_char, out: *mut *mut HcDataset) -> HcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = PathBuf::from(str_arg(dir, "dir")?);
        let manifest = DatasetManifest::load(&path)?;
        *out = Box::into_raw(Box::new(HcDataset { manifest }));
        Ok(())
    })
}

/// Releases a dataset; NULL is ignored.
///
/// # Safety
/// `data` must come from [`hc_dataset_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hc_dataset_free(data: *mut HcDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Sample count, image height and width and coil count. Any output pointer
/// may be NULL.
///
/// # Safety
/// `data` must be a valid handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn hc_dataset_info(
    data: *const HcDataset,
    n_samples: *mut usize,
    height: *mut usize,
    width: *mut usize,
    n_coils: *mut usize,
) -> HcStatus {
    guard(|| {
        let m = &data.as_ref().ok_or_else(|| null("data"))?.manifest;
        for (p, v) in [(n_samples, m.len()), (height, m.shape[0]), (width, m.shape[1]), (n_coils, m.n_coils)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Reconstructs sample `index` with the coils selected by `task_bits`
/// (e.g. `"111001010101"`), writing `height * width` interleaved re/im
/// values into `out` (length `out_len` doubles, at least `2 * height * width`).
/// `psnr_db` and `ssim_out` receive magnitude metrics against the reference
/// image when non-null.
///
/// # Safety
/// Handles must be valid, `task_bits` NUL-terminated and `out` writable for
/// `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hc_reconstruct_sample(
    model: *const HcModel,
    data: *const HcDataset,
    index: usize,
    task_bits: *const c_char,
    out: *mut f64,
    out_len: usize,
    psnr_db: *mut f64,
    ssim_out: *mut f64,
) -> HcStatus {
    guard(|| {
        let ckpt = &model.as_ref().ok_or_else(|| null("model"))?.ckpt;
        let manifest = &data.as_ref().ok_or_else(|| null("data"))?.manifest;
        if out.is_null() {
            return Err(null("out"));
        }
        if index >= manifest.len() {
            return Err(Fail::Status(
                HcStatus::InvalidArgument,
                format!("sample {index} out of range ({} samples)", manifest.len()),
            ));
        }
        let task: TaskVector = parse_bitstring(str_arg(task_bits, "task_bits")?)?;
        let need = 2 * manifest.shape[0] * manifest.shape[1];
        if out_len < need {
            return Err(Fail::Status(
                HcStatus::BufferTooSmall,
                format!("output buffer holds {out_len} values, {need} needed"),
            ));
        }
        let sample = manifest.load_sample(index)?;
        let prep = prepare_sample(&sample, &task)?;
        let e = ckpt.protocol().conditioning(&task)?;
        let (pred, _) = ckpt.model.forward(&prep.kspace, &prep.sens, &task, &e)?;
        let dst = std::slice::from_raw_parts_mut(out, need);
        for (i, v) in pred.data.iter().enumerate() {
            dst[2 * i] = v.re * prep.scale;
            dst[2 * i + 1] = v.im * prep.scale;
        }
        if !psnr_db.is_null() || !ssim_out.is_null() {
            let (p, s) = hypercoil::evaluator::image_metrics(&pred, &prep.target)?;
            if !psnr_db.is_null() {
                *psnr_db = p;
            }
            if !ssim_out.is_null() {
                *ssim_out = s;
            }
        }
        Ok(())
    })
}

/// Parses a `0`/`1` coil string into `out_bits` (one byte per coil) and
/// stores the coil count in `n_coils`.
///
/// # Safety
/// `bits` must be NUL-terminated, `out_bits` writable for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn hc_parse_bitstring(
    bits: *const c_char,
    out_bits: *mut u8,
    capacity: usize,
    n_coils: *mut usize,
) -> HcStatus {
    guard(|| {
        let task = parse_bitstring(str_arg(bits, "bits")?)?;
        if out_bits.is_null() || n_coils.is_null() {
            return Err(null("output"));
        }
        if capacity < task.n_coils() {
            return Err(Fail::Status(HcStatus::BufferTooSmall, format!("{} coils need more room", task.n_coils())));
        }
        let dst = std::slice::from_raw_parts_mut(out_bits, task.n_coils());
        for (d, &b) in dst.iter_mut().zip(task.bits()) {
            *d = u8::from(b);
        }
        *n_coils = task.n_coils();
        Ok(())
    })
}

/// Width of a task embedding.
#[no_mangle]
pub extern "C" fn hc_embed_width() -> usize {
    EMBED_WIDTH
}

/// Fixed-width hypernetwork input for a coil string, padded with 1.0.
///
/// # Safety
/// `bits` must be NUL-terminated and `out` writable for
/// [`hc_embed_width`] doubles.
#[no_mangle]
pub unsafe extern "C" fn hc_embed_task(bits: *const c_char, out: *mut f64) -> HcStatus {
    guard(|| {
        let task = parse_bitstring(str_arg(bits, "bits")?)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let e = embed_task(&task)?;
        std::slice::from_raw_parts_mut(out, EMBED_WIDTH).copy_from_slice(&e.values);
        Ok(())
    })
}

unsafe fn image_pair(pred: *const f64, gt: *const f64, h: usize, w: usize) -> Result<(Array2<f64>, Array2<f64>), Fail> {
    if pred.is_null() || gt.is_null() {
        return Err(null("image"));
    }
    let n = h.checked_mul(w).filter(|&n| n > 0).ok_or_else(|| {
        Fail::Status(HcStatus::InvalidArgument, format!("bad image size {h}x{w}"))
    })?;
    let a = Array2::from_shape_vec((h, w), std::slice::from_raw_parts(pred, n).to_vec()).expect("shape");
    let b = Array2::from_shape_vec((h, w), std::slice::from_raw_parts(gt, n).to_vec()).expect("shape");
    Ok((a, b))
}

/// PSNR in dB of two row-major `h x w` images; +infinity when identical.
///
/// # Safety
/// `pred` and `gt` must hold `h * w` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hc_psnr(pred: *const f64, gt: *const f64, h: usize, w: usize, data_range: f64, out: *mut f64) -> HcStatus {
    guard(|| {
        let (a, b) = image_pair(pred, gt, h, w)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = psnr(&a, &b, data_range)?;
        Ok(())
    })
}

/// Mean SSIM (11x11 Gaussian window) of two row-major images.
///
/// # Safety
/// `pred` and `gt` must hold `h * w` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hc_ssim(pred: *const f64, gt: *const f64, h: usize, w: usize, data_range: f64, out: *mut f64) -> HcStatus {
    guard(|| {
        let (a, b) = image_pair(pred, gt, h, w)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ssim(&a, &b, data_range)?;
        Ok(())
    })
}
