//! C ABI for the gabor-cine engine.
//!
//! Every entry point returns a [`GcStatus`]. On failure a message is kept per
//! thread and can be read with [`gc_last_error_message`]. Handles are opaque
//! and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gabor_cine::analysis::render_at;
use gabor_cine::forward::KSpaceDataset;
use gabor_cine::io;
use gabor_cine::optim::{fit, FitConfig};
use gabor_cine::primitive::Modulation;
use gabor_cine::temporal::PrimitiveSet;
use gabor_cine::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcStatus {
    Ok = 0,
    InvalidArgument = 1,
    Numerical = 2,
    Io = 3,
    NullPointer = 4,
    Panic = 5,
}

/// Carrier modulation of the fitted primitives.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcMode {
    Gabor = 0,
    Gaussian = 1,
}

/// Fit settings exposed across the boundary; everything else keeps its
/// default.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcFitConfig {
    pub mode: GcMode,
    pub n_init: usize,
    pub n_max: usize,
    pub rank_geom: usize,
    pub rank_contrast: usize,
    pub iters: usize,
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub seed: u64,
}

/// Outcome of a fit. Image metrics are NaN when the dataset has no reference.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcFitSummary {
    pub final_data_loss: f64,
    pub final_count: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub wall_time_s: f64,
}

/// Opaque dataset handle.
pub struct GcDataset {
    inner: KSpaceDataset,
}

/// Opaque model handle.
pub struct GcModel {
    set: PrimitiveSet,
    display_scale: Option<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GcStatus {
    match e {
        Error::NonFiniteLoss { .. } => GcStatus::Numerical,
        Error::Io(_) | Error::Json(_) | Error::Image(_) | Error::Format(_) | Error::UnsupportedVersion { .. } => {
            GcStatus::Io
        }
        _ => GcStatus::InvalidArgument,
    }
}

enum Fault {
    Core(Error),
    Null(&'static str),
    Arg(String),
}

impl From<Error> for Fault {
    fn from(e: Error) -> Self {
        Fault::Core(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Fault>) -> GcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GcStatus::Ok
        }
        Ok(Err(Fault::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fault::Null(name))) => {
            set_error(format!("{name} is null"));
            GcStatus::NullPointer
        }
        Ok(Err(Fault::Arg(m))) => {
            set_error(m);
            GcStatus::InvalidArgument
        }
        Err(_) => {
            set_error("internal panic".into());
            GcStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, name: &'static str) -> Result<PathBuf, Fault> {
    if p.is_null() {
        return Err(Fault::Null(name));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fault::Arg(format!("{name} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Fault> {
    p.as_ref().ok_or(Fault::Null(name))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn gc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn gc_fit_config_default() -> GcFitConfig {
    let d = FitConfig::default();
    GcFitConfig {
        mode: GcMode::Gabor,
        n_init: d.n_init,
        n_max: d.n_max,
        rank_geom: d.rank_geom,
        rank_contrast: d.rank_contrast,
        iters: d.iters,
        lambda_s: d.lambda_s,
        lambda_t: d.lambda_t,
        seed: d.seed,
    }
}

/// Reads a dataset container directory.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gc_dataset_load(path: *const c_char, out: *mut *mut GcDataset) -> GcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fault::Null("out"));
        }
        let inner = io::read_dataset(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(GcDataset { inner }));
        Ok(())
    })
}

/// Grid and acquisition sizes of a dataset. Any output pointer may be null.
///
/// # Safety
/// `dataset` must come from [`gc_dataset_load`].
#[no_mangle]
pub unsafe extern "C" fn gc_dataset_dims(
    dataset: *const GcDataset,
    height: *mut usize,
    width: *mut usize,
    frames: *mut usize,
    coils: *mut usize,
) -> GcStatus {
    guard(|| {
        let ds = &ref_arg(dataset, "dataset")?.inner;
        for (p, v) in [(height, ds.height), (width, ds.width), (frames, ds.frames), (coils, ds.coils.coils)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from [`gc_dataset_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn gc_dataset_free(dataset: *mut GcDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Fits a model. `summary` may be null.
///
/// # Safety
/// Pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gc_fit(
    dataset: *const GcDataset,
    config: *const GcFitConfig,
    out: *mut *mut GcModel,
    summary: *mut GcFitSummary,
) -> GcStatus {
    guard(|| {
        let ds = &ref_arg(dataset, "dataset")?.inner;
        let c = ref_arg(config, "config")?;
        if out.is_null() {
            return Err(Fault::Null("out"));
        }
        let cfg = FitConfig {
            mode: match c.mode {
                GcMode::Gabor => Modulation::Gabor,
                GcMode::Gaussian => Modulation::Gaussian,
            },
            n_init: c.n_init,
            n_max: c.n_max,
            rank_geom: c.rank_geom,
            rank_contrast: c.rank_contrast,
            iters: c.iters,
            lambda_s: c.lambda_s,
            lambda_t: c.lambda_t,
            seed: c.seed,
            ..FitConfig::default()
        };
        let (set, report) = fit(ds, &cfg)?;
        if let Some(s) = summary.as_mut() {
            *s = GcFitSummary {
                final_data_loss: report.final_loss[0],
                final_count: report.final_count,
                psnr_db: report.metrics.as_ref().map_or(f64::NAN, |m| m.psnr_db.mean),
                ssim: report.metrics.as_ref().map_or(f64::NAN, |m| m.ssim.mean),
                wall_time_s: report.wall_time_s,
            };
        }
        let display_scale = ds
            .reference
            .as_ref()
            .map(|r| r.data.iter().map(|z| z.norm()).fold(0.0, f64::max));
        *out = Box::into_raw(Box::new(GcModel { set, display_scale }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gc_model_load(path: *const c_char, out: *mut *mut GcModel) -> GcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fault::Null("out"));
        }
        let file = io::read_model(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(GcModel {
            set: file.set,
            display_scale: file.display_scale,
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gc_model_save(model: *const GcModel, path: *const c_char) -> GcStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        io::write_model(&path_arg(path, "path")?, &m.set, m.display_scale)?;
        Ok(())
    })
}

/// Training grid, frame count and primitive count. Any output pointer may be
/// null.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gc_model_dims(
    model: *const GcModel,
    height: *mut usize,
    width: *mut usize,
    frames: *mut usize,
    primitives: *mut usize,
) -> GcStatus {
    guard(|| {
        let set = &ref_arg(model, "model")?.set;
        for (p, v) in [
            (height, set.grid.height),
            (width, set.grid.width),
            (frames, set.frames()),
            (primitives, set.len()),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Renders frame `frame` on a `height x width` grid into row-major real and
/// imaginary buffers of length `len`, which must equal `height * width`.
///
/// # Safety
/// `model` must be a live handle; both buffers must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gc_model_render(
    model: *const GcModel,
    frame: usize,
    height: usize,
    width: usize,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> GcStatus {
    guard(|| {
        let set = &ref_arg(model, "model")?.set;
        if re.is_null() {
            return Err(Fault::Null("re"));
        }
        if im.is_null() {
            return Err(Fault::Null("im"));
        }
        if len != height * width {
            return Err(Fault::Arg(format!("buffer length {len} does not match {height}x{width}")));
        }
        let grid = render_at(set, frame, height, width)?;
        let re = std::slice::from_raw_parts_mut(re, len);
        let im = std::slice::from_raw_parts_mut(im, len);
        for ((r, i), z) in re.iter_mut().zip(im.iter_mut()).zip(&grid.data) {
            *r = z.re;
            *i = z.im;
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gc_model_free(model: *mut GcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
