//! C ABI for lapmap.
//!
//! Images are opaque `LapmapImage` handles owned by the caller and released
//! with `lapmap_image_free`. Every fallible call returns a `LapmapStatus`;
//! on failure `lapmap_last_error_message` describes the error on the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lapmap::apps::{decolorize, daltonize, AppConfig, Application, FamilyChoice};
use lapmap::imageio::{load_image, save_image, CvdKind, Image};
use lapmap::metrics::rwms_auto;
use lapmap::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LapmapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Solver = 4,
    Panic = 5,
}

/// Color-vision deficiency for `lapmap_daltonize`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LapmapCvd {
    Protan = 0,
    Deutan = 1,
    Tritan = 2,
}

/// Solver settings. Start from `lapmap_solve_options_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LapmapSolveOptions {
    pub sigma_r: f64,
    pub sigma_s: f64,
    pub max_side: usize,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
    /// 0 for the default family, 1 for linear, q >= 2 for q soft regions.
    pub family: usize,
}

/// An image of `width * height` pixels with interleaved `f64` channels.
pub struct LapmapImage {
    inner: Image,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> LapmapStatus {
    match e {
        Error::Io { .. } | Error::UnsupportedFormat(..) | Error::Malformed(..) => LapmapStatus::Io,
        Error::NonFinite { .. } | Error::Eigen(_) | Error::Infeasible(_) => LapmapStatus::Solver,
        _ => LapmapStatus::InvalidArgument,
    }
}

/// Runs `f`, recording its error or panic.
fn guard(f: impl FnOnce() -> Result<(), (LapmapStatus, String)>) -> LapmapStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LapmapStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            LapmapStatus::Panic
        }
    }
}

fn lift<T>(r: lapmap::Result<T>) -> Result<T, (LapmapStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (LapmapStatus, String) {
    (LapmapStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn image_ref<'a>(img: *const LapmapImage, what: &str) -> Result<&'a Image, (LapmapStatus, String)> {
    img.as_ref().map(|h| &h.inner).ok_or_else(|| null(what))
}

unsafe fn path_arg(path: *const c_char) -> Result<String, (LapmapStatus, String)> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| (LapmapStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn put_image(out: *mut *mut LapmapImage, img: Image) {
    *out = Box::into_raw(Box::new(LapmapImage { inner: img }));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lapmap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next lapmap call on the same thread.
#[no_mangle]
pub extern "C" fn lapmap_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn lapmap_solve_options_default() -> LapmapSolveOptions {
    let cfg = AppConfig::new(Application::Decolorize);
    LapmapSolveOptions {
        sigma_r: cfg.graph.sigma_r,
        sigma_s: cfg.graph.sigma_s,
        max_side: cfg.max_side,
        max_iters: cfg.solve.max_iters,
        restarts: cfg.solve.restarts,
        seed: cfg.solve.seed,
        family: 0,
    }
}

/// Copies `width * height * channels` samples into a new image.
///
/// # Safety
/// `data` must point to that many readable `f64`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lapmap_image_new(
    width: usize,
    height: usize,
    channels: usize,
    data: *const f64,
    out: *mut *mut LapmapImage,
) -> LapmapStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let n = width
            .checked_mul(height)
            .and_then(|v| v.checked_mul(channels))
            .ok_or((LapmapStatus::InvalidArgument, "image size overflows".to_string()))?;
        let samples = std::slice::from_raw_parts(data, n).to_vec();
        put_image(out, lift(Image::new(width, height, channels, samples))?);
        Ok(())
    })
}

/// Loads PNG, PGM/PPM or LMCH.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lapmap_image_load(path: *const c_char, out: *mut *mut LapmapImage) -> LapmapStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = path_arg(path)?;
        put_image(out, lift(load_image(p))?);
        Ok(())
    })
}

/// Saves in the format implied by the extension.
///
/// # Safety
/// `img` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lapmap_image_save(img: *const LapmapImage, path: *const c_char) -> LapmapStatus {
    guard(|| {
        let img = image_ref(img, "img")?;
        let p = path_arg(path)?;
        lift(save_image(img, p))
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `img` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn lapmap_image_free(img: *mut LapmapImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// Writes the dimensions; any output pointer may be NULL.
///
/// # Safety
/// `img` must be a live handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn lapmap_image_dims(
    img: *const LapmapImage,
    width: *mut usize,
    height: *mut usize,
    channels: *mut usize,
) -> LapmapStatus {
    guard(|| {
        let img = image_ref(img, "img")?;
        for (p, v) in [(width, img.width()), (height, img.height()), (channels, img.channels())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Interleaved samples, valid while the handle lives. NULL for a NULL handle.
///
/// # Safety
/// `img` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lapmap_image_data(img: *const LapmapImage) -> *const f64 {
    img.as_ref().map_or(ptr::null(), |h| h.inner.data().as_ptr())
}

fn app_config(app: Application, opts: Option<&LapmapSolveOptions>) -> Result<AppConfig, (LapmapStatus, String)> {
    let mut cfg = AppConfig::new(app);
    if let Some(o) = opts {
        cfg.graph.sigma_r = o.sigma_r;
        cfg.graph.sigma_s = o.sigma_s;
        cfg.max_side = o.max_side;
        cfg.solve.max_iters = o.max_iters;
        cfg.solve.restarts = o.restarts;
        cfg.solve.seed = o.seed;
        cfg.family = match o.family {
            0 => FamilyChoice::Default,
            1 => FamilyChoice::Linear,
            q => FamilyChoice::Local(q),
        };
    }
    lift(cfg.graph.validate())?;
    lift(cfg.solve.validate())?;
    Ok(cfg)
}

/// Converts an RGB image to gray. `options` may be NULL for defaults;
/// `final_cost` may be NULL.
///
/// # Safety
/// `img` must be a live handle; `out` writable; `options` and `final_cost`
/// NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn lapmap_decolorize(
    img: *const LapmapImage,
    options: *const LapmapSolveOptions,
    out: *mut *mut LapmapImage,
    final_cost: *mut f64,
) -> LapmapStatus {
    guard(|| {
        let src = image_ref(img, "img")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut cfg = app_config(Application::Decolorize, options.as_ref())?;
        cfg.structure_metrics = false;
        let r = lift(decolorize(src, &cfg))?;
        if let Some(c) = final_cost.as_mut() {
            *c = r.trace.final_cost;
        }
        put_image(out, r.output);
        Ok(())
    })
}

/// Recolors an RGB image for the given deficiency.
///
/// # Safety
/// As for `lapmap_decolorize`.
#[no_mangle]
pub unsafe extern "C" fn lapmap_daltonize(
    img: *const LapmapImage,
    cvd: LapmapCvd,
    options: *const LapmapSolveOptions,
    out: *mut *mut LapmapImage,
    final_cost: *mut f64,
) -> LapmapStatus {
    guard(|| {
        let src = image_ref(img, "img")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut cfg = app_config(Application::Daltonize, options.as_ref())?;
        cfg.structure_metrics = false;
        cfg.cvd = match cvd {
            LapmapCvd::Protan => CvdKind::Protanopia,
            LapmapCvd::Deutan => CvdKind::Deuteranopia,
            LapmapCvd::Tritan => CvdKind::Tritanopia,
        };
        let r = lift(daltonize(src, &cfg))?;
        if let Some(c) = final_cost.as_mut() {
            *c = r.trace.final_cost;
        }
        put_image(out, r.output);
        Ok(())
    })
}

/// RWMS between a source and its mapping (scaled by 100). `error_image`
/// may be NULL; otherwise it receives the per-pixel error.
///
/// # Safety
/// `src`, `dst` live handles; `mean` writable; `error_image` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn lapmap_rwms(
    src: *const LapmapImage,
    dst: *const LapmapImage,
    mean: *mut f64,
    error_image: *mut *mut LapmapImage,
) -> LapmapStatus {
    guard(|| {
        let x = image_ref(src, "src")?;
        let y = image_ref(dst, "dst")?;
        let m = mean.as_mut().ok_or_else(|| null("mean"))?;
        let (err, v) = lift(rwms_auto(x, y))?;
        *m = v;
        if !error_image.is_null() {
            put_image(error_image, err);
        }
        Ok(())
    })
}
