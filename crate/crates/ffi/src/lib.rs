//! C ABI over the qpat toolkit.
//!
//! Every entry point returns a [`QpatStatus`]. On failure a message is kept
//! per thread and can be read with [`qpat_last_error_message`] until the next
//! call on that thread. Objects cross the boundary as opaque handles that
//! the caller releases with the matching `_free` function. Panics never
//! unwind into C; they surface as `QPAT_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use qpat::eval;
use qpat::grid::{Field2D, PlaneGrid};
use qpat::phantom::{sample_phantom, PhantomSpec, SamplerRanges};
use qpat::pipeline::{read_field, run_pipeline, write_field, PipelineConfig};
use qpat::quant::{self, ChromophoreBasis, LinearMap};
use qpat::slab::{self, DisMeasurement, InverseConfig, SlabSample};
use qpat::QpatError;

/// Outcome of a call. Values 2 to 4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpatStatus {
    Ok = 0,
    /// Null pointer, bad length or non-UTF-8 string.
    InvalidArgument = 1,
    /// Configuration or input validation failure.
    Config = 2,
    /// Numerical failure: domain, instability, fit, aggregation, convergence.
    Numerical = 3,
    Io = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
}

/// A 2D image on a regular grid, row-major with x fastest.
pub struct QpatImage {
    field: Field2D,
}

/// A phantom description.
pub struct QpatPhantom {
    spec: PhantomSpec,
}

/// A validated pipeline configuration.
pub struct QpatPipelineConfig {
    cfg: PipelineConfig,
}

struct Failure(QpatStatus, String);

impl From<QpatError> for Failure {
    fn from(e: QpatError) -> Self {
        let status = match e.exit_code() {
            2 => QpatStatus::Config,
            4 => QpatStatus::Io,
            _ => QpatStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: &str) -> Failure {
    Failure(QpatStatus::InvalidArgument, msg.to_string())
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QpatStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QpatStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            QpatStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(&format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| invalid(&format!("{what} is null")))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next qpat call on the same thread.
#[no_mangle]
pub extern "C" fn qpat_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Toolkit version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qpat_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- images ----

/// Copies `nx·ny` values into a new image. `origin_*` is the outer corner of
/// pixel (0, 0) in mm.
///
/// # Safety
/// `data` must point to `nx·ny` readable doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qpat_image_new(
    nx: usize,
    ny: usize,
    spacing_mm: f64,
    origin_x_mm: f64,
    origin_y_mm: f64,
    data: *const f64,
    out: *mut *mut QpatImage,
) -> QpatStatus {
    guard(|| {
        if nx == 0 || ny == 0 || !(spacing_mm > 0.0) {
            return Err(invalid("image needs nx, ny >= 1 and a positive spacing"));
        }
        let len = nx.checked_mul(ny).ok_or_else(|| invalid("image too large"))?;
        let values = slice_arg(data, len, "data")?.to_vec();
        let grid = PlaneGrid { nx, ny, spacing: [spacing_mm; 2], origin: [origin_x_mm, origin_y_mm] };
        let field = Field2D::new(grid, values)?;
        put(out, boxed(QpatImage { field }), "out")
    })
}

/// Reads a float32 raster with its JSON sidecar.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qpat_image_read(path: *const c_char, out: *mut *mut QpatImage) -> QpatStatus {
    guard(|| {
        let field = read_field(&PathBuf::from(str_arg(path, "path")?))?;
        put(out, boxed(QpatImage { field }), "out")
    })
}

/// Writes the image as a float32 raster plus sidecar.
///
/// # Safety
/// `image` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qpat_image_write(image: *const QpatImage, path: *const c_char) -> QpatStatus {
    guard(|| {
        let image = ref_arg(image, "image")?;
        write_field(&PathBuf::from(str_arg(path, "path")?), &image.field, "image")?;
        Ok(())
    })
}

/// # Safety
/// `image` must be a live handle; `nx` and `ny` writable.
#[no_mangle]
pub unsafe extern "C" fn qpat_image_dims(image: *const QpatImage, nx: *mut usize, ny: *mut usize) -> QpatStatus {
    guard(|| {
        let g = ref_arg(image, "image")?.field.grid;
        put(nx, g.nx, "nx")?;
        put(ny, g.ny, "ny")
    })
}

/// Copies the pixel values into `buf`, which must hold exactly nx·ny values.
///
/// # Safety
/// `image` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn qpat_image_copy_data(image: *const QpatImage, buf: *mut f64, len: usize) -> QpatStatus {
    guard(|| {
        let data = &ref_arg(image, "image")?.field.data;
        if len != data.len() {
            return Err(invalid(&format!("buffer holds {len} values, image has {}", data.len())));
        }
        if buf.is_null() {
            return Err(invalid("buf is null"));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, len);
        Ok(())
    })
}

/// # Safety
/// `image` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn qpat_image_free(image: *mut QpatImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

// ---- phantoms ----

/// Samples a phantom from the default property ranges; `homogeneous` drops
/// the inclusions.
///
/// # Safety
/// `id` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qpat_phantom_sample(
    id: *const c_char,
    seed: u64,
    homogeneous: bool,
    out: *mut *mut QpatPhantom,
) -> QpatStatus {
    guard(|| {
        let ranges = if homogeneous { SamplerRanges::homogeneous() } else { SamplerRanges::default() };
        let spec = sample_phantom(str_arg(id, "id")?, seed, &ranges)?;
        put(out, boxed(QpatPhantom { spec }), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qpat_phantom_read(path: *const c_char, out: *mut *mut QpatPhantom) -> QpatStatus {
    guard(|| {
        let spec = PhantomSpec::read(&PathBuf::from(str_arg(path, "path")?))?;
        put(out, boxed(QpatPhantom { spec }), "out")
    })
}

/// # Safety
/// `phantom` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qpat_phantom_write(phantom: *const QpatPhantom, path: *const c_char) -> QpatStatus {
    guard(|| {
        ref_arg(phantom, "phantom")?.spec.write(&PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Background absorption at a wavelength, 1/mm.
///
/// # Safety
/// `phantom` must be a live handle and `mu_a` writable.
#[no_mangle]
pub unsafe extern "C" fn qpat_phantom_background_mu_a(
    phantom: *const QpatPhantom,
    wavelength_nm: f64,
    mu_a: *mut f64,
) -> QpatStatus {
    guard(|| {
        let spec = &ref_arg(phantom, "phantom")?.spec;
        let value = spec.resolve(&spec.background_material)?.at(wavelength_nm)?.mu_a;
        put(mu_a, value, "mu_a")
    })
}

/// # Safety
/// `phantom` must be a live handle and `count` writable.
#[no_mangle]
pub unsafe extern "C" fn qpat_phantom_inclusion_count(phantom: *const QpatPhantom, count: *mut usize) -> QpatStatus {
    guard(|| put(count, ref_arg(phantom, "phantom")?.spec.inclusions.len(), "count"))
}

/// # Safety
/// `phantom` must come from this library and not be used afterwards. Null
/// is ignored.
#[no_mangle]
pub unsafe extern "C" fn qpat_phantom_free(phantom: *mut QpatPhantom) {
    if !phantom.is_null() {
        drop(Box::from_raw(phantom));
    }
}

// ---- pipeline ----

/// Reads and validates a pipeline configuration file. Relative phantom
/// paths resolve against the file's directory.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qpat_pipeline_config_read(path: *const c_char, out: *mut *mut QpatPipelineConfig) -> QpatStatus {
    guard(|| {
        let cfg = PipelineConfig::read(&PathBuf::from(str_arg(path, "path")?))?;
        cfg.validate()?;
        put(out, boxed(QpatPipelineConfig { cfg }), "out")
    })
}

/// Parses and validates a configuration given as JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qpat_pipeline_config_from_json(
    json: *const c_char,
    out: *mut *mut QpatPipelineConfig,
) -> QpatStatus {
    guard(|| {
        let cfg = PipelineConfig::from_json(str_arg(json, "json")?)?;
        cfg.validate()?;
        put(out, boxed(QpatPipelineConfig { cfg }), "out")
    })
}

/// Runs the pipeline and writes the manifest content hash (64 hex digits
/// plus NUL) into `hash_buf` when it is not null.
///
/// # Safety
/// `config` must be a live handle; `hash_buf`, when given, writable for
/// `hash_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn qpat_pipeline_run(
    config: *const QpatPipelineConfig,
    hash_buf: *mut c_char,
    hash_len: usize,
) -> QpatStatus {
    guard(|| {
        let cfg = &ref_arg(config, "config")?.cfg;
        if !hash_buf.is_null() && hash_len < 65 {
            return Err(invalid("hash buffer needs 65 bytes"));
        }
        let outcome = run_pipeline(cfg)?;
        if !hash_buf.is_null() {
            let hash = outcome.manifest.content_hash()?;
            ptr::copy_nonoverlapping(hash.as_ptr().cast::<c_char>(), hash_buf, hash.len());
            *hash_buf.add(hash.len()) = 0;
        }
        Ok(())
    })
}

/// # Safety
/// `config` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn qpat_pipeline_config_free(config: *mut QpatPipelineConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

// ---- quantification ----

fn linear_map(slope: f64, intercept: f64) -> Result<LinearMap, Failure> {
    Ok(LinearMap::new(slope, intercept)?)
}

/// μ̂a = (signal − intercept)/slope, clamped at zero.
///
/// # Safety
/// `image` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qpat_apply_calibration(
    image: *const QpatImage,
    slope: f64,
    intercept: f64,
    out: *mut *mut QpatImage,
) -> QpatStatus {
    guard(|| {
        let map = linear_map(slope, intercept)?;
        let field = quant::apply_calibration(&ref_arg(image, "image")?.field, &map);
        put(out, boxed(QpatImage { field }), "out")
    })
}

/// μ̂a = (signal/φ − intercept)/slope; NaN where φ is below the floor.
///
/// # Safety
/// `image` and `phi` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qpat_fluence_correct(
    image: *const QpatImage,
    phi: *const QpatImage,
    slope: f64,
    intercept: f64,
    out: *mut *mut QpatImage,
) -> QpatStatus {
    guard(|| {
        let map = linear_map(slope, intercept)?;
        let field = quant::fluence_correct(&ref_arg(image, "image")?.field, &ref_arg(phi, "phi")?.field, &map)?;
        put(out, boxed(QpatImage { field }), "out")
    })
}

/// sO2 from `n` absorption images, one per wavelength, using the shipped
/// hemoglobin spectra.
///
/// # Safety
/// `images` and `wavelengths_nm` must each hold `n` entries and `out` be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn qpat_linear_unmix_so2(
    images: *const *const QpatImage,
    wavelengths_nm: *const f64,
    n: usize,
    out: *mut *mut QpatImage,
) -> QpatStatus {
    guard(|| {
        let handles = slice_arg(images, n, "images")?;
        let fields = handles
            .iter()
            .map(|&h| ref_arg(h, "image").map(|i| i.field.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let basis = ChromophoreBasis::hemoglobin(slice_arg(wavelengths_nm, n, "wavelengths_nm")?)?;
        let field = quant::linear_unmix_so2(&fields, &basis)?;
        put(out, boxed(QpatImage { field }), "out")
    })
}

// ---- metrics ----

/// Generalised contrast-to-noise ratio over `n_bins` shared bins.
///
/// # Safety
/// `a` and `b` must hold `na` and `nb` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qpat_gcnr(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    n_bins: usize,
    out: *mut f64,
) -> QpatStatus {
    guard(|| put(out, eval::gcnr(slice_arg(a, na, "a")?, slice_arg(b, nb, "b")?, n_bins)?, "out"))
}

/// # Safety
/// `x` and `y` must hold `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qpat_pearson_r(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> QpatStatus {
    guard(|| put(out, eval::pearson_r(slice_arg(x, n, "x")?, slice_arg(y, n, "y")?)?, "out"))
}

/// Mann–Whitney U of `a` against `b` with a two-sided p-value (exact for
/// groups of up to 8, normal approximation otherwise).
///
/// # Safety
/// `a` and `b` must hold `na` and `nb` doubles; `u` and `p` writable.
#[no_mangle]
pub unsafe extern "C" fn qpat_mann_whitney(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    u: *mut f64,
    p: *mut f64,
) -> QpatStatus {
    guard(|| {
        let r = eval::mann_whitney_u(slice_arg(a, na, "a")?, slice_arg(b, nb, "b")?)?;
        put(u, r.u, "u")?;
        put(p, r.p, "p")
    })
}

// ---- slab characterisation ----

/// Total reflectance and transmittance of a slab under collimated normal
/// incidence. Coefficients in 1/mm, thickness in mm.
///
/// # Safety
/// `r` and `t` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qpat_ad_forward(
    mu_a: f64,
    mu_s_prime: f64,
    g: f64,
    n: f64,
    thickness: f64,
    r: *mut f64,
    t: *mut f64,
) -> QpatStatus {
    guard(|| {
        let sample = SlabSample { mu_a, mu_s_prime, g, n, thickness };
        let m = slab::ad_forward(&sample, InverseConfig::default().quadrature_order)?;
        put(r, m.total_reflectance, "r")?;
        put(t, m.diffuse_transmittance, "t")
    })
}

/// Inverts measured (R, T) to (μa, μs′) in 1/mm. On non-convergence the
/// best candidate is still written and the status is numerical.
///
/// # Safety
/// `mu_a`, `mu_s_prime` and `residual` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qpat_ad_inverse(
    r: f64,
    t: f64,
    thickness: f64,
    g: f64,
    n: f64,
    mu_a: *mut f64,
    mu_s_prime: *mut f64,
    residual: *mut f64,
) -> QpatStatus {
    guard(|| {
        if mu_a.is_null() || mu_s_prime.is_null() || residual.is_null() {
            return Err(invalid("output pointer is null"));
        }
        match slab::ad_inverse(&DisMeasurement::new(r, t), thickness, g, n, &InverseConfig::default()) {
            Ok(res) => {
                *mu_a = res.mu_a;
                *mu_s_prime = res.mu_s_prime;
                *residual = res.residual;
                Ok(())
            }
            Err(e) => {
                if let QpatError::NoConvergence { mu_a: a, mu_s_prime: s, residual: res } = e {
                    *mu_a = a;
                    *mu_s_prime = s;
                    *residual = res;
                }
                Err(e.into())
            }
        }
    })
}
