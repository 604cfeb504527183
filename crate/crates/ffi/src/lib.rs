//! C ABI for the cvs codec.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free` function. Every fallible call returns a
//! [`CvsStatus`]; on failure a description is available from
//! [`cvs_last_error_message`] on the same thread. Pixel buffers are
//! row-major `double` arrays of `rows * cols` samples.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};

use cvs_core::container::MeasurementSet;
use cvs_core::learn::DictMethod;
use cvs_core::metrics;
use cvs_core::pipeline::{self, DecodeMode, DecodeOutput, DecodeParams, EncodeParams};
use cvs_core::sensing::SensingMatrix;
use cvs_core::video::{self, Frame, VideoFormat, VideoSequence};
use cvs_core::CvsError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was out of range or inconsistent with another.
    InvalidArgument = 2,
    Io = 3,
    /// Malformed file content.
    Format = 4,
    /// Frame, block or patch geometry does not fit.
    Geometry = 5,
    /// A solver diverged or produced non-finite values.
    Divergence = 6,
    /// A Rust panic was caught at the boundary.
    Internal = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvsDecodeMode {
    Full = 0,
    InitializerOnly = 1,
    Intra = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvsDictMethod {
    Ksvd = 0,
    Mod = 1,
    Mdu = 2,
}

/// Encoder settings. Fill with [`cvs_encode_params_default`] first.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CvsEncodeParams {
    pub block_side: usize,
    pub mr_key: f64,
    pub mr_nonkey: f64,
    pub gop_size: usize,
    pub seed: u64,
    pub noise_sigma: f64,
}

/// Decoder settings. `mode` holds a [`CvsDecodeMode`] and `method` a
/// [`CvsDictMethod`] value (plain integers so that out-of-range input is an
/// error rather than undefined behaviour). `config_json`, when not null, is
/// a complete decoder configuration in the JSON layout written by
/// `cvs bench`; `mode` and `method` are applied on top of it.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CvsDecodeOptions {
    pub mode: u32,
    pub method: u32,
    pub config_json: *const c_char,
}

/// A luma video sequence.
pub struct CvsSequence(VideoSequence);

/// Encoded measurements of a sequence.
pub struct CvsMeasurements(MeasurementSet);

/// Decoder output: reconstruction plus per-frame reports.
pub struct CvsDecoded(DecodeOutput);

/// Block sensing matrix.
pub struct CvsSensing(SensingMatrix);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(CvsStatus, String);

impl From<CvsError> for Failure {
    fn from(e: CvsError) -> Self {
        let status = match &e {
            CvsError::Io(_) => CvsStatus::Io,
            CvsError::Format { .. } | CvsError::Json(_) => CvsStatus::Format,
            CvsError::Geometry(_) | CvsError::Dimension(_) => CvsStatus::Geometry,
            CvsError::Config(_) => CvsStatus::InvalidArgument,
            CvsError::NonFinite(_) | CvsError::Divergence(_) => CvsStatus::Divergence,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(CvsStatus::NullPointer, format!("{name} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(CvsStatus::InvalidArgument, msg.into())
}

/// Runs `body`, converting errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> CvsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => CvsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal error: {msg}"));
            CvsStatus::Internal
        }
    }
}

unsafe fn as_ref<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| null(name))
}

unsafe fn out_ptr<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or_else(|| null(name))
}

unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, Failure> {
    if ptr.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if ptr.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

fn image_from_row_major(data: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

fn checked_area(rows: usize, cols: usize) -> Result<usize, Failure> {
    if rows == 0 || cols == 0 {
        return Err(invalid("rows and cols must be positive"));
    }
    rows.checked_mul(cols)
        .ok_or_else(|| invalid("rows * cols overflows"))
}

/// Message for the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cvs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cvs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// PSNR in dB of two `rows x cols` images. Identical images give +infinity.
///
/// # Safety
/// `a` and `b` must point to `rows * cols` readable doubles and `out` to a
/// writable double.
#[no_mangle]
pub unsafe extern "C" fn cvs_psnr(
    a: *const f64,
    b: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> CvsStatus {
    guard(|| {
        let n = checked_area(rows, cols)?;
        let (a, b) = (slice_arg(a, n, "a")?, slice_arg(b, n, "b")?);
        let out = out_ptr(out, "out")?;
        *out = metrics::psnr(
            &image_from_row_major(a, rows, cols),
            &image_from_row_major(b, rows, cols),
        )?;
        Ok(())
    })
}

/// Global single-window SSIM of two `rows x cols` images.
///
/// # Safety
/// Same contract as [`cvs_psnr`].
#[no_mangle]
pub unsafe extern "C" fn cvs_ssim(
    a: *const f64,
    b: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> CvsStatus {
    guard(|| {
        let n = checked_area(rows, cols)?;
        let (a, b) = (slice_arg(a, n, "a")?, slice_arg(b, n, "b")?);
        let out = out_ptr(out, "out")?;
        *out = metrics::ssim(
            &image_from_row_major(a, rows, cols),
            &image_from_row_major(b, rows, cols),
        )?;
        Ok(())
    })
}

/// Generates the row-orthonormal sensing matrix for one block size.
///
/// # Safety
/// `out` must be a writable pointer; on success it receives a handle to be
/// released with [`cvs_sensing_free`].
#[no_mangle]
pub unsafe extern "C" fn cvs_sensing_new(
    seed: u64,
    mr: f64,
    block_side: usize,
    out: *mut *mut CvsSensing,
) -> CvsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let phi = SensingMatrix::generate(seed, mr, block_side)?;
        *out = Box::into_raw(Box::new(CvsSensing(phi)));
        Ok(())
    })
}

/// Measurements per block (`m_b`) and block length (`B * B`).
///
/// # Safety
/// `phi` must be a live handle; `rows` and `cols` writable or null.
#[no_mangle]
pub unsafe extern "C" fn cvs_sensing_shape(
    phi: *const CvsSensing,
    rows: *mut usize,
    cols: *mut usize,
) -> CvsStatus {
    guard(|| {
        let phi = &as_ref(phi, "phi")?.0;
        if let Some(r) = rows.as_mut() {
            *r = phi.rows();
        }
        if let Some(c) = cols.as_mut() {
            *c = phi.cols();
        }
        Ok(())
    })
}

/// `y = Φx` for one block vector (column-major within the block).
///
/// # Safety
/// `x` must hold `x_len` doubles and `y` room for `y_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cvs_sensing_forward(
    phi: *const CvsSensing,
    x: *const f64,
    x_len: usize,
    y: *mut f64,
    y_len: usize,
) -> CvsStatus {
    guard(|| {
        let phi = &as_ref(phi, "phi")?.0;
        if x_len != phi.cols() || y_len != phi.rows() {
            return Err(invalid(format!(
                "expected lengths {} and {}",
                phi.cols(),
                phi.rows()
            )));
        }
        let x = DVector::from_column_slice(slice_arg(x, x_len, "x")?);
        if y.is_null() {
            return Err(null("y"));
        }
        let out = std::slice::from_raw_parts_mut(y, y_len);
        out.copy_from_slice((phi.matrix() * x).as_slice());
        Ok(())
    })
}

/// `x = Φᵀy` for one block.
///
/// # Safety
/// `y` must hold `y_len` doubles and `x` room for `x_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cvs_sensing_adjoint(
    phi: *const CvsSensing,
    y: *const f64,
    y_len: usize,
    x: *mut f64,
    x_len: usize,
) -> CvsStatus {
    guard(|| {
        let phi = &as_ref(phi, "phi")?.0;
        if x_len != phi.cols() || y_len != phi.rows() {
            return Err(invalid(format!(
                "expected lengths {} and {}",
                phi.rows(),
                phi.cols()
            )));
        }
        let y = DVector::from_column_slice(slice_arg(y, y_len, "y")?);
        if x.is_null() {
            return Err(null("x"));
        }
        let out = std::slice::from_raw_parts_mut(x, x_len);
        out.copy_from_slice(phi.matrix().tr_mul(&y).as_slice());
        Ok(())
    })
}

/// # Safety
/// `phi` must come from [`cvs_sensing_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cvs_sensing_free(phi: *mut CvsSensing) {
    if !phi.is_null() {
        drop(Box::from_raw(phi));
    }
}

/// Builds a sequence from frame-major, row-major 8-bit luma samples.
///
/// # Safety
/// `data` must hold `rows * cols * frames` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cvs_sequence_from_luma(
    data: *const u8,
    rows: usize,
    cols: usize,
    frames: usize,
    out: *mut *mut CvsSequence,
) -> CvsStatus {
    guard(|| {
        let area = checked_area(rows, cols)?;
        let total = area
            .checked_mul(frames)
            .ok_or_else(|| invalid("sequence size overflows"))?;
        let out = out_ptr(out, "out")?;
        let bytes = slice_arg(data, total, "data")?;
        let frames = bytes
            .chunks_exact(area)
            .map(|chunk| Frame::from_luma_bytes(rows, cols, chunk))
            .collect::<Result<Vec<_>, _>>()?;
        *out = Box::into_raw(Box::new(CvsSequence(VideoSequence::new(frames)?)));
        Ok(())
    })
}

/// Loads a `.y4m` file, or raw 8-bit luma with a `.json` sidecar.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cvs_sequence_load(
    path: *const c_char,
    out: *mut *mut CvsSequence,
) -> CvsStatus {
    guard(|| {
        let path = path_arg(path)?;
        let out = out_ptr(out, "out")?;
        let seq = video::load_sequence(&path, VideoFormat::from_path(&path), None, None, None)?;
        *out = Box::into_raw(Box::new(CvsSequence(seq)));
        Ok(())
    })
}

/// Writes a sequence; `.y4m` paths get a YUV4MPEG2 stream, anything else raw
/// luma plus a JSON sidecar.
///
/// # Safety
/// `seq` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cvs_sequence_save(
    seq: *const CvsSequence,
    path: *const c_char,
    fps: f64,
) -> CvsStatus {
    guard(|| {
        let seq = &as_ref(seq, "seq")?.0;
        let path = path_arg(path)?;
        video::save_sequence(seq, &path, VideoFormat::from_path(&path), fps)?;
        Ok(())
    })
}

/// # Safety
/// `seq` must be a live handle; the output pointers writable or null.
#[no_mangle]
pub unsafe extern "C" fn cvs_sequence_dims(
    seq: *const CvsSequence,
    rows: *mut usize,
    cols: *mut usize,
    frames: *mut usize,
) -> CvsStatus {
    guard(|| {
        let seq = &as_ref(seq, "seq")?.0;
        for (ptr, v) in [
            (rows, seq.rows()),
            (cols, seq.cols()),
            (frames, seq.frame_count()),
        ] {
            if let Some(p) = ptr.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies frame `index` into a row-major buffer of `len == rows * cols`.
///
/// # Safety
/// `seq` must be a live handle and `out` hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cvs_sequence_frame(
    seq: *const CvsSequence,
    index: usize,
    out: *mut f64,
    len: usize,
) -> CvsStatus {
    guard(|| {
        let seq = &as_ref(seq, "seq")?.0;
        let frame = seq
            .frames()
            .get(index)
            .ok_or_else(|| invalid(format!("frame {index} out of range")))?;
        if len != frame.rows() * frame.cols() {
            return Err(invalid(format!(
                "buffer holds {len} samples, frame has {}",
                frame.rows() * frame.cols()
            )));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let out = std::slice::from_raw_parts_mut(out, len);
        let px = frame.pixels();
        for (i, v) in out.iter_mut().enumerate() {
            *v = px[(i / frame.cols(), i % frame.cols())];
        }
        Ok(())
    })
}

/// # Safety
/// `seq` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cvs_sequence_free(seq: *mut CvsSequence) {
    if !seq.is_null() {
        drop(Box::from_raw(seq));
    }
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cvs_encode_params_default(out: *mut CvsEncodeParams) -> CvsStatus {
    guard(|| {
        let d = EncodeParams::default();
        *out_ptr(out, "out")? = CvsEncodeParams {
            block_side: d.block_side,
            mr_key: d.mr_key,
            mr_nonkey: d.mr_nonkey,
            gop_size: d.gop_size,
            seed: d.seed,
            noise_sigma: d.noise_sigma,
        };
        Ok(())
    })
}

/// Measures every frame of `seq`.
///
/// # Safety
/// `seq` and `params` must be valid pointers; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cvs_encode(
    seq: *const CvsSequence,
    params: *const CvsEncodeParams,
    out: *mut *mut CvsMeasurements,
) -> CvsStatus {
    guard(|| {
        let seq = &as_ref(seq, "seq")?.0;
        let p = as_ref(params, "params")?;
        let out = out_ptr(out, "out")?;
        let params = EncodeParams {
            block_side: p.block_side,
            mr_key: p.mr_key,
            mr_nonkey: p.mr_nonkey,
            gop_size: p.gop_size,
            seed: p.seed,
            noise_sigma: p.noise_sigma,
        };
        *out = Box::into_raw(Box::new(CvsMeasurements(pipeline::encode_sequence(
            seq, &params,
        )?)));
        Ok(())
    })
}

/// Reads a `.cvsm` container.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cvs_measurements_load(
    path: *const c_char,
    out: *mut *mut CvsMeasurements,
) -> CvsStatus {
    guard(|| {
        let path = path_arg(path)?;
        let out = out_ptr(out, "out")?;
        *out = Box::into_raw(Box::new(CvsMeasurements(MeasurementSet::load(&path)?)));
        Ok(())
    })
}

/// Writes a `.cvsm` container.
///
/// # Safety
/// `set` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cvs_measurements_save(
    set: *const CvsMeasurements,
    path: *const c_char,
) -> CvsStatus {
    guard(|| {
        let set = &as_ref(set, "set")?.0;
        set.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `set` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cvs_measurements_free(set: *mut CvsMeasurements) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cvs_decode_options_default(out: *mut CvsDecodeOptions) -> CvsStatus {
    guard(|| {
        *out_ptr(out, "out")? = CvsDecodeOptions {
            mode: CvsDecodeMode::Full as u32,
            method: CvsDictMethod::Ksvd as u32,
            config_json: std::ptr::null(),
        };
        Ok(())
    })
}

/// Decodes a container. `reference` may be null; when given, per-frame PSNR
/// and SSIM are computed against it.
///
/// # Safety
/// `set` must be a live handle, `options` valid (or null for defaults),
/// `reference` null or a live handle, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cvs_decode(
    set: *const CvsMeasurements,
    options: *const CvsDecodeOptions,
    reference: *const CvsSequence,
    out: *mut *mut CvsDecoded,
) -> CvsStatus {
    guard(|| {
        let set = &as_ref(set, "set")?.0;
        let out = out_ptr(out, "out")?;
        let mut params = DecodeParams::default();
        if let Some(opts) = options.as_ref() {
            if !opts.config_json.is_null() {
                let json = CStr::from_ptr(opts.config_json)
                    .to_str()
                    .map_err(|_| invalid("config_json is not valid UTF-8"))?;
                params = serde_json::from_str(json)
                    .map_err(|e| Failure(CvsStatus::Format, e.to_string()))?;
            }
            params = params.with_method(match opts.method {
                m if m == CvsDictMethod::Ksvd as u32 => DictMethod::Ksvd,
                m if m == CvsDictMethod::Mod as u32 => DictMethod::Mod,
                m if m == CvsDictMethod::Mdu as u32 => DictMethod::Mdu,
                m => return Err(invalid(format!("unknown dictionary method {m}"))),
            });
            params.mode = match opts.mode {
                m if m == CvsDecodeMode::Full as u32 => DecodeMode::Full,
                m if m == CvsDecodeMode::InitializerOnly as u32 => DecodeMode::InitializerOnly,
                m if m == CvsDecodeMode::Intra as u32 => DecodeMode::Intra,
                m => return Err(invalid(format!("unknown decode mode {m}"))),
            };
        }
        params.validate()?;
        let reference = reference.as_ref().map(|r| &r.0);
        *out = Box::into_raw(Box::new(CvsDecoded(pipeline::decode_measurements(
            set, &params, reference,
        )?)));
        Ok(())
    })
}

/// New sequence handle holding a copy of the reconstruction.
///
/// # Safety
/// `decoded` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cvs_decoded_sequence(
    decoded: *const CvsDecoded,
    out: *mut *mut CvsSequence,
) -> CvsStatus {
    guard(|| {
        let decoded = &as_ref(decoded, "decoded")?.0;
        let out = out_ptr(out, "out")?;
        *out = Box::into_raw(Box::new(CvsSequence(decoded.sequence.clone())));
        Ok(())
    })
}

/// Mean PSNR and SSIM over all frames. Fails with `InvalidArgument` when
/// the decode ran without a reference.
///
/// # Safety
/// `decoded` must be a live handle; `psnr` and `ssim` writable or null.
#[no_mangle]
pub unsafe extern "C" fn cvs_decoded_mean_quality(
    decoded: *const CvsDecoded,
    psnr: *mut f64,
    ssim: *mut f64,
) -> CvsStatus {
    guard(|| {
        let decoded = &as_ref(decoded, "decoded")?.0;
        let (p, s) = decoded
            .mean_quality(None)
            .ok_or_else(|| invalid("decode ran without a reference sequence"))?;
        if let Some(out) = psnr.as_mut() {
            *out = p;
        }
        if let Some(out) = ssim.as_mut() {
            *out = s;
        }
        Ok(())
    })
}

/// Writes the per-frame CSV report.
///
/// # Safety
/// `decoded` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cvs_decoded_write_csv(
    decoded: *const CvsDecoded,
    path: *const c_char,
) -> CvsStatus {
    guard(|| {
        let decoded = &as_ref(decoded, "decoded")?.0;
        pipeline::write_text(&path_arg(path)?, &pipeline::decode_csv(decoded))?;
        Ok(())
    })
}

/// # Safety
/// `decoded` must come from [`cvs_decode`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cvs_decoded_free(decoded: *mut CvsDecoded) {
    if !decoded.is_null() {
        drop(Box::from_raw(decoded));
    }
}
