//! C ABI over the `evdeblur` library.
//!
//! Objects are opaque handles created by `evdb_*_new`/`_build`/`_parse`
//! functions and released with the matching `evdb_*_free`. Every fallible
//! call returns an [`EvdbStatus`]; on failure the message is available from
//! [`evdb_last_error`] on the same thread until the next failing call.
//! Panics never cross the boundary; they are reported as `EVDB_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use evdeblur::edi::{edi_deblur, synthesize_blur};
use evdeblur::kernels::gaussian_weight;
use evdeblur::metrics::{psnr, ssim, total_loss, LossWeights, MetricOptions};
use evdeblur::representations::{
    bicubic_upscale, build_point_cloud, build_voxel, normalize_points, PointCloudBins, VoxelGrid,
};
use evdeblur::sampling::{density_crop, farthest_point_sampling};
use evdeblur::{parse_events, write_events, Error, Event, EventFormat, EventStream, IntensityImage, Polarity};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvdbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Format = 4,
    Shape = 5,
    Numeric = 6,
    Weights = 7,
    Io = 8,
    Unsorted = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// Event file encoding.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvdbFormat {
    Text = 0,
    Binary = 1,
}

/// Byte buffer owned by the library; release with [`evdb_buffer_free`].
#[repr(C)]
pub struct EvdbBuffer {
    pub data: *mut u8,
    pub len: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvdbMetricReport {
    /// `+inf` for identical images.
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
    pub ssim_loss: f64,
    pub msfr: f64,
    pub total: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvdbCrop {
    pub x0: usize,
    pub y0: usize,
    pub side: usize,
    pub center_x: usize,
    pub center_y: usize,
    pub cell_density: f64,
}

/// Opaque event stream.
pub struct EvdbStream(EventStream);
/// Opaque intensity image.
pub struct EvdbImage(IntensityImage);
/// Opaque voxel grid.
pub struct EvdbVoxel(VoxelGrid);
/// Opaque point cloud (sensor space or normalised).
pub struct EvdbPoints {
    bins: usize,
    per_bin: usize,
    points: Vec<[f64; 3]>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> EvdbStatus {
    match err {
        Error::Parse { .. } | Error::Bounds { .. } | Error::Polarity { .. } | Error::Window { .. } => EvdbStatus::Parse,
        Error::Param(_) => EvdbStatus::InvalidArgument,
        Error::Numeric(_) => EvdbStatus::Numeric,
        Error::Shape(_) => EvdbStatus::Shape,
        Error::Weights(_) => EvdbStatus::Weights,
        Error::Format(_) => EvdbStatus::Format,
        Error::Unsorted => EvdbStatus::Unsorted,
        Error::Io(_) => EvdbStatus::Io,
    }
}

enum Fail {
    Lib(Error),
    Status(EvdbStatus, &'static str),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn null() -> Fail {
    Fail::Status(EvdbStatus::NullPointer, "null pointer argument")
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EvdbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EvdbStatus::Ok,
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
            EvdbStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(null)
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null());
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out(src: &[f64], dst: *mut f64, len: usize) -> Result<(), Fail> {
    if dst.is_null() {
        return Err(null());
    }
    if len < src.len() {
        return Err(Fail::Status(EvdbStatus::BufferTooSmall, "destination buffer too small"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn evdb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn evdb_buffer_free(buffer: EvdbBuffer) {
    if !buffer.data.is_null() {
        drop(Vec::from_raw_parts(buffer.data, buffer.len, buffer.len));
    }
}

// ---- event streams ----------------------------------------------------

/// Parses an event file held in memory. `width`/`height` of zero mean
/// "take the size from the file header". The result is sorted by time.
#[no_mangle]
pub unsafe extern "C" fn evdb_stream_parse(
    data: *const u8,
    len: usize,
    width: u16,
    height: u16,
    out: *mut *mut EvdbStream,
) -> EvdbStatus {
    guard(|| {
        let bytes = slice(data, len)?;
        let dims = (width != 0 || height != 0).then_some((width, height));
        let s = parse_events(bytes, EventFormat::detect(bytes), dims)?;
        store(out, EvdbStream(s.sorted()))
    })
}

/// Builds a stream from parallel arrays; polarities must be -1 or +1.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn evdb_stream_from_arrays(
    width: u16,
    height: u16,
    t0: u64,
    tn: u64,
    t: *const u64,
    x: *const u16,
    y: *const u16,
    p: *const i8,
    count: usize,
    out: *mut *mut EvdbStream,
) -> EvdbStatus {
    guard(|| {
        let (t, x, y, p) = (slice(t, count)?, slice(x, count)?, slice(y, count)?, slice(p, count)?);
        let mut events = Vec::with_capacity(count);
        for i in 0..count {
            let pol = Polarity::from_sign(p[i] as i64)
                .ok_or(Fail::Lib(Error::Polarity { record: i, value: p[i] as i64 }))?;
            events.push(Event::new(t[i], x[i], y[i], pol));
        }
        store(out, EvdbStream(EventStream::new(width, height, t0, tn, events)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn evdb_stream_len(stream: *const EvdbStream) -> usize {
    stream.as_ref().map_or(0, |s| s.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn evdb_stream_sort(stream: *mut EvdbStream) -> EvdbStatus {
    guard(|| {
        let s = stream.as_mut().ok_or_else(null)?;
        let taken = std::mem::replace(&mut s.0, EventStream::empty(1, 1, 0, 0)?);
        s.0 = taken.sorted();
        Ok(())
    })
}

/// Serialises a stream; free the buffer with [`evdb_buffer_free`].
#[no_mangle]
pub unsafe extern "C" fn evdb_stream_write(
    stream: *const EvdbStream,
    format: EvdbFormat,
    out: *mut EvdbBuffer,
) -> EvdbStatus {
    guard(|| {
        let s = get(stream)?;
        let out = out.as_mut().ok_or_else(null)?;
        let fmt = match format {
            EvdbFormat::Text => EventFormat::Text,
            EvdbFormat::Binary => EventFormat::Binary,
        };
        let mut bytes = write_events(&s.0, fmt).into_boxed_slice();
        out.len = bytes.len();
        out.data = bytes.as_mut_ptr();
        std::mem::forget(bytes);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn evdb_stream_free(stream: *mut EvdbStream) {
    free(stream)
}

// ---- images -------------------------------------------------------------

/// Copies `width * height` row-major intensities into a new image.
#[no_mangle]
pub unsafe extern "C" fn evdb_image_new(
    width: usize,
    height: usize,
    data: *const f64,
    out: *mut *mut EvdbImage,
) -> EvdbStatus {
    guard(|| {
        let values = slice(data, width.saturating_mul(height))?;
        store(out, EvdbImage(IntensityImage::new(width, height, values.to_vec())?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn evdb_image_dims(image: *const EvdbImage, width: *mut usize, height: *mut usize) -> EvdbStatus {
    guard(|| {
        let img = get(image)?;
        *width.as_mut().ok_or_else(null)? = img.0.width();
        *height.as_mut().ok_or_else(null)? = img.0.height();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn evdb_image_copy(image: *const EvdbImage, dst: *mut f64, len: usize) -> EvdbStatus {
    guard(|| copy_out(get(image)?.0.data(), dst, len))
}

#[no_mangle]
pub unsafe extern "C" fn evdb_image_free(image: *mut EvdbImage) {
    free(image)
}

// ---- representations ------------------------------------------------------

#[no_mangle]
pub unsafe extern "C" fn evdb_voxel_build(stream: *const EvdbStream, bins: usize, out: *mut *mut EvdbVoxel) -> EvdbStatus {
    guard(|| store(out, EvdbVoxel(build_voxel(&get(stream)?.0, bins)?)))
}

#[no_mangle]
pub unsafe extern "C" fn evdb_voxel_upscale(
    voxel: *const EvdbVoxel,
    rows: usize,
    cols: usize,
    out: *mut *mut EvdbVoxel,
) -> EvdbStatus {
    guard(|| store(out, EvdbVoxel(bicubic_upscale(&get(voxel)?.0, rows, cols)?)))
}

#[no_mangle]
pub unsafe extern "C" fn evdb_voxel_dims(
    voxel: *const EvdbVoxel,
    width: *mut usize,
    height: *mut usize,
    bins: *mut usize,
) -> EvdbStatus {
    guard(|| {
        let v = &get(voxel)?.0;
        *width.as_mut().ok_or_else(null)? = v.width();
        *height.as_mut().ok_or_else(null)? = v.height();
        *bins.as_mut().ok_or_else(null)? = v.bins();
        Ok(())
    })
}

/// Copies the cells, laid out as (y, x, bin).
#[no_mangle]
pub unsafe extern "C" fn evdb_voxel_copy(voxel: *const EvdbVoxel, dst: *mut f64, len: usize) -> EvdbStatus {
    guard(|| copy_out(get(voxel)?.0.data(), dst, len))
}

#[no_mangle]
pub unsafe extern "C" fn evdb_voxel_free(voxel: *mut EvdbVoxel) {
    free(voxel)
}

/// Samples `per_bin` points from each of `bins` time bins; with `normalize`
/// the coordinates are mapped into the unit cube.
#[no_mangle]
pub unsafe extern "C" fn evdb_points_build(
    stream: *const EvdbStream,
    bins: usize,
    per_bin: usize,
    seed: u64,
    normalize: bool,
    out: *mut *mut EvdbPoints,
) -> EvdbStatus {
    guard(|| {
        let s = &get(stream)?.0;
        let cloud: PointCloudBins = build_point_cloud(s, bins, per_bin, seed)?;
        let points = if normalize {
            normalize_points(&cloud, s.width() as f64, s.height() as f64, &cloud.bin_edges)?.points
        } else {
            cloud.points
        };
        store(out, EvdbPoints { bins, per_bin, points })
    })
}

#[no_mangle]
pub unsafe extern "C" fn evdb_points_dims(points: *const EvdbPoints, bins: *mut usize, per_bin: *mut usize) -> EvdbStatus {
    guard(|| {
        let p = get(points)?;
        *bins.as_mut().ok_or_else(null)? = p.bins;
        *per_bin.as_mut().ok_or_else(null)? = p.per_bin;
        Ok(())
    })
}

/// Copies `3 * bins * per_bin` values as interleaved (x, y, t).
#[no_mangle]
pub unsafe extern "C" fn evdb_points_copy(points: *const EvdbPoints, dst: *mut f64, len: usize) -> EvdbStatus {
    guard(|| copy_out(get(points)?.points.as_flattened(), dst, len))
}

#[no_mangle]
pub unsafe extern "C" fn evdb_points_free(points: *mut EvdbPoints) {
    free(points)
}

// ---- sampling ------------------------------------------------------------------

/// Farthest point sampling over `n` interleaved (x, y, z) points; writes
/// `count` indices.
#[no_mangle]
pub unsafe extern "C" fn evdb_fps(
    xyz: *const f64,
    n: usize,
    count: usize,
    seed: u64,
    out_indices: *mut usize,
) -> EvdbStatus {
    guard(|| {
        let flat = slice(xyz, n.saturating_mul(3))?;
        let pts: Vec<[f64; 3]> = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let idx = farthest_point_sampling(&pts, count, seed)?;
        if count > 0 {
            if out_indices.is_null() {
                return Err(null());
            }
            ptr::copy_nonoverlapping(idx.as_ptr(), out_indices, count);
        }
        Ok(())
    })
}

#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn evdb_density_crop(
    stream: *const EvdbStream,
    frame_rows: usize,
    frame_cols: usize,
    side: usize,
    threshold: f64,
    cell: usize,
    seed: u64,
    out: *mut EvdbCrop,
) -> EvdbStatus {
    guard(|| {
        let sel = density_crop(&get(stream)?.0, frame_rows, frame_cols, side, threshold, cell, seed)?;
        *out.as_mut().ok_or_else(null)? = EvdbCrop {
            x0: sel.window.x0,
            y0: sel.window.y0,
            side: sel.window.side,
            center_x: sel.center.0,
            center_y: sel.center.1,
            cell_density: sel.cell_density,
        };
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn evdb_gaussian_weight(range: f64, dist: f64) -> f64 {
    gaussian_weight(range, dist)
}

// ---- deblurring and metrics -------------------------------------------------------

#[no_mangle]
pub unsafe extern "C" fn evdb_edi_synthesize(
    sharp: *const EvdbImage,
    stream: *const EvdbStream,
    c: f64,
    steps: u64,
    out: *mut *mut EvdbImage,
) -> EvdbStatus {
    guard(|| store(out, EvdbImage(synthesize_blur(&get(sharp)?.0, &get(stream)?.0, c, steps)?)))
}

#[no_mangle]
pub unsafe extern "C" fn evdb_edi_deblur(
    blurry: *const EvdbImage,
    stream: *const EvdbStream,
    c: f64,
    steps: u64,
    out: *mut *mut EvdbImage,
) -> EvdbStatus {
    guard(|| store(out, EvdbImage(edi_deblur(&get(blurry)?.0, &get(stream)?.0, c, steps)?)))
}

#[no_mangle]
pub unsafe extern "C" fn evdb_psnr(a: *const EvdbImage, b: *const EvdbImage, peak: f64, out: *mut f64) -> EvdbStatus {
    guard(|| {
        *out.as_mut().ok_or_else(null)? = psnr(&get(a)?.0, &get(b)?.0, peak)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn evdb_ssim(a: *const EvdbImage, b: *const EvdbImage, peak: f64, out: *mut f64) -> EvdbStatus {
    guard(|| {
        *out.as_mut().ok_or_else(null)? = ssim(&get(a)?.0, &get(b)?.0, peak)?;
        Ok(())
    })
}

#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn evdb_total_loss(
    pred: *const EvdbImage,
    gt: *const EvdbImage,
    l1_weight: f64,
    ssim_weight: f64,
    msfr_weight: f64,
    peak: f64,
    scales: usize,
    out: *mut EvdbMetricReport,
) -> EvdbStatus {
    guard(|| {
        let w = LossWeights::new(l1_weight, ssim_weight, msfr_weight)?;
        let r = total_loss(&get(pred)?.0, &get(gt)?.0, &w, &MetricOptions { peak, scales })?;
        *out.as_mut().ok_or_else(null)? = EvdbMetricReport {
            psnr: r.psnr,
            ssim: r.ssim,
            l1: r.l1,
            ssim_loss: r.ssim_loss,
            msfr: r.msfr,
            total: r.total,
        };
        Ok(())
    })
}
