//! C ABI over `svreadout`.
//!
//! Every object crosses the boundary as an opaque pointer created by a `*_new`
//! or producing call and released by the matching `*_free`. Every fallible call
//! returns an [`SvStatus`]; on failure the message is available from
//! [`sv_last_error_message`] on the same thread. Output pointers are written
//! only on success. Panics are caught and reported as `SV_STATUS_PANIC`.

// `!(x > 0.0)` is used on purpose: NaN must fail every range check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use svreadout::{
    capture_spatially_varying, estimate_photons, simulate_capture, BinMap, BinningMode, ContrastForm, Cutoff, Error,
    GainMap, OptimalPitch, PhotonEstimate, RadianceMap, RawCapture, RoiGrid, Sensor, SensorConfig, TheoryParams,
};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Shape = 3,
    Input = 4,
    Numerical = 5,
    Format = 6,
    Io = 7,
    Panic = 8,
}

/// Binning mode for [`sv_capture`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvBinningMode {
    Additive = 0,
    Average = 1,
    Digital = 2,
}

impl From<SvBinningMode> for BinningMode {
    fn from(m: SvBinningMode) -> Self {
        match m {
            SvBinningMode::Additive => BinningMode::Additive,
            SvBinningMode::Average => BinningMode::Average,
            SvBinningMode::Digital => BinningMode::Digital,
        }
    }
}

/// Plain sensor description; electrons and micrometres.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvSensorConfig {
    pub pixel_pitch: f64,
    pub well_capacity: f64,
    pub sigma_pre: f64,
    pub sigma_post: f64,
    pub bit_depth: u32,
    pub black_level_frac: f64,
    pub gain_min: f64,
    pub gain_max: f64,
    pub quantum_efficiency: f64,
}

impl From<&SensorConfig> for SvSensorConfig {
    fn from(c: &SensorConfig) -> Self {
        Self {
            pixel_pitch: c.pixel_pitch,
            well_capacity: c.well_capacity,
            sigma_pre: c.sigma_pre,
            sigma_post: c.sigma_post,
            bit_depth: c.bit_depth,
            black_level_frac: c.black_level_frac,
            gain_min: c.gain_min,
            gain_max: c.gain_max,
            quantum_efficiency: c.quantum_efficiency,
        }
    }
}

impl From<&SvSensorConfig> for SensorConfig {
    fn from(c: &SvSensorConfig) -> Self {
        Self {
            pixel_pitch: c.pixel_pitch,
            well_capacity: c.well_capacity,
            sigma_pre: c.sigma_pre,
            sigma_post: c.sigma_post,
            bit_depth: c.bit_depth,
            black_level_frac: c.black_level_frac,
            gain_min: c.gain_min,
            gain_max: c.gain_max,
            quantum_efficiency: c.quantum_efficiency,
        }
    }
}

/// Opaque sensor handle.
pub struct SvSensor(Sensor);
/// Opaque expected-photon map (row-major, electrons).
pub struct SvRadianceMap(RadianceMap);
/// Opaque raw frame.
pub struct SvRawCapture(RawCapture);
/// Opaque photon estimate.
pub struct SvEstimate(PhotonEstimate);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SvStatus {
    match e {
        Error::Config(_) => SvStatus::Config,
        Error::Shape(_) => SvStatus::Shape,
        Error::Input(_) => SvStatus::Input,
        Error::Numerical(_) => SvStatus::Numerical,
        Error::Format(_) | Error::Json(_) => SvStatus::Format,
        Error::Io(_) => SvStatus::Io,
    }
}

struct Fail(SvStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SvStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SvStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            SvStatus::Panic
        }
    }
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn copy_out<T: Copy>(src: &[T], dst: *mut T, len: usize) -> Result<(), Fail> {
    if dst.is_null() {
        return Err(null("output buffer"));
    }
    if len < src.len() {
        return Err(Fail(
            SvStatus::Shape,
            format!("buffer holds {len} values, need {}", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn sv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Fills `out` with the reference sensor description.
///
/// # Safety
/// `out` must be null or point to writable memory for one `SvSensorConfig`.
#[no_mangle]
pub unsafe extern "C" fn sv_sensor_config_default(out: *mut SvSensorConfig) -> SvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = (&SensorConfig::protocol_default()).into();
        Ok(())
    })
}

/// # Safety
/// `config` must be null or valid; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn sv_sensor_new(config: *const SvSensorConfig, out: *mut *mut SvSensor) -> SvStatus {
    guard(|| {
        let c = obj(config, "config")?;
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, SvSensor(Sensor::new(c.into())?));
        Ok(())
    })
}

/// # Safety
/// `sensor` must be null or a handle from [`sv_sensor_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sv_sensor_free(sensor: *mut SvSensor) {
    if !sensor.is_null() {
        drop(Box::from_raw(sensor));
    }
}

/// Copies `width * height` row-major expected photon counts.
///
/// # Safety
/// `data` must point to `width * height` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sv_radiance_map_new(
    width: usize,
    height: usize,
    data: *const f64,
    out: *mut *mut SvRadianceMap,
) -> SvStatus {
    guard(|| {
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Fail(SvStatus::Shape, "size overflows".into()))?;
        let values = slice(data, n, "data")?.to_vec();
        if out.is_null() {
            return Err(null("out"));
        }
        let plane = svreadout::Plane::from_vec(width, height, values)?;
        put(out, SvRadianceMap(RadianceMap::new(plane)?));
        Ok(())
    })
}

/// # Safety
/// `map` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sv_radiance_map_free(map: *mut SvRadianceMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Reads the whole frame at one gain without binning.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sv_simulate(
    sensor: *const SvSensor,
    scene: *const SvRadianceMap,
    gain: f64,
    seed: u64,
    out: *mut *mut SvRawCapture,
) -> SvStatus {
    guard(|| {
        let s = &obj(sensor, "sensor")?.0;
        let m = &obj(scene, "scene")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let (w, h) = (m.width(), m.height());
        let bins = BinMap::unbinned(w, h, w.max(h))?;
        put(
            out,
            SvRawCapture(simulate_capture(m, &GainMap::constant(gain), &bins, s, seed)?),
        );
        Ok(())
    })
}

/// Spatially-varying capture. `gains` and `bin_sides` hold one entry per ROI in
/// raster order; `bin_sides` may be null for no binning.
///
/// # Safety
/// Handles must be live; arrays must hold `n_rois` entries; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sv_capture(
    sensor: *const SvSensor,
    scene: *const SvRadianceMap,
    roi_size: usize,
    gains: *const f64,
    bin_sides: *const u8,
    n_rois: usize,
    mode: SvBinningMode,
    seed: u64,
    out: *mut *mut SvRawCapture,
) -> SvStatus {
    guard(|| {
        let s = &obj(sensor, "sensor")?.0;
        let m = &obj(scene, "scene")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let (w, h) = (m.width(), m.height());
        let grid = RoiGrid::new(w, h, roi_size)?;
        if n_rois != grid.len() {
            return Err(Fail(
                SvStatus::Shape,
                format!("{n_rois} ROIs given, frame has {}", grid.len()),
            ));
        }
        let gain_map = GainMap::per_roi(&grid, 0.0, slice(gains, n_rois, "gains")?.to_vec())?;
        let ks = if bin_sides.is_null() {
            vec![1; n_rois]
        } else {
            slice(bin_sides, n_rois, "bin_sides")?.to_vec()
        };
        let bin_map = BinMap::new(w, h, roi_size, mode.into(), ks)?;
        let cap = capture_spatially_varying(m, &gain_map, &bin_map, s, seed)?;
        put(out, SvRawCapture(cap.raw));
        Ok(())
    })
}

/// # Safety
/// `raw` must be live; `width` and `height` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sv_raw_capture_size(
    raw: *const SvRawCapture,
    width: *mut usize,
    height: *mut usize,
) -> SvStatus {
    guard(|| {
        let r = &obj(raw, "raw")?.0;
        if width.is_null() || height.is_null() {
            return Err(null("size output"));
        }
        *width = r.width();
        *height = r.height();
        Ok(())
    })
}

/// Copies the row-major digits into `out`, which holds `len` values.
///
/// # Safety
/// `raw` must be live; `out` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn sv_raw_capture_digits(raw: *const SvRawCapture, out: *mut u16, len: usize) -> SvStatus {
    guard(|| copy_out(&obj(raw, "raw")?.0.digits.data, out, len))
}

/// # Safety
/// `raw` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sv_raw_capture_free(raw: *mut SvRawCapture) {
    if !raw.is_null() {
        drop(Box::from_raw(raw));
    }
}

/// Photons per pixel recovered from a raw frame.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sv_estimate(
    sensor: *const SvSensor,
    raw: *const SvRawCapture,
    out: *mut *mut SvEstimate,
) -> SvStatus {
    guard(|| {
        let s = &obj(sensor, "sensor")?.0;
        let r = &obj(raw, "raw")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, SvEstimate(estimate_photons(r, s)));
        Ok(())
    })
}

/// Copies the row-major estimate into `out`; saturated pixels hold their
/// clamped value and are flagged in `valid` (1 = unsaturated) when not null.
///
/// # Safety
/// `estimate` must be live; `out` (and `valid` if given) must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn sv_estimate_data(
    estimate: *const SvEstimate,
    out: *mut f64,
    valid: *mut u8,
    len: usize,
) -> SvStatus {
    guard(|| {
        let e = &obj(estimate, "estimate")?.0;
        copy_out(&e.data.data, out, len)?;
        if !valid.is_null() {
            let flags: Vec<u8> = e.valid.data.iter().map(|&v| v as u8).collect();
            copy_out(&flags, valid, len)?;
        }
        Ok(())
    })
}

/// # Safety
/// `estimate` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sv_estimate_free(estimate: *mut SvEstimate) {
    if !estimate.is_null() {
        drop(Box::from_raw(estimate));
    }
}

/// Largest gain keeping level `l_hat` `eta` photon-noise sigmas below full well.
///
/// # Safety
/// `sensor` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sv_gain_for_level(sensor: *const SvSensor, l_hat: f64, eta: f64, out: *mut f64) -> SvStatus {
    guard(|| {
        let s = &obj(sensor, "sensor")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        if !(eta >= 0.0) {
            return Err(Fail(SvStatus::Config, "eta must be nonnegative".into()));
        }
        *out = svreadout::gain_for_level(l_hat, eta, s.config());
        Ok(())
    })
}

/// Cutoff frequency (cycles/um) for light density `l0` at pitch `p`.
/// `resolved` is set to 0 when nothing reaches `snr_t`; `frequency` is then 0.
///
/// # Safety
/// `sensor` must be live; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn sv_cutoff_frequency(
    sensor: *const SvSensor,
    l0: f64,
    p: f64,
    g: f64,
    snr_t: f64,
    frequency: *mut f64,
    resolved: *mut u8,
) -> SvStatus {
    guard(|| {
        let s = &obj(sensor, "sensor")?.0;
        if frequency.is_null() || resolved.is_null() {
            return Err(null("output"));
        }
        if !(l0 > 0.0 && p > 0.0 && g > 0.0 && snr_t > 0.0) {
            return Err(Fail(SvStatus::Input, "l0, p, g and snr_t must be positive".into()));
        }
        match svreadout::cutoff_frequency(l0, p, g, snr_t, s.config(), ContrastForm::Derived) {
            Cutoff::Resolved(f) => {
                *frequency = f;
                *resolved = 1;
            }
            Cutoff::Unresolvable => {
                *frequency = 0.0;
                *resolved = 0;
            }
        }
        Ok(())
    })
}

/// Best of `n` ascending candidate pitches. When none resolves anything,
/// `pitch` is set to 0 (bin as much as possible).
///
/// # Safety
/// `sensor` must be live; `pitches` holds `n` values; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn sv_optimal_pitch(
    sensor: *const SvSensor,
    l0: f64,
    g: f64,
    snr_t: f64,
    pitches: *const f64,
    n: usize,
    pitch: *mut f64,
    f_cutoff: *mut f64,
) -> SvStatus {
    guard(|| {
        let s = &obj(sensor, "sensor")?.0;
        if pitch.is_null() || f_cutoff.is_null() {
            return Err(null("output"));
        }
        let candidates = slice(pitches, n, "pitches")?.to_vec();
        let params = TheoryParams::new(snr_t, candidates, vec![l0.max(f64::MIN_POSITIVE)])?;
        match svreadout::optimal_pitch(l0, g, &params, s.config()).0 {
            OptimalPitch::Pitch { pitch: p, f_cutoff: f } => {
                *pitch = p;
                *f_cutoff = f;
            }
            OptimalPitch::MaxBinning => {
                *pitch = 0.0;
                *f_cutoff = 0.0;
            }
        }
        Ok(())
    })
}
