//! C ABI over the tacnet record codec, device emulator and analytics.
//!
//! Every function returns a [`TacStatus`]. On failure the message is kept per
//! thread and can be read with [`tac_last_error`]. Panics never cross the
//! boundary; they come back as `TAC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use tacnet::analytics::{self, CalibrationCurve};
use tacnet::device::{AnalogInput, DeviceConfig, Emulator, FlashRecord, GainTable, RECORD_LEN};
use tacnet::gateway;
use tacnet::physio;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TacStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The input cannot produce a result, e.g. a fit over one concentration.
    Degenerate = 3,
    Io = 4,
    BufferTooSmall = 5,
    Panic = 99,
}

/// One flash record; `encode`/`decode` give the 16-byte little-endian form.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TacRecord {
    pub rec_type: u16,
    pub rec_id: u16,
    pub v1: f32,
    pub v2: f32,
    pub v3: f32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TacSample {
    pub adc_counts: u16,
    pub gain_index: u8,
    pub temp_c: f32,
    pub rh_pct: f32,
}

/// `counts = slope * ppm + intercept` at `ref_gain_index`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TacCalibration {
    pub slope_counts_per_ppm: f64,
    pub intercept_counts: f64,
    pub ref_gain_index: u8,
    pub fit_r2: f64,
}

/// Opaque emulator handle.
pub struct TacEmulator {
    emu: Emulator,
    /// Response bytes not yet handed to the caller.
    out: Vec<u8>,
}

impl From<FlashRecord> for TacRecord {
    fn from(r: FlashRecord) -> Self {
        Self { rec_type: r.rec_type, rec_id: r.rec_id, v1: r.v1, v2: r.v2, v3: r.v3 }
    }
}

impl From<TacRecord> for FlashRecord {
    fn from(r: TacRecord) -> Self {
        Self { rec_type: r.rec_type, rec_id: r.rec_id, v1: r.v1, v2: r.v2, v3: r.v3 }
    }
}

impl From<CalibrationCurve> for TacCalibration {
    fn from(c: CalibrationCurve) -> Self {
        Self {
            slope_counts_per_ppm: c.slope_counts_per_ppm,
            intercept_counts: c.intercept_counts,
            ref_gain_index: c.ref_gain_index,
            fit_r2: c.fit_r2,
        }
    }
}

impl From<TacCalibration> for CalibrationCurve {
    fn from(c: TacCalibration) -> Self {
        Self {
            slope_counts_per_ppm: c.slope_counts_per_ppm,
            intercept_counts: c.intercept_counts,
            ref_gain_index: c.ref_gain_index,
            fit_r2: c.fit_r2,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(TacStatus, String);

type Res<T> = Result<T, Failure>;

fn fail<T>(status: TacStatus, msg: impl Into<String>) -> Res<T> {
    Err(Failure(status, msg.into()))
}

fn analytics_err(e: analytics::AnalyticsError) -> Failure {
    let status = match e {
        analytics::AnalyticsError::DegenerateFit(_) | analytics::AnalyticsError::NoPeak => TacStatus::Degenerate,
        _ => TacStatus::InvalidArgument,
    };
    Failure(status, e.to_string())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Res<()>) -> TacStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TacStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            TacStatus::Panic
        }
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Res<&'a mut T> {
    match p.as_mut() {
        Some(r) => Ok(r),
        None => fail(TacStatus::NullPointer, format!("{what} is null")),
    }
}

unsafe fn in_ref<'a, T>(p: *const T, what: &str) -> Res<&'a T> {
    match p.as_ref() {
        Some(r) => Ok(r),
        None => fail(TacStatus::NullPointer, format!("{what} is null")),
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Res<&'a [T]> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(TacStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn string(p: *const c_char, what: &str) -> Res<String> {
    if p.is_null() {
        return fail(TacStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .or_else(|_| fail(TacStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tac_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Writes the 16-byte wire form of `rec` to `out`.
///
/// # Safety
/// `rec` must be readable and `out` must have room for 16 bytes.
#[no_mangle]
pub unsafe extern "C" fn tac_record_encode(rec: *const TacRecord, out: *mut u8) -> TacStatus {
    guard(|| {
        let rec = in_ref(rec, "rec")?;
        if out.is_null() {
            return fail(TacStatus::NullPointer, "out is null");
        }
        let bytes = FlashRecord::from(*rec).encode();
        ptr::copy_nonoverlapping(bytes.as_ptr(), out, RECORD_LEN);
        Ok(())
    })
}

/// # Safety
/// `bytes` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tac_record_decode(bytes: *const u8, len: usize, out: *mut TacRecord) -> TacStatus {
    guard(|| {
        let b = slice(bytes, len, "bytes")?;
        let out = out_ref(out, "out")?;
        let rec = FlashRecord::decode(b).or_else(|e| fail(TacStatus::InvalidArgument, e.to_string()))?;
        *out = rec.into();
        Ok(())
    })
}

/// Equilibrium vapor ppm over a liquid of `liquid_mg_dl` at `temp_c`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tac_henry_gas_ppm(liquid_mg_dl: f64, temp_c: f64, out: *mut f64) -> TacStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = physio::henry_gas_ppm(liquid_mg_dl, temp_c)
            .or_else(|e| fail(TacStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// Least-squares line through `n` `(ppm[i], counts[i])` pairs.
///
/// # Safety
/// `ppm` and `counts` must each hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tac_fit_calibration(
    ppm: *const f64,
    counts: *const f64,
    n: usize,
    ref_gain_index: u8,
    out: *mut TacCalibration,
) -> TacStatus {
    guard(|| {
        let x = slice(ppm, n, "ppm")?;
        let y = slice(counts, n, "counts")?;
        let out = out_ref(out, "out")?;
        let pts: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
        *out = analytics::fit_calibration(&pts, ref_gain_index).map_err(analytics_err)?.into();
        Ok(())
    })
}

/// Converts counts taken at `gain_index` to ppm, using the default gain table.
///
/// # Safety
/// `cal` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tac_adc_to_ppm(
    counts: f64,
    gain_index: u8,
    cal: *const TacCalibration,
    out: *mut f64,
) -> TacStatus {
    guard(|| {
        let cal = CalibrationCurve::from(*in_ref(cal, "cal")?);
        let out = out_ref(out, "out")?;
        *out = analytics::adc_to_ppm(counts, gain_index, &cal, &GainTable::default()).map_err(analytics_err)?;
        Ok(())
    })
}

/// Trapezoidal area of `v` over `t` clipped to `[t0, t1]`, in value·minutes.
///
/// # Safety
/// `t` and `v` must each hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tac_auc(
    t: *const f64,
    v: *const f64,
    n: usize,
    t0: f64,
    t1: f64,
    out: *mut f64,
) -> TacStatus {
    guard(|| {
        let t = slice(t, n, "t")?;
        let v = slice(v, n, "v")?;
        let out = out_ref(out, "out")?;
        *out = analytics::auc(t, v, t0, t1).map_err(analytics_err)?;
        Ok(())
    })
}

/// Wall-clock stamp of record `rec_id` when `latest_id` is newest at `now_ns`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tac_record_timestamp(now_ns: i64, latest_id: u16, rec_id: u16, out: *mut i64) -> TacStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        match gateway::record_timestamp(now_ns, latest_id, rec_id) {
            Some(t) => {
                *out = t;
                Ok(())
            }
            None => fail(TacStatus::InvalidArgument, "record too far behind latest to place"),
        }
    })
}

/// Creates an emulator. `flash_path` may be NULL for in-memory flash; an
/// existing image is reopened. Free with [`tac_emulator_free`].
///
/// # Safety
/// `name` must be a NUL-terminated string, `flash_path` NULL or one, and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tac_emulator_new(
    name: *const c_char,
    flash_path: *const c_char,
    out: *mut *mut TacEmulator,
) -> TacStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let name = string(name, "name")?;
        let flash_path = if flash_path.is_null() { None } else { Some(PathBuf::from(string(flash_path, "flash_path")?)) };
        let cfg = DeviceConfig { flash_path, ..DeviceConfig::named(name) };
        let emu = Emulator::new(cfg).map_err(|e| {
            let status = match e {
                tacnet::device::DeviceError::Fifo(_) | tacnet::device::DeviceError::Io(_) => TacStatus::Io,
                _ => TacStatus::InvalidArgument,
            };
            Failure(status, e.to_string())
        })?;
        *out = Box::into_raw(Box::new(TacEmulator { emu, out: Vec::new() }));
        Ok(())
    })
}

/// # Safety
/// `emu` must come from [`tac_emulator_new`] and not be used afterwards.
/// NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn tac_emulator_free(emu: *mut TacEmulator) {
    if !emu.is_null() {
        drop(Box::from_raw(emu));
    }
}

/// Advances one second with the given sensor current and environment.
/// `out` may be NULL.
///
/// # Safety
/// `emu` must be a live handle; `out` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn tac_emulator_tick(
    emu: *mut TacEmulator,
    current_na: f64,
    temp_c: f64,
    rh_pct: f64,
    out: *mut TacSample,
) -> TacStatus {
    guard(|| {
        let h = out_ref(emu, "emu")?;
        let input = AnalogInput { current_na, temp_c, rh_pct };
        let s = h.emu.tick(Some(input)).or_else(|e| fail(TacStatus::Io, e.to_string()))?;
        if let (Some(s), Some(o)) = (s, out.as_mut()) {
            *o = TacSample { adc_counts: s.adc_counts, gain_index: s.gain_index, temp_c: s.temp_c, rh_pct: s.rh_pct };
        }
        Ok(())
    })
}

/// Number of records currently held in flash.
///
/// # Safety
/// `emu` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tac_emulator_record_count(emu: *const TacEmulator, out: *mut u32) -> TacStatus {
    guard(|| {
        let h = in_ref(emu, "emu")?;
        *out_ref(out, "out")? = h.emu.fifo().len();
        Ok(())
    })
}

/// Copies up to `cap` records, oldest first, and sets `written`.
///
/// # Safety
/// `emu` must be a live handle, `out` must hold `cap` records, and `written`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn tac_emulator_read_records(
    emu: *const TacEmulator,
    out: *mut TacRecord,
    cap: usize,
    written: *mut usize,
) -> TacStatus {
    guard(|| {
        let h = in_ref(emu, "emu")?;
        let written = out_ref(written, "written")?;
        *written = 0;
        if cap > 0 && out.is_null() {
            return fail(TacStatus::NullPointer, "out is null");
        }
        for (i, r) in h.emu.fifo().iter().take(cap).enumerate() {
            out.add(i).write(r.into());
            *written = i + 1;
        }
        Ok(())
    })
}

/// Feeds protocol bytes from the central to the device.
///
/// # Safety
/// `emu` must be a live handle and `bytes` hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn tac_emulator_receive(emu: *mut TacEmulator, bytes: *const u8, len: usize) -> TacStatus {
    guard(|| {
        let h = out_ref(emu, "emu")?;
        let b = slice(bytes, len, "bytes")?;
        h.emu.receive_bytes(b);
        Ok(())
    })
}

/// Moves up to `cap` pending response bytes into `buf` and sets `written`.
/// Bytes that do not fit stay queued for the next call.
///
/// # Safety
/// `emu` must be a live handle, `buf` hold `cap` bytes, `written` writable.
#[no_mangle]
pub unsafe extern "C" fn tac_emulator_take_output(
    emu: *mut TacEmulator,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> TacStatus {
    guard(|| {
        let h = out_ref(emu, "emu")?;
        let written = out_ref(written, "written")?;
        *written = 0;
        let fresh = h.emu.take_output();
        h.out.extend_from_slice(&fresh);
        if h.out.is_empty() {
            return Ok(());
        }
        if buf.is_null() {
            return fail(TacStatus::NullPointer, "buf is null");
        }
        if cap == 0 {
            return fail(TacStatus::BufferTooSmall, format!("{} bytes pending", h.out.len()));
        }
        let n = cap.min(h.out.len());
        ptr::copy_nonoverlapping(h.out.as_ptr(), buf, n);
        h.out.drain(..n);
        *written = n;
        Ok(())
    })
}
