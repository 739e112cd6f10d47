//! C ABI over `ecs-motion`.
//!
//! Every fallible call returns an `EcsStatus`; on failure the message is kept
//! per thread and read back with `ecs_last_error`. Handles are opaque and must
//! be released with their `_free` function. Units follow the CLI: kHz and µs.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ecs_motion::dynamics::{
    ecs_distribution, spin_up_probability, EcsState, ModeLabel, ModeParams, SdfDrive, NOMINAL_SECULAR,
};
use ecs_motion::error::Error;
use ecs_motion::estimation::{fit_bsb_trace, BsbFitConfig, FitReport};
use ecs_motion::expdata::{self, RabiTrace};
use ecs_motion::ms;

const KHZ: f64 = 2.0 * PI * 1e3;
const US: f64 = 1e-6;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EcsStatus {
    Ok = 0,
    /// Bad argument, unsupported configuration or unreadable data.
    InvalidInput = 1,
    /// Truncation, convergence or other numerical failure.
    Numerical = 2,
    NullPointer = 3,
    /// Output buffer too small.
    BufferTooSmall = 4,
    /// A Rust panic was caught at the boundary.
    Internal = 5,
}

/// Single-ion two-mode model: SDF drive plus the X and Y modes.
pub struct EcsModel {
    drive: SdfDrive,
    x: ModeParams,
    y: ModeParams,
}

/// Result of a fit.
pub struct EcsFitReport {
    inner: FitReport,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> EcsStatus {
    if err.is_numerical() { EcsStatus::Numerical } else { EcsStatus::InvalidInput }
}

/// Run `f`, translating errors and panics into a status.
fn guard<F>(f: F) -> EcsStatus
where
    F: FnOnce() -> Result<(), EcsStatus>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            EcsStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            EcsStatus::Internal
        }
    }
}

fn check<T>(r: ecs_motion::error::Result<T>) -> Result<T, EcsStatus> {
    r.map_err(|e| {
        set_error(&e.to_string());
        status_of(&e)
    })
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), EcsStatus> {
    if p.is_null() {
        set_error(&format!("{name} is null"));
        return Err(EcsStatus::NullPointer);
    }
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ecs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn ecs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build a model from the drive Rabi frequency, the detuning ratio
/// delta_X/delta_Y and the mode splitting, all in kHz.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ecs_model_new(
    omega_khz: f64,
    ratio: f64,
    splitting_khz: f64,
    eta_x: f64,
    eta_y: f64,
    p_x1: f64,
    p_y1: f64,
    out: *mut *mut EcsModel,
) -> EcsStatus {
    guard(|| {
        non_null(out, "out")?;
        let drive = check(SdfDrive::from_ratio(omega_khz * KHZ, ratio, splitting_khz * KHZ))?;
        let x = check(ModeParams::new(ModeLabel::X, NOMINAL_SECULAR, eta_x, 0.0, p_x1))?;
        let y = check(ModeParams::new(ModeLabel::Y, NOMINAL_SECULAR + splitting_khz * KHZ, eta_y, 0.0, p_y1))?;
        *out = Box::into_raw(Box::new(EcsModel { drive, x, y }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `ecs_model_new` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ecs_model_free(model: *mut EcsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Spin-up probability after an SDF pulse of `t_us`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ecs_model_spin_up(model: *const EcsModel, t_us: f64, out: *mut f64) -> EcsStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        let m = &*model;
        *out = check(spin_up_probability(&m.drive, (&m.x, &m.y), t_us * US))?;
        Ok(())
    })
}

/// Y-mode phonon distribution of the heralded state after `t_us`, written to
/// `out[0..=n_max]`; `out_len` must be at least `n_max + 1`.
///
/// # Safety
/// `model` must be a live handle and `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ecs_model_distribution(
    model: *const EcsModel,
    t_us: f64,
    n_max: usize,
    out: *mut f64,
    out_len: usize,
) -> EcsStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        if out_len < n_max + 1 {
            set_error(&format!("buffer holds {out_len} values, need {}", n_max + 1));
            return Err(EcsStatus::BufferTooSmall);
        }
        let m = &*model;
        let state = check(EcsState::at(&m.drive, (&m.x, &m.y), t_us * US))?;
        let dist = check(ecs_distribution(&state, n_max))?;
        std::slice::from_raw_parts_mut(out, n_max + 1).copy_from_slice(&dist.populations);
        Ok(())
    })
}

/// Y-mode parity of the heralded state after `t_us`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ecs_model_parity(model: *const EcsModel, t_us: f64, out: *mut f64) -> EcsStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        let m = &*model;
        let state = check(EcsState::at(&m.drive, (&m.x, &m.y), t_us * US))?;
        let n_max = ecs_motion::dynamics::recommended_n_max(state.beta.norm_sqr()) + 4;
        *out = check(ecs_distribution(&state, n_max))?.parity();
        Ok(())
    })
}

/// Two-ion gate populations `[p_dd, p_du + p_ud, p_uu]` at `t_us` for the
/// built-in chain at detuning ratio `ratio`. A non-positive `omega_khz`
/// selects the Rabi frequency that gives a Bell state at 182 µs.
///
/// # Safety
/// `out3` must hold three doubles.
#[no_mangle]
pub unsafe extern "C" fn ecs_ms_populations(ratio: f64, omega_khz: f64, t_us: f64, out3: *mut f64) -> EcsStatus {
    guard(|| {
        non_null(out3, "out3")?;
        let set = ms::ChainModeSet::nominal();
        let center = check(ms::center_for_ratio(&set, ratio))?;
        let omega = if omega_khz > 0.0 {
            omega_khz * KHZ
        } else {
            check(ms::required_rabi(&set, center, ms::NOMINAL_GATE_TIME, ms::BELL_PHASE))?
        };
        let drive = check(ms::MsDrive::new(omega, center, ms::NOMINAL_GATE_TIME))?;
        let p = check(ms::ms_populations(&set, &drive, t_us * US))?;
        std::slice::from_raw_parts_mut(out3, 3).copy_from_slice(&[p.p_dd, p.p_du_plus_ud, p.p_uu]);
        Ok(())
    })
}

/// `(even_population + parity_amplitude) / 2`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ecs_bell_fidelity(even_population: f64, parity_amplitude: f64, out: *mut f64) -> EcsStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = check(ms::bell_fidelity(even_population, parity_amplitude))?;
        Ok(())
    })
}

/// Fit a blue-sideband trace with default settings and `n_max` levels.
/// `omega0_khz <= 0` keeps the default nominal Rabi frequency.
///
/// # Safety
/// `times_us`, `p_up` and `shots` must each hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ecs_fit_bsb(
    times_us: *const f64,
    p_up: *const f64,
    shots: *const u32,
    len: usize,
    n_max: usize,
    omega0_khz: f64,
    out: *mut *mut EcsFitReport,
) -> EcsStatus {
    guard(|| {
        non_null(times_us, "times_us")?;
        non_null(p_up, "p_up")?;
        non_null(shots, "shots")?;
        non_null(out, "out")?;
        let times = std::slice::from_raw_parts(times_us, len).iter().map(|t| t * US).collect();
        let p = std::slice::from_raw_parts(p_up, len).to_vec();
        let s = std::slice::from_raw_parts(shots, len).to_vec();
        let trace = check(RabiTrace::new(times, p, s, "ffi"))?;
        let mut cfg = BsbFitConfig { n_max, ..BsbFitConfig::default() };
        if omega0_khz > 0.0 {
            cfg.omega0 = omega0_khz * KHZ;
        }
        let report = check(fit_bsb_trace(&trace, &cfg))?;
        *out = Box::into_raw(Box::new(EcsFitReport { inner: report }));
        Ok(())
    })
}

/// # Safety
/// `report` must come from a fit call and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ecs_fit_report_free(report: *mut EcsFitReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// 1 if the fit converged, 0 if not, -1 for a null handle.
///
/// # Safety
/// `report` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ecs_fit_report_converged(report: *const EcsFitReport) -> i32 {
    if report.is_null() {
        return -1;
    }
    i32::from((*report).inner.converged)
}

/// Value and standard error of a named parameter such as `p_0` or `omega0_khz`.
/// `std_error` may be null.
///
/// # Safety
/// `report` must be a live handle, `key` a NUL-terminated string, `value` writable.
#[no_mangle]
pub unsafe extern "C" fn ecs_fit_report_get(
    report: *const EcsFitReport,
    key: *const c_char,
    value: *mut f64,
    std_error: *mut f64,
) -> EcsStatus {
    guard(|| {
        non_null(report, "report")?;
        non_null(key, "key")?;
        non_null(value, "value")?;
        let key = CStr::from_ptr(key).to_str().map_err(|_| {
            set_error("key is not UTF-8");
            EcsStatus::InvalidInput
        })?;
        let r = &(*report).inner;
        let Some(v) = r.get(key) else {
            set_error(&format!("no parameter named {key}"));
            return Err(EcsStatus::InvalidInput);
        };
        *value = v;
        if !std_error.is_null() {
            *std_error = r.error(key).unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// The report as a TOML document; release with `ecs_string_free`. Null on failure.
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ecs_fit_report_to_toml(report: *const EcsFitReport) -> *mut c_char {
    if report.is_null() {
        set_error("report is null");
        return ptr::null_mut();
    }
    let text = catch_unwind(AssertUnwindSafe(|| expdata::to_toml_string(&(*report).inner)));
    match text {
        Ok(Ok(s)) => CString::new(s).map(CString::into_raw).unwrap_or(ptr::null_mut()),
        Ok(Err(e)) => {
            set_error(&e.to_string());
            ptr::null_mut()
        }
        Err(_) => {
            set_error("internal panic");
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `s` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ecs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
