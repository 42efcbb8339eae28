//! C ABI over the simulator: opaque handles, status codes and a per-thread
//! last-error message.
//!
//! Every function returns a [`DcsimStatus`]. On failure a description is
//! available from [`dcsim_last_error`] until the next call on the same
//! thread. Handles and strings handed out must be released with the
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dcsim::analytic::{self, EngsetQuery, TschLatencyQuery};
use dcsim::error::{ModelError, ScenarioError};
use dcsim::mac::beacon::superframe_params;
use dcsim::runner::{self, Row};
use dcsim::scenario::ScenarioConfig;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    InvalidConfig = 4,
    ModelError = 5,
    IoError = 6,
    OutOfRange = 7,
    Panic = 8,
}

/// A parsed scenario or sweep.
pub struct DcsimScenario {
    config: ScenarioConfig,
}

/// Rows produced by running a scenario.
pub struct DcsimReport {
    rows: Vec<Row>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn scenario_status(e: &ScenarioError) -> DcsimStatus {
    match e {
        ScenarioError::Parse { .. } | ScenarioError::Json(_) => DcsimStatus::ParseError,
        ScenarioError::Invalid { .. } => DcsimStatus::InvalidConfig,
        ScenarioError::Model(_) | ScenarioError::Sim(_) => DcsimStatus::ModelError,
        ScenarioError::Io(_) | ScenarioError::Csv(_) => DcsimStatus::IoError,
    }
}

fn fail(status: DcsimStatus, msg: impl Into<String>) -> DcsimStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (DcsimStatus, String)>) -> DcsimStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DcsimStatus::Ok,
        Ok(Err((status, msg))) => fail(status, msg),
        Err(_) => fail(DcsimStatus::Panic, "internal panic"),
    }
}

fn from_scenario(e: ScenarioError) -> (DcsimStatus, String) {
    (scenario_status(&e), e.to_string())
}

fn from_model(e: ModelError) -> (DcsimStatus, String) {
    (DcsimStatus::ModelError, e.to_string())
}

fn null(what: &str) -> (DcsimStatus, String) {
    (DcsimStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (DcsimStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: the caller guarantees a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|e| (DcsimStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &str) -> Result<(), (DcsimStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and, per the contract, valid for writes.
    unsafe { out.write(v) };
    Ok(())
}

/// Message for the last failed call on this thread, or NULL. Owned by the
/// library; valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn dcsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dcsim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a JSON scenario. On success `*out` holds a new handle.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dcsim_scenario_from_json(json: *const c_char, out: *mut *mut DcsimScenario) -> DcsimStatus {
    guard(|| {
        let text = unsafe { read_str(json, "json") }?;
        let config = ScenarioConfig::from_json(text).map_err(from_scenario)?;
        let handle = Box::into_raw(Box::new(DcsimScenario { config }));
        unsafe { write_out(out, handle, "out") }.inspect_err(|_| {
            // SAFETY: just allocated above and not shared.
            drop(unsafe { Box::from_raw(handle) });
        })
    })
}

/// # Safety
/// `scenario` must come from [`dcsim_scenario_from_json`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn dcsim_scenario_free(scenario: *mut DcsimScenario) {
    if !scenario.is_null() {
        // SAFETY: ownership returns to Rust exactly once per the contract.
        drop(unsafe { Box::from_raw(scenario) });
    }
}

/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcsim_scenario_set_replications(scenario: *mut DcsimScenario, replications: u32) -> DcsimStatus {
    guard(|| {
        let s = unsafe { scenario.as_mut() }.ok_or_else(|| null("scenario"))?;
        if replications == 0 {
            return Err((DcsimStatus::OutOfRange, "replications must be at least 1".into()));
        }
        s.config.replications = Some(replications);
        Ok(())
    })
}

/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcsim_scenario_set_seed(scenario: *mut DcsimScenario, seed: u64) -> DcsimStatus {
    guard(|| {
        let s = unsafe { scenario.as_mut() }.ok_or_else(|| null("scenario"))?;
        s.config.seed = Some(seed);
        Ok(())
    })
}

/// Runs every point of the scenario. On success `*out` holds a new report.
///
/// # Safety
/// `scenario` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dcsim_run(scenario: *const DcsimScenario, out: *mut *mut DcsimReport) -> DcsimStatus {
    guard(|| {
        let s = unsafe { scenario.as_ref() }.ok_or_else(|| null("scenario"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let rows = runner::run_scenario(&s.config).map_err(from_scenario)?;
        unsafe { write_out(out, Box::into_raw(Box::new(DcsimReport { rows })), "out") }
    })
}

/// # Safety
/// `report` must come from [`dcsim_run`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn dcsim_report_free(report: *mut DcsimReport) {
    if !report.is_null() {
        // SAFETY: ownership returns to Rust exactly once per the contract.
        drop(unsafe { Box::from_raw(report) });
    }
}

/// Number of rows in a report; 0 for NULL.
///
/// # Safety
/// `report` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn dcsim_report_rows(report: *const DcsimReport) -> usize {
    unsafe { report.as_ref() }.map_or(0, |r| r.rows.len())
}

/// Unrounded numeric value of `column` in row `row`.
///
/// # Safety
/// `report` must be a live handle, `column` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dcsim_report_value(
    report: *const DcsimReport,
    row: usize,
    column: *const c_char,
    out: *mut f64,
) -> DcsimStatus {
    guard(|| {
        let r = unsafe { report.as_ref() }.ok_or_else(|| null("report"))?;
        let name = unsafe { read_str(column, "column") }?;
        let line = r
            .rows
            .get(row)
            .ok_or_else(|| (DcsimStatus::OutOfRange, format!("row {row} of {}", r.rows.len())))?;
        let v = line
            .num(name)
            .ok_or_else(|| (DcsimStatus::OutOfRange, format!("no numeric column {name:?}")))?;
        unsafe { write_out(out, v, "out") }
    })
}

/// The report as CSV. Release `*out` with [`dcsim_string_free`].
///
/// # Safety
/// `report` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dcsim_report_csv(report: *const DcsimReport, out: *mut *mut c_char) -> DcsimStatus {
    guard(|| {
        let r = unsafe { report.as_ref() }.ok_or_else(|| null("report"))?;
        let mut buf = Vec::new();
        runner::write_csv(&r.rows, &mut buf).map_err(from_scenario)?;
        let s = CString::new(buf).map_err(|e| (DcsimStatus::IoError, e.to_string()))?;
        unsafe { write_out(out, s.into_raw(), "out") }
    })
}

/// # Safety
/// `s` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn dcsim_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: produced by CString::into_raw in this library.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Closed-form TSCH handshake duration in seconds over `hops` identical hops.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dcsim_tsch_handshake_duration(
    slotframe: u32,
    cells: u32,
    pdr: f64,
    hops: u32,
    out: *mut f64,
) -> DcsimStatus {
    guard(|| {
        let q = TschLatencyQuery::uniform(slotframe, cells, pdr, hops as usize);
        let v = analytic::tsch_handshake_duration(&q).map_err(from_model)?;
        unsafe { write_out(out, v, "out") }
    })
}

/// Fraction of time all `r` slots are busy with `n` sources at load `rho`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dcsim_engset_time_congestion(n: u32, r: u32, rho: f64, out: *mut f64) -> DcsimStatus {
    guard(|| {
        let v = analytic::engset_time_congestion(EngsetQuery::new(n, r, rho)).map_err(from_model)?;
        unsafe { write_out(out, v, "out") }
    })
}

/// Fraction of arrivals blocked with `n` sources, `r` slots, load `rho`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dcsim_engset_call_congestion(n: u32, r: u32, rho: f64, out: *mut f64) -> DcsimStatus {
    guard(|| {
        let v = analytic::engset_call_congestion(EngsetQuery::new(n, r, rho)).map_err(from_model)?;
        unsafe { write_out(out, v, "out") }
    })
}

/// Beacon interval and CAP length in milliseconds for orders `bo` and `so`.
///
/// # Safety
/// `bi_ms` and `cap_ms` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dcsim_superframe(bo: u8, so: u8, bi_ms: *mut f64, cap_ms: *mut f64) -> DcsimStatus {
    guard(|| {
        if bi_ms.is_null() || cap_ms.is_null() {
            return Err(null("output"));
        }
        let (bi, cap) = superframe_params(bo, so).map_err(from_model)?;
        unsafe {
            write_out(bi_ms, bi.as_secs_f64() * 1e3, "bi_ms")?;
            write_out(cap_ms, cap.as_secs_f64() * 1e3, "cap_ms")
        }
    })
}
