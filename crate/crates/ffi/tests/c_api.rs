use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use dcsim_ffi::*;

fn last_error() -> String {
    let p = dcsim_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn parse(json: &str) -> Result<*mut DcsimScenario, DcsimStatus> {
    let text = CString::new(json).unwrap();
    let mut handle = ptr::null_mut();
    match unsafe { dcsim_scenario_from_json(text.as_ptr(), &mut handle) } {
        DcsimStatus::Ok => Ok(handle),
        s => Err(s),
    }
}

#[test]
fn run_round_trip() {
    let s = parse(r#"{"mode":"tsch","hops":1,"pdr":1.0,"l":101,"c":1}"#).unwrap();
    assert_eq!(unsafe { dcsim_scenario_set_replications(s, 3) }, DcsimStatus::Ok);
    assert_eq!(unsafe { dcsim_scenario_set_seed(s, 7) }, DcsimStatus::Ok);
    let mut report = ptr::null_mut();
    assert_eq!(unsafe { dcsim_run(s, &mut report) }, DcsimStatus::Ok);
    assert_eq!(unsafe { dcsim_report_rows(report) }, 1);

    let col = CString::new("replications").unwrap();
    let mut v = 0.0;
    assert_eq!(unsafe { dcsim_report_value(report, 0, col.as_ptr(), &mut v) }, DcsimStatus::Ok);
    assert_eq!(v, 3.0);
    let col = CString::new("duration_s").unwrap();
    assert_eq!(unsafe { dcsim_report_value(report, 0, col.as_ptr(), &mut v) }, DcsimStatus::Ok);
    assert!(v > 0.0);

    let mut csv = ptr::null_mut();
    assert_eq!(unsafe { dcsim_report_csv(report, &mut csv) }, DcsimStatus::Ok);
    let text = unsafe { CStr::from_ptr(csv) }.to_str().unwrap().to_owned();
    assert!(text.starts_with("name,mode,hops,pdr"));
    assert_eq!(text.lines().count(), 2);
    unsafe {
        dcsim_string_free(csv);
        dcsim_report_free(report);
        dcsim_scenario_free(s);
    }
}

#[test]
fn lookup_errors() {
    let s = parse(r#"{"mode":"analytic","table":"tsch-single-hop"}"#).unwrap();
    let mut report = ptr::null_mut();
    assert_eq!(unsafe { dcsim_run(s, &mut report) }, DcsimStatus::Ok);
    let rows = unsafe { dcsim_report_rows(report) };
    let col = CString::new("c1_s").unwrap();
    let mut v = 0.0;
    assert_eq!(unsafe { dcsim_report_value(report, rows, col.as_ptr(), &mut v) }, DcsimStatus::OutOfRange);
    let bogus = CString::new("nope").unwrap();
    assert_eq!(unsafe { dcsim_report_value(report, 0, bogus.as_ptr(), &mut v) }, DcsimStatus::OutOfRange);
    assert!(last_error().contains("nope"));
    assert_eq!(unsafe { dcsim_report_value(report, 0, col.as_ptr(), &mut v) }, DcsimStatus::Ok);
    assert!(dcsim_last_error().is_null());
    unsafe {
        dcsim_report_free(report);
        dcsim_scenario_free(s);
    }
}

#[test]
fn parse_failures_map_to_status() {
    assert_eq!(parse("{not json").unwrap_err(), DcsimStatus::ParseError);
    assert!(!last_error().is_empty());
    assert_eq!(parse(r#"{"mode":"preamble","bo":4}"#).unwrap_err(), DcsimStatus::InvalidConfig);
    assert!(last_error().contains("bo"));
    assert_eq!(parse(r#"{"mode":"preamble","replications":0}"#).unwrap_err(), DcsimStatus::InvalidConfig);

    let bad = [0x7b_u8, 0xff, 0x7d, 0];
    let mut handle = ptr::null_mut();
    let status = unsafe { dcsim_scenario_from_json(bad.as_ptr().cast(), &mut handle) };
    assert_eq!(status, DcsimStatus::InvalidUtf8);
    assert!(handle.is_null());
}

#[test]
fn null_pointers_are_rejected() {
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { dcsim_scenario_from_json(ptr::null(), &mut handle) }, DcsimStatus::NullPointer);
    let json = CString::new(r#"{"mode":"preamble"}"#).unwrap();
    assert_eq!(unsafe { dcsim_scenario_from_json(json.as_ptr(), ptr::null_mut()) }, DcsimStatus::NullPointer);
    assert_eq!(unsafe { dcsim_scenario_set_seed(ptr::null_mut(), 1) }, DcsimStatus::NullPointer);
    assert_eq!(unsafe { dcsim_run(ptr::null(), &mut ptr::null_mut()) }, DcsimStatus::NullPointer);
    assert_eq!(unsafe { dcsim_report_rows(ptr::null()) }, 0);
    assert_eq!(unsafe { dcsim_tsch_handshake_duration(101, 1, 1.0, 1, ptr::null_mut()) }, DcsimStatus::NullPointer);
    let mut bi = 0.0;
    assert_eq!(unsafe { dcsim_superframe(6, 2, &mut bi, ptr::null_mut()) }, DcsimStatus::NullPointer);
    unsafe {
        dcsim_scenario_free(ptr::null_mut());
        dcsim_report_free(ptr::null_mut());
        dcsim_string_free(ptr::null_mut());
    }
    let s = parse(r#"{"mode":"preamble"}"#).unwrap();
    assert_eq!(unsafe { dcsim_scenario_set_replications(s, 0) }, DcsimStatus::OutOfRange);
    unsafe { dcsim_scenario_free(s) };
}

#[test]
fn closed_forms() {
    let mut v = 0.0;
    assert_eq!(unsafe { dcsim_tsch_handshake_duration(101, 1, 1.0, 1, &mut v) }, DcsimStatus::Ok);
    // Ten frames, each waiting 1 + L/(C+1) slots of 10 ms.
    assert!((v - 10.0 * (1.0 + 101.0 / 2.0) * 0.01).abs() < 1e-9, "{v}");
    assert_eq!(unsafe { dcsim_tsch_handshake_duration(101, 1, 0.0, 1, &mut v) }, DcsimStatus::ModelError);

    let (mut t, mut c) = (0.0, 0.0);
    assert_eq!(unsafe { dcsim_engset_time_congestion(5, 3, 0.5, &mut t) }, DcsimStatus::Ok);
    assert_eq!(unsafe { dcsim_engset_call_congestion(5, 3, 0.5, &mut c) }, DcsimStatus::Ok);
    assert!(c < t && c > 0.0);

    let (mut bi, mut cap) = (0.0, 0.0);
    assert_eq!(unsafe { dcsim_superframe(6, 2, &mut bi, &mut cap) }, DcsimStatus::Ok);
    assert!((bi - 983.04).abs() < 1e-9);
    assert!((cap - 61.44).abs() < 1e-9);
    assert_eq!(unsafe { dcsim_superframe(2, 6, &mut bi, &mut cap) }, DcsimStatus::ModelError);
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(dcsim_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/dcsim.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["dcsim_scenario_from_json", "dcsim_run", "dcsim_superframe", "DCSIM_STATUS_PANIC"] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"dcsim.h\"\nint main(void) { double bi, cap; return dcsim_superframe(6, 2, &bi, &cap) != DCSIM_STATUS_OK; }\n",
    )
    .unwrap();
    let status = match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
    {
        Ok(s) => s,
        Err(_) => return eprintln!("no C compiler; skipping"),
    };
    assert!(status.success());
}
