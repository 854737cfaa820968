//! C ABI for the maslov library.
//!
//! Analyses run from a TOML configuration (string or file); results come
//! back as an opaque report handle exposing the structured JSON and the
//! text rendering. Status codes mirror the CLI exit statuses: 0 ok,
//! 2 configuration error, 3 invariant violation, 4 resolution failure,
//! 1 other. The header `include/maslov.h` is maintained by hand and kept
//! in sync by the crate's tests.
//!
//! Ownership: every successfully returned report must be released with
//! `maslov_report_free`. Returned strings are owned by the report (or by
//! thread-local storage for `maslov_last_error`) and must not be freed by
//! the caller.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};

use maslov::config::{ReportFormat, RunConfig};
use maslov::report::{emit_report, run};

/// Status codes shared with the CLI.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum MaslovStatus {
    Ok = 0,
    Error = 1,
    ConfigError = 2,
    InvariantViolation = 3,
    ResolutionFailure = 4,
}

/// Opaque result of one run.
pub struct MaslovReport {
    json: CString,
    text: CString,
    identities_hold: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &maslov::Error) -> MaslovStatus {
    match err.status_class() {
        2 => MaslovStatus::ConfigError,
        3 => MaslovStatus::InvariantViolation,
        4 => MaslovStatus::ResolutionFailure,
        _ => MaslovStatus::Error,
    }
}

fn run_config_text(text: &str, out_report: *mut *mut MaslovReport) -> MaslovStatus {
    let config = match RunConfig::from_toml(text) {
        Ok(c) => c,
        Err(e) => {
            set_last_error(&e.to_string());
            return status_of(&e);
        }
    };
    let report = match run(&config) {
        Ok(r) => r,
        Err(e) => {
            set_last_error(&e.to_string());
            return status_of(&e);
        }
    };
    let json = match emit_report(&report, ReportFormat::Structured) {
        Ok(j) => j,
        Err(e) => {
            set_last_error(&e.to_string());
            return MaslovStatus::Error;
        }
    };
    let text_render = match emit_report(&report, ReportFormat::Text) {
        Ok(t) => t,
        Err(e) => {
            set_last_error(&e.to_string());
            return MaslovStatus::Error;
        }
    };
    let boxed = Box::new(MaslovReport {
        json: CString::new(json).unwrap_or_default(),
        text: CString::new(text_render).unwrap_or_default(),
        identities_hold: report.all_identities_hold(),
    });
    unsafe {
        *out_report = Box::into_raw(boxed);
    }
    if unsafe { (*(*out_report)).identities_hold } {
        MaslovStatus::Ok
    } else {
        set_last_error("check 'index-identity' failed: a computed identity residual is nonzero");
        MaslovStatus::InvariantViolation
    }
}

/// Runs the analyses described by a TOML configuration string.
///
/// On success (status 0 or 3) `*out_report` receives an owned handle; on
/// other statuses it is left untouched. Status 3 means the run completed
/// but an identity check failed; the report is still available.
///
/// # Safety
/// `config_toml` must be a valid NUL-terminated string and `out_report` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn maslov_run_toml(
    config_toml: *const c_char,
    out_report: *mut *mut MaslovReport,
) -> MaslovStatus {
    if config_toml.is_null() || out_report.is_null() {
        set_last_error("null argument");
        return MaslovStatus::ConfigError;
    }
    let text = match CStr::from_ptr(config_toml).to_str() {
        Ok(t) => t,
        Err(_) => {
            set_last_error("configuration is not valid UTF-8");
            return MaslovStatus::ConfigError;
        }
    };
    run_config_text(text, out_report)
}

/// Runs the analyses described by a TOML configuration file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out_report` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn maslov_run_file(
    path: *const c_char,
    out_report: *mut *mut MaslovReport,
) -> MaslovStatus {
    if path.is_null() || out_report.is_null() {
        set_last_error("null argument");
        return MaslovStatus::ConfigError;
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(p) => p,
        Err(_) => {
            set_last_error("path is not valid UTF-8");
            return MaslovStatus::ConfigError;
        }
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            set_last_error(&format!("cannot read {path}: {e}"));
            return MaslovStatus::ConfigError;
        }
    };
    run_config_text(&text, out_report)
}

/// Structured JSON rendering; owned by the report.
///
/// # Safety
/// `report` must be a live handle from a run call.
#[no_mangle]
pub unsafe extern "C" fn maslov_report_json(report: *const MaslovReport) -> *const c_char {
    if report.is_null() {
        return std::ptr::null();
    }
    (*report).json.as_ptr()
}

/// Text rendering; owned by the report.
///
/// # Safety
/// `report` must be a live handle from a run call.
#[no_mangle]
pub unsafe extern "C" fn maslov_report_text(report: *const MaslovReport) -> *const c_char {
    if report.is_null() {
        return std::ptr::null();
    }
    (*report).text.as_ptr()
}

/// 1 when every computed identity held, 0 otherwise.
///
/// # Safety
/// `report` must be a live handle from a run call.
#[no_mangle]
pub unsafe extern "C" fn maslov_report_identities_hold(report: *const MaslovReport) -> c_int {
    if report.is_null() {
        return 0;
    }
    (*report).identities_hold as c_int
}

/// Releases a report handle.
///
/// # Safety
/// `report` must be a live handle or null; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn maslov_report_free(report: *mut MaslovReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Message of the most recent error on this thread; owned by the library.
#[no_mangle]
pub extern "C" fn maslov_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version string.
#[no_mangle]
pub extern "C" fn maslov_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(text: &str) -> (MaslovStatus, *mut MaslovReport) {
        let c = CString::new(text).unwrap();
        let mut out: *mut MaslovReport = std::ptr::null_mut();
        let status = unsafe { maslov_run_toml(c.as_ptr(), &mut out) };
        (status, out)
    }

    #[test]
    fn runs_a_config_and_exposes_json() {
        let (status, report) = run_str(
            r#"
            [system.builtin]
            name = "constant_curvature"
            interval = [0.0, 4.71238898038469]
            metric = [1.0]
            curvature = 1.0

            [outputs]
            requested = ["index-theorem"]
            "#,
        );
        assert!(matches!(status, MaslovStatus::Ok));
        assert!(!report.is_null());
        let json = unsafe { CStr::from_ptr(maslov_report_json(report)) }.to_str().unwrap();
        assert!(json.contains("\"maslov\": 1"));
        assert_eq!(unsafe { maslov_report_identities_hold(report) }, 1);
        let text = unsafe { CStr::from_ptr(maslov_report_text(report)) }.to_str().unwrap();
        assert!(text.contains("maslov"));
        unsafe { maslov_report_free(report) };
    }

    #[test]
    fn config_errors_set_the_thread_message() {
        let (status, _report) = run_str("not toml at all [");
        assert!(matches!(status, MaslovStatus::ConfigError));
        let msg = unsafe { CStr::from_ptr(maslov_last_error()) }.to_str().unwrap();
        assert!(msg.contains("parse"), "{msg}");
    }

    #[test]
    fn null_arguments_are_rejected() {
        let mut out: *mut MaslovReport = std::ptr::null_mut();
        let status = unsafe { maslov_run_toml(std::ptr::null(), &mut out) };
        assert!(matches!(status, MaslovStatus::ConfigError));
        assert!(out.is_null());
    }

    #[test]
    fn header_stays_in_sync_with_the_exports() {
        let header = include_str!("../include/maslov.h");
        for symbol in [
            "maslov_run_toml",
            "maslov_run_file",
            "maslov_report_json",
            "maslov_report_text",
            "maslov_report_identities_hold",
            "maslov_report_free",
            "maslov_last_error",
            "maslov_version",
        ] {
            assert!(header.contains(symbol), "header misses {symbol}");
        }
        for status in ["MASLOV_OK", "MASLOV_ERROR", "MASLOV_CONFIG_ERROR",
                       "MASLOV_INVARIANT_VIOLATION", "MASLOV_RESOLUTION_FAILURE"] {
            assert!(header.contains(status), "header misses {status}");
        }
    }
}
