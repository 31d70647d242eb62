//! C ABI over the experiment runner.
//!
//! Every function returns a [`BecpStatus`]; on anything other than
//! `BECP_STATUS_OK` a message is available from [`becp_last_error`] on the
//! same thread. Handles are opaque and owned by the caller until passed to
//! [`becp_experiment_free`]. Strings handed out by the library must be
//! released with [`becp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use becp::experiment::{self, ExperimentSpec, Outcome, Settings};
use becp::report;
use becp::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BecpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Io = 4,
    NotRun = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// Opaque experiment handle: a resolved configuration and, once run, its
/// outcome.
pub struct BecpExperiment {
    spec: ExperimentSpec,
    outcome: Option<Outcome>,
}

/// Seed-averaged results of one configuration. Values that do not apply
/// are NaN.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct BecpSummary {
    pub n_nodes: usize,
    pub trials: usize,
    pub failed_trials: usize,
    pub p_block: f64,
    pub blocks_confirmed: f64,
    pub throughput_bps: f64,
    pub avg_latency_s: f64,
    pub messages_sent: f64,
    pub fork_calls_per_block_per_node: f64,
    pub pass: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: BecpStatus, msg: impl Into<String>) -> BecpStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> BecpStatus {
    let status = match e {
        Error::Io(_) | Error::Csv(_) => BecpStatus::Io,
        _ => BecpStatus::Config,
    };
    fail(status, e.to_string())
}

/// Runs `f`, turning a panic into `BECP_STATUS_PANIC`.
fn guard(f: impl FnOnce() -> BecpStatus) -> BecpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(BecpStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, BecpStatus> {
    if s.is_null() {
        return Err(fail(BecpStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(BecpStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a>(h: *const BecpExperiment) -> Result<&'a BecpExperiment, BecpStatus> {
    h.as_ref()
        .ok_or_else(|| fail(BecpStatus::NullPointer, "experiment handle is null"))
}

fn outcome(h: &BecpExperiment) -> Result<&Outcome, BecpStatus> {
    h.outcome
        .as_ref()
        .ok_or_else(|| fail(BecpStatus::NotRun, "experiment has not been run"))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Last error message on this thread, or null. Valid until the next call
/// into the library on this thread.
#[no_mangle]
pub extern "C" fn becp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn becp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a TOML configuration (the same keys the CLI accepts) and
/// resolves it. `allow_unsafe` lifts the Pareto shape range check.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn becp_experiment_new(
    config_toml: *const c_char,
    allow_unsafe: bool,
    out: *mut *mut BecpExperiment,
) -> BecpStatus {
    guard(|| {
        if out.is_null() {
            return fail(BecpStatus::NullPointer, "out is null");
        }
        let text = tri!(read_str(config_toml, "config"));
        let spec = match Settings::from_toml(text).and_then(|s| s.resolve(allow_unsafe)) {
            Ok(s) => s,
            Err(e) => return from_error(e),
        };
        *out = Box::into_raw(Box::new(BecpExperiment {
            spec,
            outcome: None,
        }));
        BecpStatus::Ok
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `h` must come from [`becp_experiment_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn becp_experiment_free(h: *mut BecpExperiment) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Runs every configuration and trial. Blocks until done.
///
/// # Safety
/// `h` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn becp_experiment_run(h: *mut BecpExperiment) -> BecpStatus {
    guard(|| {
        let Some(h) = h.as_mut() else {
            return fail(BecpStatus::NullPointer, "experiment handle is null");
        };
        match experiment::run(&h.spec, false) {
            Ok(o) => {
                h.outcome = Some(o);
                BecpStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of configurations (sweep points) in the experiment.
///
/// # Safety
/// `h` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn becp_experiment_config_count(
    h: *const BecpExperiment,
    out: *mut usize,
) -> BecpStatus {
    guard(|| {
        let h = tri!(handle(h));
        if out.is_null() {
            return fail(BecpStatus::NullPointer, "out is null");
        }
        *out = h.spec.configs().len();
        BecpStatus::Ok
    })
}

/// Aggregate results of configuration `index`.
///
/// # Safety
/// `h` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn becp_experiment_summary(
    h: *const BecpExperiment,
    index: usize,
    out: *mut BecpSummary,
) -> BecpStatus {
    guard(|| {
        let o = tri!(outcome(tri!(handle(h))));
        if out.is_null() {
            return fail(BecpStatus::NullPointer, "out is null");
        }
        let Some(c) = o.configs.get(index) else {
            return fail(
                BecpStatus::OutOfRange,
                format!("index {index} of {}", o.configs.len()),
            );
        };
        let a = &c.aggregate;
        *out = BecpSummary {
            n_nodes: a.n_nodes,
            trials: a.verdict.trials,
            failed_trials: a.verdict.failed,
            p_block: a.p_block,
            blocks_confirmed: a.blocks_confirmed,
            throughput_bps: a.throughput_bps,
            avg_latency_s: a.avg_latency_s.unwrap_or(f64::NAN),
            messages_sent: a.messages_sent,
            fork_calls_per_block_per_node: a.fork_calls_per_block_per_node.unwrap_or(f64::NAN),
            pass: a.verdict.pass(),
        };
        BecpStatus::Ok
    })
}

/// Whether every trial of every configuration passed the ledger check.
///
/// # Safety
/// `h` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn becp_experiment_passed(
    h: *const BecpExperiment,
    out: *mut bool,
) -> BecpStatus {
    guard(|| {
        let o = tri!(outcome(tri!(handle(h))));
        if out.is_null() {
            return fail(BecpStatus::NullPointer, "out is null");
        }
        *out = o.pass();
        BecpStatus::Ok
    })
}

/// Results as CSV text, header included. Free with [`becp_string_free`].
///
/// # Safety
/// `h` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn becp_experiment_csv(
    h: *const BecpExperiment,
    out: *mut *mut c_char,
) -> BecpStatus {
    guard(|| {
        let o = tri!(outcome(tri!(handle(h))));
        if out.is_null() {
            return fail(BecpStatus::NullPointer, "out is null");
        }
        let mut buf = Vec::new();
        if let Err(e) = report::write_csv(&mut buf, &o.rows()) {
            return from_error(e);
        }
        match CString::new(buf) {
            Ok(s) => {
                *out = s.into_raw();
                BecpStatus::Ok
            }
            Err(_) => fail(BecpStatus::Io, "csv contains a NUL byte"),
        }
    })
}

/// Writes results.csv, summary.txt and ledgers.txt under `dir`, or under
/// the configured output directory when `dir` is null.
///
/// # Safety
/// `h` must be a live handle; `dir` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn becp_experiment_write(
    h: *const BecpExperiment,
    dir: *const c_char,
) -> BecpStatus {
    guard(|| {
        let h = tri!(handle(h));
        let o = tri!(outcome(h));
        let dir = if dir.is_null() {
            h.spec.out_dir.clone()
        } else {
            Path::new(tri!(read_str(dir, "dir"))).to_path_buf()
        };
        match experiment::write_outputs(o, &dir) {
            Ok(()) => BecpStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// Frees a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn becp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
