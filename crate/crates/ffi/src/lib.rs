//! C interface to the solver.
//!
//! Objects cross the boundary as opaque pointers created by `*_new`/`*_from_*`
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`BvcStatus`]; the message of the most recent failure on the
//! calling thread is available from [`bvc_last_error`]. Panics are caught at
//! the boundary and reported as [`BvcStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use bvcontrol::certificate;
use bvcontrol::cli::{self, CliError};
use bvcontrol::config::{ConfigError, RunConfig};
use bvcontrol::objective::{self, ProblemSpec};
use bvcontrol::solver::SolveReport;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BvcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    /// The homotopy stopped before its last stage; partial results exist.
    Nonconverged = 4,
    Solver = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A parsed run configuration.
pub struct BvcConfig {
    inner: RunConfig,
}

/// A finished solve together with the problem it solved.
pub struct BvcSolution {
    spec: ProblemSpec,
    report: SolveReport,
}

/// First-order certificate summary.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BvcCertificate {
    pub residual: f64,
    pub residual_relative: f64,
    pub dual_overshoot: f64,
    pub pairing_gap: f64,
    pub saturation_fraction: f64,
    pub theta: f64,
}

/// Final objective values of a solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BvcObjective {
    pub j: f64,
    pub f: f64,
    pub tv: f64,
    pub final_eps: f64,
    pub final_delta: f64,
    pub stages: usize,
    pub converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: BvcStatus, msg: impl Into<String>) -> BvcStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> BvcStatus) -> BvcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(BvcStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, BvcStatus> {
    if p.is_null() {
        return Err(fail(BvcStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(BvcStatus::InvalidArgument, "string argument is not UTF-8"))
}

fn config_status(e: &ConfigError) -> BvcStatus {
    match e {
        ConfigError::File { .. } => BvcStatus::Io,
        _ => BvcStatus::Config,
    }
}

fn cli_status(e: &CliError) -> BvcStatus {
    match e {
        CliError::Config(c) => config_status(c),
        CliError::Io(_) | CliError::OutputDir { .. } => BvcStatus::Io,
        CliError::Solver(_) => BvcStatus::Solver,
        _ => BvcStatus::InvalidArgument,
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn bvc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static, NUL-terminated version string.
#[no_mangle]
pub extern "C" fn bvc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads a configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bvc_config_from_file(path: *const c_char, out: *mut *mut BvcConfig) -> BvcStatus {
    guard(|| {
        if out.is_null() {
            return fail(BvcStatus::NullPointer, "null output pointer");
        }
        let path = match c_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match RunConfig::from_file(path.as_ref()) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(BvcConfig { inner: c }));
                BvcStatus::Ok
            }
            Err(e) => fail(config_status(&e), e.to_string()),
        }
    })
}

/// Parses configuration text. Relative target file paths resolve against
/// the working directory.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bvc_config_from_str(text: *const c_char, out: *mut *mut BvcConfig) -> BvcStatus {
    guard(|| {
        if out.is_null() {
            return fail(BvcStatus::NullPointer, "null output pointer");
        }
        let text = match c_str(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match RunConfig::parse_str("<string>", text) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(BvcConfig { inner: c }));
                BvcStatus::Ok
            }
            Err(e) => fail(config_status(&e), e.to_string()),
        }
    })
}

/// Overrides the RNG seed.
///
/// # Safety
/// `cfg` must come from this library and not be freed.
#[no_mangle]
pub unsafe extern "C" fn bvc_config_set_seed(cfg: *mut BvcConfig, seed: u64) -> BvcStatus {
    guard(|| match cfg.as_mut() {
        Some(c) => {
            c.inner.seed = seed;
            BvcStatus::Ok
        }
        None => fail(BvcStatus::NullPointer, "null config"),
    })
}

/// Overrides the output directory used by [`bvc_run`].
///
/// # Safety
/// `cfg` must come from this library; `dir` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bvc_config_set_out(cfg: *mut BvcConfig, dir: *const c_char) -> BvcStatus {
    guard(|| {
        let Some(c) = cfg.as_mut() else {
            return fail(BvcStatus::NullPointer, "null config");
        };
        match c_str(dir) {
            Ok(d) => {
                c.inner.out = PathBuf::from(d);
                BvcStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// # Safety
/// `cfg` must be null or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn bvc_config_free(cfg: *mut BvcConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the configured mode and writes its files, like the command line.
///
/// # Safety
/// `cfg` must come from this library and not be freed.
#[no_mangle]
pub unsafe extern "C" fn bvc_run(cfg: *const BvcConfig) -> BvcStatus {
    guard(|| {
        let Some(c) = cfg.as_ref() else {
            return fail(BvcStatus::NullPointer, "null config");
        };
        match cli::run(&c.inner) {
            Ok(o) if o.converged => BvcStatus::Ok,
            Ok(_) => fail(BvcStatus::Nonconverged, "homotopy did not converge"),
            Err(e) => fail(cli_status(&e), e.to_string()),
        }
    })
}

/// Solves the configured problem in memory. On [`BvcStatus::Nonconverged`]
/// `out` still receives the partial solution.
///
/// # Safety
/// `cfg` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bvc_solve(cfg: *const BvcConfig, out: *mut *mut BvcSolution) -> BvcStatus {
    guard(|| {
        let Some(c) = cfg.as_ref() else {
            return fail(BvcStatus::NullPointer, "null config");
        };
        if out.is_null() {
            return fail(BvcStatus::NullPointer, "null output pointer");
        }
        let spec = match c.inner.problem() {
            Ok(s) => s,
            Err(e) => return fail(config_status(&e), e.to_string()),
        };
        let report = match cli::solve(&c.inner, &spec) {
            Ok(r) => r,
            Err(e) => return fail(cli_status(&e), e.to_string()),
        };
        let converged = report.converged;
        *out = Box::into_raw(Box::new(BvcSolution { spec, report }));
        if converged {
            BvcStatus::Ok
        } else {
            fail(BvcStatus::Nonconverged, "homotopy did not converge")
        }
    })
}

/// # Safety
/// `sol` must be null or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn bvc_solution_free(sol: *mut BvcSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Number of control cells, i.e. the length [`bvc_solution_control`] needs.
///
/// # Safety
/// `sol` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn bvc_solution_len(sol: *const BvcSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.report.u.values.len())
}

/// Control cells along x, then along y.
///
/// # Safety
/// `sol` must come from this library; `nx` and `ny` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bvc_solution_shape(sol: *const BvcSolution, nx: *mut usize, ny: *mut usize) -> BvcStatus {
    guard(|| {
        let Some(s) = sol.as_ref() else {
            return fail(BvcStatus::NullPointer, "null solution");
        };
        if nx.is_null() || ny.is_null() {
            return fail(BvcStatus::NullPointer, "null output pointer");
        }
        (*nx, *ny) = s.spec.grid.omega_shape();
        BvcStatus::Ok
    })
}

/// Copies the control, x fastest, into `buf[0..len]`.
///
/// # Safety
/// `sol` must come from this library; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bvc_solution_control(sol: *const BvcSolution, buf: *mut f64, len: usize) -> BvcStatus {
    guard(|| {
        let Some(s) = sol.as_ref() else {
            return fail(BvcStatus::NullPointer, "null solution");
        };
        if buf.is_null() {
            return fail(BvcStatus::NullPointer, "null buffer");
        }
        let u = &s.report.u.values;
        if len < u.len() {
            return fail(BvcStatus::BufferTooSmall, format!("buffer holds {len}, control has {}", u.len()));
        }
        ptr::copy_nonoverlapping(u.as_ptr(), buf, u.len());
        BvcStatus::Ok
    })
}

/// # Safety
/// `sol` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bvc_solution_objective(sol: *const BvcSolution, out: *mut BvcObjective) -> BvcStatus {
    guard(|| {
        let Some(s) = sol.as_ref() else {
            return fail(BvcStatus::NullPointer, "null solution");
        };
        if out.is_null() {
            return fail(BvcStatus::NullPointer, "null output pointer");
        }
        let j = match objective::eval_j(&s.spec, &s.report.u) {
            Ok(j) => j,
            Err(e) => return fail(BvcStatus::InvalidArgument, e.to_string()),
        };
        let last = s.report.last();
        *out = BvcObjective {
            j,
            f: last.map_or(f64::NAN, |l| l.f),
            tv: objective::eval_tv(&s.spec.grid, &s.report.u, s.spec.norm),
            final_eps: s.report.final_eps(),
            final_delta: s.report.final_delta(),
            stages: s.report.stages.len(),
            converged: s.report.converged,
        };
        BvcStatus::Ok
    })
}

/// First-order certificate of the solution; `theta <= 0` selects the
/// default activity threshold.
///
/// # Safety
/// `sol` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bvc_solution_certificate(
    sol: *const BvcSolution,
    theta: f64,
    out: *mut BvcCertificate,
) -> BvcStatus {
    guard(|| {
        let Some(s) = sol.as_ref() else {
            return fail(BvcStatus::NullPointer, "null solution");
        };
        if out.is_null() {
            return fail(BvcStatus::NullPointer, "null output pointer");
        }
        match certificate::check_first_order(&s.spec, &s.report.u, &s.report.lambda, theta, 0.0) {
            Ok(c) => {
                *out = BvcCertificate {
                    residual: c.residual,
                    residual_relative: c.residual_relative,
                    dual_overshoot: c.dual_overshoot,
                    pairing_gap: c.pairing_gap,
                    saturation_fraction: c.saturation_fraction,
                    theta: c.theta,
                };
                BvcStatus::Ok
            }
            Err(e) => fail(BvcStatus::InvalidArgument, e.to_string()),
        }
    })
}
