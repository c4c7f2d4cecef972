//! C ABI over `cdl-core`.
//!
//! Objects cross the boundary as opaque heap handles (`CdlGrid`, `CdlField`,
//! `CdlTrajectory`) created by `cdl_*_new` / solver calls and released with
//! the matching `cdl_*_free`. Every fallible call returns a `CdlStatus`; on
//! failure the message is kept per thread and read with
//! `cdl_last_error_message`. Panics never unwind into the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cdl_core::dual::{duality_residual, solve_dual, DualProblem};
use cdl_core::kolmo::{cfl_grid, solve_forward, Forcing, KolmogorovProblem};
use cdl_core::lab;
use cdl_core::torus::{norm, Field, Grid, Norm, Trajectory};
use cdl_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdlStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or a buffer of the wrong size.
    InvalidArgument = 1,
    InvalidGrid = 2,
    GridMismatch = 3,
    InvalidProblem = 4,
    Config = 5,
    /// Blow-up or non-finite values during a solve.
    Numerical = 6,
    Io = 7,
    /// The run completed but at least one check failed.
    CheckFailed = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdlNorm {
    L1 = 0,
    L2 = 1,
    Linf = 2,
    H1 = 3,
    Hminus1 = 4,
}

pub struct CdlGrid(Grid);
pub struct CdlField(Field);
pub struct CdlTrajectory(Trajectory);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> CdlStatus {
    match err {
        Error::InvalidGrid(_) => CdlStatus::InvalidGrid,
        Error::GridMismatch(_) => CdlStatus::GridMismatch,
        Error::Config { .. } | Error::Json(_) => CdlStatus::Config,
        Error::Io(_) | Error::Dump(_) => CdlStatus::Io,
        e if e.is_numerical() => CdlStatus::Numerical,
        _ => CdlStatus::InvalidProblem,
    }
}

fn fail(err: Error) -> CdlStatus {
    set_error(err.to_string());
    status_of(&err)
}

fn invalid(msg: &str) -> CdlStatus {
    set_error(msg);
    CdlStatus::InvalidArgument
}

/// Runs `body`, converting panics to `CdlStatus::Panic`.
fn guarded(body: impl FnOnce() -> CdlStatus) -> CdlStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => {
            if status == CdlStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            status
        }
        Err(_) => {
            set_error("internal panic");
            CdlStatus::Panic
        }
    }
}

unsafe fn out_ptr<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length including the NUL,
/// or 0 when there is no error. Passing a null `buf` only queries the length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cdl_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cdl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn cdl_grid_new(dim: usize, n: usize, t_final: f64, steps: usize, out: *mut *mut CdlGrid) -> CdlStatus {
    guarded(|| {
        if out.is_null() {
            return invalid("null output handle");
        }
        match Grid::new(dim, n, t_final, steps) {
            Ok(g) => {
                out_ptr(out, CdlGrid(g));
                CdlStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Grid with the fewest time steps the CFL bound admits for `mu_sup`.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn cdl_grid_new_cfl(dim: usize, n: usize, t_final: f64, mu_sup: f64, out: *mut *mut CdlGrid) -> CdlStatus {
    guarded(|| {
        if out.is_null() {
            return invalid("null output handle");
        }
        match cfl_grid(dim, n, t_final, mu_sup) {
            Ok(g) => {
                out_ptr(out, CdlGrid(g));
                CdlStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `grid` must be null or a handle from `cdl_grid_new*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cdl_grid_free(grid: *mut CdlGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Number of cells, 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cdl_grid_len(grid: *const CdlGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.len())
}

/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cdl_grid_steps(grid: *const CdlGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.steps())
}

/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cdl_grid_tau(grid: *const CdlGrid) -> f64 {
    grid.as_ref().map_or(f64::NAN, |g| g.0.tau())
}

/// Copies `len` row-major values into a new field; `len` must equal the
/// grid's cell count.
///
/// # Safety
/// `grid` must be a live handle, `values` must point to `len` doubles and
/// `out` to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn cdl_field_new(grid: *const CdlGrid, values: *const f64, len: usize, out: *mut *mut CdlField) -> CdlStatus {
    guarded(|| {
        let (Some(grid), false, false) = (grid.as_ref(), values.is_null(), out.is_null()) else {
            return invalid("null argument");
        };
        let data = std::slice::from_raw_parts(values, len).to_vec();
        match Field::new(grid.0, data) {
            Ok(f) => {
                out_ptr(out, CdlField(f));
                CdlStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `field` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cdl_field_free(field: *mut CdlField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Copies the field values into `out` (`len` must equal the cell count).
///
/// # Safety
/// `field` must be a live handle and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cdl_field_values(field: *const CdlField, out: *mut f64, len: usize) -> CdlStatus {
    guarded(|| {
        let (Some(field), false) = (field.as_ref(), out.is_null()) else {
            return invalid("null argument");
        };
        let v = field.0.values();
        if v.len() != len {
            return invalid("buffer length does not match the grid");
        }
        ptr::copy_nonoverlapping(v.as_ptr(), out, len);
        CdlStatus::Ok
    })
}

/// # Safety
/// `field` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cdl_field_norm(field: *const CdlField, kind: CdlNorm, out: *mut f64) -> CdlStatus {
    guarded(|| {
        let (Some(field), false) = (field.as_ref(), out.is_null()) else {
            return invalid("null argument");
        };
        let kind = match kind {
            CdlNorm::L1 => Norm::L1,
            CdlNorm::L2 => Norm::L2,
            CdlNorm::Linf => Norm::Linf,
            CdlNorm::H1 => Norm::H1,
            CdlNorm::Hminus1 => Norm::Hminus1,
        };
        *out = norm(&field.0, kind);
        CdlStatus::Ok
    })
}

/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cdl_trajectory_free(traj: *mut CdlTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of time levels (steps + 1), 0 for a null handle.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cdl_trajectory_len(traj: *const CdlTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.slices().len())
}

/// Copies time level `k` into `out` (`len` must equal the cell count).
///
/// # Safety
/// `traj` must be a live handle and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cdl_trajectory_slice(traj: *const CdlTrajectory, k: usize, out: *mut f64, len: usize) -> CdlStatus {
    guarded(|| {
        let (Some(traj), false) = (traj.as_ref(), out.is_null()) else {
            return invalid("null argument");
        };
        let Some(slice) = traj.0.slices().get(k) else {
            return invalid("time level out of range");
        };
        if slice.values().len() != len {
            return invalid("buffer length does not match the grid");
        }
        ptr::copy_nonoverlapping(slice.values().as_ptr(), out, len);
        CdlStatus::Ok
    })
}

/// Time-independent field as a trajectory on its own grid.
fn steady(f: &CdlField) -> Trajectory {
    Trajectory::constant(*f.0.grid(), &f.0)
}

fn forward_problem(mu: &CdlField, z0: &CdlField, g: Option<&CdlField>) -> Result<KolmogorovProblem, Error> {
    let source = match g {
        Some(g) => steady(g),
        None => Trajectory::zeros(*mu.0.grid()),
    };
    KolmogorovProblem::new(steady(mu), Forcing::Source(source), z0.0.clone())
}

/// Forward solve of `dz/dt - Lap(mu z) = g` with time-independent `mu` and
/// `g` (`g` may be null for zero). The time grid is the one `mu` was built on.
///
/// # Safety
/// `mu`, `z0` must be live handles, `g` null or live, `out` a handle slot.
#[no_mangle]
pub unsafe extern "C" fn cdl_solve_forward(
    mu: *const CdlField,
    z0: *const CdlField,
    g: *const CdlField,
    out: *mut *mut CdlTrajectory,
) -> CdlStatus {
    guarded(|| {
        let (Some(mu), Some(z0), false) = (mu.as_ref(), z0.as_ref(), out.is_null()) else {
            return invalid("null argument");
        };
        match forward_problem(mu, z0, g.as_ref()).and_then(|p| solve_forward(&p)) {
            Ok(r) => {
                out_ptr(out, CdlTrajectory(r.trajectory));
                CdlStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Backward solve of `dPhi/dt + mu Lap(Phi) = s`, `Phi(T) = 0`.
///
/// # Safety
/// `mu`, `s` must be live handles and `out` a handle slot.
#[no_mangle]
pub unsafe extern "C" fn cdl_solve_dual(mu: *const CdlField, s: *const CdlField, out: *mut *mut CdlTrajectory) -> CdlStatus {
    guarded(|| {
        let (Some(mu), Some(s), false) = (mu.as_ref(), s.as_ref(), out.is_null()) else {
            return invalid("null argument");
        };
        match DualProblem::new(steady(mu), steady(s)).and_then(|p| solve_dual(&p)) {
            Ok(phi) => {
                out_ptr(out, CdlTrajectory(phi));
                CdlStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Relative defect of the discrete duality identity for the forward problem
/// `(mu, z0, g)` and the dual source `s`.
///
/// # Safety
/// `mu`, `z0`, `s` must be live handles, `g` null or live, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cdl_duality_residual(
    mu: *const CdlField,
    z0: *const CdlField,
    g: *const CdlField,
    s: *const CdlField,
    out: *mut f64,
) -> CdlStatus {
    guarded(|| {
        let (Some(mu), Some(z0), Some(s), false) = (mu.as_ref(), z0.as_ref(), s.as_ref(), out.is_null()) else {
            return invalid("null argument");
        };
        let result = forward_problem(mu, z0, g.as_ref()).and_then(|p| {
            let z = solve_forward(&p)?.trajectory;
            duality_residual(&z, &p, &steady(s))
        });
        match result {
            Ok(r) => {
                *out = r;
                CdlStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Runs a JSON run config. On `Ok` or `CheckFailed`, `*manifest_json` holds
/// the run manifest, to be released with `cdl_string_free`.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `manifest_json` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn cdl_run_config(config_json: *const c_char, manifest_json: *mut *mut c_char) -> CdlStatus {
    guarded(|| {
        if config_json.is_null() || manifest_json.is_null() {
            return invalid("null argument");
        }
        *manifest_json = ptr::null_mut();
        let Ok(text) = CStr::from_ptr(config_json).to_str() else {
            return invalid("config is not valid UTF-8");
        };
        let manifest = match lab::parse_config(text).and_then(|c| lab::run(&c)) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        let json = match serde_json::to_string(&manifest) {
            Ok(s) => s,
            Err(e) => return fail(e.into()),
        };
        *manifest_json = CString::new(json).expect("JSON has no interior NUL").into_raw();
        if manifest.passed {
            CdlStatus::Ok
        } else {
            set_error("run completed with failing checks");
            CdlStatus::CheckFailed
        }
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn cdl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
