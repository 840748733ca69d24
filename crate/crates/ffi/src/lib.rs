//! C ABI over the evomax core.
//!
//! Every fallible function returns an [`EvomaxStatus`]; on failure the
//! message is available from [`evomax_last_error_message`] on the same
//! thread. Handles are opaque and must be released with their `_free`
//! function. Strings returned by the library are released with
//! [`evomax_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use evomax::block::{assemble_block, verify_annihilation, wave_identity_residual};
use evomax::cli::checks::identity_suite;
use evomax::cli::report::IdentityReport;
use evomax::{Backend, BlockOp, BlockTag, ComplexOps, Error, GridSpec};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvomaxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Numerical = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvomaxBackend {
    Periodic = 0,
    BoundedStaggered = 1,
}

/// Block operators that can be assembled from a grid.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvomaxOperatorKind {
    ADac = 0,
    ANac = 1,
    AMax = 2,
    Aac = 3,
    Extended = 4,
    Gem = 5,
    Dirac = 6,
}

/// Opaque grid handle.
pub struct EvomaxGrid {
    grid: GridSpec,
    ops: ComplexOps,
}

/// Opaque block-operator handle.
pub struct EvomaxOperator {
    op: BlockOp,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> EvomaxStatus {
    match e {
        Error::DimensionMismatch { .. } | Error::LayoutMismatch { .. } => EvomaxStatus::DimensionMismatch,
        Error::NotSymmetric { .. }
        | Error::NotPositiveDefinite { .. }
        | Error::SelfAdjointnessViolated { .. }
        | Error::CoercivityViolated { .. }
        | Error::SchurViolated { .. }
        | Error::SingularStep(_)
        | Error::SolverBreakdown { .. }
        | Error::PicardDiverged { .. }
        | Error::CausalityViolated { .. }
        | Error::Identity(_) => EvomaxStatus::Numerical,
        _ => EvomaxStatus::InvalidArgument,
    }
}

struct Fail(EvomaxStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(EvomaxStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn ffi_call(f: impl FnOnce() -> Result<(), Fail>) -> EvomaxStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EvomaxStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            EvomaxStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn evomax_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn evomax_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a grid with `nx * ny * nz` cells of side `h`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn evomax_grid_new(
    backend: EvomaxBackend,
    nx: usize,
    ny: usize,
    nz: usize,
    h: f64,
    out: *mut *mut EvomaxGrid,
) -> EvomaxStatus {
    ffi_call(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let b = match backend {
            EvomaxBackend::Periodic => Backend::Periodic,
            EvomaxBackend::BoundedStaggered => Backend::BoundedStaggered,
        };
        let grid = GridSpec::new(b, [nx, ny, nz], h)?;
        let ops = ComplexOps::build(&grid)?;
        *out = Box::into_raw(Box::new(EvomaxGrid { grid, ops }));
        Ok(())
    })
}

/// Releases a grid. Null is ignored.
///
/// # Safety
/// `grid` must come from [`evomax_grid_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn evomax_grid_free(grid: *mut EvomaxGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Max-norm residuals of `curl_int grad_int`, `div_int curl_int`,
/// `curl grad` and `div curl`, written to `out[0..4]`.
///
/// # Safety
/// `grid` must be a live handle and `out` must point to 4 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn evomax_grid_exact_sequence_residuals(grid: *const EvomaxGrid, out: *mut f64) -> EvomaxStatus {
    ffi_call(|| {
        let g = as_ref(grid, "grid")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = g.ops.exact_sequence_residuals()?;
        std::slice::from_raw_parts_mut(out, 4).copy_from_slice(&r);
        Ok(())
    })
}

/// Max-norm residual of the wave identity on a periodic grid.
///
/// # Safety
/// `grid` must be a live handle and `out` a writable double.
#[no_mangle]
pub unsafe extern "C" fn evomax_grid_wave_residual(grid: *const EvomaxGrid, out: *mut f64) -> EvomaxStatus {
    ffi_call(|| {
        let g = as_ref(grid, "grid")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = wave_identity_residual(&g.grid)?;
        Ok(())
    })
}

/// Assembles a block operator on `grid`.
///
/// # Safety
/// `grid` must be a live handle and `out` writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn evomax_operator_assemble(
    grid: *const EvomaxGrid,
    kind: EvomaxOperatorKind,
    out: *mut *mut EvomaxOperator,
) -> EvomaxStatus {
    ffi_call(|| {
        let g = as_ref(grid, "grid")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let tag = match kind {
            EvomaxOperatorKind::ADac => BlockTag::ADac,
            EvomaxOperatorKind::ANac => BlockTag::ANac,
            EvomaxOperatorKind::AMax => BlockTag::AMax,
            EvomaxOperatorKind::Aac => BlockTag::Aac,
            EvomaxOperatorKind::Extended => BlockTag::Extended,
            EvomaxOperatorKind::Gem => BlockTag::Gem,
            EvomaxOperatorKind::Dirac => BlockTag::Dirac,
        };
        let op = assemble_block(tag, &g.ops)?;
        *out = Box::into_raw(Box::new(EvomaxOperator { op }));
        Ok(())
    })
}

/// Releases an operator. Null is ignored.
///
/// # Safety
/// `op` must come from [`evomax_operator_assemble`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn evomax_operator_free(op: *mut EvomaxOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// Total number of unknowns the operator acts on.
///
/// # Safety
/// `op` must be a live handle and `out` a writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn evomax_operator_dim(op: *const EvomaxOperator, out: *mut usize) -> EvomaxStatus {
    ffi_call(|| {
        let o = as_ref(op, "op")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = o.op.dim();
        Ok(())
    })
}

/// `y = A x`; both lengths must equal the operator dimension.
///
/// # Safety
/// `x` must point to `x_len` readable doubles and `y` to `y_len` writable ones.
#[no_mangle]
pub unsafe extern "C" fn evomax_operator_apply(
    op: *const EvomaxOperator,
    x: *const f64,
    x_len: usize,
    y: *mut f64,
    y_len: usize,
) -> EvomaxStatus {
    ffi_call(|| {
        let o = as_ref(op, "op")?;
        if x.is_null() {
            return Err(null("x"));
        }
        if y.is_null() {
            return Err(null("y"));
        }
        let n = o.op.dim();
        if x_len != n || y_len != n {
            return Err(Fail(
                EvomaxStatus::DimensionMismatch,
                format!("operator has dimension {n}, got x_len {x_len}, y_len {y_len}"),
            ));
        }
        let r = o.op.apply(std::slice::from_raw_parts(x, x_len))?;
        std::slice::from_raw_parts_mut(y, y_len).copy_from_slice(&r);
        Ok(())
    })
}

/// Max-norm of `A + A^T`.
///
/// # Safety
/// `op` must be a live handle and `out` a writable double.
#[no_mangle]
pub unsafe extern "C" fn evomax_operator_skew_defect(op: *const EvomaxOperator, out: *mut f64) -> EvomaxStatus {
    ffi_call(|| {
        let o = as_ref(op, "op")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = o.op.skew_defect();
        Ok(())
    })
}

/// Max-norm of the product `A B` of two operators on the same layout.
///
/// # Safety
/// `a`, `b` must be live handles and `out` a writable double.
#[no_mangle]
pub unsafe extern "C" fn evomax_operator_annihilation(
    a: *const EvomaxOperator,
    b: *const EvomaxOperator,
    out: *mut f64,
) -> EvomaxStatus {
    ffi_call(|| {
        let a = as_ref(a, "a")?;
        let b = as_ref(b, "b")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = verify_annihilation(&a.op, &b.op)?;
        Ok(())
    })
}

/// Runs the identity suite and returns its JSON report in `json_out`
/// (release with [`evomax_string_free`]). `passed` receives 1 when every
/// check passed, else 0. A failed check is not an error status.
///
/// # Safety
/// `sizes` must point to `n_sizes` readable values; `json_out` and `passed`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn evomax_run_suite(
    sizes: *const usize,
    n_sizes: usize,
    seed: u64,
    json_out: *mut *mut c_char,
    passed: *mut i32,
) -> EvomaxStatus {
    ffi_call(|| {
        if sizes.is_null() {
            return Err(null("sizes"));
        }
        if json_out.is_null() {
            return Err(null("json_out"));
        }
        if passed.is_null() {
            return Err(null("passed"));
        }
        let sizes = std::slice::from_raw_parts(sizes, n_sizes);
        if sizes.is_empty() || sizes.iter().any(|&n| !(2..=8).contains(&n)) {
            return Err(Fail(EvomaxStatus::InvalidArgument, format!("suite sizes must be in 2..=8, got {sizes:?}")));
        }
        faer::set_global_parallelism(faer::Par::Seq);
        let mut rep = IdentityReport::new("identity_suite", seed);
        rep.extend(identity_suite(sizes, seed))?;
        *passed = i32::from(rep.passed);
        *json_out = CString::new(rep.to_json()).expect("json has no nul").into_raw();
        Ok(())
    })
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn evomax_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Copies the last error message; convenience for Rust callers and tests.
pub fn last_error() -> Option<String> {
    let p = evomax_last_error_message();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}
