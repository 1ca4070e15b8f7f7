//! C ABI over the kernel library: opaque tensor handles, status codes, and
//! a thread-local last-error message. All tensors cross the boundary as f64.
//!
//! Ownership rules: every function that returns a `*mut DfirTensor` through
//! an out-parameter transfers ownership to the caller, who must release it
//! with [`dfir_tensor_free`]. Input handles are borrowed, never consumed.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use dfir_core::dcfa::{dcfa_block, DcfaConfig, DcfaParams};
use dfir_core::dfpn::{dfpn_fuse, DfpnConfig, DfpnParams, PyramidLevels};
use dfir_core::firc::{firc3_block, FircConfig, FircParams};
use dfir_core::io::{read_tensor, write_tensor, AnyTensor};
use dfir_core::report::SuiteReport;
use dfir_core::rng::rand_tensor;
use dfir_core::suite::{run_suite, SuiteConfig};
use dfir_core::tensor::{Error, Tensor};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfirStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeError = 3,
    IoError = 4,
    VerifyFailed = 5,
    Internal = 6,
}

/// Opaque tensor handle (dense row-major f64).
pub struct DfirTensor {
    inner: Tensor<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> DfirStatus {
    match err {
        Error::DimensionMismatch { .. }
        | Error::ShapeMismatch { .. }
        | Error::InvalidShape { .. }
        | Error::KernelTooLarge { .. }
        | Error::OddChannels { .. }
        | Error::NotDivisible { .. } => DfirStatus::ShapeError,
        Error::BadMagic { .. }
        | Error::UnknownDtypeCode { .. }
        | Error::Truncated { .. }
        | Error::Io(_)
        | Error::Json(_) => DfirStatus::IoError,
        Error::EmptyKeepSet { .. }
        | Error::InvalidArgument { .. }
        | Error::UnknownSuite { .. }
        | Error::NonScalarLoss { .. } => DfirStatus::InvalidArgument,
        Error::NonFinite { .. } => DfirStatus::Internal,
    }
}

fn fail(err: Error) -> DfirStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

fn guard(f: impl FnOnce() -> DfirStatus) -> DfirStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            DfirStatus::Internal
        }
    }
}

unsafe fn emit(out: *mut *mut DfirTensor, tensor: Tensor<f64>) -> DfirStatus {
    *out = Box::into_raw(Box::new(DfirTensor { inner: tensor }));
    DfirStatus::Ok
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dfir_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call from the same thread.
#[no_mangle]
pub extern "C" fn dfir_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Create a tensor from caller-provided extents and row-major data.
///
/// # Safety
/// `extents` must point to `ndim` readable u64 values, `data` to `len`
/// readable f64 values, and `out` must be a valid write target.
#[no_mangle]
pub unsafe extern "C" fn dfir_tensor_create(
    extents: *const u64,
    ndim: usize,
    data: *const f64,
    len: usize,
    out: *mut *mut DfirTensor,
) -> DfirStatus {
    if extents.is_null() || data.is_null() || out.is_null() {
        set_error("null pointer argument");
        return DfirStatus::NullPointer;
    }
    guard(|| {
        let shape: Vec<usize> =
            std::slice::from_raw_parts(extents, ndim).iter().map(|&e| e as usize).collect();
        let values = std::slice::from_raw_parts(data, len).to_vec();
        match Tensor::from_vec(shape, values) {
            Ok(t) => emit(out, t),
            Err(e) => fail(e),
        }
    })
}

/// Seeded uniform tensor in [-1, 1].
///
/// # Safety
/// `extents` must point to `ndim` readable u64 values and `out` must be a
/// valid write target.
#[no_mangle]
pub unsafe extern "C" fn dfir_tensor_random(
    extents: *const u64,
    ndim: usize,
    seed: u64,
    out: *mut *mut DfirTensor,
) -> DfirStatus {
    if extents.is_null() || out.is_null() {
        set_error("null pointer argument");
        return DfirStatus::NullPointer;
    }
    guard(|| {
        let shape: Vec<usize> =
            std::slice::from_raw_parts(extents, ndim).iter().map(|&e| e as usize).collect();
        if shape.is_empty() || shape.contains(&0) {
            set_error("extents must all be >= 1");
            return DfirStatus::InvalidArgument;
        }
        emit(out, rand_tensor(&shape, seed))
    })
}

/// Release a tensor handle. Null is ignored.
///
/// # Safety
/// `t` must have been produced by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn dfir_tensor_free(t: *mut DfirTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of axes.
///
/// # Safety
/// `t` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn dfir_tensor_ndim(t: *const DfirTensor, out: *mut usize) -> DfirStatus {
    if t.is_null() || out.is_null() {
        set_error("null pointer argument");
        return DfirStatus::NullPointer;
    }
    *out = (*t).inner.shape().len();
    DfirStatus::Ok
}

/// Total element count.
///
/// # Safety
/// `t` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn dfir_tensor_numel(t: *const DfirTensor, out: *mut usize) -> DfirStatus {
    if t.is_null() || out.is_null() {
        set_error("null pointer argument");
        return DfirStatus::NullPointer;
    }
    *out = (*t).inner.numel();
    DfirStatus::Ok
}

/// Copy the extents into a caller buffer of capacity `cap`.
///
/// # Safety
/// `t` must be valid and `buf` writable for `cap` u64 values.
#[no_mangle]
pub unsafe extern "C" fn dfir_tensor_extents(
    t: *const DfirTensor,
    buf: *mut u64,
    cap: usize,
) -> DfirStatus {
    if t.is_null() || buf.is_null() {
        set_error("null pointer argument");
        return DfirStatus::NullPointer;
    }
    let shape = (*t).inner.shape();
    if cap < shape.len() {
        set_error("extent buffer too small");
        return DfirStatus::InvalidArgument;
    }
    for (i, &e) in shape.iter().enumerate() {
        *buf.add(i) = e as u64;
    }
    DfirStatus::Ok
}

/// Copy the row-major values into a caller buffer of capacity `cap`.
///
/// # Safety
/// `t` must be valid and `buf` writable for `cap` f64 values.
#[no_mangle]
pub unsafe extern "C" fn dfir_tensor_copy_data(
    t: *const DfirTensor,
    buf: *mut f64,
    cap: usize,
) -> DfirStatus {
    if t.is_null() || buf.is_null() {
        set_error("null pointer argument");
        return DfirStatus::NullPointer;
    }
    let data = (*t).inner.data();
    if cap < data.len() {
        set_error("data buffer too small");
        return DfirStatus::InvalidArgument;
    }
    std::ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
    DfirStatus::Ok
}

/// L1 norm of the tensor.
///
/// # Safety
/// `t` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn dfir_tensor_l1_norm(t: *const DfirTensor, out: *mut f64) -> DfirStatus {
    if t.is_null() || out.is_null() {
        set_error("null pointer argument");
        return DfirStatus::NullPointer;
    }
    *out = (*t).inner.l1_norm();
    DfirStatus::Ok
}

unsafe fn path_from(ptr: *const c_char) -> Result<String, DfirStatus> {
    if ptr.is_null() {
        set_error("null path");
        return Err(DfirStatus::NullPointer);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(s.to_string()),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(DfirStatus::InvalidArgument)
        }
    }
}

/// Read a tensor fixture file (f32 fixtures are widened to f64).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid write target.
#[no_mangle]
pub unsafe extern "C" fn dfir_tensor_read_file(
    path: *const c_char,
    out: *mut *mut DfirTensor,
) -> DfirStatus {
    if out.is_null() {
        set_error("null pointer argument");
        return DfirStatus::NullPointer;
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    guard(|| match read_tensor(&path) {
        Ok(any) => emit(out, any.to_f64()),
        Err(e) => fail(e),
    })
}

/// Write a tensor to a fixture file (f64 layout).
///
/// # Safety
/// `t` must be valid and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dfir_tensor_write_file(
    t: *const DfirTensor,
    path: *const c_char,
) -> DfirStatus {
    if t.is_null() {
        set_error("null tensor");
        return DfirStatus::NullPointer;
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    guard(|| match write_tensor(&path, &AnyTensor::F64((*t).inner.clone())) {
        Ok(()) => DfirStatus::Ok,
        Err(e) => fail(e),
    })
}

/// Forward pass of the backbone block with seeded parameters.
///
/// # Safety
/// `x` must be a valid handle and `out` a valid write target.
#[no_mangle]
pub unsafe extern "C" fn dfir_dcfa_forward(
    x: *const DfirTensor,
    stack_depth: usize,
    seed: u64,
    out: *mut *mut DfirTensor,
) -> DfirStatus {
    if x.is_null() || out.is_null() {
        set_error("null pointer argument");
        return DfirStatus::NullPointer;
    }
    guard(|| {
        let input = &(*x).inner;
        let channels = match input.dims4("dcfa input") {
            Ok((_, c, _, _)) => c,
            Err(e) => return fail(e),
        };
        let cfg = DcfaConfig::new(channels, stack_depth, seed);
        match DcfaParams::<f64>::init(&cfg).and_then(|p| dcfa_block(input, &p)) {
            Ok(y) => emit(out, y),
            Err(e) => fail(e),
        }
    })
}

/// Forward pass of the frequency refinement block with seeded parameters.
///
/// # Safety
/// `x` must be a valid handle and `out` a valid write target.
#[no_mangle]
pub unsafe extern "C" fn dfir_firc3_forward(
    x: *const DfirTensor,
    iterations: usize,
    seed: u64,
    out: *mut *mut DfirTensor,
) -> DfirStatus {
    if x.is_null() || out.is_null() {
        set_error("null pointer argument");
        return DfirStatus::NullPointer;
    }
    guard(|| {
        let input = &(*x).inner;
        let channels = match input.dims4("firc3 input") {
            Ok((_, c, _, _)) => c,
            Err(e) => return fail(e),
        };
        let cfg = FircConfig::new(channels, iterations, seed);
        match FircParams::<f64>::init(&cfg).and_then(|p| firc3_block(input, &p)) {
            Ok(y) => emit(out, y),
            Err(e) => fail(e),
        }
    })
}

/// Fuse a pyramid of `count` levels (finest first, adjacent extents related
/// by `scale`); writes `count` fused level handles into `outs`.
///
/// # Safety
/// `levels` must point to `count` valid handles and `outs` to `count`
/// writable slots.
#[no_mangle]
pub unsafe extern "C" fn dfir_dfpn_fuse(
    levels: *const *const DfirTensor,
    count: usize,
    scale: usize,
    seed: u64,
    outs: *mut *mut DfirTensor,
) -> DfirStatus {
    if levels.is_null() || outs.is_null() || count == 0 {
        set_error("null pointer argument or empty pyramid");
        return DfirStatus::NullPointer;
    }
    guard(|| {
        let mut tensors = Vec::with_capacity(count);
        for i in 0..count {
            let handle = *levels.add(i);
            if handle.is_null() {
                set_error("null level handle");
                return DfirStatus::NullPointer;
            }
            tensors.push((*handle).inner.clone());
        }
        let pyr = PyramidLevels::new(tensors);
        let channels = pyr.channel_counts();
        let params = match DfpnParams::init(&channels, &DfpnConfig::new(scale, seed)) {
            Ok(p) => p,
            Err(e) => return fail(e),
        };
        match dfpn_fuse(&pyr, &params) {
            Ok(fused) => {
                for (i, lvl) in fused.levels.into_iter().enumerate() {
                    *outs.add(i) = Box::into_raw(Box::new(DfirTensor { inner: lvl }));
                }
                DfirStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Run a verification suite selection ("dcfa", "dfpn", "firc3", or "all")
/// with one seed. Writes a JSON report when `report_path` is non-null.
/// Returns Ok only when every case passes.
///
/// # Safety
/// `block` must be NUL-terminated; `report_path` may be null.
#[no_mangle]
pub unsafe extern "C" fn dfir_verify(
    block: *const c_char,
    seed: u64,
    threads: usize,
    report_path: *const c_char,
) -> DfirStatus {
    let block = match path_from(block) {
        Ok(b) => b,
        Err(status) => return status,
    };
    let report_path = if report_path.is_null() {
        None
    } else {
        match path_from(report_path) {
            Ok(p) => Some(p),
            Err(status) => return status,
        }
    };
    guard(|| {
        let mut cfg = dfir_core::config::RunConfig {
            block: block.clone(),
            seeds: vec![seed],
            threads: threads.max(1),
            ..Default::default()
        };
        cfg.out = report_path.clone();
        if let Err(e) = cfg.validate(&dfir_core::config::BLOCK_CHOICES) {
            return fail(e);
        }
        let suite_cfg = SuiteConfig {
            seeds: cfg.seeds.clone(),
            tolerance_override: None,
            threads: cfg.threads,
            grid: cfg.grid.clone(),
        };
        let mut report = SuiteReport::new(cfg.clone());
        for name in cfg.selected_suites() {
            match run_suite(name, &suite_cfg) {
                Ok(oracle) => report.absorb(&oracle),
                Err(e) => return fail(e),
            }
        }
        if let Some(path) = &report_path {
            if let Err(e) = std::fs::write(path, report.to_json()) {
                return fail(Error::Io(e));
            }
        }
        if report.exit_code() == 0 {
            DfirStatus::Ok
        } else {
            set_error("verification reported failures");
            DfirStatus::VerifyFailed
        }
    })
}
