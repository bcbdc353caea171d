//! C ABI over `typscen`.
//!
//! Handles are opaque and owned by the caller once returned; free them with
//! the matching `*_free`. Every fallible call returns a [`TsStatus`]; on
//! failure the message is kept per thread and read with
//! [`ts_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use typscen::embed::{MdsMethod, SmacofConfig};
use typscen::grid::{build_impedance_matrix, electrical_distance, NetworkModel};
use typscen::pipeline::{embed_network, StabilityClass, TypicalScenarioSet};
use typscen::{Error, ErrorKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Bad argument value or configuration.
    Usage = 3,
    /// Malformed, inconsistent or unreadable input data.
    Data = 4,
    /// Numerical failure (singular matrix, non-SPD covariance, ...).
    Numerical = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsMethod {
    Classical = 0,
    Metric = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsStabilityClass {
    Stable = 0,
    VoltageOnly = 1,
    Coupled = 2,
}

impl From<StabilityClass> for TsStabilityClass {
    fn from(c: StabilityClass) -> Self {
        match c {
            StabilityClass::Stable => Self::Stable,
            StabilityClass::VoltageOnly => Self::VoltageOnly,
            StabilityClass::Coupled => Self::Coupled,
        }
    }
}

/// Opaque network handle.
pub struct TsNetwork(NetworkModel);

/// Opaque fitted typical-scenario set.
pub struct TsTypicalSet(TypicalScenarioSet);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let mut bytes = msg.into();
    bytes.retain(|b| *b != 0);
    let c = CString::new(bytes).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: TsStatus, msg: impl Into<Vec<u8>>) -> TsStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> TsStatus {
    let status = match e.kind() {
        ErrorKind::Usage => TsStatus::Usage,
        ErrorKind::Data => TsStatus::Data,
        ErrorKind::Numerical => TsStatus::Numerical,
    };
    fail(status, e.to_string())
}

/// Runs `f`, converting panics into [`TsStatus::Panic`].
fn guard(f: impl FnOnce() -> TsStatus) -> TsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == TsStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(TsStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, TsStatus> {
    if path.is_null() {
        return Err(fail(TsStatus::NullArgument, "path is null"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(TsStatus::InvalidUtf8, "path is not valid UTF-8"))
}

/// Copies `src` into the caller buffer `out[0..len]`.
unsafe fn write_out(src: &[f64], out: *mut f64, len: usize) -> TsStatus {
    if out.is_null() {
        return fail(TsStatus::NullArgument, "output buffer is null");
    }
    if len < src.len() {
        return fail(
            TsStatus::BufferTooSmall,
            format!("output buffer holds {len} values, {} needed", src.len()),
        );
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    TsStatus::Ok
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full length including
/// the terminator, or 0 when there is no error.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ts_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = (bytes.len() - 1).min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Loads and validates a network file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ts_network_load(path: *const c_char, out: *mut *mut TsNetwork) -> TsStatus {
    guard(|| {
        if out.is_null() {
            return fail(TsStatus::NullArgument, "out is null");
        }
        let p = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match NetworkModel::load(&p) {
            Ok(net) => {
                *out = Box::into_raw(Box::new(TsNetwork(net)));
                TsStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `net` must be null or a handle from [`ts_network_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ts_network_free(net: *mut TsNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of buses, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ts_network_bus_count(net: *const TsNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.buses.len())
}

/// Bus ids in file order into `out[0..len]`.
///
/// # Safety
/// `net` must be a live handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn ts_network_bus_ids(net: *const TsNetwork, out: *mut u32, len: usize) -> TsStatus {
    guard(|| {
        let Some(net) = net.as_ref() else {
            return fail(TsStatus::NullArgument, "network is null");
        };
        let ids = net.0.bus_ids();
        if out.is_null() {
            return fail(TsStatus::NullArgument, "output buffer is null");
        }
        if len < ids.len() {
            return fail(TsStatus::BufferTooSmall, format!("{} ids needed", ids.len()));
        }
        std::ptr::copy_nonoverlapping(ids.as_ptr(), out, ids.len());
        TsStatus::Ok
    })
}

/// Electrical distance matrix, row-major `n × n`, into `out[0..len]`.
///
/// # Safety
/// `net` must be a live handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn ts_network_electrical_distance(
    net: *const TsNetwork,
    out: *mut f64,
    len: usize,
) -> TsStatus {
    guard(|| {
        let Some(net) = net.as_ref() else {
            return fail(TsStatus::NullArgument, "network is null");
        };
        let z = match build_impedance_matrix(&net.0) {
            Ok(z) => z,
            Err(e) => return from_error(e),
        };
        let d = electrical_distance(&z).d;
        // nalgebra is column-major; d is symmetric but transpose anyway.
        write_out(d.transpose().as_slice(), out, len)
    })
}

/// Bus coordinates in `k` dimensions, row-major `n × k`, into `out[0..len]`.
/// Metric embedding uses default SMACOF settings.
///
/// # Safety
/// `net` must be a live handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn ts_network_embed(
    net: *const TsNetwork,
    method: TsMethod,
    k: usize,
    out: *mut f64,
    len: usize,
) -> TsStatus {
    guard(|| {
        let Some(net) = net.as_ref() else {
            return fail(TsStatus::NullArgument, "network is null");
        };
        let m = match method {
            TsMethod::Classical => MdsMethod::Classical,
            TsMethod::Metric => MdsMethod::Metric,
        };
        match embed_network(&net.0, m, k, &SmacofConfig::default()) {
            Ok((_, emb)) => write_out(emb.coords.transpose().as_slice(), out, len),
            Err(e) => from_error(e),
        }
    })
}

/// Loads a fitted typical-scenario set (JSON).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ts_typical_set_load(path: *const c_char, out: *mut *mut TsTypicalSet) -> TsStatus {
    guard(|| {
        if out.is_null() {
            return fail(TsStatus::NullArgument, "out is null");
        }
        let p = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match TypicalScenarioSet::load(&p) {
            Ok(set) => {
                *out = Box::into_raw(Box::new(TsTypicalSet(set)));
                TsStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `set` must be null or a handle from [`ts_typical_set_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ts_typical_set_free(set: *mut TsTypicalSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ts_typical_set_cluster_count(set: *const TsTypicalSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.clusters.len())
}

/// Length of the characteristic vector the set expects.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ts_typical_set_dimension(set: *const TsTypicalSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.characteristic_names.len())
}

/// Typical scenario id of the cluster at `index` (clusters are ordered
/// from most to least stable).
///
/// # Safety
/// `set` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ts_typical_set_typical_id(
    set: *const TsTypicalSet,
    index: usize,
    out: *mut usize,
) -> TsStatus {
    guard(|| {
        let (Some(set), false) = (set.as_ref(), out.is_null()) else {
            return fail(TsStatus::NullArgument, "set or out is null");
        };
        match set.0.clusters.get(index) {
            Some(c) => {
                *out = c.typical_id;
                TsStatus::Ok
            }
            None => fail(
                TsStatus::Usage,
                format!("cluster index {index} out of range 0..{}", set.0.clusters.len()),
            ),
        }
    })
}

/// Assigns a raw characteristic vector to its nearest cluster by weighted
/// Mahalanobis distance. Any of the outputs may be null.
///
/// # Safety
/// `set` must be a live handle; `x` valid for `len` reads; non-null outputs
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ts_typical_set_predict(
    set: *const TsTypicalSet,
    x: *const f64,
    len: usize,
    cluster: *mut usize,
    distance: *mut f64,
    label: *mut TsStabilityClass,
) -> TsStatus {
    guard(|| {
        let Some(set) = set.as_ref() else {
            return fail(TsStatus::NullArgument, "set is null");
        };
        if x.is_null() {
            return fail(TsStatus::NullArgument, "x is null");
        }
        let raw = std::slice::from_raw_parts(x, len);
        match set.0.predict(raw) {
            Ok((c, d, l)) => {
                if !cluster.is_null() {
                    *cluster = c;
                }
                if !distance.is_null() {
                    *distance = d;
                }
                if !label.is_null() {
                    *label = l.into();
                }
                TsStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}
