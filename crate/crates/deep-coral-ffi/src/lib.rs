//! C ABI for the deep-coral crate.
//!
//! All heap objects cross the boundary as opaque handles (`DcMatrix`,
//! `DcNetwork`) created and destroyed by this library. Every fallible call
//! returns a [`DcStatus`]; on failure, [`dc_last_error_message`] gives a
//! thread-local human-readable description. The generated header lives at
//! `include/deep_coral.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use deep_coral::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use deep_coral::config::parse_updates;
use deep_coral::experiment::train_to_dir;
use deep_coral::net::LabelBatch;
use deep_coral::{Error, ExperimentConfig, Matrix, Network};

/// Status code for every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    DimensionMismatch = 3,
    DegenerateBatch = 4,
    NonFinite = 5,
    BadLabel = 6,
    BadArchitecture = 7,
    LengthMismatch = 8,
    ParseError = 9,
    IoError = 10,
    ConfigError = 11,
    Divergence = 12,
    /// A panic was caught at the boundary.
    Internal = 13,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_from_error(err: &Error) -> DcStatus {
    match err {
        Error::DimensionMismatch(_) | Error::StaleForward(_) => DcStatus::DimensionMismatch,
        Error::DegenerateBatch(_) => DcStatus::DegenerateBatch,
        Error::NonFinite(_) => DcStatus::NonFinite,
        Error::BadLabel(_) | Error::LabelOutOfRange { .. } => DcStatus::BadLabel,
        Error::BadArchitecture(_) => DcStatus::BadArchitecture,
        Error::LengthMismatch(_) => DcStatus::LengthMismatch,
        Error::Parse { .. } => DcStatus::ParseError,
        Error::Io(_) => DcStatus::IoError,
        Error::Divergence(_) | Error::ProbeDiverged(_) => DcStatus::Divergence,
        Error::BadSpec(_)
        | Error::Config(_)
        | Error::BatchTooLarge { .. }
        | Error::BatchTooSmall { .. } => DcStatus::ConfigError,
    }
}

fn fail(err: Error) -> DcStatus {
    set_last_error(&err.to_string());
    status_from_error(&err)
}

/// Runs `f` with panics converted to `DcStatus::Internal`.
fn guarded(f: impl FnOnce() -> DcStatus) -> DcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic");
            DcStatus::Internal
        }
    }
}

/// Owned matrix handle.
pub struct DcMatrix(Matrix);

/// Owned network handle.
pub struct DcNetwork(Network);

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> DcStatus {
    if out.is_null() {
        set_last_error("out pointer is null");
        return DcStatus::NullPointer;
    }
    *out = Box::into_raw(Box::new(value));
    DcStatus::Ok
}

macro_rules! require_ref {
    ($ptr:expr, $name:literal) => {
        match unsafe { $ptr.as_ref() } {
            Some(r) => r,
            None => {
                set_last_error(concat!($name, " is null"));
                return DcStatus::NullPointer;
            }
        }
    };
}

/// Creates a `rows x cols` matrix from row-major data.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles; `out` must be a
/// valid location for a pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_matrix_new(
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut *mut DcMatrix,
) -> DcStatus {
    guarded(|| {
        if data.is_null() {
            set_last_error("data is null");
            return DcStatus::NullPointer;
        }
        let slice = unsafe { std::slice::from_raw_parts(data, rows.saturating_mul(cols)) };
        match Matrix::new(rows, cols, slice.to_vec()) {
            Ok(m) => unsafe { write_out(out, DcMatrix(m)) },
            Err(e) => fail(e),
        }
    })
}

/// Frees a matrix handle; null is a no-op.
///
/// # Safety
/// `matrix` must be null or a handle returned by this library that has not
/// been freed yet.
#[no_mangle]
pub unsafe extern "C" fn dc_matrix_free(matrix: *mut DcMatrix) {
    if !matrix.is_null() {
        drop(unsafe { Box::from_raw(matrix) });
    }
}

/// Row count, or 0 for a null handle.
///
/// # Safety
/// `matrix` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_matrix_rows(matrix: *const DcMatrix) -> usize {
    unsafe { matrix.as_ref() }.map_or(0, |m| m.0.rows())
}

/// Column count, or 0 for a null handle.
///
/// # Safety
/// `matrix` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_matrix_cols(matrix: *const DcMatrix) -> usize {
    unsafe { matrix.as_ref() }.map_or(0, |m| m.0.cols())
}

/// Copies the matrix out in row-major order.
///
/// # Safety
/// `out` must point to `rows * cols` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dc_matrix_copy_data(
    matrix: *const DcMatrix,
    out: *mut f64,
) -> DcStatus {
    guarded(|| {
        let m = require_ref!(matrix, "matrix");
        if out.is_null() {
            set_last_error("out is null");
            return DcStatus::NullPointer;
        }
        let data = m.0.data();
        unsafe { std::slice::from_raw_parts_mut(out, data.len()) }.copy_from_slice(data);
        DcStatus::Ok
    })
}

/// Unbiased batch covariance of `features` as a new `d x d` matrix.
///
/// # Safety
/// `features` must be a live handle; `out` must be a valid location.
#[no_mangle]
pub unsafe extern "C" fn dc_covariance(
    features: *const DcMatrix,
    out: *mut *mut DcMatrix,
) -> DcStatus {
    guarded(|| {
        let m = require_ref!(features, "features");
        match deep_coral::covariance(&m.0) {
            Ok(cov) => unsafe { write_out(out, DcMatrix(cov.matrix().clone())) },
            Err(e) => fail(e),
        }
    })
}

/// Sum of squared entries.
///
/// # Safety
/// `matrix` must be a live handle; `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn dc_frobenius_sq(matrix: *const DcMatrix, out: *mut f64) -> DcStatus {
    guarded(|| {
        let m = require_ref!(matrix, "matrix");
        if out.is_null() {
            set_last_error("out is null");
            return DcStatus::NullPointer;
        }
        match deep_coral::frobenius_sq(&m.0) {
            Ok(v) => {
                unsafe { *out = v };
                DcStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// CORAL loss between two feature batches.
///
/// # Safety
/// `source` and `target` must be live handles; `out` must point to a
/// writable double.
#[no_mangle]
pub unsafe extern "C" fn dc_coral_loss(
    source: *const DcMatrix,
    target: *const DcMatrix,
    out: *mut f64,
) -> DcStatus {
    guarded(|| {
        let s = require_ref!(source, "source");
        let t = require_ref!(target, "target");
        if out.is_null() {
            set_last_error("out is null");
            return DcStatus::NullPointer;
        }
        match deep_coral::coral_loss(&s.0, &t.0) {
            Ok(v) => {
                unsafe { *out = v };
                DcStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Same value as [`dc_coral_loss`]; monitoring alias.
///
/// # Safety
/// As [`dc_coral_loss`].
#[no_mangle]
pub unsafe extern "C" fn dc_coral_distance(
    source: *const DcMatrix,
    target: *const DcMatrix,
    out: *mut f64,
) -> DcStatus {
    unsafe { dc_coral_loss(source, target, out) }
}

/// Analytic CORAL gradients for both inputs, as two new matrices matching
/// the input shapes.
///
/// # Safety
/// `source` and `target` must be live handles; `grad_source` and
/// `grad_target` must be valid locations.
#[no_mangle]
pub unsafe extern "C" fn dc_coral_grad(
    source: *const DcMatrix,
    target: *const DcMatrix,
    grad_source: *mut *mut DcMatrix,
    grad_target: *mut *mut DcMatrix,
) -> DcStatus {
    guarded(|| {
        let s = require_ref!(source, "source");
        let t = require_ref!(target, "target");
        match deep_coral::coral_grad(&s.0, &t.0) {
            Ok(grad) => {
                let status = unsafe { write_out(grad_source, DcMatrix(grad.grad_source)) };
                if status != DcStatus::Ok {
                    return status;
                }
                let status = unsafe { write_out(grad_target, DcMatrix(grad.grad_target)) };
                if status != DcStatus::Ok {
                    // Roll back the first allocation so nothing leaks.
                    unsafe {
                        if let Some(p) = grad_source.as_ref() {
                            dc_matrix_free(*p);
                        }
                    }
                }
                status
            }
            Err(e) => fail(e),
        }
    })
}

/// Builds a seeded network from `dims[0..n_dims]` layer widths.
///
/// # Safety
/// `dims` must point to `n_dims` readable size_t values; `out` must be a
/// valid location.
#[no_mangle]
pub unsafe extern "C" fn dc_network_init(
    dims: *const usize,
    n_dims: usize,
    head_init_std: f64,
    seed: u64,
    out: *mut *mut DcNetwork,
) -> DcStatus {
    guarded(|| {
        if dims.is_null() {
            set_last_error("dims is null");
            return DcStatus::NullPointer;
        }
        let dims = unsafe { std::slice::from_raw_parts(dims, n_dims) };
        match deep_coral::init_network(dims, head_init_std, seed) {
            Ok(net) => unsafe { write_out(out, DcNetwork(net)) },
            Err(e) => fail(e),
        }
    })
}

/// Frees a network handle; null is a no-op.
///
/// # Safety
/// `network` must be null or a handle returned by this library that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn dc_network_free(network: *mut DcNetwork) {
    if !network.is_null() {
        drop(unsafe { Box::from_raw(network) });
    }
}

unsafe fn path_from_c(ptr: *const c_char, name: &str) -> Result<std::path::PathBuf, DcStatus> {
    if ptr.is_null() {
        set_last_error(&format!("{name} is null"));
        return Err(DcStatus::NullPointer);
    }
    match unsafe { CStr::from_ptr(ptr) }.to_str() {
        Ok(s) => Ok(Path::new(s).to_path_buf()),
        Err(_) => {
            set_last_error(&format!("{name} is not valid UTF-8"));
            Err(DcStatus::InvalidUtf8)
        }
    }
}

/// Saves a checkpoint for the network.
///
/// # Safety
/// `network` must be a live handle; `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn dc_network_save(
    network: *const DcNetwork,
    path: *const c_char,
) -> DcStatus {
    guarded(|| {
        let net = require_ref!(network, "network");
        let path = match unsafe { path_from_c(path, "path") } {
            Ok(p) => p,
            Err(status) => return status,
        };
        match save_checkpoint(&net.0, &CheckpointMeta::default(), &path) {
            Ok(()) => DcStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Loads a checkpoint into a new network handle.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` a valid location.
#[no_mangle]
pub unsafe extern "C" fn dc_network_load(
    path: *const c_char,
    out: *mut *mut DcNetwork,
) -> DcStatus {
    guarded(|| {
        let path = match unsafe { path_from_c(path, "path") } {
            Ok(p) => p,
            Err(status) => return status,
        };
        match load_checkpoint(&path) {
            Ok((net, _)) => unsafe { write_out(out, DcNetwork(net)) },
            Err(e) => fail(e),
        }
    })
}

/// Forward pass: logits for a feature batch, as a new matrix.
///
/// # Safety
/// `network` and `features` must be live handles; `out` a valid location.
#[no_mangle]
pub unsafe extern "C" fn dc_network_logits(
    network: *const DcNetwork,
    features: *const DcMatrix,
    out: *mut *mut DcMatrix,
) -> DcStatus {
    guarded(|| {
        let net = require_ref!(network, "network");
        let x = require_ref!(features, "features");
        match net.0.forward(&x.0) {
            Ok(pass) => unsafe { write_out(out, DcMatrix(pass.logits().clone())) },
            Err(e) => fail(e),
        }
    })
}

/// Classification accuracy of the network on a labeled batch. Labels are
/// class indices, one per row.
///
/// # Safety
/// `network` and `features` must be live handles; `labels` must point to
/// `n_labels` readable uint32 values; `out` to a writable double.
#[no_mangle]
pub unsafe extern "C" fn dc_network_accuracy(
    network: *const DcNetwork,
    features: *const DcMatrix,
    labels: *const u32,
    n_labels: usize,
    out: *mut f64,
) -> DcStatus {
    guarded(|| {
        let net = require_ref!(network, "network");
        let x = require_ref!(features, "features");
        if labels.is_null() || out.is_null() {
            set_last_error("labels or out is null");
            return DcStatus::NullPointer;
        }
        let labels = unsafe { std::slice::from_raw_parts(labels, n_labels) };
        let batch = LabelBatch::new(labels.iter().map(|&l| l as usize).collect());
        match deep_coral::evaluate(&net.0, &x.0, &batch) {
            Ok(acc) => {
                unsafe { *out = acc };
                DcStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Runs a full training experiment from config text (the same key=value
/// format the CLI accepts), writing metrics, checkpoint, and manifest into
/// `out_dir`.
///
/// # Safety
/// Both arguments must be NUL-terminated UTF-8 strings.
#[no_mangle]
pub unsafe extern "C" fn dc_train_run(
    config_text: *const c_char,
    out_dir: *const c_char,
) -> DcStatus {
    guarded(|| {
        if config_text.is_null() {
            set_last_error("config_text is null");
            return DcStatus::NullPointer;
        }
        let text = match unsafe { CStr::from_ptr(config_text) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_last_error("config_text is not valid UTF-8");
                return DcStatus::InvalidUtf8;
            }
        };
        let out_dir = match unsafe { path_from_c(out_dir, "out_dir") } {
            Ok(p) => p,
            Err(status) => return status,
        };

        let mut config = ExperimentConfig::default();
        let updates = match parse_updates(text) {
            Ok(u) => u,
            Err(e) => return fail(e),
        };
        if let Err(e) = config.apply_updates(&updates) {
            return fail(e);
        }
        config.out = Some(out_dir);
        match train_to_dir(&config) {
            Ok(_) => DcStatus::Ok,
            Err(e) => fail(e),
        }
    })
}
