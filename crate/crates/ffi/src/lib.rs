//! C ABI over `lowrank-sketch`.
//!
//! Handles are opaque heap objects owned by the caller and released with the
//! matching `*_free` function. Every fallible call returns an [`LsStatus`];
//! on failure the message is available from [`ls_last_error_message`] on the
//! same thread until the next failing call. Matrices cross the boundary in
//! row-major order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use lowrank_sketch::diffsvd::PowerSvdConfig;
use lowrank_sketch::linalg::io::{load_matrix, save_dmat};
use lowrank_sketch::sketch::io::{load_sketch, save_sketch};
use lowrank_sketch::trainer::{train, TrainConfig, TrainMode};
use lowrank_sketch::{scw, sketch, DenseMatrix, Error, SparseSketch};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NonFinite = 4,
    Io = 5,
    Format = 6,
    Divergence = 7,
    /// A panic was caught at the boundary.
    Internal = 8,
}

/// Dense row-major matrix.
pub struct LsMatrix(DenseMatrix);

/// Sparse sketch with one nonzero per column per block.
pub struct LsSketch(SparseSketch);

/// Training options. Start from [`ls_train_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LsTrainOptions {
    pub k: usize,
    pub lr: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub power_iters: usize,
    /// 0 learned, 1 mixed joint, 2 mixed separate.
    pub mode: u32,
    /// Rows of the trained block in the mixed modes.
    pub learned_rows: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

fn status_of(e: &Error) -> LsStatus {
    match e {
        Error::DimensionMismatch { .. } => LsStatus::DimensionMismatch,
        Error::NonFinite(_) => LsStatus::NonFinite,
        Error::Divergence { .. } => LsStatus::Divergence,
        Error::Format { .. } | Error::Csv(_) => LsStatus::Format,
        Error::Io(_) | Error::MissingFile(_) => LsStatus::Io,
        _ => LsStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (LsStatus, String)>) -> LsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            LsStatus::Internal
        }
    }
}

fn lib<T>(r: lowrank_sketch::Result<T>) -> Result<T, (LsStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (LsStatus, String) {
    (LsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (LsStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (LsStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| {
        (
            LsStatus::InvalidArgument,
            "path is not valid UTF-8".to_string(),
        )
    })?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), (LsStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failing call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ls_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ls_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `rows * cols` row-major values into a new matrix.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_matrix_new(
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut *mut LsMatrix,
) -> LsStatus {
    guard(|| {
        let len = rows
            .checked_mul(cols)
            .ok_or((LsStatus::InvalidArgument, "matrix too large".to_string()))?;
        if data.is_null() && len > 0 {
            return Err(null("data"));
        }
        let values = if len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(data, len).to_vec()
        };
        put(
            out,
            LsMatrix(lib(DenseMatrix::from_vec(rows, cols, values))?),
        )
    })
}

/// Reads a DMAT1 or CSV matrix file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_matrix_load(path: *const c_char, out: *mut *mut LsMatrix) -> LsStatus {
    guard(|| put(out, LsMatrix(lib(load_matrix(&path_arg(path)?))?)))
}

/// Writes a matrix as DMAT1.
///
/// # Safety
/// `m` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ls_matrix_save(m: *const LsMatrix, path: *const c_char) -> LsStatus {
    guard(|| lib(save_dmat(&path_arg(path)?, &deref(m, "matrix")?.0)))
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_matrix_rows(m: *const LsMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.rows())
}

/// Number of columns, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_matrix_cols(m: *const LsMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.cols())
}

/// Copies the row-major values into `buf`, which must hold `len >= rows * cols` doubles.
///
/// # Safety
/// `m` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ls_matrix_copy_data(
    m: *const LsMatrix,
    buf: *mut f64,
    len: usize,
) -> LsStatus {
    guard(|| {
        let src = deref(m, "matrix")?.0.as_slice();
        if src.len() > len {
            return Err((
                LsStatus::InvalidArgument,
                format!("buffer holds {len} values, need {}", src.len()),
            ));
        }
        if src.is_empty() {
            return Ok(());
        }
        if buf.is_null() {
            return Err(null("buffer"));
        }
        std::slice::from_raw_parts_mut(buf, src.len()).copy_from_slice(src);
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ls_matrix_free(m: *mut LsMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Random sparse sign sketch of shape `m × n`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_sketch_sparse_random(
    m: usize,
    n: usize,
    seed: u64,
    out: *mut *mut LsSketch,
) -> LsStatus {
    guard(|| {
        put(
            out,
            LsSketch(lib(sketch::sparse_random_sketch(m, n, seed))?),
        )
    })
}

/// Reads an SKCH1 file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_sketch_load(path: *const c_char, out: *mut *mut LsSketch) -> LsStatus {
    guard(|| put(out, LsSketch(lib(load_sketch(&path_arg(path)?))?)))
}

/// Writes an SKCH1 file.
///
/// # Safety
/// `s` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ls_sketch_save(s: *const LsSketch, path: *const c_char) -> LsStatus {
    guard(|| lib(save_sketch(&path_arg(path)?, &deref(s, "sketch")?.0)))
}

/// Writes the sketch shape to `m` and `n`.
///
/// # Safety
/// `s` must be a live handle; `m` and `n` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_sketch_shape(
    s: *const LsSketch,
    m: *mut usize,
    n: *mut usize,
) -> LsStatus {
    guard(|| {
        let s = deref(s, "sketch")?;
        if m.is_null() || n.is_null() {
            return Err(null("output pointer"));
        }
        *m = s.0.m();
        *n = s.0.n();
        Ok(())
    })
}

/// Vertical concatenation `[s1; s2]`.
///
/// # Safety
/// `s1`, `s2` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_sketch_concat(
    s1: *const LsSketch,
    s2: *const LsSketch,
    out: *mut *mut LsSketch,
) -> LsStatus {
    guard(|| {
        let c = lib(sketch::concat_sketches(
            &deref(s1, "s1")?.0,
            &deref(s2, "s2")?.0,
        ))?;
        put(out, LsSketch(c))
    })
}

/// Computes `S·A`.
///
/// # Safety
/// `s`, `a` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_sketch_apply(
    s: *const LsSketch,
    a: *const LsMatrix,
    out: *mut *mut LsMatrix,
) -> LsStatus {
    guard(|| {
        let r = lib(sketch::apply_sketch(
            &deref(s, "sketch")?.0,
            &deref(a, "matrix")?.0,
        ))?;
        put(out, LsMatrix(r))
    })
}

/// # Safety
/// `s` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ls_sketch_free(s: *mut LsSketch) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Frobenius error of the sketched rank-`k` approximation of `a`.
///
/// # Safety
/// `a`, `s` must be live handles; `loss` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_scw_loss(
    a: *const LsMatrix,
    s: *const LsSketch,
    k: usize,
    loss: *mut f64,
) -> LsStatus {
    guard(|| {
        let l = lib(scw::scw_loss(
            &deref(a, "matrix")?.0,
            &deref(s, "sketch")?.0,
            k,
        ))?;
        if loss.is_null() {
            return Err(null("loss"));
        }
        *loss = l;
        Ok(())
    })
}

/// Rank-`k` approximation of `a` computed through the sketch. `loss` may be null.
///
/// # Safety
/// `a`, `s` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_scw_approximate(
    a: *const LsMatrix,
    s: *const LsSketch,
    k: usize,
    out: *mut *mut LsMatrix,
    loss: *mut f64,
) -> LsStatus {
    guard(|| {
        let r = lib(scw::scw_approximate(
            &deref(a, "matrix")?.0,
            &deref(s, "sketch")?.0,
            k,
        ))?;
        if !loss.is_null() {
            *loss = r.loss;
        }
        put(out, LsMatrix(r.approx))
    })
}

/// Defaults matching the library's training configuration.
#[no_mangle]
pub extern "C" fn ls_train_options_default() -> LsTrainOptions {
    let c = TrainConfig::default();
    LsTrainOptions {
        k: c.k,
        lr: c.lr,
        iterations: c.iterations,
        batch_size: c.batch_size,
        seed: c.seed,
        power_iters: c.power.t_iters,
        mode: 0,
        learned_rows: c.learned_rows,
    }
}

/// Trains an `m`-row sketch on `count` matrices sharing a row count.
///
/// # Safety
/// `train_set` must point to `count` live matrix handles; `opts` must be
/// readable; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_train(
    train_set: *const *const LsMatrix,
    count: usize,
    m: usize,
    opts: *const LsTrainOptions,
    out: *mut *mut LsSketch,
) -> LsStatus {
    guard(|| {
        if train_set.is_null() && count > 0 {
            return Err(null("training set"));
        }
        let o = *deref(opts, "options")?;
        let handles = if count == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(train_set, count)
        };
        let set: Vec<DenseMatrix> = handles
            .iter()
            .map(|&h| deref(h, "training matrix").map(|h| h.0.clone()))
            .collect::<Result<_, _>>()?;
        let mode = match o.mode {
            0 => TrainMode::Learned,
            1 => TrainMode::MixedJoint,
            2 => TrainMode::MixedSeparate,
            other => {
                return Err((
                    LsStatus::InvalidArgument,
                    format!("unknown training mode {other}"),
                ))
            }
        };
        let cfg = TrainConfig {
            k: o.k,
            lr: o.lr,
            iterations: o.iterations,
            batch_size: o.batch_size,
            seed: o.seed,
            power: PowerSvdConfig {
                t_iters: o.power_iters,
                ..TrainConfig::default().power
            },
            mode,
            learned_rows: o.learned_rows,
            ..TrainConfig::default()
        };
        let (s, _) = lib(train(&set, m, &cfg))?;
        put(out, LsSketch(s))
    })
}
