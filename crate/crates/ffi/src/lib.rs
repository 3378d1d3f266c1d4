//! C interface to the full-order model, the offline stage and the
//! reduced-order model.
//!
//! Objects cross the boundary as opaque handles created by `trt_*_new` or
//! `trt_*_run` functions and released with the matching `trt_*_free`.
//! Every fallible call returns a [`TrtStatus`]; the message of the last
//! failure on the calling thread is available from
//! [`trt_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use trt_rom::config::RunConfig;
use trt_rom::fom::fom_run;
use trt_rom::metrics::compare;
use trt_rom::pod::{offline, read_basis, write_basis, PodBasis, StoreSnapshots};
use trt_rom::problem::{Problem, Trajectory};
use trt_rom::rom::rom_run;
use trt_rom::store::{RunManifest, StoreReader, StoreWriter};
use trt_rom::TrtError;

/// Result codes. Nonzero codes below 10 match the exit codes of the `trt`
/// command-line tool.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrtStatus {
    Ok = 0,
    Config = 2,
    Convergence = 3,
    ArchiveMismatch = 4,
    Io = 5,
    NullPointer = 10,
    InvalidUtf8 = 11,
    Panic = 12,
    OutOfRange = 13,
}

/// Run configuration handle.
pub struct TrtConfig {
    inner: RunConfig,
}

/// Time history of a full-order or reduced-order run.
pub struct TrtTrajectory {
    inner: Trajectory,
    n_cells: usize,
}

/// POD basis archive.
pub struct TrtBasis {
    inner: PodBasis,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &TrtError) -> TrtStatus {
    match e.exit_code() {
        2 => TrtStatus::Config,
        3 => TrtStatus::Convergence,
        4 => TrtStatus::ArchiveMismatch,
        _ => TrtStatus::Io,
    }
}

enum Failure {
    Trt(TrtError),
    Status(TrtStatus, String),
}

impl From<TrtError> for Failure {
    fn from(e: TrtError) -> Self {
        Failure::Trt(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TrtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TrtStatus::Ok,
        Ok(Err(Failure::Trt(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            TrtStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(TrtStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: callers pass handles obtained from this library or null.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn string_arg(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null, and callers promise a NUL-terminated string.
    let s = unsafe { CStr::from_ptr(p) };
    s.to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::Status(TrtStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    // SAFETY: checked non-null; the caller owns the slot.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn trt_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            // SAFETY: `buf` has room for `len >= n + 1` bytes.
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Fleck–Cummings configuration (`ci != 0` selects the small test setup).
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn trt_config_new(ci: i32, out: *mut *mut TrtConfig) -> TrtStatus {
    guard(|| {
        let inner = if ci != 0 { RunConfig::ci() } else { RunConfig::default() };
        unsafe { put(out, TrtConfig { inner }) }
    })
}

/// Reads a configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn trt_config_from_file(path: *const c_char, out: *mut *mut TrtConfig) -> TrtStatus {
    guard(|| {
        let p = unsafe { string_arg(path, "path") }?;
        let inner = RunConfig::from_file(&PathBuf::from(p))?;
        unsafe { put(out, TrtConfig { inner }) }
    })
}

/// Sets one configuration key, using the configuration-file syntax. The
/// key `run_steps` limits the number of steps actually run.
///
/// # Safety
/// `cfg` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn trt_config_set(cfg: *mut TrtConfig, key: *const c_char, value: *const c_char) -> TrtStatus {
    guard(|| {
        // SAFETY: handle from `trt_config_new` or null.
        let cfg = unsafe { cfg.as_mut() }.ok_or_else(|| null("config"))?;
        let key = unsafe { string_arg(key, "key") }?;
        let value = unsafe { string_arg(value, "value") }?;
        let mut next = cfg.inner.clone();
        if key == "run_steps" {
            let n = value
                .trim()
                .parse()
                .map_err(|_| TrtError::Config(format!("bad value for run_steps: '{value}'")))?;
            next.run_steps = Some(n);
        } else {
            next.set(&key, &value)?;
        }
        next.validate()?;
        cfg.inner = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn trt_config_free(cfg: *mut TrtConfig) {
    if !cfg.is_null() {
        // SAFETY: created by `Box::into_raw` in this library.
        drop(unsafe { Box::from_raw(cfg) });
    }
}

unsafe fn optional_dir(p: *const c_char) -> Result<Option<PathBuf>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        Ok(Some(PathBuf::from(unsafe { string_arg(p, "directory") }?)))
    }
}

/// Runs the full-order model. When `out_dir` is non-null every step,
/// including intensities, is stored there for the offline stage.
///
/// # Safety
/// `cfg` must be a live handle, `out_dir` null or a NUL-terminated string,
/// `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn trt_fom_run(
    cfg: *const TrtConfig,
    out_dir: *const c_char,
    out: *mut *mut TrtTrajectory,
) -> TrtStatus {
    guard(|| {
        let cfg = unsafe { borrow(cfg, "config") }?;
        let dir = unsafe { optional_dir(out_dir) }?;
        let problem = Problem::from_config(&cfg.inner)?;
        let traj = match dir {
            Some(d) => {
                let m = RunManifest::new(&problem.ps, "fom", problem.dt, &cfg.inner.to_text());
                let mut w = StoreWriter::create(&d, m)?;
                let t = fom_run(&problem, |r, i| w.write(r, Some(i)))?;
                w.finish()?;
                t
            }
            None => fom_run(&problem, |_, _| Ok(()))?,
        };
        unsafe {
            put(
                out,
                TrtTrajectory {
                    inner: traj,
                    n_cells: problem.ps.grid.n_cells(),
                },
            )
        }
    })
}

/// Builds a basis for tolerance `xi` from a stored full-order run.
///
/// # Safety
/// `cfg` must be a live handle, `fom_dir` a NUL-terminated string, `out` a
/// valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn trt_offline(
    cfg: *const TrtConfig,
    fom_dir: *const c_char,
    xi: f64,
    out: *mut *mut TrtBasis,
) -> TrtStatus {
    guard(|| {
        let cfg = unsafe { borrow(cfg, "config") }?;
        let dir = unsafe { string_arg(fom_dir, "fom_dir") }?;
        let problem = Problem::from_config(&cfg.inner)?;
        let store = StoreReader::open(&PathBuf::from(dir))?;
        let src = StoreSnapshots::new(&problem.ps, &store)?;
        let (_, mut bases) = offline(&problem.ps, &src, &[xi], 32)?;
        let inner = bases.pop().expect("one basis per tolerance");
        unsafe { put(out, TrtBasis { inner }) }
    })
}

/// # Safety
/// `basis` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn trt_basis_write(basis: *const TrtBasis, dir: *const c_char) -> TrtStatus {
    guard(|| {
        let b = unsafe { borrow(basis, "basis") }?;
        let d = unsafe { string_arg(dir, "dir") }?;
        write_basis(&PathBuf::from(d), &b.inner)?;
        Ok(())
    })
}

/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn trt_basis_read(dir: *const c_char, out: *mut *mut TrtBasis) -> TrtStatus {
    guard(|| {
        let d = unsafe { string_arg(dir, "dir") }?;
        let inner = read_basis(&PathBuf::from(d))?;
        unsafe { put(out, TrtBasis { inner }) }
    })
}

/// Number of retained basis vectors, or 0 for a null handle.
///
/// # Safety
/// `basis` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn trt_basis_rank(basis: *const TrtBasis) -> usize {
    // SAFETY: null or live handle.
    unsafe { basis.as_ref() }.map_or(0, |b| b.inner.k())
}

/// # Safety
/// `basis` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn trt_basis_free(basis: *mut TrtBasis) {
    if !basis.is_null() {
        // SAFETY: created by `Box::into_raw` in this library.
        drop(unsafe { Box::from_raw(basis) });
    }
}

/// Runs the reduced-order model with `basis`.
///
/// # Safety
/// `cfg` and `basis` must be live handles and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn trt_rom_run(
    cfg: *const TrtConfig,
    basis: *const TrtBasis,
    out: *mut *mut TrtTrajectory,
) -> TrtStatus {
    guard(|| {
        let cfg = unsafe { borrow(cfg, "config") }?;
        let b = unsafe { borrow(basis, "basis") }?;
        let problem = Problem::from_config(&cfg.inner)?;
        let traj = rom_run(&problem, &b.inner, |_| Ok(()))?;
        unsafe {
            put(
                out,
                TrtTrajectory {
                    inner: traj,
                    n_cells: problem.ps.grid.n_cells(),
                },
            )
        }
    })
}

/// Number of records, the initial state included.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn trt_trajectory_len(traj: *const TrtTrajectory) -> usize {
    // SAFETY: null or live handle.
    unsafe { traj.as_ref() }.map_or(0, |t| t.inner.records.len())
}

/// Number of spatial cells per record.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn trt_trajectory_cells(traj: *const TrtTrajectory) -> usize {
    // SAFETY: null or live handle.
    unsafe { traj.as_ref() }.map_or(0, |t| t.n_cells)
}

unsafe fn copy_field(
    traj: *const TrtTrajectory,
    record: usize,
    buf: *mut f64,
    len: usize,
    pick: fn(&trt_rom::problem::StepRecord) -> &[f64],
) -> TrtStatus {
    guard(|| {
        let t = unsafe { borrow(traj, "trajectory") }?;
        let rec = t.inner.records.get(record).ok_or_else(|| {
            Failure::Status(TrtStatus::OutOfRange, format!("record {record} out of range"))
        })?;
        let src = pick(rec);
        if buf.is_null() {
            return Err(null("buffer"));
        }
        if len < src.len() {
            return Err(Failure::Status(
                TrtStatus::OutOfRange,
                format!("buffer holds {len} values, {} needed", src.len()),
            ));
        }
        // SAFETY: `buf` has room for `len >= src.len()` values.
        unsafe { ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len()) };
        Ok(())
    })
}

/// Copies the cell temperatures [keV] of one record into `buf`.
///
/// # Safety
/// `traj` must be a live handle and `buf` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn trt_trajectory_temperature(
    traj: *const TrtTrajectory,
    record: usize,
    buf: *mut f64,
    len: usize,
) -> TrtStatus {
    unsafe { copy_field(traj, record, buf, len, |r| &r.temperature) }
}

/// Copies the cell radiation energy densities of one record into `buf`.
///
/// # Safety
/// `traj` must be a live handle and `buf` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn trt_trajectory_energy(
    traj: *const TrtTrajectory,
    record: usize,
    buf: *mut f64,
    len: usize,
) -> TrtStatus {
    unsafe { copy_field(traj, record, buf, len, |r| &r.grey.e_cell) }
}

/// Largest per-step relative 2-norm errors of temperature and energy
/// density of `test` against `reference`.
///
/// # Safety
/// `cfg`, `reference` and `test` must be live handles; `err_t` and `err_e`
/// valid pointers.
#[no_mangle]
pub unsafe extern "C" fn trt_compare(
    cfg: *const TrtConfig,
    reference: *const TrtTrajectory,
    test: *const TrtTrajectory,
    err_t: *mut f64,
    err_e: *mut f64,
) -> TrtStatus {
    guard(|| {
        let cfg = unsafe { borrow(cfg, "config") }?;
        let r = unsafe { borrow(reference, "reference") }?;
        let t = unsafe { borrow(test, "test") }?;
        if err_t.is_null() || err_e.is_null() {
            return Err(null("error output"));
        }
        let problem = Problem::from_config(&cfg.inner)?;
        let rep = compare(&problem.ps, &r.inner, &t.inner)?;
        // SAFETY: both checked non-null.
        unsafe {
            *err_t = rep.max_temperature();
            *err_e = rep.max_energy();
        }
        Ok(())
    })
}

/// # Safety
/// `traj` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn trt_trajectory_free(traj: *mut TrtTrajectory) {
    if !traj.is_null() {
        // SAFETY: created by `Box::into_raw` in this library.
        drop(unsafe { Box::from_raw(traj) });
    }
}
