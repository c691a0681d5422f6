//! C ABI over the dpkit privacy accountant, per-example clipping, Gaussian
//! aggregation and the Laplace mechanism.
//!
//! Every fallible function returns a [`DpkitStatus`]. On failure the message
//! is kept per thread and can be copied out with [`dpkit_last_error_message`].
//! Buffers are caller-owned; the only Rust-owned object is the accountant
//! handle, released with [`dpkit_accountant_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use dpkit::accountant::{
    calibrate_noise_with, epsilon_of_with, Accounting, Conversion, PrivacyAccountant, PrivacySpec, SubsampleSchedule,
};
use dpkit::autograd::PerSampleGrads;
use dpkit::mechanisms::{laplace_perturb, LaplaceParams};
use dpkit::{Error, ErrorKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpkitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InfinitePrivacyLoss = 3,
    CalibrationOutOfRange = 4,
    Shape = 5,
    Config = 6,
    Data = 7,
    Parse = 8,
    Io = 9,
    Panic = 10,
}

/// Privacy accounting method.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpkitAccounting {
    /// Numerical privacy-loss distribution; the library default.
    Pld = 0,
    /// Rényi accounting with the improved conversion to (epsilon, delta).
    Rdp = 1,
    /// Rényi accounting with the classic conversion.
    RdpClassic = 2,
}

impl From<DpkitAccounting> for Accounting {
    fn from(a: DpkitAccounting) -> Self {
        match a {
            DpkitAccounting::Pld => Accounting::Pld,
            DpkitAccounting::Rdp => Accounting::Rdp(Conversion::Improved),
            DpkitAccounting::RdpClassic => Accounting::Rdp(Conversion::Classic),
        }
    }
}

/// Opaque running accountant for a fixed noise multiplier and sampling rate.
pub struct DpkitAccountant {
    inner: PrivacyAccountant,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DpkitStatus {
    match e.kind() {
        ErrorKind::InfinitePrivacyLoss => DpkitStatus::InfinitePrivacyLoss,
        ErrorKind::InvalidArgument => DpkitStatus::InvalidArgument,
        ErrorKind::CalibrationOutOfRange => DpkitStatus::CalibrationOutOfRange,
        ErrorKind::Shape => DpkitStatus::Shape,
        ErrorKind::Config => DpkitStatus::Config,
        ErrorKind::Data => DpkitStatus::Data,
        ErrorKind::Parse => DpkitStatus::Parse,
        ErrorKind::Io => DpkitStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, translating errors and panics into a status and the last-error slot.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> DpkitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DpkitStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("null pointer passed for `{what}`"));
            DpkitStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            DpkitStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(())
    }
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn dpkit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes of the last error message on this thread, excluding the
/// terminator; 0 when there is none.
#[no_mangle]
pub extern "C" fn dpkit_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes().len()))
}

/// Copies the last error message into `buf`, truncating to `len - 1` bytes
/// and always nul-terminating when `len > 0`. Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dpkit_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |c| c.as_bytes());
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Clears the last error on this thread.
#[no_mangle]
pub extern "C" fn dpkit_clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Epsilon spent by `steps` Poisson-subsampled Gaussian steps.
///
/// # Safety
/// `out` must point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn dpkit_epsilon_of(
    sigma: f64,
    sample_rate: f64,
    steps: u64,
    delta: f64,
    accounting: DpkitAccounting,
    out: *mut f64,
) -> DpkitStatus {
    guard(|| {
        non_null(out, "out")?;
        let schedule = SubsampleSchedule::new(sample_rate, steps)?;
        *out = epsilon_of_with(sigma, &schedule, delta, accounting.into())?;
        Ok(())
    })
}

/// Smallest noise multiplier meeting `(epsilon, delta)` for `epochs` passes
/// over `dataset_size` examples at expected batch size `batch_size`.
///
/// # Safety
/// `sigma_out` must point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn dpkit_calibrate(
    epsilon: f64,
    delta: f64,
    batch_size: usize,
    epochs: usize,
    dataset_size: usize,
    accounting: DpkitAccounting,
    sigma_out: *mut f64,
) -> DpkitStatus {
    guard(|| {
        non_null(sigma_out, "sigma_out")?;
        let target = PrivacySpec::new(epsilon, delta)?;
        let schedule = SubsampleSchedule::from_training(batch_size, epochs, dataset_size)?;
        *sigma_out = calibrate_noise_with(&target, &schedule, accounting.into())?.get();
        Ok(())
    })
}

/// Creates an accountant with zero steps recorded.
///
/// # Safety
/// `out` must point to a writable handle slot. On success it receives a
/// handle that must be released with [`dpkit_accountant_free`].
#[no_mangle]
pub unsafe extern "C" fn dpkit_accountant_new(
    sigma: f64,
    sample_rate: f64,
    delta: f64,
    accounting: DpkitAccounting,
    out: *mut *mut DpkitAccountant,
) -> DpkitStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = std::ptr::null_mut();
        let inner = PrivacyAccountant::new(sigma, sample_rate, delta)?.with_accounting(accounting.into());
        *out = Box::into_raw(Box::new(DpkitAccountant { inner }));
        Ok(())
    })
}

/// Records `n` more steps.
///
/// # Safety
/// `handle` must come from [`dpkit_accountant_new`] and not be freed.
#[no_mangle]
pub unsafe extern "C" fn dpkit_accountant_step(handle: *mut DpkitAccountant, n: u64) -> DpkitStatus {
    guard(|| {
        non_null(handle, "handle")?;
        (*handle).inner.step(n);
        Ok(())
    })
}

/// # Safety
/// `handle` must come from [`dpkit_accountant_new`] and not be freed; `out`
/// must point to a writable `uint64_t`.
#[no_mangle]
pub unsafe extern "C" fn dpkit_accountant_steps(handle: *const DpkitAccountant, out: *mut u64) -> DpkitStatus {
    guard(|| {
        non_null(handle, "handle")?;
        non_null(out, "out")?;
        *out = (*handle).inner.steps();
        Ok(())
    })
}

/// Epsilon spent so far; infinite when sigma is zero.
///
/// # Safety
/// `handle` must come from [`dpkit_accountant_new`] and not be freed; `out`
/// must point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn dpkit_accountant_epsilon(handle: *const DpkitAccountant, out: *mut f64) -> DpkitStatus {
    guard(|| {
        non_null(handle, "handle")?;
        non_null(out, "out")?;
        *out = (*handle).inner.epsilon()?;
        Ok(())
    })
}

/// Releases an accountant. Null is ignored.
///
/// # Safety
/// `handle` must be null or come from [`dpkit_accountant_new`], and must not
/// be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dpkit_accountant_free(handle: *mut DpkitAccountant) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

unsafe fn read_grads(grads: *const f64, rows: usize, dim: usize) -> Result<PerSampleGrads, Failure> {
    non_null(grads, "grads")?;
    let len = rows
        .checked_mul(dim)
        .ok_or_else(|| Error::Shape(format!("{rows} x {dim} overflows")))?;
    let data = std::slice::from_raw_parts(grads, len).to_vec();
    Ok(PerSampleGrads::new(dim, data)?)
}

/// Scales each of the `rows` row-major gradients of length `dim` in place so
/// its L2 norm is at most `clip_norm`.
///
/// # Safety
/// `grads` must point to `rows * dim` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dpkit_clip_per_sample(grads: *mut f64, rows: usize, dim: usize, clip_norm: f64) -> DpkitStatus {
    guard(|| {
        let clipped = dpkit::dp::clip_per_sample(&read_grads(grads, rows, dim)?, clip_norm)?;
        std::ptr::copy_nonoverlapping(clipped.data().as_ptr(), grads, clipped.data().len());
        Ok(())
    })
}

/// Writes `(sum of clipped rows + N(0, sigma^2 clip_norm^2)) / expected_batch`
/// into `out`. The noise stream is determined by `seed`.
///
/// # Safety
/// `grads` must point to `rows * dim` readable doubles and `out` to `dim`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dpkit_privatize(
    grads: *const f64,
    rows: usize,
    dim: usize,
    clip_norm: f64,
    sigma: f64,
    expected_batch: f64,
    seed: u64,
    out: *mut f64,
) -> DpkitStatus {
    guard(|| {
        non_null(out, "out")?;
        let g = read_grads(grads, rows, dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy = dpkit::dp::privatize(&g, clip_norm, sigma, expected_batch, &mut rng)?;
        std::ptr::copy_nonoverlapping(noisy.as_ptr(), out, dim);
        Ok(())
    })
}

/// Adds i.i.d. Laplace noise of scale `sensitivity / epsilon` to `len`
/// values in place. The noise stream is determined by `seed`.
///
/// # Safety
/// `data` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dpkit_laplace_perturb(
    data: *mut f64,
    len: usize,
    epsilon: f64,
    sensitivity: f64,
    seed: u64,
) -> DpkitStatus {
    guard(|| {
        non_null(data, "data")?;
        let params = LaplaceParams::new(epsilon, sensitivity)?;
        let values = std::slice::from_raw_parts_mut(data, len);
        let tensor = dpkit::autograd::Tensor::from_vec(vec![len], values.to_vec())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy = laplace_perturb(&tensor, &params, &mut rng)?;
        values.copy_from_slice(noisy.data());
        Ok(())
    })
}
