//! C interface to codebooks and trained encoded ensembles.
//!
//! Every fallible call returns an [`AttribensStatus`]; on failure the message
//! is available from [`attribens_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use attribens::codebook::{min_code_params, Codebook, WeightVector};
use attribens::diffusion::NoiseRecord;
use attribens::ensemble::EnsembleDenoiser;
use attribens::influence::compute_jacobian;
use attribens::manifest::LoadedManifest;
use attribens::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttribensStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Capacity = 3,
    Format = 4,
    Io = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

/// Opaque codebook handle.
pub struct AttribensCodebook(Codebook);

/// Opaque trained-ensemble handle.
pub struct AttribensEnsemble(EnsembleDenoiser);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> AttribensStatus {
    match e {
        Error::Capacity { .. } => AttribensStatus::Capacity,
        Error::Format(_) | Error::Json(_) => AttribensStatus::Format,
        Error::Io(_) => AttribensStatus::Io,
        Error::Degenerate(_) => AttribensStatus::Internal,
        _ => AttribensStatus::InvalidArgument,
    }
}

struct Failure(AttribensStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(AttribensStatus::NullPointer, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> AttribensStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            AttribensStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AttribensStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller passes a live handle or null.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn output<'a>(p: *mut f64, len: usize, needed: usize) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null("output buffer"));
    }
    if len < needed {
        return Err(Failure(
            AttribensStatus::BufferTooSmall,
            format!("buffer holds {len} values, {needed} needed"),
        ));
    }
    // SAFETY: the caller guarantees `len` writable values at `p`.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, needed) })
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out handle"));
    }
    // SAFETY: `out` is non-null and writable per the caller contract.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn attribens_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn attribens_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Smallest `(n, h = n/2)` whose capacity covers `num_groups` (twice that
/// when `doubled`).
///
/// # Safety
/// `out_n` and `out_h` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn attribens_min_code_params(
    num_groups: usize,
    doubled: bool,
    out_n: *mut usize,
    out_h: *mut usize,
) -> AttribensStatus {
    guard(|| {
        if out_n.is_null() || out_h.is_null() {
            return Err(null("output"));
        }
        let (n, h) = min_code_params(num_groups, doubled)?;
        // SAFETY: both checked non-null above.
        unsafe {
            *out_n = n;
            *out_h = h;
        }
        Ok(())
    })
}

/// Draws distinct weight-`h` codes for `num_groups` single-item groups.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn attribens_codebook_assign(
    num_groups: usize,
    n: usize,
    h: usize,
    seed: u64,
    out: *mut *mut AttribensCodebook,
) -> AttribensStatus {
    guard(|| {
        let cb = Codebook::assign(num_groups, n, h, seed)?;
        // SAFETY: forwarded caller contract.
        unsafe { store(out, AttribensCodebook(cb)) }
    })
}

/// Parses a codebook manifest.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn attribens_codebook_from_json(
    json: *const c_char,
    out: *mut *mut AttribensCodebook,
) -> AttribensStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        // SAFETY: non-null, NUL-terminated per the caller contract.
        let text = unsafe { CStr::from_ptr(json) }
            .to_str()
            .map_err(|e| Failure(AttribensStatus::Format, e.to_string()))?;
        let cb = Codebook::from_json(text)?;
        // SAFETY: forwarded caller contract.
        unsafe { store(out, AttribensCodebook(cb)) }
    })
}

/// Code length `n`, or 0 for a null handle.
///
/// # Safety
/// `cb` must be null or a live codebook handle.
#[no_mangle]
pub unsafe extern "C" fn attribens_codebook_n(cb: *const AttribensCodebook) -> usize {
    // SAFETY: forwarded caller contract.
    unsafe { cb.as_ref() }.map_or(0, |c| c.0.n())
}

/// Code weight `h`, or 0 for a null handle.
///
/// # Safety
/// `cb` must be null or a live codebook handle.
#[no_mangle]
pub unsafe extern "C" fn attribens_codebook_h(cb: *const AttribensCodebook) -> usize {
    // SAFETY: forwarded caller contract.
    unsafe { cb.as_ref() }.map_or(0, |c| c.0.h())
}

/// Number of code groups, or 0 for a null handle.
///
/// # Safety
/// `cb` must be null or a live codebook handle.
#[no_mangle]
pub unsafe extern "C" fn attribens_codebook_num_groups(cb: *const AttribensCodebook) -> usize {
    // SAFETY: forwarded caller contract.
    unsafe { cb.as_ref() }.map_or(0, |c| c.0.num_groups())
}

/// Writes the `n` ensemble weights with `group` ablated; a negative group
/// gives the uniform weights.
///
/// # Safety
/// `cb` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn attribens_codebook_weight_vector(
    cb: *const AttribensCodebook,
    group: i64,
    out: *mut f64,
    len: usize,
) -> AttribensStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let cb = unsafe { deref(cb, "codebook") }?;
        let v = match usize::try_from(group) {
            Ok(g) => cb.0.group_weight_vector(g)?,
            Err(_) => WeightVector::uniform(cb.0.n()),
        };
        // SAFETY: forwarded caller contract.
        unsafe { output(out, len, v.len()) }?.copy_from_slice(v.as_slice());
        Ok(())
    })
}

/// Checks that every ablation keeps a model for every other group.
///
/// # Safety
/// `cb` must be a live handle and `covered` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn attribens_codebook_verify_coverage(
    cb: *const AttribensCodebook,
    covered: *mut bool,
) -> AttribensStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let cb = unsafe { deref(cb, "codebook") }?;
        if covered.is_null() {
            return Err(null("covered"));
        }
        // SAFETY: checked non-null above.
        unsafe { *covered = cb.0.verify_coverage().0 };
        Ok(())
    })
}

/// # Safety
/// `cb` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn attribens_codebook_free(cb: *mut AttribensCodebook) {
    if !cb.is_null() {
        // SAFETY: allocated by `store` and not yet freed.
        drop(unsafe { Box::from_raw(cb) });
    }
}

/// Loads a trained ensemble from a run manifest, verifying file digests.
///
/// # Safety
/// `manifest_path` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn attribens_ensemble_load(
    manifest_path: *const c_char,
    out: *mut *mut AttribensEnsemble,
) -> AttribensStatus {
    guard(|| {
        if manifest_path.is_null() {
            return Err(null("manifest_path"));
        }
        // SAFETY: non-null, NUL-terminated per the caller contract.
        let path = unsafe { CStr::from_ptr(manifest_path) }
            .to_str()
            .map_err(|e| Failure(AttribensStatus::InvalidArgument, e.to_string()))?;
        let ens = LoadedManifest::load(Path::new(path))?.ensemble()?;
        // SAFETY: forwarded caller contract.
        unsafe { store(out, AttribensEnsemble(ens)) }
    })
}

/// Member count, or 0 for a null handle.
///
/// # Safety
/// `ens` must be null or a live ensemble handle.
#[no_mangle]
pub unsafe extern "C" fn attribens_ensemble_len(ens: *const AttribensEnsemble) -> usize {
    // SAFETY: forwarded caller contract.
    unsafe { ens.as_ref() }.map_or(0, |e| e.0.len())
}

/// Flattened sample dimension, or 0 for a null handle.
///
/// # Safety
/// `ens` must be null or a live ensemble handle.
#[no_mangle]
pub unsafe extern "C" fn attribens_ensemble_sample_dim(ens: *const AttribensEnsemble) -> usize {
    // SAFETY: forwarded caller contract.
    unsafe { ens.as_ref() }.map_or(0, |e| e.0.sample_dim())
}

fn record_for(ens: &EnsembleDenoiser, seed: u64, stream_id: u64) -> NoiseRecord {
    NoiseRecord::new(seed, stream_id, ens.schedule().steps, vec![ens.sample_dim()])
}

/// Generates the sample for noise `(seed, stream_id)` under `weights`.
///
/// # Safety
/// `ens` must be a live handle, `weights` readable for `num_weights` values
/// and `out` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn attribens_ensemble_generate(
    ens: *const AttribensEnsemble,
    weights: *const f64,
    num_weights: usize,
    seed: u64,
    stream_id: u64,
    out: *mut f64,
    len: usize,
) -> AttribensStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let ens = &unsafe { deref(ens, "ensemble") }?.0;
        if weights.is_null() {
            return Err(null("weights"));
        }
        // SAFETY: readable for `num_weights` values per the caller contract.
        let v = WeightVector(unsafe { std::slice::from_raw_parts(weights, num_weights) }.to_vec());
        let rec = ens.generate(&v, &record_for(ens, seed, stream_id))?;
        // SAFETY: forwarded caller contract.
        let dst = unsafe { output(out, len, ens.sample_dim()) }?;
        dst.iter_mut().zip(rec.sample.data()).for_each(|(d, s)| *d = f64::from(*s));
        Ok(())
    })
}

/// Regenerates noise `(seed, stream_id)` with `group` ablated.
///
/// # Safety
/// `ens` must be a live handle and `out` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn attribens_ensemble_counterfactual(
    ens: *const AttribensEnsemble,
    group: usize,
    seed: u64,
    stream_id: u64,
    out: *mut f64,
    len: usize,
) -> AttribensStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let ens = &unsafe { deref(ens, "ensemble") }?.0;
        let rec = ens.group_counterfactual(group, &record_for(ens, seed, stream_id))?;
        // SAFETY: forwarded caller contract.
        let dst = unsafe { output(out, len, ens.sample_dim()) }?;
        dst.iter_mut().zip(rec.sample.data()).for_each(|(d, s)| *d = f64::from(*s));
        Ok(())
    })
}

/// Writes the `sample_dim × len(ens)` Jacobian, row-major.
///
/// # Safety
/// `ens` must be a live handle and `out` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn attribens_ensemble_jacobian(
    ens: *const AttribensEnsemble,
    seed: u64,
    stream_id: u64,
    out: *mut f64,
    len: usize,
) -> AttribensStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let ens = &unsafe { deref(ens, "ensemble") }?.0;
        let j = compute_jacobian(ens, &record_for(ens, seed, stream_id))?;
        // SAFETY: forwarded caller contract.
        unsafe { output(out, len, j.entries.len()) }?.copy_from_slice(&j.entries);
        Ok(())
    })
}

/// # Safety
/// `ens` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn attribens_ensemble_free(ens: *mut AttribensEnsemble) {
    if !ens.is_null() {
        // SAFETY: allocated by `store` and not yet freed.
        drop(unsafe { Box::from_raw(ens) });
    }
}

