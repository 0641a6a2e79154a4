//! C ABI over the `aslrkit` library.
//!
//! Every fallible function returns an [`AslrkitStatus`]; on failure the
//! message is available from [`aslrkit_last_error`] on the same thread.
//! Objects cross the boundary as opaque handles released with their
//! matching `_free` function. Strings returned to the caller are freed with
//! [`aslrkit_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use aslrkit::attack::{self, ThreatModel};
use aslrkit::estimate::{self, EntropyEstimate, Estimator};
use aslrkit::report::{analyze, AnalyzeConfig};
use aslrkit::sample::{load_path, save_path, SampleSet};
use aslrkit::synth::{generate_with_seed, load_policy};
use aslrkit::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AslrkitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Estimator = 5,
    Policy = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AslrkitEstimator {
    Nsb = 0,
    Plugin = 1,
}

/// A loaded or generated sample set.
pub struct AslrkitSampleSet {
    inner: SampleSet,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AslrkitEstimate {
    pub bits: f64,
    pub posterior_std_bits: f64,
    pub n_samples: u64,
    pub alphabet_log2: f64,
    pub bias_bound: f64,
    pub low_confidence: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AslrkitCost {
    pub attempts: f64,
    pub seconds: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AslrkitCrossection {
    pub direct: AslrkitCost,
    pub leaked: AslrkitCost,
    pub gain_factor: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

type Fail = (AslrkitStatus, String);

fn status_of(e: &Error) -> AslrkitStatus {
    match e {
        Error::Io(_) => AslrkitStatus::Io,
        Error::Format { .. } | Error::Invariant { .. } | Error::MalformedName { .. } | Error::Alignment { .. } => AslrkitStatus::Format,
        Error::EmptySeries | Error::AlphabetTooSmall { .. } | Error::LengthMismatch(..) | Error::DegenerateRange(_) => {
            AslrkitStatus::Estimator
        }
        Error::Policy(_) | Error::UnknownObject(_) => AslrkitStatus::Policy,
        _ => AslrkitStatus::InvalidArgument,
    }
}

fn fail(e: Error) -> Fail {
    (status_of(&e), e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AslrkitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AslrkitStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            AslrkitStatus::Panic
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err((AslrkitStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (AslrkitStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a>(p: *const u64, n: usize, what: &str) -> Result<&'a [u64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err((AslrkitStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn out_ptr<T>(p: *mut T) -> Result<(), Fail> {
    if p.is_null() {
        Err((AslrkitStatus::NullPointer, "output pointer is null".into()))
    } else {
        Ok(())
    }
}

fn threat(tps: f64) -> Result<ThreatModel, Fail> {
    ThreatModel::new(tps).map_err(fail)
}

fn estimator(e: u32) -> Result<Estimator, Fail> {
    match e {
        0 => Ok(Estimator::Nsb),
        1 => Ok(Estimator::Plugin),
        _ => Err((AslrkitStatus::InvalidArgument, format!("unknown estimator {e}"))),
    }
}

fn c_estimate(e: EntropyEstimate) -> AslrkitEstimate {
    AslrkitEstimate {
        bits: e.bits,
        posterior_std_bits: e.posterior_std_bits,
        n_samples: e.n_samples as u64,
        alphabet_log2: e.alphabet_log2,
        bias_bound: e.bias_bound,
        low_confidence: e.low_confidence,
    }
}

fn c_cost(c: attack::Cost) -> AslrkitCost {
    AslrkitCost { attempts: c.attempts, seconds: c.seconds }
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn aslrkit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn aslrkit_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a sample file.
#[no_mangle]
pub unsafe extern "C" fn aslrkit_sample_set_load(path: *const c_char, out: *mut *mut AslrkitSampleSet) -> AslrkitStatus {
    guard(|| {
        out_ptr(out)?;
        let path = c_str(path, "path")?;
        let set = load_path(Path::new(path)).map_err(fail)?;
        *out = Box::into_raw(Box::new(AslrkitSampleSet { inner: set }));
        Ok(())
    })
}

/// Simulates `runs` records from a builtin policy name or policy file. A
/// null `seed` keeps the policy's own seed.
#[no_mangle]
pub unsafe extern "C" fn aslrkit_synth_generate(
    policy: *const c_char,
    runs: u64,
    seed: *const u64,
    out: *mut *mut AslrkitSampleSet,
) -> AslrkitStatus {
    guard(|| {
        out_ptr(out)?;
        let p = load_policy(c_str(policy, "policy")?).map_err(fail)?;
        let seed = if seed.is_null() { p.seed } else { *seed };
        let set = generate_with_seed(&p, runs, seed).map_err(fail)?;
        *out = Box::into_raw(Box::new(AslrkitSampleSet { inner: set }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn aslrkit_sample_set_free(set: *mut AslrkitSampleSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Number of records; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn aslrkit_sample_set_len(set: *const AslrkitSampleSet) -> usize {
    set.as_ref().map_or(0, |s| s.inner.len())
}

#[no_mangle]
pub unsafe extern "C" fn aslrkit_sample_set_save(set: *const AslrkitSampleSet, path: *const c_char) -> AslrkitStatus {
    guard(|| {
        let set = set.as_ref().ok_or((AslrkitStatus::NullPointer, "sample set is null".into()))?;
        save_path(&set.inner, Path::new(c_str(path, "path")?)).map_err(fail)
    })
}

/// Copies the addresses of `object` into `buf`. `len` receives the record
/// count; when it exceeds `cap` nothing is copied and BufferTooSmall is
/// returned. Objects with missing addresses are rejected.
#[no_mangle]
pub unsafe extern "C" fn aslrkit_sample_set_series(
    set: *const AslrkitSampleSet,
    object: *const c_char,
    buf: *mut u64,
    cap: usize,
    len: *mut usize,
) -> AslrkitStatus {
    guard(|| {
        out_ptr(len)?;
        let set = set.as_ref().ok_or((AslrkitStatus::NullPointer, "sample set is null".into()))?;
        let name = c_str(object, "object")?;
        if set.inner.object_index(name).is_none() {
            return Err(fail(Error::UnknownObject(name.into())));
        }
        let v = set.inner.series(name).ok_or((AslrkitStatus::InvalidArgument, format!("{name} has missing addresses")))?;
        *len = v.len();
        if v.len() > cap {
            return Err((AslrkitStatus::BufferTooSmall, format!("need {} slots, have {cap}", v.len())));
        }
        if !v.is_empty() {
            out_ptr(buf)?;
            ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
        }
        Ok(())
    })
}

/// NSB entropy of already-normalized values. A negative or NaN
/// `alphabet_log2` selects the default alphabet from the observed spread.
#[no_mangle]
pub unsafe extern "C" fn aslrkit_nsb_entropy(values: *const u64, n: usize, alphabet_log2: f64, out: *mut AslrkitEstimate) -> AslrkitStatus {
    guard(|| {
        out_ptr(out)?;
        let v = slice(values, n, "values")?;
        let a = (alphabet_log2 >= 0.0).then_some(alphabet_log2);
        *out = c_estimate(estimate::nsb_entropy(v, a).map_err(fail)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn aslrkit_plugin_entropy(values: *const u64, n: usize, out: *mut AslrkitEstimate) -> AslrkitStatus {
    guard(|| {
        out_ptr(out)?;
        *out = c_estimate(estimate::plugin_entropy(slice(values, n, "values")?).map_err(fail)?);
        Ok(())
    })
}

/// Entropy of the paired differences `a[i] - b[i]`.
#[no_mangle]
pub unsafe extern "C" fn aslrkit_correlation_entropy(
    a: *const u64,
    b: *const u64,
    n: usize,
    estimator_kind: u32,
    out: *mut AslrkitEstimate,
) -> AslrkitStatus {
    guard(|| {
        out_ptr(out)?;
        let e = estimator(estimator_kind)?;
        let r = estimate::correlation_entropy(slice(a, n, "a")?, slice(b, n, "b")?, e).map_err(fail)?;
        *out = c_estimate(r);
        Ok(())
    })
}

/// Smallest sample count keeping the estimator bias under `max_bias`.
#[no_mangle]
pub unsafe extern "C" fn aslrkit_min_samples(entropy_bits: f64, max_bias: f64, out: *mut u64) -> AslrkitStatus {
    guard(|| {
        out_ptr(out)?;
        if !(entropy_bits >= 0.0 && entropy_bits.is_finite() && max_bias > 0.0 && max_bias < 1.0) {
            return Err((AslrkitStatus::InvalidArgument, "need entropy_bits >= 0 and 0 < max_bias < 1".into()));
        }
        *out = estimate::min_samples(entropy_bits, max_bias);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn aslrkit_bruteforce_cost(bits: f64, tps: f64, out: *mut AslrkitCost) -> AslrkitStatus {
    guard(|| {
        out_ptr(out)?;
        *out = c_cost(attack::bruteforce_cost(bits, threat(tps)?));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn aslrkit_spray_cost(region_bytes: u64, payload_bytes: u64, tps: f64, out: *mut AslrkitCost) -> AslrkitStatus {
    guard(|| {
        out_ptr(out)?;
        *out = c_cost(attack::spray_cost(region_bytes, payload_bytes, threat(tps)?).map_err(fail)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn aslrkit_crossection_gain(
    abs_bits_target: f64,
    corr_bits_via_leak: f64,
    tps: f64,
    out: *mut AslrkitCrossection,
) -> AslrkitStatus {
    guard(|| {
        out_ptr(out)?;
        let g = attack::crossection_gain(abs_bits_target, corr_bits_via_leak, threat(tps)?);
        *out = AslrkitCrossection { direct: c_cost(g.direct), leaked: c_cost(g.leaked), gain_factor: g.gain_factor };
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn aslrkit_partial_overwrite_bits(pointer_delta_bytes: u64, page_align_bits: u32) -> u32 {
    attack::partial_overwrite_bits(pointer_delta_bytes, page_align_bits)
}

/// Runs the full analysis and returns the report as a JSON string. A
/// negative or NaN `alphabet_override_bits` means no override.
#[no_mangle]
pub unsafe extern "C" fn aslrkit_analyze_json(
    set: *const AslrkitSampleSet,
    estimator_kind: u32,
    tps: f64,
    alphabet_override_bits: f64,
    out_json: *mut *mut c_char,
) -> AslrkitStatus {
    guard(|| {
        out_ptr(out_json)?;
        let set = set.as_ref().ok_or((AslrkitStatus::NullPointer, "sample set is null".into()))?;
        let cfg = AnalyzeConfig {
            estimator: estimator(estimator_kind)?,
            tps,
            alphabet_override_bits: (alphabet_override_bits >= 0.0).then_some(alphabet_override_bits),
        };
        let report = analyze(&set.inner, &cfg).map_err(fail)?;
        *out_json = CString::new(report.to_json()).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}
