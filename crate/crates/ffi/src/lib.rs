//! C ABI for the `kpo-gates` simulator.
//!
//! The surface follows the usual C conventions: opaque handles created and
//! destroyed by paired `_new`/`_free` calls, status codes on every fallible
//! function, out-parameters for results, and a thread-local error message
//! retrievable with [`kpo_last_error`]. The matching header
//! (`include/kpo_gates.h`) is generated by `cbindgen` at build time.
//!
//! Every entry point catches panics, so no unwind ever crosses the ABI.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use kpo_gates::dynamics::IntegratorConfig;
use kpo_gates::error::Error;
use kpo_gates::metrics::{average_fidelity_loss, gate_fidelity, loss_infidelity_estimate};
use kpo_gates::model::{CounterVariant, GateKind, GateProblem, PhysicalConstants};
use kpo_gates::optimizer::{optimize_gate, GateOptimizerOptions};
use kpo_gates::pulses::{analytic_pulse, PulseFile, Waveform};

/// Status code returned by every fallible function of this library.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KpoStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was out of range or inconsistent (see `kpo_last_error`).
    InvalidArgument = 2,
    /// A numerical procedure failed (non-finite values, failed calibration,
    /// or a step-size check).
    Numerical = 3,
    /// A string argument was not valid UTF-8 or not valid JSON.
    Json = 4,
    /// An internal panic was caught at the boundary; state may be stale but
    /// the process is intact.
    Panic = 5,
}

/// Gate generators selectable through the ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KpoGate {
    /// Single-mode Z rotation, drive `a† + a`.
    Rz = 0,
    /// Single-mode X rotation, drive `a†a`.
    Rx = 1,
    /// Two-mode ZZ rotation by two-mode squeezing, `a1†a2† + a1a2`.
    RzzTwoModeSqueezing = 2,
    /// Two-mode ZZ rotation by a beam splitter, `a1†a2 + a2†a1`.
    RzzBeamSplitter = 3,
}

/// Choice of the second (counter) drive accompanying the gate drive.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KpoCounter {
    /// No counter drive.
    None = 0,
    /// The gate's matching counteradiabatic form.
    Standard = 1,
    /// Deliberately mismatched beam-splitter counter (two-mode gates only).
    BeamSplitterOrthogonal = 2,
}

/// Average-fidelity scores of a propagated gate.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KpoFidelity {
    /// Average gate fidelity over uniformly distributed qubit states.
    pub fbar: f64,
    /// `1 - fbar`.
    pub infidelity: f64,
    /// `1 - tr(UU†)/d`: population lost from the encoded subspace.
    pub leakage: f64,
}

/// Opaque handle to a gate problem (operators, ideal unitary, constants).
pub struct KpoProblem(GateProblem);

/// Opaque handle to a waveform pair `(g0(t), g1(t))`.
pub struct KpoWaveform(Waveform);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn status_of(err: &Error) -> KpoStatus {
    match err {
        Error::NonFinite(_) | Error::CalibrationFailed(_) | Error::StepCheckFailed { .. } => {
            KpoStatus::Numerical
        }
        Error::Json(_) => KpoStatus::Json,
        _ => KpoStatus::InvalidArgument,
    }
}

fn fail(err: Error) -> KpoStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn fail_null(what: &str) -> KpoStatus {
    set_error(format!("{what} must not be null"));
    KpoStatus::NullPointer
}

/// Runs `body` with panics converted to [`KpoStatus::Panic`].
fn guarded(body: impl FnOnce() -> KpoStatus) -> KpoStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let text = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {text}"));
            KpoStatus::Panic
        }
    }
}

fn gate_kind(gate: KpoGate) -> GateKind {
    match gate {
        KpoGate::Rz => GateKind::Rz,
        KpoGate::Rx => GateKind::Rx,
        KpoGate::RzzTwoModeSqueezing => GateKind::RzzTwoModeSqueezing,
        KpoGate::RzzBeamSplitter => GateKind::RzzBeamSplitter,
    }
}

fn counter_variant(counter: KpoCounter) -> CounterVariant {
    match counter {
        KpoCounter::None => CounterVariant::None,
        KpoCounter::Standard => CounterVariant::Standard,
        KpoCounter::BeamSplitterOrthogonal => CounterVariant::BeamSplitterOrthogonal,
    }
}

fn config(dt: f64) -> IntegratorConfig {
    IntegratorConfig {
        dt,
        ..IntegratorConfig::default()
    }
}

unsafe fn utf8<'a>(ptr: *const c_char) -> Result<&'a str, KpoStatus> {
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(s),
        Err(_) => {
            set_error("string argument is not valid UTF-8".into());
            Err(KpoStatus::Json)
        }
    }
}

/// Version of the library as a static C string.
#[no_mangle]
pub extern "C" fn kpo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last error raised on the calling thread, or null when the
/// last call succeeded. The pointer stays valid until the thread's next
/// failing call into this library.
#[no_mangle]
pub extern "C" fn kpo_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| match &*slot.borrow() {
        Some(c) => c.as_ptr(),
        None => std::ptr::null(),
    })
}

/// Creates a gate problem: the KPO Hamiltonian on a Fock space truncated at
/// `cutoff` photons per mode, the drive pair of `gate`/`counter`, and the
/// ideal target unitary for `angle`. `k` and `p` are the Kerr coefficient
/// and pump amplitude; the cat size is `alpha² = p/k`.
///
/// On success writes a handle to `*out` which must be released with
/// [`kpo_problem_free`].
///
/// # Safety
/// `out` must point to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn kpo_problem_new(
    gate: KpoGate,
    counter: KpoCounter,
    angle: f64,
    k: f64,
    p: f64,
    cutoff: u32,
    out: *mut *mut KpoProblem,
) -> KpoStatus {
    guarded(|| {
        if out.is_null() {
            return fail_null("out");
        }
        clear_error();
        let constants = match PhysicalConstants::new(k, p) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        match GateProblem::new(
            gate_kind(gate),
            counter_variant(counter),
            angle,
            constants,
            cutoff as usize,
        ) {
            Ok(problem) => {
                *out = Box::into_raw(Box::new(KpoProblem(problem)));
                KpoStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a problem handle. Passing null is a no-op.
///
/// # Safety
/// `problem` must be a pointer returned by [`kpo_problem_new`] that has not
/// been freed already.
#[no_mangle]
pub unsafe extern "C" fn kpo_problem_free(problem: *mut KpoProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Creates the closed-form waveform pair of `gate` at gate time `t_total`
/// (in units of `1/K`). `delta` may be null except for `Rx`, whose pulse
/// needs a detuning; `with_counter` selects whether `g1` is the matching
/// counter pulse or identically zero.
///
/// On success writes a handle to `*out` which must be released with
/// [`kpo_waveform_free`].
///
/// # Safety
/// `out` must point to writable memory for one pointer; `delta`, when
/// non-null, must point to a readable `double`.
#[no_mangle]
pub unsafe extern "C" fn kpo_waveform_analytic(
    gate: KpoGate,
    angle: f64,
    delta: *const f64,
    t_total: f64,
    with_counter: bool,
    k: f64,
    p: f64,
    out: *mut *mut KpoWaveform,
) -> KpoStatus {
    guarded(|| {
        if out.is_null() {
            return fail_null("out");
        }
        clear_error();
        let constants = match PhysicalConstants::new(k, p) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        let delta = if delta.is_null() { None } else { Some(*delta) };
        match analytic_pulse(
            gate_kind(gate),
            angle,
            delta,
            t_total,
            with_counter,
            constants,
        ) {
            Ok(waveform) => {
                *out = Box::into_raw(Box::new(KpoWaveform(waveform)));
                KpoStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Loads a waveform from the JSON text of a pulse file written by the
/// `kpo-gates optimize` command (the `gate`/`counter`/`meta` provenance
/// fields are ignored here; only the coefficients are used).
///
/// # Safety
/// `json` must be a null-terminated string; `out` must point to writable
/// memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn kpo_waveform_from_pulse_json(
    json: *const c_char,
    out: *mut *mut KpoWaveform,
) -> KpoStatus {
    guarded(|| {
        if json.is_null() {
            return fail_null("json");
        }
        if out.is_null() {
            return fail_null("out");
        }
        clear_error();
        let text = match utf8(json) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let parsed = PulseFile::from_json(text).and_then(|file| file.coefficients());
        match parsed {
            Ok(coefficients) => {
                *out = Box::into_raw(Box::new(KpoWaveform(Waveform::Fourier(coefficients))));
                KpoStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Writes the waveform's total duration (units of `1/K`) to `*out`.
///
/// # Safety
/// `waveform` must be a live waveform handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kpo_waveform_duration(
    waveform: *const KpoWaveform,
    out: *mut f64,
) -> KpoStatus {
    guarded(|| {
        if waveform.is_null() {
            return fail_null("waveform");
        }
        if out.is_null() {
            return fail_null("out");
        }
        clear_error();
        *out = (*waveform).0.duration();
        KpoStatus::Ok
    })
}

/// Evaluates the waveform at time `t ∈ [0, duration]`, writing the gate
/// amplitude to `*out_g0` and the counter amplitude to `*out_g1`.
///
/// # Safety
/// `waveform` must be a live waveform handle; both out-pointers must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn kpo_waveform_eval(
    waveform: *const KpoWaveform,
    t: f64,
    out_g0: *mut f64,
    out_g1: *mut f64,
) -> KpoStatus {
    guarded(|| {
        if waveform.is_null() {
            return fail_null("waveform");
        }
        if out_g0.is_null() || out_g1.is_null() {
            return fail_null("out_g0/out_g1");
        }
        clear_error();
        let wf = &(*waveform).0;
        let g0 = match wf.eval_g0(t) {
            Ok(v) => v,
            Err(e) => return fail(e),
        };
        let g1 = match wf.eval_g1(t) {
            Ok(v) => v,
            Err(e) => return fail(e),
        };
        *out_g0 = g0;
        *out_g1 = g1;
        KpoStatus::Ok
    })
}

/// Releases a waveform handle. Passing null is a no-op.
///
/// # Safety
/// `waveform` must be a pointer returned by this library that has not been
/// freed already.
#[no_mangle]
pub unsafe extern "C" fn kpo_waveform_free(waveform: *mut KpoWaveform) {
    if !waveform.is_null() {
        drop(Box::from_raw(waveform));
    }
}

/// Propagates the gate of `problem` under `waveform` with step `dt` and
/// writes its average-fidelity scores to `*out`.
///
/// # Safety
/// `problem` and `waveform` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kpo_gate_fidelity(
    problem: *const KpoProblem,
    waveform: *const KpoWaveform,
    dt: f64,
    out: *mut KpoFidelity,
) -> KpoStatus {
    guarded(|| {
        if problem.is_null() {
            return fail_null("problem");
        }
        if waveform.is_null() {
            return fail_null("waveform");
        }
        if out.is_null() {
            return fail_null("out");
        }
        clear_error();
        match gate_fidelity(&(*problem).0, &(*waveform).0, &config(dt)) {
            Ok(report) => {
                *out = KpoFidelity {
                    fbar: report.fbar,
                    infidelity: report.infidelity,
                    leakage: report.leakage,
                };
                KpoStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Propagates the gate with single-photon loss at rate `kappa` (units of
/// `K`) via the Lindblad master equation and writes the average fidelity
/// over qubit states to `*out_fbar`.
///
/// # Safety
/// `problem` and `waveform` must be live handles; `out_fbar` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn kpo_average_fidelity_loss(
    problem: *const KpoProblem,
    waveform: *const KpoWaveform,
    kappa: f64,
    dt: f64,
    out_fbar: *mut f64,
) -> KpoStatus {
    guarded(|| {
        if problem.is_null() {
            return fail_null("problem");
        }
        if waveform.is_null() {
            return fail_null("waveform");
        }
        if out_fbar.is_null() {
            return fail_null("out_fbar");
        }
        clear_error();
        match average_fidelity_loss(&(*problem).0, &(*waveform).0, kappa, &config(dt)) {
            Ok(fbar) => {
                *out_fbar = fbar;
                KpoStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Small-loss estimate of the average infidelity accumulated by `n_kpo`
/// idling cat qubits of size `alpha` over time `t` at loss rate `kappa`.
#[no_mangle]
pub extern "C" fn kpo_loss_infidelity_estimate(
    alpha: f64,
    kappa: f64,
    t: f64,
    n_kpo: u32,
) -> f64 {
    loss_infidelity_estimate(alpha, kappa, t, n_kpo as usize)
}

fn merged_options(kind: GateKind, overrides: Option<&str>) -> Result<GateOptimizerOptions, Error> {
    let defaults = GateOptimizerOptions::for_kind(kind);
    let Some(text) = overrides else {
        return Ok(defaults);
    };
    let mut base = serde_json::to_value(defaults)?;
    let patch: serde_json::Value = serde_json::from_str(text)?;
    let serde_json::Value::Object(patch) = patch else {
        return Err(Error::Invalid("optimizer options must be a JSON object".into()));
    };
    let serde_json::Value::Object(ref mut target) = base else {
        unreachable!("options serialize to an object");
    };
    for (key, value) in patch {
        match (target.get_mut(&key), value) {
            (Some(serde_json::Value::Object(inner)), serde_json::Value::Object(nested)) => {
                for (nested_key, nested_value) in nested {
                    if !inner.contains_key(&nested_key) {
                        return Err(Error::Invalid(format!(
                            "unknown optimizer option {key}.{nested_key}"
                        )));
                    }
                    inner.insert(nested_key, nested_value);
                }
            }
            (Some(slot), value) => *slot = value,
            (None, _) => {
                return Err(Error::Invalid(format!("unknown optimizer option {key}")));
            }
        }
    }
    Ok(serde_json::from_value(base)?)
}

/// Optimizes the Fourier pulse of `problem`'s gate at gate time `t_total`
/// (units of `1/K`). `delta` may be null (for `Rx`, the seed detuning is
/// then calibrated automatically). `options_json`, when non-null, is a JSON
/// object overriding optimizer defaults field by field, e.g.
/// `{"restarts": 0, "bfgs": {"max_iterations": 50}}`.
///
/// On success writes the optimized waveform to `*out_waveform` (release
/// with [`kpo_waveform_free`]) and, when `out_report` is non-null, the
/// full-resolution fidelity scores to `*out_report`.
///
/// # Safety
/// `problem` must be a live handle; `options_json`, when non-null, must be
/// a null-terminated string; `delta`, when non-null, must be readable;
/// `out_waveform` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kpo_optimize_gate(
    problem: *const KpoProblem,
    t_total: f64,
    delta: *const f64,
    options_json: *const c_char,
    out_waveform: *mut *mut KpoWaveform,
    out_report: *mut KpoFidelity,
) -> KpoStatus {
    guarded(|| {
        if problem.is_null() {
            return fail_null("problem");
        }
        if out_waveform.is_null() {
            return fail_null("out_waveform");
        }
        clear_error();
        let problem = &(*problem).0;
        let overrides = if options_json.is_null() {
            None
        } else {
            match utf8(options_json) {
                Ok(s) => Some(s),
                Err(status) => return status,
            }
        };
        let options = match merged_options(problem.kind, overrides) {
            Ok(o) => o,
            Err(e) => return fail(e),
        };
        let delta = if delta.is_null() { None } else { Some(*delta) };
        match optimize_gate(problem, t_total, delta, None, &options) {
            Ok(result) => {
                if !out_report.is_null() {
                    *out_report = KpoFidelity {
                        fbar: result.report.fbar,
                        infidelity: result.report.infidelity,
                        leakage: result.report.leakage,
                    };
                }
                *out_waveform = Box::into_raw(Box::new(KpoWaveform(Waveform::Fourier(
                    result.pulse,
                ))));
                KpoStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
