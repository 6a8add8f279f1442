//! Exercises the C ABI from Rust: handle lifecycles, error reporting, and
//! agreement of the exported scores with the core library.

use std::ffi::{CStr, CString};
use std::f64::consts::PI;
use std::ptr;

use kpo_gates::dynamics::IntegratorConfig;
use kpo_gates::metrics::gate_fidelity;
use kpo_gates::model::{CounterVariant, GateKind, GateProblem, PhysicalConstants};
use kpo_gates::pulses::{analytic_pulse, PulseCoefficients, PulseFile};
use kpo_gates_ffi::*;

fn last_error() -> String {
    let ptr = kpo_last_error();
    assert!(!ptr.is_null(), "an error message should be set");
    unsafe { CStr::from_ptr(ptr) }.to_str().unwrap().to_string()
}

#[test]
fn version_is_a_static_semverish_string() {
    let version = unsafe { CStr::from_ptr(kpo_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
    assert!(version.split('.').count() >= 2, "version = {version}");
}

#[test]
fn generated_header_declares_the_full_surface() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("kpo_gates.h");
    let text = std::fs::read_to_string(&header).expect("header is generated at build time");
    for symbol in [
        "kpo_version",
        "kpo_last_error",
        "kpo_problem_new",
        "kpo_problem_free",
        "kpo_waveform_analytic",
        "kpo_waveform_from_pulse_json",
        "kpo_waveform_duration",
        "kpo_waveform_eval",
        "kpo_waveform_free",
        "kpo_gate_fidelity",
        "kpo_average_fidelity_loss",
        "kpo_loss_infidelity_estimate",
        "kpo_optimize_gate",
        "KPO_STATUS_OK",
        "KPO_GATE_RZ",
        "KPO_COUNTER_STANDARD",
        "KpoFidelity",
    ] {
        assert!(text.contains(symbol), "header is missing {symbol}");
    }
}

#[test]
fn null_out_pointers_are_rejected() {
    let status = unsafe {
        kpo_problem_new(
            KpoGate::Rz,
            KpoCounter::Standard,
            PI,
            1.0,
            4.0,
            24,
            ptr::null_mut(),
        )
    };
    assert_eq!(status, KpoStatus::NullPointer);
    assert!(last_error().contains("null"), "message: {}", last_error());
}

#[test]
fn invalid_physics_sets_a_readable_error() {
    let mut problem: *mut KpoProblem = ptr::null_mut();
    let status = unsafe {
        kpo_problem_new(
            KpoGate::Rz,
            KpoCounter::Standard,
            PI,
            -1.0, // negative Kerr coefficient
            4.0,
            24,
            &mut problem,
        )
    };
    assert_eq!(status, KpoStatus::InvalidArgument);
    assert!(problem.is_null());
    assert!(!last_error().is_empty());

    // The orthogonal counter exists for two-mode gates only.
    let status = unsafe {
        kpo_problem_new(
            KpoGate::Rz,
            KpoCounter::BeamSplitterOrthogonal,
            PI,
            1.0,
            4.0,
            24,
            &mut problem,
        )
    };
    assert_eq!(status, KpoStatus::InvalidArgument);
}

#[test]
fn fidelity_through_the_abi_matches_the_core_crate() {
    let mut problem: *mut KpoProblem = ptr::null_mut();
    let status = unsafe {
        kpo_problem_new(
            KpoGate::Rz,
            KpoCounter::Standard,
            PI,
            1.0,
            4.0,
            24,
            &mut problem,
        )
    };
    assert_eq!(status, KpoStatus::Ok);

    let mut waveform: *mut KpoWaveform = ptr::null_mut();
    let status = unsafe {
        kpo_waveform_analytic(
            KpoGate::Rz,
            PI,
            ptr::null(),
            1.2,
            true,
            1.0,
            4.0,
            &mut waveform,
        )
    };
    assert_eq!(status, KpoStatus::Ok);

    let mut duration = 0.0;
    assert_eq!(
        unsafe { kpo_waveform_duration(waveform, &mut duration) },
        KpoStatus::Ok
    );
    assert_eq!(duration, 1.2);

    let mut report = KpoFidelity {
        fbar: 0.0,
        infidelity: 0.0,
        leakage: 0.0,
    };
    let status = unsafe { kpo_gate_fidelity(problem, waveform, 1e-3, &mut report) };
    assert_eq!(status, KpoStatus::Ok);

    let constants = PhysicalConstants::new(1.0, 4.0).unwrap();
    let core_problem =
        GateProblem::new(GateKind::Rz, CounterVariant::Standard, PI, constants, 24).unwrap();
    let core_wf = analytic_pulse(GateKind::Rz, PI, None, 1.2, true, constants).unwrap();
    let core_report = gate_fidelity(
        &core_problem,
        &core_wf,
        &IntegratorConfig {
            dt: 1e-3,
            ..IntegratorConfig::default()
        },
    )
    .unwrap();
    assert!(
        (report.fbar - core_report.fbar).abs() < 1e-14,
        "ABI fbar {} vs core {}",
        report.fbar,
        core_report.fbar
    );
    assert!(report.infidelity < 1e-3);

    // Waveform samples agree with the core evaluation too.
    let (mut g0, mut g1) = (0.0, 0.0);
    assert_eq!(
        unsafe { kpo_waveform_eval(waveform, 0.3, &mut g0, &mut g1) },
        KpoStatus::Ok
    );
    assert!((g0 - core_wf.eval_g0(0.3).unwrap()).abs() < 1e-15);
    assert!((g1 - core_wf.eval_g1(0.3).unwrap()).abs() < 1e-15);

    // Out-of-range evaluation reports the pulse support.
    let status = unsafe { kpo_waveform_eval(waveform, -0.5, &mut g0, &mut g1) };
    assert_eq!(status, KpoStatus::InvalidArgument);
    assert!(last_error().contains("outside"), "message: {}", last_error());

    unsafe {
        kpo_waveform_free(waveform);
        kpo_problem_free(problem);
        // Frees of null handles are harmless no-ops.
        kpo_waveform_free(ptr::null_mut());
        kpo_problem_free(ptr::null_mut());
    }
}

#[test]
fn pulse_json_loads_into_a_waveform() {
    let coefficients = PulseCoefficients::new(
        0.8,
        2,
        vec![0.0, 0.1, -0.2, 0.04],
        vec![0.05, 0.0],
    )
    .unwrap();
    let file = PulseFile::from_coefficients(
        GateKind::Rz,
        CounterVariant::Standard,
        PI,
        &coefficients,
        Default::default(),
    );
    let json = CString::new(file.to_json().unwrap()).unwrap();

    let mut waveform: *mut KpoWaveform = ptr::null_mut();
    let status = unsafe { kpo_waveform_from_pulse_json(json.as_ptr(), &mut waveform) };
    assert_eq!(status, KpoStatus::Ok);

    let mut duration = 0.0;
    assert_eq!(
        unsafe { kpo_waveform_duration(waveform, &mut duration) },
        KpoStatus::Ok
    );
    assert_eq!(duration, 0.8);

    let (mut g0, mut g1) = (0.0, 0.0);
    assert_eq!(
        unsafe { kpo_waveform_eval(waveform, 0.4, &mut g0, &mut g1) },
        KpoStatus::Ok
    );
    assert!((g0 - coefficients.eval_g0(0.4).unwrap()).abs() < 1e-15);
    assert!((g1 - coefficients.eval_g1(0.4).unwrap()).abs() < 1e-15);
    unsafe { kpo_waveform_free(waveform) };

    // Garbage JSON comes back as a JSON error with a message.
    let bad = CString::new("{not json").unwrap();
    let status = unsafe { kpo_waveform_from_pulse_json(bad.as_ptr(), &mut waveform) };
    assert_eq!(status, KpoStatus::Json);
    assert!(!last_error().is_empty());
}

#[test]
fn loss_estimate_matches_the_core_formula() {
    let abi = kpo_loss_infidelity_estimate(2.0, 1e-3, 1.0, 1);
    let core = kpo_gates::metrics::loss_infidelity_estimate(2.0, 1e-3, 1.0, 1);
    assert_eq!(abi, core);
    assert!(abi > 0.0);
}

#[test]
fn lossy_fidelity_is_exposed() {
    let mut problem: *mut KpoProblem = ptr::null_mut();
    unsafe {
        assert_eq!(
            kpo_problem_new(
                KpoGate::Rz,
                KpoCounter::None,
                0.0,
                1.0,
                4.0,
                16,
                &mut problem,
            ),
            KpoStatus::Ok
        );
    }
    let mut waveform: *mut KpoWaveform = ptr::null_mut();
    unsafe {
        assert_eq!(
            kpo_waveform_analytic(
                KpoGate::Rz,
                0.0,
                ptr::null(),
                0.5,
                false,
                1.0,
                4.0,
                &mut waveform,
            ),
            KpoStatus::Ok
        );
    }
    let mut fbar = 0.0;
    let status = unsafe { kpo_average_fidelity_loss(problem, waveform, 1e-3, 2e-3, &mut fbar) };
    assert_eq!(status, KpoStatus::Ok);
    assert!((0.9..=1.0).contains(&fbar), "fbar = {fbar}");
    unsafe {
        kpo_waveform_free(waveform);
        kpo_problem_free(problem);
    }
}

#[test]
fn optimization_through_the_abi_improves_the_seed() {
    let mut problem: *mut KpoProblem = ptr::null_mut();
    unsafe {
        assert_eq!(
            kpo_problem_new(
                KpoGate::Rz,
                KpoCounter::Standard,
                PI,
                1.0,
                4.0,
                16,
                &mut problem,
            ),
            KpoStatus::Ok
        );
    }

    // Unknown option keys are rejected with a message naming the key.
    let bad = CString::new(r#"{"restartz": 1}"#).unwrap();
    let mut waveform: *mut KpoWaveform = ptr::null_mut();
    let status = unsafe {
        kpo_optimize_gate(
            problem,
            1.2,
            ptr::null(),
            bad.as_ptr(),
            &mut waveform,
            ptr::null_mut(),
        )
    };
    assert_eq!(status, KpoStatus::InvalidArgument);
    assert!(last_error().contains("restartz"), "message: {}", last_error());

    let options = CString::new(
        r#"{
            "restarts": 0,
            "opt_cutoff": 14,
            "opt_dt": 2e-3,
            "final_dt": 2e-3,
            "bfgs": {"max_iterations": 15, "target_value": 5e-4}
        }"#,
    )
    .unwrap();
    let mut report = KpoFidelity {
        fbar: 0.0,
        infidelity: 1.0,
        leakage: 0.0,
    };
    let status = unsafe {
        kpo_optimize_gate(
            problem,
            1.2,
            ptr::null(),
            options.as_ptr(),
            &mut waveform,
            &mut report,
        )
    };
    assert_eq!(status, KpoStatus::Ok, "error: {}", last_error());
    assert!(!waveform.is_null());
    assert!(
        report.infidelity < 1e-3,
        "optimized infidelity {:.3e}",
        report.infidelity
    );

    let mut duration = 0.0;
    unsafe {
        assert_eq!(
            kpo_waveform_duration(waveform, &mut duration),
            KpoStatus::Ok
        );
    }
    assert_eq!(duration, 1.2);

    unsafe {
        kpo_waveform_free(waveform);
        kpo_problem_free(problem);
    }
}
