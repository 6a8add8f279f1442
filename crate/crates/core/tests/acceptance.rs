//! Acceptance gate: the headline results this toolkit must reproduce.
//!
//! Each test checks one criterion at its stated tolerance and prints a
//! single `PASS …` line with the measured numbers. The three optimized
//! pulses that several criteria share are built once in lazy statics.
//!
//! Run with
//!
//! ```text
//! cargo test -p kpo-gates --test acceptance -- --test-threads=1 --nocapture
//! ```
//!
//! The full suite optimizes several pulses from scratch and takes on the
//! order of ten minutes on one core.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::LazyLock;

use kpo_gates::dynamics::{
    evolve_density, evolve_state, evolve_state_snapshots, propagate_gate, step_halving_deviation,
    GateSystem, IntegratorConfig,
};
use kpo_gates::hilbert::{cat_state, DensityMatrix, FockSpace, Parity, StateVector};
use kpo_gates::metrics::{
    average_fidelity_loss, eigen_residual, gate_fidelity, loss_infidelity_estimate,
    mean_photon_state, wigner_state, FidelityReport, WignerGridSpec,
};
use kpo_gates::model::{CounterVariant, GateKind, GateProblem, PhysicalConstants};
use kpo_gates::optimizer::{
    calibrate_detuning, optimize_gate, optimize_gate_scheduled, scaled_pulse_fidelity,
    GateOptimizerOptions, OptimizationResult,
};
use kpo_gates::pulses::{analytic_pulse, apply_perturbation, PulsePerturbation, Waveform};

/// Infidelity threshold shared by most criteria.
const THRESHOLD: f64 = 1e-3;

fn constants() -> PhysicalConstants {
    PhysicalConstants::default()
}

fn config(dt: f64) -> IntegratorConfig {
    IntegratorConfig {
        dt,
        ..IntegratorConfig::default()
    }
}

/// Fidelity of the closed-form waveform for `kind` at gate time `kt`.
fn analytic_report(
    kind: GateKind,
    counter: CounterVariant,
    angle: f64,
    delta: Option<f64>,
    kt: f64,
    cutoff: usize,
    dt: f64,
) -> FidelityReport {
    let problem = GateProblem::new(kind, counter, angle, constants(), cutoff).unwrap();
    let with_counter = counter != CounterVariant::None;
    let waveform = analytic_pulse(kind, angle, delta, kt, with_counter, constants()).unwrap();
    gate_fidelity(&problem, &waveform, &config(dt)).unwrap()
}

/// A shared optimized pulse together with the problem it was built for.
struct OptimizedGate {
    problem: GateProblem,
    result: OptimizationResult,
}

/// Optimized Rz(π) with counter at KT = 0.5 (cold start).
static RZ_OPT: LazyLock<OptimizedGate> = LazyLock::new(|| {
    let problem =
        GateProblem::new(GateKind::Rz, CounterVariant::Standard, PI, constants(), 40).unwrap();
    let mut options = GateOptimizerOptions::for_kind(GateKind::Rz);
    options.restarts = 0;
    options.bfgs.target_value = None;
    let result = optimize_gate(&problem, 0.5, None, None, &options).unwrap();
    OptimizedGate { problem, result }
});

/// Optimized Rzz(π/2) with counter at KT = 0.2, reached by continuation
/// from KT = 0.25 (a cold start at 0.2 lands just above threshold).
static RZZ_OPT: LazyLock<OptimizedGate> = LazyLock::new(|| {
    let problem = GateProblem::new(
        GateKind::RzzTwoModeSqueezing,
        CounterVariant::Standard,
        FRAC_PI_2,
        constants(),
        24,
    )
    .unwrap();
    let mut options = GateOptimizerOptions::for_kind(GateKind::RzzTwoModeSqueezing);
    options.restarts = 0;
    options.bfgs.target_value = Some(1e-5);
    options.bfgs.max_iterations = 200;
    let result = optimize_gate_scheduled(&problem, &[0.25, 0.2], None, &options).unwrap();
    OptimizedGate { problem, result }
});

/// Optimized Rx(π/2) with counter at KT = 1.0, reached by walking the gate
/// time down from the adiabatic regime (cold starts do not find this basin).
static RX_OPT: LazyLock<OptimizedGate> = LazyLock::new(|| {
    let problem = GateProblem::new(
        GateKind::Rx,
        CounterVariant::Standard,
        FRAC_PI_2,
        constants(),
        40,
    )
    .unwrap();
    let mut options = GateOptimizerOptions::for_kind(GateKind::Rx);
    options.restarts = 0;
    options.bfgs.target_value = Some(1e-5);
    options.bfgs.max_iterations = 200;
    options.opt_cutoff = 32;
    options.opt_dt = 5e-4;
    let result =
        optimize_gate_scheduled(&problem, &[1.6, 1.4, 1.2, 1.1, 1.0], None, &options).unwrap();
    OptimizedGate { problem, result }
});

/// Criterion 1 — analytic Rz(π): with the counter drive the 1e-3 threshold
/// is reached by KT = 1.2; without it KT = 1.3 passes while KT = 1.1 fails.
#[test]
fn acceptance_01_rz_analytic_thresholds() {
    let rz = GateKind::Rz;
    let nc_13 = analytic_report(rz, CounterVariant::None, PI, None, 1.3, 40, 1e-4);
    let nc_11 = analytic_report(rz, CounterVariant::None, PI, None, 1.1, 40, 1e-4);
    let co_12 = analytic_report(rz, CounterVariant::Standard, PI, None, 1.2, 40, 1e-4);

    assert!(
        nc_13.infidelity <= THRESHOLD,
        "Rz no-counter KT=1.3: 1-F = {:.3e} > 1e-3",
        nc_13.infidelity
    );
    assert!(
        nc_11.infidelity > THRESHOLD,
        "Rz no-counter KT=1.1 should miss the threshold: 1-F = {:.3e}",
        nc_11.infidelity
    );
    assert!(
        co_12.infidelity <= THRESHOLD,
        "Rz counter KT=1.2: 1-F = {:.3e} > 1e-3",
        co_12.infidelity
    );
    println!(
        "PASS 01 analytic Rz: no-counter 1-F(KT=1.3) = {:.3e} <= 1e-3, \
         1-F(KT=1.1) = {:.3e} > 1e-3, counter 1-F(KT=1.2) = {:.3e} <= 1e-3",
        nc_13.infidelity, nc_11.infidelity, co_12.infidelity
    );
}

/// Criterion 2 — analytic Rzz(π/2): threshold by KT = 1.2 without the
/// two-mode-squeezing counter and by KT = 0.6 with it.
#[test]
fn acceptance_02_rzz_analytic_thresholds() {
    let rzz = GateKind::RzzTwoModeSqueezing;
    let nc = analytic_report(rzz, CounterVariant::None, FRAC_PI_2, None, 1.2, 40, 1e-4);
    let co = analytic_report(rzz, CounterVariant::Standard, FRAC_PI_2, None, 0.6, 40, 1e-4);

    assert!(
        nc.infidelity <= THRESHOLD,
        "Rzz no-counter KT=1.2: 1-F = {:.3e} > 1e-3",
        nc.infidelity
    );
    assert!(
        co.infidelity <= THRESHOLD,
        "Rzz counter KT=0.6: 1-F = {:.3e} > 1e-3",
        co.infidelity
    );
    println!(
        "PASS 02 analytic Rzz: no-counter 1-F(KT=1.2) = {:.3e} <= 1e-3, \
         counter 1-F(KT=0.6) = {:.3e} <= 1e-3",
        nc.infidelity, co.infidelity
    );
}

/// Criterion 3 — analytic Rx(π/2) at KT = 2.6 with the calibrated detuning
/// beats 1e-3 both with and without the squeezing counter.
#[test]
fn acceptance_03_rx_analytic_with_calibrated_detuning() {
    let rx = GateKind::Rx;
    let mut measured = Vec::new();
    for counter in [CounterVariant::None, CounterVariant::Standard] {
        let problem = GateProblem::new(rx, counter, FRAC_PI_2, constants(), 40).unwrap();
        let reduced = problem.with_cutoff(24).unwrap();
        let (delta, _) = calibrate_detuning(&reduced, 2.6, &config(1e-3)).unwrap();
        let report = analytic_report(rx, counter, FRAC_PI_2, Some(delta), 2.6, 40, 1e-4);
        assert!(
            report.infidelity <= THRESHOLD,
            "Rx {} KT=2.6 delta={delta:.6}: 1-F = {:.3e} > 1e-3",
            problem.counter.label(),
            report.infidelity
        );
        measured.push((counter.label(), delta, report.infidelity));
    }
    println!(
        "PASS 03 analytic Rx(KT=2.6): {} delta/K = {:.4}, 1-F = {:.3e}; \
         {} delta/K = {:.4}, 1-F = {:.3e} (both <= 1e-3)",
        measured[0].0, measured[0].1, measured[0].2, measured[1].0, measured[1].1, measured[1].2
    );
}

/// Criterion 4 — optimized pulses with the counter reach 1e-3 at the short
/// gate times KT = 0.5 (Rz), 0.2 (Rzz) and 1.0 (Rx), with the Rx amplitudes
/// staying below 20K.
#[test]
fn acceptance_04_optimized_short_gate_times() {
    let rz = &RZ_OPT.result;
    let rzz = &RZZ_OPT.result;
    let rx = &RX_OPT.result;

    assert!(
        rz.report.infidelity < THRESHOLD,
        "optimized Rz KT=0.5: 1-F = {:.3e}",
        rz.report.infidelity
    );
    assert!(
        rzz.report.infidelity < THRESHOLD,
        "optimized Rzz KT=0.2: 1-F = {:.3e}",
        rzz.report.infidelity
    );
    assert!(
        rx.report.infidelity < THRESHOLD,
        "optimized Rx KT=1.0: 1-F = {:.3e}",
        rx.report.infidelity
    );
    assert!(
        rx.max_g0_over_k < 20.0 && rx.max_g1_over_k < 20.0,
        "optimized Rx amplitudes exceed 20K: g0/K = {:.1}, g1/K = {:.1}",
        rx.max_g0_over_k,
        rx.max_g1_over_k
    );
    println!(
        "PASS 04 optimized gates: Rz 1-F(KT=0.5) = {:.3e}, Rzz 1-F(KT=0.2) = {:.3e}, \
         Rx 1-F(KT=1.0) = {:.3e} (all < 1e-3); Rx max |g0|/K = {:.1}, |g1|/K = {:.1} (< 20)",
        rz.report.infidelity,
        rzz.report.infidelity,
        rx.report.infidelity,
        rx.max_g0_over_k,
        rx.max_g1_over_k
    );
}

/// Criterion 5 — optimization still reaches 1e-3 without any counter drive,
/// at the (longer) gate times KT = 0.9 (Rz), 0.8 (Rzz) and 1.7 (Rx).
#[test]
fn acceptance_05_optimized_without_counter() {
    let rz_problem =
        GateProblem::new(GateKind::Rz, CounterVariant::None, PI, constants(), 40).unwrap();
    let mut rz_options = GateOptimizerOptions::for_kind(GateKind::Rz);
    rz_options.restarts = 0;
    rz_options.bfgs.target_value = None;
    let rz = optimize_gate(&rz_problem, 0.9, None, None, &rz_options).unwrap();
    assert!(
        rz.report.infidelity < THRESHOLD,
        "counterless Rz KT=0.9: 1-F = {:.3e}",
        rz.report.infidelity
    );

    let rzz_problem = GateProblem::new(
        GateKind::RzzTwoModeSqueezing,
        CounterVariant::None,
        FRAC_PI_2,
        constants(),
        24,
    )
    .unwrap();
    let mut rzz_options = GateOptimizerOptions::for_kind(GateKind::RzzTwoModeSqueezing);
    rzz_options.restarts = 0;
    rzz_options.bfgs.target_value = Some(1e-5);
    rzz_options.bfgs.max_iterations = 200;
    let rzz = optimize_gate(&rzz_problem, 0.8, None, None, &rzz_options).unwrap();
    assert!(
        rzz.report.infidelity < THRESHOLD,
        "counterless Rzz KT=0.8: 1-F = {:.3e}",
        rzz.report.infidelity
    );

    let rx_problem =
        GateProblem::new(GateKind::Rx, CounterVariant::None, FRAC_PI_2, constants(), 40).unwrap();
    let mut rx_options = GateOptimizerOptions::for_kind(GateKind::Rx);
    rx_options.restarts = 0;
    rx_options.bfgs.target_value = None;
    let rx = optimize_gate(&rx_problem, 1.7, None, None, &rx_options).unwrap();
    assert!(
        rx.report.infidelity < THRESHOLD,
        "counterless Rx KT=1.7: 1-F = {:.3e}",
        rx.report.infidelity
    );

    println!(
        "PASS 05 optimized without counter: Rz 1-F(KT=0.9) = {:.3e}, \
         Rzz 1-F(KT=0.8) = {:.3e}, Rx 1-F(KT=1.7) = {:.3e} (all < 1e-3)",
        rz.report.infidelity, rzz.report.infidelity, rx.report.infidelity
    );
}

/// Criterion 6 — scaling an optimized Rz/Rzz pulse by λ ∈ (0, 1] yields the
/// proportionally smaller rotation at < 1e-3 infidelity on every grid
/// point, while the same trick demonstrably fails for Rx.
#[test]
fn acceptance_06_amplitude_scaling_gives_continuous_angles() {
    let lambdas: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();

    let rz_wf = Waveform::Fourier(RZ_OPT.result.pulse.clone());
    let mut rz_worst: f64 = 0.0;
    for &lambda in &lambdas {
        let (_, report) =
            scaled_pulse_fidelity(&RZ_OPT.problem, &rz_wf, lambda, &config(1e-4)).unwrap();
        assert!(
            report.infidelity < THRESHOLD,
            "scaled Rz pulse at lambda={lambda}: 1-F = {:.3e}",
            report.infidelity
        );
        rz_worst = rz_worst.max(report.infidelity);
    }

    let rzz_wf = Waveform::Fourier(RZZ_OPT.result.pulse.clone());
    let mut rzz_worst: f64 = 0.0;
    for &lambda in &lambdas {
        let (_, report) =
            scaled_pulse_fidelity(&RZZ_OPT.problem, &rzz_wf, lambda, &config(1e-4)).unwrap();
        assert!(
            report.infidelity < THRESHOLD,
            "scaled Rzz pulse at lambda={lambda}: 1-F = {:.3e}",
            report.infidelity
        );
        rzz_worst = rzz_worst.max(report.infidelity);
    }

    let rx_wf = Waveform::Fourier(RX_OPT.result.pulse.clone());
    let (_, rx_half) = scaled_pulse_fidelity(&RX_OPT.problem, &rx_wf, 0.5, &config(1e-4)).unwrap();
    assert!(
        rx_half.infidelity > THRESHOLD,
        "a halved Rx pulse should not be a good rotation at any angle: 1-F = {:.3e}",
        rx_half.infidelity
    );

    println!(
        "PASS 06 amplitude scaling: Rz worst 1-F over lambda grid = {:.3e}, \
         Rzz worst = {:.3e} (both < 1e-3); Rx at lambda=0.5 fails as expected (1-F = {:.3e})",
        rz_worst, rzz_worst, rx_half.infidelity
    );
}

/// Criterion 7 — robustness of the optimized pulses against amplitude
/// miscalibration: ±1% on the gate drive and ±5% on the counter keep the
/// optimized Rz below 1e-3, and the infidelity is stationary at the origin.
#[test]
fn acceptance_07_amplitude_error_robustness() {
    let rz_wf = Waveform::Fourier(RZ_OPT.result.pulse.clone());
    let points = [(0.01, 0.0), (-0.01, 0.0), (0.0, 0.05), (0.0, -0.05)];
    let mut worst: f64 = 0.0;
    for (d0, d1) in points {
        let perturbed = apply_perturbation(&rz_wf, PulsePerturbation::deltas(d0, d1));
        let report = gate_fidelity(&RZ_OPT.problem, &perturbed, &config(1e-4)).unwrap();
        assert!(
            report.infidelity <= THRESHOLD,
            "optimized Rz at (delta0, delta1) = ({d0}, {d1}): 1-F = {:.3e}",
            report.infidelity
        );
        worst = worst.max(report.infidelity);
    }

    // The optimum should be a stationary point of the infidelity in the
    // two amplitude-error directions (gradient per unit delta, h = 1e-3).
    let cases: [(&str, &GateProblem, &Waveform, f64); 3] = [
        ("Rz", &RZ_OPT.problem, &rz_wf, 1e-4),
        (
            "Rzz",
            &RZZ_OPT.problem,
            &Waveform::Fourier(RZZ_OPT.result.pulse.clone()),
            1e-4,
        ),
        (
            "Rx",
            &RX_OPT.problem,
            &Waveform::Fourier(RX_OPT.result.pulse.clone()),
            1e-4,
        ),
    ];
    let h = 1e-3;
    let mut grads = Vec::new();
    for (label, problem, waveform, dt) in cases {
        let eval = |d0: f64, d1: f64| -> f64 {
            let perturbed = apply_perturbation(waveform, PulsePerturbation::deltas(d0, d1));
            gate_fidelity(problem, &perturbed, &config(dt))
                .unwrap()
                .infidelity
        };
        let g0 = (eval(h, 0.0) - eval(-h, 0.0)) / (2.0 * h);
        let g1 = (eval(0.0, h) - eval(0.0, -h)) / (2.0 * h);
        assert!(
            g0.abs() < 1e-2 && g1.abs() < 1e-2,
            "{label}: origin gradient ({g0:.2e}, {g1:.2e}) is not stationary"
        );
        grads.push((label, g0, g1));
    }

    println!(
        "PASS 07 robustness: optimized Rz worst 1-F over (±1%, ±5%) points = {:.3e} <= 1e-3; \
         origin gradients {} ({:.1e}, {:.1e}), {} ({:.1e}, {:.1e}), {} ({:.1e}, {:.1e}) all < 1e-2",
        worst,
        grads[0].0,
        grads[0].1,
        grads[0].2,
        grads[1].0,
        grads[1].1,
        grads[1].2,
        grads[2].0,
        grads[2].1,
        grads[2].2
    );
}

/// Criterion 8 — single-photon loss. (a) An idle KPO's average infidelity
/// matches the closed-form small-loss estimate within 10% over three
/// decades of κ/K; (b) the κ = 0 Lindblad score agrees with the unitary
/// fidelity; (c) an optimized Rz still beats 1e-3 under κ/K = 3e-4; and a
/// two-mode loss run is converged in the cutoff to better than 20%.
#[test]
fn acceptance_08_photon_loss() {
    let kt = 1.0;
    let idle = GateProblem::new(GateKind::Rz, CounterVariant::None, 0.0, constants(), 24).unwrap();
    let idle_wf = analytic_pulse(GateKind::Rz, 0.0, None, kt, false, constants()).unwrap();
    let alpha = constants().alpha();
    let mut idle_rows = Vec::new();
    for kappa in [1e-4, 1e-3, 1e-2] {
        let infid = 1.0 - average_fidelity_loss(&idle, &idle_wf, kappa, &config(1e-3)).unwrap();
        let estimate = loss_infidelity_estimate(alpha, kappa, kt, 1);
        let rel = (infid - estimate).abs() / estimate;
        assert!(
            rel < 0.10,
            "idle loss at kappa/K={kappa}: 1-F = {infid:.4e} vs estimate {estimate:.4e} \
             ({:.1}% off)",
            100.0 * rel
        );
        idle_rows.push((kappa, infid, rel));
    }

    // Lossless Lindblad propagation must agree with the unitary score.
    let rz24 = GateProblem::new(GateKind::Rz, CounterVariant::Standard, PI, constants(), 24).unwrap();
    let rz_wf = analytic_pulse(GateKind::Rz, PI, None, 1.2, true, constants()).unwrap();
    let fbar_unitary = gate_fidelity(&rz24, &rz_wf, &config(1e-3)).unwrap().fbar;
    let fbar_lindblad = average_fidelity_loss(&rz24, &rz_wf, 0.0, &config(1e-3)).unwrap();
    assert!(
        (fbar_unitary - fbar_lindblad).abs() < 1e-5,
        "kappa=0 consistency: unitary F = {fbar_unitary:.8}, Lindblad F = {fbar_lindblad:.8}"
    );

    // A pulse optimized at KT = 0.75 keeps the total error under 1e-3 at
    // kappa/K = 3e-4 (the loss floor alone is ~6e-4 there).
    let mut options = GateOptimizerOptions::for_kind(GateKind::Rz);
    options.restarts = 0;
    options.bfgs.target_value = Some(1e-4);
    let opt = optimize_gate(&rz24, 0.75, None, None, &options).unwrap();
    let lossy =
        1.0 - average_fidelity_loss(&rz24, &Waveform::Fourier(opt.pulse.clone()), 3e-4, &config(1e-3))
            .unwrap();
    assert!(
        lossy < THRESHOLD,
        "optimized Rz KT=0.75 under kappa/K=3e-4: 1-F = {lossy:.3e}"
    );

    // Two-qubit loss runs must be converged in the per-mode cutoff.
    let rzz_wf = analytic_pulse(GateKind::RzzTwoModeSqueezing, FRAC_PI_2, None, 0.6, true, constants()).unwrap();
    let infid_at = |cutoff: usize| -> f64 {
        let problem = GateProblem::new(
            GateKind::RzzTwoModeSqueezing,
            CounterVariant::Standard,
            FRAC_PI_2,
            constants(),
            cutoff,
        )
        .unwrap();
        1.0 - average_fidelity_loss(&problem, &rzz_wf, 1e-3, &config(2e-3)).unwrap()
    };
    let coarse = infid_at(16);
    let fine = infid_at(20);
    let rel = (fine - coarse).abs() / fine;
    assert!(
        rel < 0.20,
        "two-mode loss cutoff convergence: 1-F(16) = {coarse:.4e}, 1-F(20) = {fine:.4e} \
         ({:.1}% apart)",
        100.0 * rel
    );

    println!(
        "PASS 08 photon loss: idle 1-F vs estimate off by {:.2}% / {:.2}% / {:.2}% \
         at kappa/K = 1e-4/1e-3/1e-2 (< 10%); kappa=0 gap = {:.1e} (< 1e-5); \
         optimized Rz at kappa/K=3e-4: 1-F = {:.3e} (< 1e-3); \
         two-mode cutoff 16 vs 20 differ by {:.2}% (< 20%)",
        100.0 * idle_rows[0].2,
        100.0 * idle_rows[1].2,
        100.0 * idle_rows[2].2,
        (fbar_unitary - fbar_lindblad).abs(),
        lossy,
        100.0 * rel
    );
}

/// Criterion 9 — integrator health: unitary norm preservation, Lindblad
/// trace/hermiticity preservation, fourth-order step scaling, and the
/// contraction bound tr(UU†) ≤ d on every propagator this suite produced.
#[test]
fn acceptance_09_integrator_health() {
    let rz40 = GateProblem::new(GateKind::Rz, CounterVariant::None, PI, constants(), 40).unwrap();
    let wf13 = analytic_pulse(GateKind::Rz, PI, None, 1.3, false, constants()).unwrap();
    let system = GateSystem::for_problem(&rz40, &wf13).unwrap();
    let psi0 = cat_state(rz40.space, constants().alpha(), Parity::Even).unwrap();
    let final_state = evolve_state(&system, &psi0, &config(1e-4)).unwrap();
    let norm_drift = (final_state.norm() - 1.0).abs();
    assert!(norm_drift < 1e-7, "norm drift {norm_drift:.2e} over KT=1.3");

    let rz24 = GateProblem::new(GateKind::Rz, CounterVariant::Standard, PI, constants(), 24).unwrap();
    let wf12 = analytic_pulse(GateKind::Rz, PI, None, 1.2, true, constants()).unwrap();
    let system24 = GateSystem::for_problem(&rz24, &wf12).unwrap();
    let psi24 = cat_state(rz24.space, constants().alpha(), Parity::Even).unwrap();
    let rho = evolve_density(
        &system24,
        &DensityMatrix::from_pure(&psi24),
        1e-3,
        &config(1e-3),
    )
    .unwrap();
    let health = rho.validate().unwrap();
    assert!(
        health.trace_deviation < 1e-8,
        "Lindblad trace drift {:.2e}",
        health.trace_deviation
    );
    assert!(
        health.hermiticity_deviation < 1e-8,
        "Lindblad hermiticity drift {:.2e}",
        health.hermiticity_deviation
    );

    // Step-halving deviations at h and h/2 should shrink 2^4-fold.
    let wf10 = analytic_pulse(GateKind::Rz, PI, None, 1.0, true, constants()).unwrap();
    let system_order = GateSystem::for_problem(&rz24, &wf10).unwrap();
    let dev_h = step_halving_deviation(&system_order, &psi24, &config(2e-3)).unwrap();
    let dev_half = step_halving_deviation(&system_order, &psi24, &config(1e-3)).unwrap();
    let order = (dev_h / dev_half).log2();
    assert!(
        (3.5..=4.5).contains(&order),
        "observed step-scaling order {order:.2} (deviations {dev_h:.2e} -> {dev_half:.2e})"
    );

    // tr(UU†) ≤ d: leakage can only remove weight from the qubit block.
    let u = propagate_gate(&rz40, &wf13, &config(1e-4)).unwrap();
    let tr_uu: f64 = u.iter().map(|z| z.norm_sqr()).sum();
    assert!(
        tr_uu <= 2.0 + 1e-9,
        "tr(UU†) = {tr_uu} exceeds the qubit dimension"
    );
    for (label, result) in [
        ("Rz", &RZ_OPT.result),
        ("Rzz", &RZZ_OPT.result),
        ("Rx", &RX_OPT.result),
    ] {
        assert!(
            result.report.leakage >= -1e-9,
            "optimized {label}: negative leakage {:.2e} implies tr(UU†) > d",
            result.report.leakage
        );
    }

    println!(
        "PASS 09 integrator health: norm drift = {:.1e} (< 1e-7); Lindblad trace / \
         hermiticity drift = {:.1e} / {:.1e} (< 1e-8); step-scaling order = {:.2} \
         (in [3.5, 4.5]); tr(UU†) = {:.9} <= 2 and all optimized leakages >= 0",
        norm_drift, health.trace_deviation, health.hermiticity_deviation, order, tr_uu
    );
}

/// Criterion 10 — state structure: cat-state orthogonality and eigenstate
/// residuals, the vacuum Wigner function's peak and normalization, and the
/// optimized Rx passing through a low-photon-number state mid-gate.
#[test]
fn acceptance_10_state_structure() {
    let space = FockSpace::single(40);
    let alpha = constants().alpha();
    let even = cat_state(space, alpha, Parity::Even).unwrap();
    let odd = cat_state(space, alpha, Parity::Odd).unwrap();
    let overlap = even.inner(&odd).unwrap().norm();
    assert!(overlap < 1e-12, "cat-state overlap {overlap:.2e}");

    let h_static = &GateProblem::new(GateKind::Rz, CounterVariant::None, PI, constants(), 40)
        .unwrap()
        .h_static
        .clone();
    let res_even = eigen_residual(h_static, &even).unwrap();
    let res_odd = eigen_residual(h_static, &odd).unwrap();
    let k = constants().k;
    assert!(
        res_even < 1e-3 * k && res_odd < 1e-3 * k,
        "cat eigenstate residuals {res_even:.2e}, {res_odd:.2e} (K = {k})"
    );

    let vacuum = StateVector::vacuum(space);
    let wigner = wigner_state(&vacuum, &WignerGridSpec::default()).unwrap();
    let peak = wigner.value_at(0.0, 0.0).unwrap();
    let two_over_pi = 2.0 / std::f64::consts::PI;
    assert!(
        (peak - two_over_pi).abs() < 1e-3,
        "vacuum Wigner peak {peak:.6} vs 2/pi = {two_over_pi:.6}"
    );
    let integral = wigner.integral();
    assert!(
        (integral - 1.0).abs() < 1e-3,
        "vacuum Wigner integral {integral:.6}"
    );

    // The optimized Rx leaves the cat manifold mid-gate: from |C+⟩ the
    // mean photon number at T/2 drops below one (the cats sit at ~4).
    let rx_wf = Waveform::Fourier(RX_OPT.result.pulse.clone());
    let rx_system = GateSystem::for_problem(&RX_OPT.problem, &rx_wf).unwrap();
    let rx_psi0 = cat_state(RX_OPT.problem.space, alpha, Parity::Even).unwrap();
    let t_half = 0.5 * rx_wf.duration();
    let snapshots =
        evolve_state_snapshots(&rx_system, &rx_psi0, &config(1e-4), &[t_half]).unwrap();
    let mid_photon = mean_photon_state(&snapshots[0].1, 0).unwrap();
    assert!(
        mid_photon < 1.0,
        "optimized Rx mid-gate mean photon number {mid_photon:.3}"
    );

    println!(
        "PASS 10 state structure: cat overlap = {:.1e} (< 1e-12); eigen residuals = \
         {:.1e} / {:.1e} (< 1e-3 K); vacuum Wigner peak = {:.6} (2/pi = {:.6}), \
         integral = {:.6}; optimized Rx mid-gate <n> = {:.3} (< 1)",
        overlap, res_even, res_odd, peak, two_over_pi, integral, mid_photon
    );
}

/// Criterion 11 — negative control: swapping the two-mode-squeezing counter
/// for the beam-splitter form (orthogonal to what the adiabatic correction
/// requires) leaves the Rzz optimizer stuck far above threshold at KT = 0.2.
#[test]
fn acceptance_11_orthogonal_counter_cannot_rescue_rzz() {
    let problem = GateProblem::new(
        GateKind::RzzTwoModeSqueezing,
        CounterVariant::BeamSplitterOrthogonal,
        FRAC_PI_2,
        constants(),
        24,
    )
    .unwrap();
    let mut options = GateOptimizerOptions::for_kind(GateKind::RzzTwoModeSqueezing);
    options.restarts = 0;
    options.bfgs.target_value = None;
    options.bfgs.max_iterations = 40;
    let result = optimize_gate(&problem, 0.2, None, None, &options).unwrap();
    assert!(
        result.report.infidelity > THRESHOLD,
        "the orthogonal counter should not reach threshold at KT=0.2: 1-F = {:.3e}",
        result.report.infidelity
    );
    assert!(
        result.reduced_objective > THRESHOLD,
        "inner-loop objective {:.3e} unexpectedly below threshold",
        result.reduced_objective
    );
    println!(
        "PASS 11 orthogonal counter: optimized Rzz at KT=0.2 stalls at 1-F = {:.3e} \
         (inner objective {:.3e}), far above 1e-3",
        result.report.infidelity, result.reduced_objective
    );
}
