//! Pulse-shape optimization: a dense inverse-Hessian BFGS search over the
//! Fourier coefficients of `(g0, g1)`, plus the scalar calibration routines
//! (Rx detuning, effective rotation angle of a rescaled pulse).
//!
//! The search minimizes `1 - F̄` of the propagated gate. Gradients are
//! central finite differences; evaluations that violate the amplitude bound
//! or fail to integrate return a large penalty value instead of an error so
//! the line search can back away from them. The expensive inner loop runs on
//! a reduced Fock cutoff and a coarser integration step (checked once by
//! step halving); the returned pulse is always re-scored on the caller's
//! full-resolution problem.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::{propagate_gate, require_step_converged, GateSystem, IntegratorConfig};
use crate::metrics::{average_fidelity, gate_fidelity, FidelityReport};
use crate::model::{ideal_unitary, CounterVariant, GateKind, GateProblem};
use crate::pulses::{
    seed_coefficients, AnalyticWaveform, PulseCoefficients, Waveform, DEFAULT_AMPLITUDE_BOUND,
    DEFAULT_N_F, RX_AMPLITUDE_BOUND,
};
use crate::{Error, Result};

/// Objective value reported for evaluations that cannot be scored
/// (non-finite variables, integration failure); amplitude-bound violations
/// add a slope on top of it so the search is steered back.
pub const PENALTY_OBJECTIVE: f64 = 10.0;

/// Points of the `[0, T]` scan used to enforce the amplitude bound.
const AMPLITUDE_SCAN_SAMPLES: usize = 2001;

/// Sufficient-decrease constant of the Armijo backtracking line search.
const ARMIJO_C1: f64 = 1e-4;

/// `(√5 − 1) / 2`, the golden-section ratio.
const INV_PHI: f64 = 0.618_033_988_749_894_8;

// ---------------------------------------------------------------------------
// Generic BFGS with numerical gradients
// ---------------------------------------------------------------------------

/// Tuning knobs of [`bfgs_minimize`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BfgsOptions {
    /// Maximum number of quasi-Newton iterations.
    pub max_iterations: usize,
    /// Relative step of the central-difference gradient
    /// (`h_i = grad_step · (1 + |x_i|)`).
    pub grad_step: f64,
    /// Stop when the gradient infinity norm falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step moves `x` by less than this (2-norm).
    pub step_tol: f64,
    /// Stop as soon as the objective reaches this value, if set.
    pub target_value: Option<f64>,
    /// Declare an objective stall after this many consecutive iterations
    /// whose relative improvement stays below `stall_rel` (0 disables).
    pub stall_patience: usize,
    /// Relative-improvement floor for the stall counter.
    pub stall_rel: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 120,
            grad_step: 1e-6,
            grad_tol: 1e-7,
            step_tol: 1e-11,
            target_value: None,
            stall_patience: 6,
            stall_rel: 1e-4,
        }
    }
}

/// Outcome of one [`bfgs_minimize`] run.
#[derive(Debug, Clone)]
pub struct BfgsResult {
    /// Best point found.
    pub x: Vec<f64>,
    /// Objective value at `x`.
    pub value: f64,
    /// Iterations performed.
    pub iterations: usize,
    /// Objective evaluations performed (including gradient stencils).
    pub evaluations: usize,
    /// `true` when a stopping criterion other than the iteration cap fired.
    pub converged: bool,
    /// Objective after each accepted iteration, starting with `f(x0)`.
    pub trace: Vec<f64>,
}

struct CountingFn<'a> {
    f: &'a mut dyn FnMut(&[f64]) -> f64,
    evals: usize,
}

impl CountingFn<'_> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        (self.f)(x)
    }

    fn gradient(&mut self, x: &mut [f64], h0: f64, g: &mut [f64]) {
        for i in 0..x.len() {
            let xi = x[i];
            let h = h0 * (1.0 + xi.abs());
            x[i] = xi + h;
            let fp = self.call(x);
            x[i] = xi - h;
            let fm = self.call(x);
            x[i] = xi;
            g[i] = (fp - fm) / (2.0 * h);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// `d = -H·g` for a row-major dense `H`.
fn neg_matvec(h: &[f64], g: &[f64], d: &mut [f64]) {
    let n = g.len();
    for i in 0..n {
        d[i] = -dot(&h[i * n..(i + 1) * n], g);
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

/// Armijo backtracking from unit step. Returns `(step, f_new, x_new)` or
/// `None` when no acceptable step exists down to `~1e-12` of the direction.
fn backtrack(
    cf: &mut CountingFn,
    x: &[f64],
    d: &[f64],
    fx: f64,
    slope: f64,
) -> Option<(f64, f64, Vec<f64>)> {
    let mut t = 1.0;
    for _ in 0..40 {
        let x_new: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + t * di).collect();
        let f_new = cf.call(&x_new);
        if f_new <= fx + ARMIJO_C1 * t * slope {
            return Some((t, f_new, x_new));
        }
        t *= 0.5;
    }
    None
}

/// Minimizes `f` from `x0` with BFGS (dense inverse-Hessian update,
/// central-difference gradients, Armijo backtracking). The value never
/// exceeds `f(x0)`: only sufficient-decrease steps are accepted.
pub fn bfgs_minimize(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    options: &BfgsOptions,
) -> BfgsResult {
    let n = x0.len();
    let mut cf = CountingFn { f, evals: 0 };
    let mut x = x0.to_vec();
    let mut fx = cf.call(&x);

    let mut trace = vec![fx];

    let reached = |v: f64| options.target_value.is_some_and(|t| v <= t);
    if reached(fx) || n == 0 {
        let evals = cf.evals;
        return BfgsResult {
            x,
            value: fx,
            iterations: 0,
            evaluations: evals,
            converged: true,
            trace,
        };
    }

    let mut g = vec![0.0; n];
    cf.gradient(&mut x, options.grad_step, &mut g);
    let mut h_inv = identity(n);
    let mut d = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    let mut stall_count = 0;

    for _ in 0..options.max_iterations {
        if inf_norm(&g) < options.grad_tol {
            converged = true;
            break;
        }

        neg_matvec(&h_inv, &g, &mut d);
        let mut slope = dot(&d, &g);
        let mut steepest = false;
        if !(slope < 0.0) {
            // Curvature information went bad; restart from steepest descent.
            h_inv = identity(n);
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi;
            }
            slope = -dot(&g, &g);
            steepest = true;
        }

        let mut accepted = backtrack(&mut cf, &x, &d, fx, slope);
        if accepted.is_none() && !steepest {
            h_inv = identity(n);
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi;
            }
            slope = -dot(&g, &g);
            accepted = backtrack(&mut cf, &x, &d, fx, slope);
        }
        let Some((t, f_new, x_new)) = accepted else {
            // No descent even along -g: numerically at a stationary point.
            converged = true;
            break;
        };

        iterations += 1;
        trace.push(f_new);
        let s: Vec<f64> = d.iter().map(|di| t * di).collect();
        let step_len = norm2(&s);
        if fx - f_new < options.stall_rel * f_new.abs().max(1e-12) {
            stall_count += 1;
        } else {
            stall_count = 0;
        }
        let stalled = options.stall_patience > 0 && stall_count >= options.stall_patience;
        let mut g_new = vec![0.0; n];
        let mut x_next = x_new;
        if reached(f_new) || step_len < options.step_tol || stalled {
            x = x_next;
            fx = f_new;
            converged = true;
            break;
        }
        cf.gradient(&mut x_next, options.grad_step, &mut g_new);

        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * step_len * norm2(&y) {
            // Inverse update  H ← (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ.
            let rho = 1.0 / sy;
            let mut hy = vec![0.0; n];
            for i in 0..n {
                hy[i] = dot(&h_inv[i * n..(i + 1) * n], &y);
            }
            let yhy = dot(&y, &hy);
            let c = rho * rho * yhy + rho;
            for i in 0..n {
                for j in 0..n {
                    h_inv[i * n + j] += c * s[i] * s[j] - rho * (s[i] * hy[j] + hy[i] * s[j]);
                }
            }
        }
        x = x_next;
        fx = f_new;
        g = g_new;
    }

    BfgsResult {
        x,
        value: fx,
        iterations,
        evaluations: cf.evals,
        converged,
        trace,
    }
}

/// Golden-section minimization of a scalar function on `[a, b]`;
/// returns the best sampled `(x, f(x))` once the bracket is below `tol`.
pub fn golden_section_minimize(
    f: &mut dyn FnMut(f64) -> f64,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> (f64, f64) {
    if b < a {
        std::mem::swap(&mut a, &mut b);
    }
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

// ---------------------------------------------------------------------------
// Gate objective
// ---------------------------------------------------------------------------

/// Infidelity-plus-penalty objective over flattened Fourier variables,
/// evaluated on a (typically reduced-resolution) gate problem.
pub struct GateObjective {
    problem: GateProblem,
    config: IntegratorConfig,
    t_total: f64,
    n_f: usize,
    with_counter: bool,
    /// Absolute bound on `max_t |g_j(t)|` (same units as the coefficients).
    amplitude_bound: f64,
    /// Total number of objective evaluations so far.
    pub evaluations: usize,
}

impl GateObjective {
    /// `amplitude_bound_over_k` is expressed in units of the problem's `K`.
    pub fn new(
        problem: GateProblem,
        t_total: f64,
        n_f: usize,
        amplitude_bound_over_k: f64,
        config: IntegratorConfig,
    ) -> Result<Self> {
        if !(t_total > 0.0) || !t_total.is_finite() {
            return Err(Error::Invalid(format!(
                "gate time must be positive, got {t_total}"
            )));
        }
        if !(amplitude_bound_over_k > 0.0) {
            return Err(Error::Invalid(format!(
                "amplitude bound must be positive, got {amplitude_bound_over_k}"
            )));
        }
        let with_counter = problem.counter != CounterVariant::None;
        let amplitude_bound = amplitude_bound_over_k * problem.constants.k;
        Ok(Self {
            problem,
            config,
            t_total,
            n_f,
            with_counter,
            amplitude_bound,
            evaluations: 0,
        })
    }

    /// Number of optimization variables (`2N_f` for `g0`, plus `N_f` for the
    /// counter pulse when present).
    pub fn dimension(&self) -> usize {
        if self.with_counter {
            3 * self.n_f
        } else {
            2 * self.n_f
        }
    }

    /// `max(1 − F̄, 0)`, or a penalty value for unusable variables.
    pub fn evaluate(&mut self, flat: &[f64]) -> f64 {
        self.evaluations += 1;
        let Ok(coeffs) = PulseCoefficients::from_flat(self.t_total, self.n_f, flat, self.with_counter)
        else {
            return PENALTY_OBJECTIVE;
        };
        let waveform = Waveform::Fourier(coeffs);
        let Ok((m0, m1)) = waveform.max_amplitudes(AMPLITUDE_SCAN_SAMPLES) else {
            return PENALTY_OBJECTIVE;
        };
        let peak = m0.max(m1);
        if peak > self.amplitude_bound {
            return PENALTY_OBJECTIVE + (peak - self.amplitude_bound) / self.problem.constants.k;
        }
        match gate_fidelity(&self.problem, &waveform, &self.config) {
            Ok(report) if report.infidelity.is_finite() => report.infidelity.max(0.0),
            Ok(_) => PENALTY_OBJECTIVE,
            Err(err) => {
                log::warn!("objective evaluation failed: {err}");
                PENALTY_OBJECTIVE
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Gate optimization driver
// ---------------------------------------------------------------------------

/// Tuning knobs of [`optimize_gate`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GateOptimizerOptions {
    /// Number of Fourier harmonics per pulse.
    pub n_f: usize,
    pub bfgs: BfgsOptions,
    /// Extra perturbed starts tried when the seed start misses the target.
    pub restarts: usize,
    /// Gaussian restart perturbation, relative to the largest seed
    /// coefficient.
    pub perturbation_scale: f64,
    /// RNG seed for the restart perturbations.
    pub seed: u64,
    /// Fock cutoff of the inner-loop problem.
    pub opt_cutoff: usize,
    /// Integration step of the inner loop.
    pub opt_dt: f64,
    /// Integration step of the final full-resolution score.
    pub final_dt: f64,
    /// Bound on `max_t |g_j(t)| / K`.
    pub amplitude_bound: f64,
    /// Step-halving tolerance used to validate `opt_dt` on the seed pulse.
    pub step_check_tol: f64,
}

impl GateOptimizerOptions {
    /// Defaults appropriate for the given gate: a tighter amplitude bound
    /// for `Rx` (its drive couples within the qubit space, so large
    /// amplitudes are both reachable and harmful) and a per-mode cutoff
    /// small enough to keep two-mode inner loops affordable.
    pub fn for_kind(kind: GateKind) -> Self {
        let amplitude_bound = match kind {
            GateKind::Rx => RX_AMPLITUDE_BOUND,
            _ => DEFAULT_AMPLITUDE_BOUND,
        };
        let opt_cutoff = if kind.is_two_mode() { 16 } else { 24 };
        Self {
            n_f: DEFAULT_N_F,
            bfgs: BfgsOptions {
                target_value: Some(1e-5),
                ..BfgsOptions::default()
            },
            restarts: 3,
            perturbation_scale: 0.1,
            seed: 7,
            opt_cutoff,
            opt_dt: 1e-3,
            final_dt: 1e-4,
            amplitude_bound,
            step_check_tol: 1e-6,
        }
    }
}

/// An optimized pulse together with its scores.
#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub pulse: PulseCoefficients,
    /// Fidelity of the optimized pulse on the caller's full-resolution
    /// problem at `final_dt`.
    pub report: FidelityReport,
    /// Best inner-loop objective value.
    pub reduced_objective: f64,
    /// Inner-loop objective value of the unoptimized seed pulse.
    pub seed_objective: f64,
    pub max_g0_over_k: f64,
    pub max_g1_over_k: f64,
    /// BFGS iterations summed over all starts.
    pub iterations: usize,
    /// Objective evaluations summed over all starts.
    pub evaluations: usize,
    /// Starts actually run (1 = the seed start alone).
    pub starts_used: usize,
    /// Detuning used in the `Rx` seed, when applicable.
    pub delta: Option<f64>,
    /// `true` when the winning BFGS run stopped before its iteration cap.
    pub converged: bool,
    /// Objective trace of the winning run (scheduled runs concatenate the
    /// winning trace of every stage).
    pub trace: Vec<f64>,
}

fn perturbed(seed: &[f64], scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    seed.iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(rng);
            v + scale * z
        })
        .collect()
}

/// Optimizes the Fourier pulse of `problem`'s gate at gate time `t_total`.
///
/// The search starts from the closed-form seed (for `Rx`, `delta` is the
/// seed detuning and is calibrated on the reduced problem when absent),
/// runs BFGS on a reduced-resolution copy of the problem, retries from
/// perturbed seeds while the target is missed, and re-scores the winner on
/// the full-resolution `problem`. The result is never worse than the seed
/// pulse in the inner-loop metric.
///
/// When `initial` is given, its coefficient vector replaces the closed-form
/// seed (re-timed to `t_total`); this supports continuation runs that walk
/// an optimized pulse from a long gate time down to a shorter one.
pub fn optimize_gate(
    problem: &GateProblem,
    t_total: f64,
    delta: Option<f64>,
    initial: Option<&PulseCoefficients>,
    options: &GateOptimizerOptions,
) -> Result<OptimizationResult> {
    if !(t_total > 0.0) || !t_total.is_finite() {
        return Err(Error::Invalid(format!(
            "gate time must be positive, got {t_total}"
        )));
    }
    let with_counter = problem.counter != CounterVariant::None;
    let reduced = if problem.space.cutoff() == options.opt_cutoff {
        problem.clone()
    } else {
        problem.with_cutoff(options.opt_cutoff)?
    };
    let opt_config = IntegratorConfig::with_dt(options.opt_dt);

    let delta = match (problem.kind, delta) {
        (GateKind::Rx, None) if initial.is_none() => {
            Some(calibrate_detuning(&reduced, t_total, &opt_config)?.0)
        }
        (GateKind::Rx, d) => d,
        _ => None,
    };
    let seed = match initial {
        Some(pulse) => {
            if pulse.n_f() != options.n_f {
                return Err(Error::DimensionMismatch {
                    context: "initial pulse harmonics",
                    left: pulse.n_f(),
                    right: options.n_f,
                });
            }
            PulseCoefficients::from_flat(
                t_total,
                options.n_f,
                &pulse.to_flat(with_counter),
                with_counter,
            )?
        }
        None => seed_coefficients(
            problem.kind,
            problem.angle,
            delta,
            t_total,
            options.n_f,
            with_counter,
            problem.constants,
        )?,
    };
    let seed_flat = seed.to_flat(with_counter);

    // Validate the inner-loop step on the seed pulse, halving it (at most
    // twice) when the step-halving check rejects the requested dt — large
    // warm-start amplitudes legitimately need a finer step than cold seeds.
    let seed_waveform = Waveform::Fourier(seed);
    let system = GateSystem::for_problem(&reduced, &seed_waveform)?;
    let basis = reduced.basis_states()?;
    let mut opt_config = opt_config;
    let mut halvings = 0;
    loop {
        match require_step_converged(&system, &basis[0], &opt_config, options.step_check_tol) {
            Ok(_) => break,
            Err(err) if halvings < 2 => {
                log::info!("inner step rejected, halving dt: {err}");
                opt_config.dt /= 2.0;
                halvings += 1;
            }
            Err(err) => return Err(err),
        }
    }

    let mut objective = GateObjective::new(
        reduced,
        t_total,
        options.n_f,
        options.amplitude_bound,
        opt_config,
    )?;
    let seed_objective = objective.evaluate(&seed_flat);

    let scale = options.perturbation_scale * inf_norm(&seed_flat).max(1e-2);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut best: Option<BfgsResult> = None;
    let mut starts_used = 0;
    let mut iterations = 0;
    for start in 0..=options.restarts {
        let x0 = if start == 0 {
            seed_flat.clone()
        } else {
            perturbed(&seed_flat, scale, &mut rng)
        };
        let run = bfgs_minimize(&mut |x| objective.evaluate(x), &x0, &options.bfgs);
        starts_used += 1;
        iterations += run.iterations;
        let value = run.value;
        if best.as_ref().is_none_or(|b| value < b.value) {
            best = Some(run);
        }
        if options.bfgs.target_value.is_some_and(|t| value <= t) {
            break;
        }
    }
    let best = best.expect("at least the seed start runs");

    let converged = best.converged;
    let (flat, reduced_objective, trace) = if best.value <= seed_objective {
        (best.x, best.value, best.trace)
    } else {
        (seed_flat, seed_objective, vec![seed_objective])
    };
    let pulse = PulseCoefficients::from_flat(t_total, options.n_f, &flat, with_counter)?;
    let waveform = Waveform::Fourier(pulse.clone());
    let report = gate_fidelity(problem, &waveform, &IntegratorConfig::with_dt(options.final_dt))?;
    let (m0, m1) = waveform.max_amplitudes(AMPLITUDE_SCAN_SAMPLES)?;
    let k = problem.constants.k;
    Ok(OptimizationResult {
        pulse,
        report,
        reduced_objective,
        seed_objective,
        max_g0_over_k: m0 / k,
        max_g1_over_k: m1 / k,
        iterations,
        evaluations: objective.evaluations,
        starts_used,
        delta,
        converged,
        trace,
    })
}

/// Optimizes a gate along a decreasing gate-time schedule (continuation):
/// the first stage starts from the closed-form seed, later stages re-seed
/// from the previous stage's optimum re-timed to the shorter gate. Hard
/// short-time targets (for example `Rx` well below its adiabatic-regime
/// minimum) sit in basins a cold start rarely finds; walking down in `T`
/// tracks them reliably and stays fully deterministic.
///
/// Returns the final stage's result with iteration/evaluation/start counts
/// accumulated over all stages.
pub fn optimize_gate_scheduled(
    problem: &GateProblem,
    schedule: &[f64],
    delta: Option<f64>,
    options: &GateOptimizerOptions,
) -> Result<OptimizationResult> {
    if schedule.is_empty() {
        return Err(Error::Invalid("empty gate-time schedule".into()));
    }
    let mut pulse: Option<PulseCoefficients> = None;
    let mut iterations = 0;
    let mut evaluations = 0;
    let mut starts_used = 0;
    let mut trace = Vec::new();
    let mut last: Option<OptimizationResult> = None;
    for &t_total in schedule {
        let result = optimize_gate(problem, t_total, delta, pulse.as_ref(), options)?;
        iterations += result.iterations;
        evaluations += result.evaluations;
        starts_used += result.starts_used;
        trace.extend(result.trace.iter().copied());
        log::info!(
            "schedule stage KT={t_total}: 1-F = {:.3e} ({} iterations)",
            result.report.infidelity,
            result.iterations
        );
        pulse = Some(result.pulse.clone());
        last = Some(result);
    }
    let mut result = last.expect("schedule is nonempty");
    result.iterations = iterations;
    result.evaluations = evaluations;
    result.starts_used = starts_used;
    result.trace = trace;
    Ok(result)
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

/// Calibrates the `Rx` detuning: scans `Δ` over `±12K` (widening once to
/// `±24K` if the optimum sits on the edge), refines the best bracket by
/// golden section, and returns `(Δ, F̄)` for the analytic raised-cosine
/// pulse of the problem's angle at gate time `t_total`.
pub fn calibrate_detuning(
    problem: &GateProblem,
    t_total: f64,
    config: &IntegratorConfig,
) -> Result<(f64, f64)> {
    if problem.kind != GateKind::Rx {
        return Err(Error::Invalid(
            "detuning calibration applies to Rx gates only".into(),
        ));
    }
    let with_counter = problem.counter != CounterVariant::None;
    let k = problem.constants.k;
    let failure: std::cell::RefCell<Option<Error>> = std::cell::RefCell::new(None);
    let mut infidelity = |delta: f64| -> f64 {
        let result = AnalyticWaveform::new(
            GateKind::Rx,
            problem.angle,
            Some(delta),
            t_total,
            with_counter,
            problem.constants,
        )
        .map(Waveform::Analytic)
        .and_then(|wf| gate_fidelity(problem, &wf, config));
        match result {
            Ok(report) => report.infidelity,
            Err(err) => {
                *failure.borrow_mut() = Some(err);
                f64::INFINITY
            }
        }
    };

    let mut half_range = 12.0 * k;
    let steps = 96;
    let mut best = (f64::INFINITY, 0.0);
    for widen in 0..2 {
        best = (f64::INFINITY, 0.0);
        for i in 0..=steps {
            let delta = -half_range + 2.0 * half_range * i as f64 / steps as f64;
            let value = infidelity(delta);
            if value < best.0 {
                best = (value, delta);
            }
        }
        if let Some(err) = failure.borrow_mut().take() {
            return Err(err);
        }
        let edge = half_range * (1.0 - 1.0 / steps as f64);
        if best.1.abs() < edge {
            break;
        }
        if widen == 1 {
            return Err(Error::CalibrationFailed(format!(
                "Rx detuning optimum stuck at the scan edge ({:+.3} K)",
                best.1 / k
            )));
        }
        half_range *= 2.0;
    }

    let grid_step = 2.0 * half_range / steps as f64;
    let (delta, value) = golden_section_minimize(
        &mut infidelity,
        best.1 - grid_step,
        best.1 + grid_step,
        1e-5 * k,
    );
    if let Some(err) = failure.borrow_mut().take() {
        return Err(err);
    }
    let (delta, value) = if value <= best.0 {
        (delta, value)
    } else {
        (best.1, best.0)
    };
    Ok((delta, 1.0 - value))
}

/// Finds the ideal-gate angle best matched by the measured propagator `u`
/// (used to score rescaled pulses as continuous-angle gates). Scans
/// `[-2π, 2π)` and refines by golden section; returns the angle and the
/// fidelity report against it. Angles differing by `2π` give identical
/// average fidelities, so the returned representative is not unique.
pub fn calibrated_fidelity(
    u: &ndarray::Array2<crate::C64>,
    kind: GateKind,
) -> Result<(f64, FidelityReport)> {
    use std::f64::consts::PI;
    let points = 720;
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..points {
        let angle = -2.0 * PI + 4.0 * PI * i as f64 / points as f64;
        let report = average_fidelity(u, &ideal_unitary(kind, angle))?;
        if report.infidelity < best.0 {
            best = (report.infidelity, angle);
        }
    }
    let span = 4.0 * PI / points as f64;
    let failure: std::cell::RefCell<Option<Error>> = std::cell::RefCell::new(None);
    let mut objective = |angle: f64| -> f64 {
        match average_fidelity(u, &ideal_unitary(kind, angle)) {
            Ok(report) => report.infidelity,
            Err(err) => {
                *failure.borrow_mut() = Some(err);
                f64::INFINITY
            }
        }
    };
    let (angle, value) =
        golden_section_minimize(&mut objective, best.1 - span, best.1 + span, 1e-10);
    if let Some(err) = failure.borrow_mut().take() {
        return Err(err);
    }
    let angle = if value <= best.0 { angle } else { best.1 };
    let report = average_fidelity(u, &ideal_unitary(kind, angle))?;
    Ok((angle, report))
}

/// Scores a scaled pulse `λ·(g0, g1)` of a unit-angle problem as a
/// continuous-angle gate: propagates it, calibrates the best-matching ideal
/// angle and returns `(angle, report)`.
pub fn scaled_pulse_fidelity(
    problem: &GateProblem,
    waveform: &Waveform,
    lambda: f64,
    config: &IntegratorConfig,
) -> Result<(f64, FidelityReport)> {
    let scaled =
        crate::pulses::apply_perturbation(waveform, crate::pulses::PulsePerturbation::lambda(lambda));
    let u = propagate_gate(problem, &scaled, config)?;
    calibrated_fidelity(&u, problem.kind)
}
