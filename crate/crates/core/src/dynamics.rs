//! Fixed-step fourth-order Runge-Kutta propagation of Schrödinger and
//! Lindblad dynamics under the driven KPO Hamiltonian
//! `H(t) = H_static + g0(t)·A0 + g1(t)·A1`.
//!
//! States and density matrices are never renormalized during propagation:
//! norm and trace drift are diagnostics of integration quality and must stay
//! small on their own. The requested step is rounded down so that an integer
//! number of equal steps lands exactly on the gate time.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::hilbert::{annihilation, number, DensityMatrix, FockSpace, Operator, StateVector};
use crate::linalg::CsrMatrix;
use crate::model::GateProblem;
use crate::pulses::Waveform;
use crate::{Error, Result, C64};

/// Default integration step in units of `1/K`.
pub const DEFAULT_DT: f64 = 1e-4;

const ZERO: C64 = C64::new(0.0, 0.0);
const MINUS_I: C64 = C64::new(0.0, -1.0);

/// Step-size and recording configuration for the propagators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Requested step in units of `1/K` (the realized step is `T/⌈T/dt⌉`).
    pub dt: f64,
    /// Record a trajectory point every `record_stride` steps.
    pub record_stride: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            record_stride: 100,
        }
    }
}

impl IntegratorConfig {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "integration step must be positive, got {}",
                self.dt
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidConfig(
                "record stride must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Number of equal steps and the realized step size for duration `t`.
    fn grid(&self, t_total: f64) -> (usize, f64) {
        let n = (t_total / self.dt).ceil().max(1.0) as usize;
        (n, t_total / n as f64)
    }
}

/// A concrete propagation problem: static Hamiltonian, drive generators and
/// the waveform pair that modulates them.
#[derive(Debug, Clone)]
pub struct GateSystem<'a> {
    space: FockSpace,
    h_static: &'a Operator,
    a0: &'a Operator,
    a1: &'a Operator,
    waveform: &'a Waveform,
}

impl<'a> GateSystem<'a> {
    pub fn from_parts(
        h_static: &'a Operator,
        a0: &'a Operator,
        a1: &'a Operator,
        waveform: &'a Waveform,
    ) -> Result<Self> {
        let space = h_static.space();
        for op in [a0, a1] {
            if op.space() != space {
                return Err(Error::DimensionMismatch {
                    context: "drive operator space",
                    left: op.space().dimension(),
                    right: space.dimension(),
                });
            }
        }
        for op in [h_static, a0, a1] {
            if !op.is_hermitian() {
                return Err(Error::NotHermitian {
                    deviation: op.csr().hermiticity_deviation(),
                });
            }
        }
        if !(waveform.duration() > 0.0) {
            return Err(Error::Invalid(
                "waveform duration must be positive".into(),
            ));
        }
        Ok(Self {
            space,
            h_static,
            a0,
            a1,
            waveform,
        })
    }

    pub fn for_problem(problem: &'a GateProblem, waveform: &'a Waveform) -> Result<Self> {
        Self::from_parts(&problem.h_static, &problem.a0, &problem.a1, waveform)
    }

    pub fn space(&self) -> FockSpace {
        self.space
    }

    pub fn duration(&self) -> f64 {
        self.waveform.duration()
    }

    fn coefficients(&self, t: f64) -> Result<(f64, f64)> {
        Ok((self.waveform.eval_g0(t)?, self.waveform.eval_g1(t)?))
    }

    /// `y = -i·H(t)·x` with the drive coefficients pre-evaluated.
    fn rhs_state(&self, g: (f64, f64), x: &[C64], y: &mut [C64]) {
        y.fill(ZERO);
        self.h_static.csr().matvec_acc(MINUS_I, x, y);
        if g.0 != 0.0 {
            self.a0.csr().matvec_acc(MINUS_I * g.0, x, y);
        }
        if g.1 != 0.0 {
            self.a1.csr().matvec_acc(MINUS_I * g.1, x, y);
        }
    }

    /// `out = -i[H(t), ρ] + κ Σ_i (a_i ρ a_i† - ½{a_i†a_i, ρ})`.
    fn rhs_density(
        &self,
        g: (f64, f64),
        rho: &Array2<C64>,
        out: &mut Array2<C64>,
        scratch: &mut Array2<C64>,
        loss: Option<&LossChannels>,
    ) {
        out.fill(ZERO);
        let plus_i = -MINUS_I;
        let terms: [(&CsrMatrix, f64); 3] = [
            (self.h_static.csr(), 1.0),
            (self.a0.csr(), g.0),
            (self.a1.csr(), g.1),
        ];
        for (csr, coeff) in terms {
            if coeff == 0.0 {
                continue;
            }
            csr.spmm_left_acc(MINUS_I * coeff, rho, out);
            csr.spmm_right_acc(plus_i * coeff, rho, out);
        }
        if let Some(loss) = loss {
            let kappa = C64::new(loss.kappa, 0.0);
            let half = C64::new(-loss.kappa / 2.0, 0.0);
            for mode in 0..loss.a.len() {
                scratch.fill(ZERO);
                loss.a[mode].spmm_left_acc(C64::new(1.0, 0.0), rho, scratch);
                loss.adag[mode].spmm_right_acc(kappa, scratch, out);
                loss.n[mode].spmm_left_acc(half, rho, out);
                loss.n[mode].spmm_right_acc(half, rho, out);
            }
        }
    }
}

/// Precomputed single-photon loss operators for each mode.
struct LossChannels {
    kappa: f64,
    a: Vec<CsrMatrix>,
    adag: Vec<CsrMatrix>,
    n: Vec<CsrMatrix>,
}

impl LossChannels {
    fn new(space: FockSpace, kappa: f64) -> Result<Self> {
        let mut a = Vec::new();
        let mut adag = Vec::new();
        let mut n = Vec::new();
        for mode in 0..space.modes() {
            let am = annihilation(space, mode)?;
            adag.push(am.csr().adjoint());
            n.push(number(space, mode)?.csr().clone());
            a.push(am.csr().clone());
        }
        Ok(Self { kappa, a, adag, n })
    }
}

/// `y += c·x` (real RK4 combination weights).
fn axpy(y: &mut [C64], c: f64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

/// `dst = y + c·k`.
fn stage(dst: &mut [C64], y: &[C64], c: f64, k: &[C64]) {
    for ((d, yi), ki) in dst.iter_mut().zip(y).zip(k) {
        *d = yi + c * ki;
    }
}

/// Tracked observables for trajectory recording.
pub struct Observables {
    number_ops: Vec<Operator>,
    projector: Operator,
}

impl Observables {
    pub fn for_space(space: FockSpace, alpha: f64) -> Result<Self> {
        let number_ops = (0..space.modes())
            .map(|m| number(space, m))
            .collect::<Result<Vec<_>>>()?;
        let projector = crate::model::qubit_projector(space, alpha)?;
        Ok(Self {
            number_ops,
            projector,
        })
    }

    pub fn for_problem(problem: &GateProblem) -> Result<Self> {
        Self::for_space(problem.space, problem.constants.alpha())
    }

    fn record_state(&self, t: f64, psi: &StateVector) -> Result<TrajectoryPoint> {
        Ok(TrajectoryPoint {
            t,
            norm_or_trace: psi.norm(),
            qubit_population: self.projector.expectation(psi)?.re,
            mean_photon: self
                .number_ops
                .iter()
                .map(|n| n.expectation(psi).map(|v| v.re))
                .collect::<Result<Vec<_>>>()?,
        })
    }

    fn record_density(&self, t: f64, rho: &DensityMatrix) -> Result<TrajectoryPoint> {
        Ok(TrajectoryPoint {
            t,
            norm_or_trace: rho.trace().re,
            qubit_population: self.projector.expectation_density(rho)?.re,
            mean_photon: self
                .number_ops
                .iter()
                .map(|n| n.expectation_density(rho).map(|v| v.re))
                .collect::<Result<Vec<_>>>()?,
        })
    }
}

/// One recorded sample along a propagation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    /// Time in units of `1/K`.
    pub t: f64,
    /// State norm (Schrödinger) or trace (Lindblad).
    pub norm_or_trace: f64,
    /// Population of the encoded qubit subspace.
    pub qubit_population: f64,
    /// Mean photon number per mode.
    pub mean_photon: Vec<f64>,
}

/// Time series of tracked observables along an evolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub modes: usize,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    /// CSV rendering with a commented header naming columns and units.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# columns: t_K,norm_or_trace,qubit_population");
        for m in 1..=self.modes {
            out.push_str(&format!(",mean_photon_mode{m}"));
        }
        out.push('\n');
        for p in &self.points {
            out.push_str(&format!(
                "{:.12e},{:.12e},{:.12e}",
                p.t, p.norm_or_trace, p.qubit_population
            ));
            for v in &p.mean_photon {
                out.push_str(&format!(",{v:.12e}"));
            }
            out.push('\n');
        }
        out
    }
}

fn state_buffer(psi: &StateVector, space: FockSpace) -> Result<Vec<C64>> {
    if psi.space() != space {
        return Err(Error::DimensionMismatch {
            context: "initial state space",
            left: psi.space().dimension(),
            right: space.dimension(),
        });
    }
    Ok(psi.amplitudes().iter().cloned().collect())
}

fn run_state(
    system: &GateSystem,
    psi0: &StateVector,
    config: &IntegratorConfig,
    mut recorder: Option<(&Observables, &mut Vec<TrajectoryPoint>)>,
) -> Result<StateVector> {
    config.validate()?;
    let t_total = system.duration();
    let (n_steps, h) = config.grid(t_total);
    let dim = system.space.dimension();
    let mut y = state_buffer(psi0, system.space)?;
    let mut k1 = vec![ZERO; dim];
    let mut k2 = vec![ZERO; dim];
    let mut k3 = vec![ZERO; dim];
    let mut k4 = vec![ZERO; dim];
    let mut tmp = vec![ZERO; dim];

    let snapshot = |buf: &[C64]| -> Result<StateVector> {
        StateVector::from_amplitudes(system.space, Array1::from(buf.to_vec()))
    };
    if let Some((obs, points)) = recorder.as_mut() {
        points.push(obs.record_state(0.0, &snapshot(&y)?)?);
    }

    for step in 0..n_steps {
        let t = step as f64 * h;
        let g_start = system.coefficients(t)?;
        let g_mid = system.coefficients(t + h / 2.0)?;
        let g_end = system.coefficients(t + h)?;

        system.rhs_state(g_start, &y, &mut k1);
        stage(&mut tmp, &y, h / 2.0, &k1);
        system.rhs_state(g_mid, &tmp, &mut k2);
        stage(&mut tmp, &y, h / 2.0, &k2);
        system.rhs_state(g_mid, &tmp, &mut k3);
        stage(&mut tmp, &y, h, &k3);
        system.rhs_state(g_end, &tmp, &mut k4);

        axpy(&mut y, h / 6.0, &k1);
        axpy(&mut y, h / 3.0, &k2);
        axpy(&mut y, h / 3.0, &k3);
        axpy(&mut y, h / 6.0, &k4);

        if let Some((obs, points)) = recorder.as_mut() {
            let done = step + 1 == n_steps;
            if (step + 1) % config.record_stride == 0 || done {
                points.push(obs.record_state((step + 1) as f64 * h, &snapshot(&y)?)?);
            }
        }
    }
    snapshot(&y)
}

/// Propagates a pure state through the full gate; returns the (unnormalized)
/// final state.
pub fn evolve_state(
    system: &GateSystem,
    psi0: &StateVector,
    config: &IntegratorConfig,
) -> Result<StateVector> {
    run_state(system, psi0, config, None)
}

/// As [`evolve_state`], additionally recording observables along the way.
pub fn evolve_state_recorded(
    system: &GateSystem,
    psi0: &StateVector,
    config: &IntegratorConfig,
    observables: &Observables,
) -> Result<(StateVector, Trajectory)> {
    let mut points = Vec::new();
    let psi = run_state(system, psi0, config, Some((observables, &mut points)))?;
    let trajectory = Trajectory {
        modes: system.space.modes(),
        points,
    };
    Ok((psi, trajectory))
}

/// Propagates a pure state and captures snapshots at the requested times
/// (each rounded to the nearest integration step). Returns `(t, state)`
/// pairs sorted by time; `t` is the actual grid time of the snapshot.
/// Times outside `[0, duration]` are an error.
pub fn evolve_state_snapshots(
    system: &GateSystem,
    psi0: &StateVector,
    config: &IntegratorConfig,
    times: &[f64],
) -> Result<Vec<(f64, StateVector)>> {
    config.validate()?;
    let t_total = system.duration();
    let (n_steps, h) = config.grid(t_total);
    let mut indices: Vec<usize> = Vec::with_capacity(times.len());
    for &t in times {
        if !(0.0..=t_total * (1.0 + 1e-12)).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                duration: t_total,
            });
        }
        indices.push(((t / h).round() as usize).min(n_steps));
    }
    indices.sort_unstable();
    indices.dedup();

    let dim = system.space.dimension();
    let mut y = state_buffer(psi0, system.space)?;
    let mut k1 = vec![ZERO; dim];
    let mut k2 = vec![ZERO; dim];
    let mut k3 = vec![ZERO; dim];
    let mut k4 = vec![ZERO; dim];
    let mut tmp = vec![ZERO; dim];
    let snapshot = |buf: &[C64]| -> Result<StateVector> {
        StateVector::from_amplitudes(system.space, Array1::from(buf.to_vec()))
    };

    let mut out = Vec::with_capacity(indices.len());
    let mut next = indices.iter().copied().peekable();
    if next.peek() == Some(&0) {
        out.push((0.0, snapshot(&y)?));
        next.next();
    }
    for step in 0..n_steps {
        if next.peek().is_none() {
            break;
        }
        let t = step as f64 * h;
        let g_start = system.coefficients(t)?;
        let g_mid = system.coefficients(t + h / 2.0)?;
        let g_end = system.coefficients(t + h)?;

        system.rhs_state(g_start, &y, &mut k1);
        stage(&mut tmp, &y, h / 2.0, &k1);
        system.rhs_state(g_mid, &tmp, &mut k2);
        stage(&mut tmp, &y, h / 2.0, &k2);
        system.rhs_state(g_mid, &tmp, &mut k3);
        stage(&mut tmp, &y, h, &k3);
        system.rhs_state(g_end, &tmp, &mut k4);

        axpy(&mut y, h / 6.0, &k1);
        axpy(&mut y, h / 3.0, &k2);
        axpy(&mut y, h / 3.0, &k3);
        axpy(&mut y, h / 6.0, &k4);

        if next.peek() == Some(&(step + 1)) {
            out.push(((step + 1) as f64 * h, snapshot(&y)?));
            next.next();
        }
    }
    Ok(out)
}

fn run_density(
    system: &GateSystem,
    rho0: &DensityMatrix,
    kappa: f64,
    config: &IntegratorConfig,
    mut recorder: Option<(&Observables, &mut Vec<TrajectoryPoint>)>,
) -> Result<DensityMatrix> {
    config.validate()?;
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::Invalid(format!(
            "loss rate must be non-negative, got {kappa}"
        )));
    }
    if rho0.space() != system.space {
        return Err(Error::DimensionMismatch {
            context: "initial density-matrix space",
            left: rho0.space().dimension(),
            right: system.space.dimension(),
        });
    }
    let loss = if kappa > 0.0 {
        Some(LossChannels::new(system.space, kappa)?)
    } else {
        None
    };
    let t_total = system.duration();
    let (n_steps, h) = config.grid(t_total);
    let dim = system.space.dimension();
    let mut y = rho0.matrix().clone();
    let mut k1 = Array2::from_elem((dim, dim), ZERO);
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut tmp = k1.clone();
    let mut scratch = k1.clone();

    let snapshot = |m: &Array2<C64>| -> Result<DensityMatrix> {
        DensityMatrix::from_matrix(system.space, m.clone())
    };
    if let Some((obs, points)) = recorder.as_mut() {
        points.push(obs.record_density(0.0, &snapshot(&y)?)?);
    }

    // Slice views for the linear-combination updates.
    macro_rules! s {
        ($a:expr) => {
            $a.as_slice().expect("contiguous matrix")
        };
    }
    macro_rules! sm {
        ($a:expr) => {
            $a.as_slice_mut().expect("contiguous matrix")
        };
    }

    for step in 0..n_steps {
        let t = step as f64 * h;
        let g_start = system.coefficients(t)?;
        let g_mid = system.coefficients(t + h / 2.0)?;
        let g_end = system.coefficients(t + h)?;

        system.rhs_density(g_start, &y, &mut k1, &mut scratch, loss.as_ref());
        stage(sm!(tmp), s!(y), h / 2.0, s!(k1));
        system.rhs_density(g_mid, &tmp, &mut k2, &mut scratch, loss.as_ref());
        stage(sm!(tmp), s!(y), h / 2.0, s!(k2));
        system.rhs_density(g_mid, &tmp, &mut k3, &mut scratch, loss.as_ref());
        stage(sm!(tmp), s!(y), h, s!(k3));
        system.rhs_density(g_end, &tmp, &mut k4, &mut scratch, loss.as_ref());

        axpy(sm!(y), h / 6.0, s!(k1));
        axpy(sm!(y), h / 3.0, s!(k2));
        axpy(sm!(y), h / 3.0, s!(k3));
        axpy(sm!(y), h / 6.0, s!(k4));

        if let Some((obs, points)) = recorder.as_mut() {
            let done = step + 1 == n_steps;
            if (step + 1) % config.record_stride == 0 || done {
                points.push(obs.record_density((step + 1) as f64 * h, &snapshot(&y)?)?);
            }
        }
    }
    snapshot(&y)
}

/// Propagates a density matrix under the driven Hamiltonian plus
/// single-photon loss at rate `kappa` on every mode.
pub fn evolve_density(
    system: &GateSystem,
    rho0: &DensityMatrix,
    kappa: f64,
    config: &IntegratorConfig,
) -> Result<DensityMatrix> {
    run_density(system, rho0, kappa, config, None)
}

/// As [`evolve_density`], additionally recording observables along the way.
pub fn evolve_density_recorded(
    system: &GateSystem,
    rho0: &DensityMatrix,
    kappa: f64,
    config: &IntegratorConfig,
    observables: &Observables,
) -> Result<(DensityMatrix, Trajectory)> {
    let mut points = Vec::new();
    let rho = run_density(system, rho0, kappa, config, Some((observables, &mut points)))?;
    let trajectory = Trajectory {
        modes: system.space.modes(),
        points,
    };
    Ok((rho, trajectory))
}

/// Qubit-block propagator: evolves each computational basis state and
/// returns `U[k][m] = ⟨basis_k | ψ_m(T)⟩` (`d×d`, `d = 2` or `4`).
///
/// `U` is not unitary in general; its deviation from the qubit block of a
/// unitary measures leakage out of the encoded subspace.
pub fn propagate_gate(
    problem: &GateProblem,
    waveform: &Waveform,
    config: &IntegratorConfig,
) -> Result<Array2<C64>> {
    let system = GateSystem::for_problem(problem, waveform)?;
    let basis = problem.basis_states()?;
    let d = basis.len();
    let mut u = Array2::from_elem((d, d), ZERO);
    for (m, psi0) in basis.iter().enumerate() {
        let psi_final = evolve_state(&system, psi0, config)?;
        for (k, basis_k) in basis.iter().enumerate() {
            u[(k, m)] = basis_k.inner(&psi_final)?;
        }
    }
    Ok(u)
}

/// Distance between the final states computed at `dt` and `dt/2`
/// (self-convergence estimate for the step size).
pub fn step_halving_deviation(
    system: &GateSystem,
    psi0: &StateVector,
    config: &IntegratorConfig,
) -> Result<f64> {
    let coarse = evolve_state(system, psi0, config)?;
    let halved = IntegratorConfig {
        dt: config.dt / 2.0,
        ..*config
    };
    let fine = evolve_state(system, psi0, &halved)?;
    let diff = coarse.add(&fine.scaled(C64::new(-1.0, 0.0)))?;
    Ok(diff.norm())
}

/// Fails with [`Error::StepCheckFailed`] unless halving the step moves the
/// final state by less than `tolerance`.
pub fn require_step_converged(
    system: &GateSystem,
    psi0: &StateVector,
    config: &IntegratorConfig,
    tolerance: f64,
) -> Result<f64> {
    let deviation = step_halving_deviation(system, psi0, config)?;
    if !(deviation < tolerance) {
        return Err(Error::StepCheckFailed {
            dt: config.dt,
            deviation,
            tolerance,
        });
    }
    Ok(deviation)
}
