//! The physical model: KPO Hamiltonians, drive and counter operators,
//! ideal target unitaries and assembled gate problems.
//!
//! A single KPO in the rotating frame is
//! `H_KPO = -(K/2) a†²a² + (p/2)(a†² + a²)`,
//! which factorizes as `-(K/2)(a†² - α²)(a² - α²) + p²/2K` with `α = √(p/K)`,
//! so both cat states `|C±⟩` are exact degenerate eigenstates with eigenvalue
//! `p²/2K` (the top of the spectrum; they act as effective ground states).
//! Gates drive this Hamiltonian with `g0(t)·A0 + g1(t)·A1` where `A0` selects
//! the gate axis and `A1` is the approximate counterdiabatic generator.

use ndarray::{array, Array2};
use serde::{Deserialize, Serialize};

use crate::hilbert::{
    annihilation, computational_basis, tensor_operator, tensor_state, FockSpace, Operator,
    StateVector,
};
use crate::{Error, Result, C64};

/// Model constants: Kerr coefficient `K` (the frequency unit) and two-photon
/// pump strength `p`. The stabilized coherent amplitude is `α = √(p/K)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub k: f64,
    pub p: f64,
}

impl PhysicalConstants {
    pub fn new(k: f64, p: f64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::Invalid(format!("K must be positive, got {k}")));
        }
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::Invalid(format!("p must be positive, got {p}")));
        }
        Ok(Self { k, p })
    }

    /// Coherent amplitude `α = √(p/K)` of the stabilized states.
    pub fn alpha(&self) -> f64 {
        (self.p / self.k).sqrt()
    }

    /// `α² = p/K`.
    pub fn alpha_sq(&self) -> f64 {
        self.p / self.k
    }
}

impl Default for PhysicalConstants {
    /// `K = 1`, `p = 4K` (`α = 2`): the working point used throughout.
    fn default() -> Self {
        Self { k: 1.0, p: 4.0 }
    }
}

/// Which elementary gate a drive implements, including the choice of
/// two-qubit coupling for `Rzz`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    /// Z rotation of one KPO; drive `A0 = a† + a`.
    Rz,
    /// X rotation of one KPO; drive `A0 = a†a` (detuning).
    Rx,
    /// ZZ rotation of two KPOs by two-mode squeezing, `A0 = a1†a2† + a1a2`.
    RzzTwoModeSqueezing,
    /// ZZ rotation of two KPOs by a beam splitter, `A0 = a1†a2 + a2†a1`.
    RzzBeamSplitter,
}

impl GateKind {
    pub fn modes(&self) -> usize {
        match self {
            GateKind::Rz | GateKind::Rx => 1,
            GateKind::RzzTwoModeSqueezing | GateKind::RzzBeamSplitter => 2,
        }
    }

    pub fn is_two_mode(&self) -> bool {
        self.modes() == 2
    }

    /// Dimension of the encoded qubit space: 2 for one KPO, 4 for two.
    pub fn qubit_dim(&self) -> usize {
        1 << self.modes()
    }

    pub fn label(&self) -> &'static str {
        match self {
            GateKind::Rz => "rz",
            GateKind::Rx => "rx",
            GateKind::RzzTwoModeSqueezing => "rzz_two_mode_squeezing",
            GateKind::RzzBeamSplitter => "rzz_beam_splitter",
        }
    }
}

/// Which counter (second-pulse) generator `A1` a problem uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterVariant {
    /// No counter drive; `g1` stays zero.
    None,
    /// The working generators: `i(a†-a)` for Rz, `i(a†²-a²)` for Rx,
    /// `i(a1†a2†-a1a2)` for Rzz.
    Standard,
    /// `i(a1†a2 - a2†a1)` for Rzz: antisymmetric under mode swap while `A0`
    /// is symmetric, so it cannot supply the matrix elements a counter term
    /// needs. Kept as a regression target demonstrating that failure.
    BeamSplitterOrthogonal,
}

impl CounterVariant {
    pub fn label(&self) -> &'static str {
        match self {
            CounterVariant::None => "none",
            CounterVariant::Standard => "standard",
            CounterVariant::BeamSplitterOrthogonal => "beam_splitter_orthogonal",
        }
    }
}

/// `H_KPO` for one mode of `space`:
/// `-(K/2) a†²a² + (p/2)(a†² + a²)` acting on `mode`.
pub fn kpo_hamiltonian(
    space: FockSpace,
    mode: usize,
    constants: PhysicalConstants,
) -> Result<Operator> {
    let a = annihilation(space, mode)?;
    let ad = a.dagger();
    let a2 = a.matmul(&a)?;
    let ad2 = ad.matmul(&ad)?;
    let kerr = ad2.matmul(&a2)?;
    let pump = ad2.add_scaled(&a2, C64::new(1.0, 0.0))?;
    let h = kerr
        .scaled(C64::new(-constants.k / 2.0, 0.0))
        .add_scaled(&pump, C64::new(constants.p / 2.0, 0.0))?;
    // Re-wrap to validate and record hermiticity.
    Operator::from_csr(space, h.csr().clone(), true)
}

/// Static part of a gate problem: the sum of `H_KPO` over all modes.
pub fn static_hamiltonian(space: FockSpace, constants: PhysicalConstants) -> Result<Operator> {
    let mut h = kpo_hamiltonian(space, 0, constants)?;
    if space.modes() == 2 {
        h = h.add_scaled(&kpo_hamiltonian(space, 1, constants)?, C64::new(1.0, 0.0))?;
    }
    Operator::from_csr(space, h.csr().clone(), true)
}

/// Gate drive generator `A0` for `kind`.
pub fn drive_operator(kind: GateKind, space: FockSpace) -> Result<Operator> {
    if space.modes() != kind.modes() {
        return Err(Error::Invalid(format!(
            "gate {} needs a {}-mode space, got {} modes",
            kind.label(),
            kind.modes(),
            space.modes()
        )));
    }
    let one = C64::new(1.0, 0.0);
    let m = match kind {
        GateKind::Rz => {
            let a = annihilation(space, 0)?;
            a.dagger().add_scaled(&a, one)?
        }
        GateKind::Rx => {
            let a = annihilation(space, 0)?;
            a.dagger().matmul(&a)?
        }
        GateKind::RzzTwoModeSqueezing => {
            let a1 = annihilation(space, 0)?;
            let a2 = annihilation(space, 1)?;
            let up = a1.dagger().matmul(&a2.dagger())?;
            let down = a1.matmul(&a2)?;
            up.add_scaled(&down, one)?
        }
        GateKind::RzzBeamSplitter => {
            let a1 = annihilation(space, 0)?;
            let a2 = annihilation(space, 1)?;
            let hop = a1.dagger().matmul(&a2)?;
            hop.add_scaled(&hop.dagger(), one)?
        }
    };
    Operator::from_csr(space, m.csr().clone(), true)
}

/// Standard counter generator `A1` for `kind`:
/// `i(a†-a)` (Rz), `i(a†²-a²)` (Rx), `i(a1†a2†-a1a2)` (Rzz, either coupling).
pub fn counter_operator(kind: GateKind, space: FockSpace) -> Result<Operator> {
    if space.modes() != kind.modes() {
        return Err(Error::Invalid(format!(
            "gate {} needs a {}-mode space, got {} modes",
            kind.label(),
            kind.modes(),
            space.modes()
        )));
    }
    let i = C64::new(0.0, 1.0);
    let minus = C64::new(-1.0, 0.0);
    let m = match kind {
        GateKind::Rz => {
            let a = annihilation(space, 0)?;
            a.dagger().add_scaled(&a, minus)?.scaled(i)
        }
        GateKind::Rx => {
            let a = annihilation(space, 0)?;
            let a2 = a.matmul(&a)?;
            let ad2 = a.dagger().matmul(&a.dagger())?;
            ad2.add_scaled(&a2, minus)?.scaled(i)
        }
        GateKind::RzzTwoModeSqueezing | GateKind::RzzBeamSplitter => {
            let a1 = annihilation(space, 0)?;
            let a2 = annihilation(space, 1)?;
            let up = a1.dagger().matmul(&a2.dagger())?;
            let down = a1.matmul(&a2)?;
            up.add_scaled(&down, minus)?.scaled(i)
        }
    };
    Operator::from_csr(space, m.csr().clone(), true)
}

/// The rejected two-qubit counter candidate `i(a1†a2 - a2†a1)`.
///
/// Swapping the two modes flips its sign while every `Rzz` drive `A0` is
/// swap-symmetric, so the matrix elements it offers are orthogonal to the
/// transitions that need cancelling; it demonstrably fails as a counter term.
pub fn beam_splitter_orthogonal_counter(space: FockSpace) -> Result<Operator> {
    if space.modes() != 2 {
        return Err(Error::Invalid(
            "the beam-splitter-orthogonal counter exists only for two modes".into(),
        ));
    }
    let a1 = annihilation(space, 0)?;
    let a2 = annihilation(space, 1)?;
    let hop = a1.dagger().matmul(&a2)?;
    let m = hop
        .add_scaled(&hop.dagger(), C64::new(-1.0, 0.0))?
        .scaled(C64::new(0.0, 1.0));
    Operator::from_csr(space, m.csr().clone(), true)
}

/// Ideal unitary of the gate in the computational basis
/// (`{|0̃⟩,|1̃⟩}` or `{|0̃0̃⟩,|0̃1̃⟩,|1̃0̃⟩,|1̃1̃⟩}`):
/// * `Rz(φ) = diag(e^{-iφ/2}, e^{iφ/2})`
/// * `Rx(θ) = [[cos θ/2, -i sin θ/2], [-i sin θ/2, cos θ/2]]`
/// * `Rzz(Θ) = diag(e^{-iΘ/2}, e^{iΘ/2}, e^{iΘ/2}, e^{-iΘ/2})`
pub fn ideal_unitary(kind: GateKind, angle: f64) -> Array2<C64> {
    let half = angle / 2.0;
    let em = C64::new(0.0, -half).exp();
    let ep = C64::new(0.0, half).exp();
    let zero = C64::new(0.0, 0.0);
    match kind {
        GateKind::Rz => array![[em, zero], [zero, ep]],
        GateKind::Rx => {
            let c = C64::new(half.cos(), 0.0);
            let s = C64::new(0.0, -half.sin());
            array![[c, s], [s, c]]
        }
        GateKind::RzzTwoModeSqueezing | GateKind::RzzBeamSplitter => array![
            [em, zero, zero, zero],
            [zero, ep, zero, zero],
            [zero, zero, ep, zero],
            [zero, zero, zero, em]
        ],
    }
}

/// Computational basis states of `space`: two states for one mode, four
/// Kronecker products (ordered `00, 01, 10, 11`) for two.
pub fn qubit_basis(space: FockSpace, alpha: f64) -> Result<Vec<StateVector>> {
    let single = FockSpace::single(space.cutoff());
    let (zero, one) = computational_basis(single, alpha)?;
    match space.modes() {
        1 => Ok(vec![zero, one]),
        2 => Ok(vec![
            tensor_state(&zero, &zero)?,
            tensor_state(&zero, &one)?,
            tensor_state(&one, &zero)?,
            tensor_state(&one, &one)?,
        ]),
        _ => unreachable!("FockSpace validates modes"),
    }
}

/// Projector onto the qubit space: `|0̃⟩⟨0̃| + |1̃⟩⟨1̃|` per mode,
/// tensored over modes.
pub fn qubit_projector(space: FockSpace, alpha: f64) -> Result<Operator> {
    let single = FockSpace::single(space.cutoff());
    let (zero, one) = computational_basis(single, alpha)?;
    let d = single.dimension();
    let mut p = Array2::<C64>::zeros((d, d));
    for state in [&zero, &one] {
        let a = state.amplitudes();
        for i in 0..d {
            if a[i] == C64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..d {
                p[(i, j)] += a[i] * a[j].conj();
            }
        }
    }
    let p1 = Operator::from_dense(single, &p, true)?;
    match space.modes() {
        1 => Ok(p1),
        2 => tensor_operator(&p1, &p1),
        _ => unreachable!(),
    }
}

/// Everything needed to simulate one gate: operators, target unitary and
/// model constants on a concrete truncated space.
#[derive(Debug, Clone)]
pub struct GateProblem {
    pub kind: GateKind,
    pub counter: CounterVariant,
    /// Target rotation angle (φ, θ or Θ).
    pub angle: f64,
    pub constants: PhysicalConstants,
    pub space: FockSpace,
    /// Sum of `H_KPO` over modes.
    pub h_static: Operator,
    /// Gate drive generator.
    pub a0: Operator,
    /// Counter generator (zero operator when `counter == None`).
    pub a1: Operator,
    /// Ideal unitary on the qubit space.
    pub u_ideal: Array2<C64>,
}

impl GateProblem {
    pub fn new(
        kind: GateKind,
        counter: CounterVariant,
        angle: f64,
        constants: PhysicalConstants,
        cutoff: usize,
    ) -> Result<Self> {
        if !angle.is_finite() {
            return Err(Error::Invalid("gate angle must be finite".into()));
        }
        if counter == CounterVariant::BeamSplitterOrthogonal && !kind.is_two_mode() {
            return Err(Error::Invalid(
                "the beam-splitter-orthogonal counter is only defined for Rzz kinds".into(),
            ));
        }
        let space = FockSpace::new(cutoff, kind.modes())?;
        let h_static = static_hamiltonian(space, constants)?;
        let a0 = drive_operator(kind, space)?;
        let a1 = match counter {
            CounterVariant::None => Operator::zero(space),
            CounterVariant::Standard => counter_operator(kind, space)?,
            CounterVariant::BeamSplitterOrthogonal => beam_splitter_orthogonal_counter(space)?,
        };
        let u_ideal = ideal_unitary(kind, angle);
        Ok(Self {
            kind,
            counter,
            angle,
            constants,
            space,
            h_static,
            a0,
            a1,
            u_ideal,
        })
    }

    /// Same problem on a different cutoff (used for truncation-convergence
    /// reporting and cheaper inner optimization loops).
    pub fn with_cutoff(&self, cutoff: usize) -> Result<Self> {
        Self::new(self.kind, self.counter, self.angle, self.constants, cutoff)
    }

    /// Dimension of the encoded qubit space (2 or 4).
    pub fn qubit_dim(&self) -> usize {
        self.kind.qubit_dim()
    }

    /// Computational basis states on this problem's space.
    pub fn basis_states(&self) -> Result<Vec<StateVector>> {
        qubit_basis(self.space, self.constants.alpha())
    }

    /// `H(t) = H_static + g0·A0 + g1·A1` as a materialized operator
    /// (diagnostics; the integrators apply the three terms directly).
    pub fn total_hamiltonian(&self, g0: f64, g1: f64) -> Result<Operator> {
        let h = self
            .h_static
            .add_scaled(&self.a0, C64::new(g0, 0.0))?
            .add_scaled(&self.a1, C64::new(g1, 0.0))?;
        Operator::from_csr(self.space, h.csr().clone(), true)
    }
}
