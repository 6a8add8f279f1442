//! Simulation and pulse-shape optimization of elementary gates on
//! Kerr-parametric-oscillator (KPO) qubits.
//!
//! A KPO stabilizes a pair of coherent states `|±α⟩`; their even/odd
//! superpositions (Schrödinger cat states) span a qubit. This crate builds
//! the truncated Fock-space model, integrates the Schrödinger and
//! Lindblad master equations under shaped drive pulses, evaluates average
//! gate fidelities and Wigner functions, and optimizes Fourier-parametrized
//! pulse waveforms (gate pulse `g0` plus counterdiabatic pulse `g1`) with a
//! BFGS search so that `Rz`, `Rx` and `Rzz` gates reach a target fidelity in
//! the shortest possible gate time.
//!
//! Conventions used throughout:
//! * the Kerr coefficient `K` sets the frequency unit, times are reported as
//!   dimensionless `K·t` and amplitudes as `g/K`;
//! * the pump strength is `p = K·α²` (default `p = 4K`, i.e. `α = 2`);
//! * `ħ = 1`.

// Parameter checks are written `!(x > 0.0)` on purpose: the negation also
// rejects NaN, which `x <= 0.0` would silently accept.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod hilbert;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod pulses;

/// Complex double, the scalar type of every state and operator here.
pub type C64 = num_complex::Complex64;

pub use error::{Error, Result};
