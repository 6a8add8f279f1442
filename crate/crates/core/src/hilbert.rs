//! Truncated Fock spaces, operators, state vectors and density matrices.
//!
//! A `FockSpace` is one or two bosonic modes truncated at a photon-number
//! cutoff; dimensions are `(cutoff + 1)^modes`. Two-mode indices flatten as
//! `n1 * (cutoff + 1) + n2` (mode 0 is the left Kronecker factor).
//!
//! Truncation policy: canonical states (coherent, cat) are renormalized
//! after truncation and the deviation is available as a diagnostic, so a
//! too-small cutoff shows up in reported numbers instead of silently biasing
//! them.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::linalg::{eigh, CsrMatrix};
use crate::{Error, Result, C64};

/// Default photon-number cutoff per mode.
pub const DEFAULT_CUTOFF: usize = 40;

/// Relative tolerance for the constructor hermiticity check on operators
/// flagged as Hermitian.
pub const HERMITICITY_TOL: f64 = 1e-12;

/// One or two bosonic modes with a shared per-mode photon-number cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FockSpace {
    cutoff: usize,
    modes: usize,
}

impl FockSpace {
    pub fn new(cutoff: usize, modes: usize) -> Result<Self> {
        if !(1..=2).contains(&modes) {
            return Err(Error::Invalid(format!(
                "modes must be 1 or 2, got {modes}"
            )));
        }
        if cutoff < 2 {
            return Err(Error::Invalid(format!(
                "cutoff must be at least 2, got {cutoff}"
            )));
        }
        Ok(Self { cutoff, modes })
    }

    pub fn single(cutoff: usize) -> Self {
        Self::new(cutoff, 1).expect("single-mode space")
    }

    pub fn two_mode(cutoff: usize) -> Self {
        Self::new(cutoff, 2).expect("two-mode space")
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Per-mode dimension, `cutoff + 1`.
    pub fn mode_dim(&self) -> usize {
        self.cutoff + 1
    }

    /// Total Hilbert-space dimension, `(cutoff + 1)^modes`.
    pub fn dimension(&self) -> usize {
        self.mode_dim().pow(self.modes as u32)
    }

    /// Flat index of the two-mode Fock state `|n1, n2⟩`.
    pub fn index(&self, n1: usize, n2: usize) -> usize {
        debug_assert_eq!(self.modes, 2);
        n1 * self.mode_dim() + n2
    }
}

/// Runs `f` at each cutoff in `cutoffs`, returning `(cutoff, f(cutoff))`
/// pairs; the standard way here to document truncation convergence of any
/// scalar result.
pub fn cutoff_sweep<F: FnMut(usize) -> Result<f64>>(
    cutoffs: &[usize],
    mut f: F,
) -> Result<Vec<(usize, f64)>> {
    cutoffs.iter().map(|&c| Ok((c, f(c)?))).collect()
}

/// A linear operator on a `FockSpace`, stored sparse.
#[derive(Debug, Clone)]
pub struct Operator {
    space: FockSpace,
    matrix: CsrMatrix,
    hermitian: bool,
}

impl Operator {
    /// Wraps a sparse matrix. With `hermitian_hint` set, the constructor
    /// verifies `max|M - M†| ≤ 1e-12` relative to the largest entry.
    pub fn from_csr(space: FockSpace, matrix: CsrMatrix, hermitian_hint: bool) -> Result<Self> {
        if matrix.dim() != space.dimension() {
            return Err(Error::DimensionMismatch {
                context: "operator",
                left: matrix.dim(),
                right: space.dimension(),
            });
        }
        if hermitian_hint {
            let dev = matrix.hermiticity_deviation();
            let scale = matrix.max_abs().max(1.0);
            if dev > HERMITICITY_TOL * scale {
                return Err(Error::NotHermitian { deviation: dev });
            }
        }
        Ok(Self {
            space,
            matrix,
            hermitian: hermitian_hint,
        })
    }

    pub fn from_dense(space: FockSpace, dense: &Array2<C64>, hermitian_hint: bool) -> Result<Self> {
        Self::from_csr(space, CsrMatrix::from_dense(dense, 0.0)?, hermitian_hint)
    }

    pub fn identity(space: FockSpace) -> Self {
        Self {
            space,
            matrix: CsrMatrix::identity(space.dimension()),
            hermitian: true,
        }
    }

    pub fn zero(space: FockSpace) -> Self {
        Self {
            space,
            matrix: CsrMatrix::zeros(space.dimension()),
            hermitian: true,
        }
    }

    pub fn space(&self) -> FockSpace {
        self.space
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn csr(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn to_dense(&self) -> Array2<C64> {
        self.matrix.to_dense()
    }

    pub fn dagger(&self) -> Self {
        Self {
            space: self.space,
            matrix: self.matrix.adjoint(),
            hermitian: self.hermitian,
        }
    }

    /// `self + c·other`.
    pub fn add_scaled(&self, other: &Self, c: C64) -> Result<Self> {
        if self.space != other.space {
            return Err(Error::DimensionMismatch {
                context: "operator add",
                left: self.space.dimension(),
                right: other.space.dimension(),
            });
        }
        Ok(Self {
            space: self.space,
            matrix: self.matrix.add_scaled(&other.matrix, c)?,
            hermitian: self.hermitian && other.hermitian && c.im == 0.0,
        })
    }

    pub fn scaled(&self, c: C64) -> Self {
        Self {
            space: self.space,
            matrix: self.matrix.scaled(c),
            hermitian: self.hermitian && c.im == 0.0,
        }
    }

    /// Operator product `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.space != other.space {
            return Err(Error::DimensionMismatch {
                context: "operator product",
                left: self.space.dimension(),
                right: other.space.dimension(),
            });
        }
        Ok(Self {
            space: self.space,
            matrix: self.matrix.matmul(&other.matrix)?,
            hermitian: false,
        })
    }

    /// Applies to a state, returning a fresh vector.
    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        if state.space != self.space {
            return Err(Error::DimensionMismatch {
                context: "operator apply",
                left: self.space.dimension(),
                right: state.space.dimension(),
            });
        }
        let mut out = Array1::<C64>::zeros(state.amplitudes.len());
        self.matrix.matvec_acc(
            C64::new(1.0, 0.0),
            state.amplitudes.as_slice().expect("contiguous"),
            out.as_slice_mut().expect("contiguous"),
        );
        Ok(StateVector {
            space: state.space,
            amplitudes: out,
        })
    }

    /// `⟨state|Op|state⟩`.
    pub fn expectation(&self, state: &StateVector) -> Result<C64> {
        let applied = self.apply(state)?;
        state.inner(&applied)
    }

    /// `tr(Op · rho)`.
    pub fn expectation_density(&self, rho: &DensityMatrix) -> Result<C64> {
        if rho.space != self.space {
            return Err(Error::DimensionMismatch {
                context: "operator expectation",
                left: self.space.dimension(),
                right: rho.space.dimension(),
            });
        }
        let d = self.space.dimension();
        let mut tr = C64::new(0.0, 0.0);
        for r in 0..d {
            for (c, v) in self.matrix.row(r) {
                tr += v * rho.matrix[(c, r)];
            }
        }
        Ok(tr)
    }
}

/// A pure state on a `FockSpace`.
#[derive(Debug, Clone)]
pub struct StateVector {
    space: FockSpace,
    amplitudes: Array1<C64>,
}

impl StateVector {
    pub fn from_amplitudes(space: FockSpace, amplitudes: Array1<C64>) -> Result<Self> {
        if amplitudes.len() != space.dimension() {
            return Err(Error::DimensionMismatch {
                context: "state vector",
                left: amplitudes.len(),
                right: space.dimension(),
            });
        }
        if amplitudes.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("state amplitude".into()));
        }
        Ok(Self { space, amplitudes })
    }

    pub fn vacuum(space: FockSpace) -> Self {
        let mut amplitudes = Array1::zeros(space.dimension());
        amplitudes[0] = C64::new(1.0, 0.0);
        Self { space, amplitudes }
    }

    /// Fock basis state `|n⟩` (single mode).
    pub fn fock(space: FockSpace, n: usize) -> Result<Self> {
        if space.modes() != 1 {
            return Err(Error::Invalid("fock() expects a single-mode space".into()));
        }
        if n >= space.dimension() {
            return Err(Error::Invalid(format!(
                "Fock level {n} above cutoff {}",
                space.cutoff()
            )));
        }
        let mut amplitudes = Array1::zeros(space.dimension());
        amplitudes[n] = C64::new(1.0, 0.0);
        Ok(Self { space, amplitudes })
    }

    pub fn space(&self) -> FockSpace {
        self.space
    }

    pub fn amplitudes(&self) -> &Array1<C64> {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut Array1<C64> {
        &mut self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> Result<C64> {
        if self.space != other.space {
            return Err(Error::DimensionMismatch {
                context: "inner product",
                left: self.space.dimension(),
                right: other.space.dimension(),
            });
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(other.amplitudes.iter())
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn scaled(&self, c: C64) -> Self {
        Self {
            space: self.space,
            amplitudes: self.amplitudes.mapv(|z| c * z),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.space != other.space {
            return Err(Error::DimensionMismatch {
                context: "state add",
                left: self.space.dimension(),
                right: other.space.dimension(),
            });
        }
        Ok(Self {
            space: self.space,
            amplitudes: &self.amplitudes + &other.amplitudes,
        })
    }

    /// Unit-norm copy.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n <= 0.0 || !n.is_finite() {
            return Err(Error::NonFinite("normalizing a zero/non-finite state".into()));
        }
        Ok(self.scaled(C64::new(1.0 / n, 0.0)))
    }
}

/// A mixed state on a `FockSpace` (dense storage).
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    space: FockSpace,
    matrix: Array2<C64>,
}

/// Health numbers for a density matrix; all ≈ 0 / ≥ 0 for a physical state.
#[derive(Debug, Clone, Copy)]
pub struct DensityDiagnostics {
    /// `|tr(rho) - 1|`.
    pub trace_deviation: f64,
    /// `max |rho - rho†|`.
    pub hermiticity_deviation: f64,
    /// Smallest eigenvalue (negative values signal unphysical states).
    pub min_eigenvalue: f64,
}

impl DensityMatrix {
    pub fn from_matrix(space: FockSpace, matrix: Array2<C64>) -> Result<Self> {
        if matrix.dim() != (space.dimension(), space.dimension()) {
            return Err(Error::DimensionMismatch {
                context: "density matrix",
                left: matrix.dim().0,
                right: space.dimension(),
            });
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("density matrix entry".into()));
        }
        Ok(Self { space, matrix })
    }

    /// `|psi⟩⟨psi|`.
    pub fn from_pure(state: &StateVector) -> Self {
        let d = state.space.dimension();
        let a = &state.amplitudes;
        let matrix = Array2::from_shape_fn((d, d), |(i, j)| a[i] * a[j].conj());
        Self {
            space: state.space,
            matrix,
        }
    }

    pub fn space(&self) -> FockSpace {
        self.space
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut Array2<C64> {
        &mut self.matrix
    }

    pub fn trace(&self) -> C64 {
        (0..self.space.dimension()).map(|i| self.matrix[(i, i)]).sum()
    }

    /// `⟨a|rho|b⟩`.
    pub fn sandwich(&self, a: &StateVector, b: &StateVector) -> Result<C64> {
        if a.space != self.space || b.space != self.space {
            return Err(Error::DimensionMismatch {
                context: "density sandwich",
                left: a.space.dimension(),
                right: self.space.dimension(),
            });
        }
        let d = self.space.dimension();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..d {
            let ai = a.amplitudes[i].conj();
            if ai == C64::new(0.0, 0.0) {
                continue;
            }
            let mut row = C64::new(0.0, 0.0);
            for j in 0..d {
                row += self.matrix[(i, j)] * b.amplitudes[j];
            }
            acc += ai * row;
        }
        Ok(acc)
    }

    /// Trace, hermiticity and positivity diagnostics (eigensolve; O(d³)).
    pub fn validate(&self) -> Result<DensityDiagnostics> {
        let trace_deviation = (self.trace() - C64::new(1.0, 0.0)).norm();
        let d = self.space.dimension();
        let mut herm: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                herm = herm.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        let min_eigenvalue = eigh(&self.matrix)?
            .values
            .first()
            .copied()
            .unwrap_or(f64::NAN);
        Ok(DensityDiagnostics {
            trace_deviation,
            hermiticity_deviation: herm,
            min_eigenvalue,
        })
    }
}

/// Annihilation operator for `mode` (0-based) of `space`.
pub fn annihilation(space: FockSpace, mode: usize) -> Result<Operator> {
    if mode >= space.modes() {
        return Err(Error::InvalidMode {
            mode,
            modes: space.modes(),
        });
    }
    let md = space.mode_dim();
    let mut triplets = Vec::with_capacity(md - 1);
    for n in 1..md {
        triplets.push((n - 1, n, C64::new((n as f64).sqrt(), 0.0)));
    }
    let single = CsrMatrix::from_triplets(md, &triplets)?;
    let matrix = match (space.modes(), mode) {
        (1, 0) => single,
        (2, 0) => single.kron(&CsrMatrix::identity(md)),
        (2, 1) => CsrMatrix::identity(md).kron(&single),
        _ => unreachable!("validated above"),
    };
    Operator::from_csr(space, matrix, false)
}

/// Number operator `a†a` for `mode` of `space`.
pub fn number(space: FockSpace, mode: usize) -> Result<Operator> {
    let a = annihilation(space, mode)?;
    let n = a.dagger().matmul(&a)?;
    // Product of sparse factors is exactly diagonal here; flag hermitian.
    Operator::from_csr(space, n.matrix, true)
}

/// Truncated coherent state `|β⟩`, renormalized after truncation.
///
/// Warns when `|β|²` is not comfortably below the cutoff, since amplitudes
/// then lean on the truncated tail.
pub fn coherent_state(space: FockSpace, beta: C64) -> Result<StateVector> {
    if space.modes() != 1 {
        return Err(Error::Invalid(
            "coherent_state expects a single-mode space; tensor factors for two modes".into(),
        ));
    }
    if beta.norm_sqr() > space.cutoff() as f64 / 2.0 {
        log::warn!(
            "coherent amplitude |β|² = {:.2} is above cutoff/2 = {:.1}; truncation error may be significant",
            beta.norm_sqr(),
            space.cutoff() as f64 / 2.0
        );
    }
    let d = space.dimension();
    let mut amplitudes = Array1::<C64>::zeros(d);
    // c_n = e^{-|β|²/2} β^n / √(n!), built by stable recurrence.
    let mut c = C64::new((-beta.norm_sqr() / 2.0).exp(), 0.0);
    amplitudes[0] = c;
    for n in 1..d {
        c = c * beta / C64::new((n as f64).sqrt(), 0.0);
        amplitudes[n] = c;
    }
    StateVector::from_amplitudes(space, amplitudes)?.normalized()
}

/// Cat-state parity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

/// Cat state `(|α⟩ ± |-α⟩) / √(2(1 ± e^{-2α²}))`, renormalized after
/// truncation. Even cats occupy even Fock levels only, odd cats odd levels.
pub fn cat_state(space: FockSpace, alpha: f64, parity: Parity) -> Result<StateVector> {
    let plus = coherent_state(space, C64::new(alpha, 0.0))?;
    let minus = coherent_state(space, C64::new(-alpha, 0.0))?;
    let sign = match parity {
        Parity::Even => 1.0,
        Parity::Odd => -1.0,
    };
    let denom = (2.0 * (1.0 + sign * (-2.0 * alpha * alpha).exp())).sqrt();
    let raw = plus.add(&minus.scaled(C64::new(sign, 0.0)))?;
    raw.scaled(C64::new(1.0 / denom, 0.0)).normalized()
}

/// Computational qubit basis of one KPO:
/// `|0̃⟩ = (|C+⟩ + |C-⟩)/√2 ≈ |α⟩` and `|1̃⟩ = (|C+⟩ - |C-⟩)/√2 ≈ |-α⟩`.
///
/// The two are exactly orthogonal (even/odd Fock support of the cats).
pub fn computational_basis(space: FockSpace, alpha: f64) -> Result<(StateVector, StateVector)> {
    let even = cat_state(space, alpha, Parity::Even)?;
    let odd = cat_state(space, alpha, Parity::Odd)?;
    let inv_sqrt2 = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let zero = even.add(&odd)?.scaled(inv_sqrt2);
    let one = even.add(&odd.scaled(C64::new(-1.0, 0.0)))?.scaled(inv_sqrt2);
    Ok((zero, one))
}

/// Kronecker product of two single-mode states into a two-mode state.
pub fn tensor_state(a: &StateVector, b: &StateVector) -> Result<StateVector> {
    if a.space.modes() != 1 || b.space.modes() != 1 {
        return Err(Error::Invalid("tensor_state expects single-mode factors".into()));
    }
    if a.space.cutoff() != b.space.cutoff() {
        return Err(Error::DimensionMismatch {
            context: "tensor_state cutoffs",
            left: a.space.cutoff(),
            right: b.space.cutoff(),
        });
    }
    let space = FockSpace::two_mode(a.space.cutoff());
    let da = a.amplitudes.len();
    let db = b.amplitudes.len();
    let mut amplitudes = Array1::<C64>::zeros(da * db);
    for i in 0..da {
        let ai = a.amplitudes[i];
        if ai == C64::new(0.0, 0.0) {
            continue;
        }
        for j in 0..db {
            amplitudes[i * db + j] = ai * b.amplitudes[j];
        }
    }
    StateVector::from_amplitudes(space, amplitudes)
}

/// Kronecker product of two single-mode operators into a two-mode operator.
pub fn tensor_operator(a: &Operator, b: &Operator) -> Result<Operator> {
    if a.space.modes() != 1 || b.space.modes() != 1 {
        return Err(Error::Invalid("tensor_operator expects single-mode factors".into()));
    }
    if a.space.cutoff() != b.space.cutoff() {
        return Err(Error::DimensionMismatch {
            context: "tensor_operator cutoffs",
            left: a.space.cutoff(),
            right: b.space.cutoff(),
        });
    }
    let space = FockSpace::two_mode(a.space.cutoff());
    Operator::from_csr(space, a.matrix.kron(&b.matrix), a.hermitian && b.hermitian)
}
