//! Minimal complex linear-algebra kernels backing the simulator.
//!
//! Every operator in this crate is a square matrix over `Complex64` acting on
//! a truncated Fock space. The Hamiltonian pieces are band matrices
//! (`|n⟩⟨n±k|` with `k ≤ 2` per mode), so a compressed-sparse-row format with
//! accumulating product kernels covers the hot paths: matrix–vector products
//! for state propagation and sparse×dense products for master-equation
//! right-hand sides. A cyclic Jacobi eigensolver for Hermitian matrices
//! supports diagnostics (density-matrix positivity) and test oracles; it is
//! exact-arithmetic-free and has no external BLAS/LAPACK dependency.

// Index loops over `row_ptr` windows read better than iterator chains in
// these CSR kernels.
#![allow(clippy::needless_range_loop)]

use ndarray::Array2;

use crate::{Error, Result, C64};

/// Square sparse matrix in compressed-sparse-row layout.
///
/// Column indices within a row are strictly increasing; explicit zeros are
/// dropped at construction, duplicate triplets are summed.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<C64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(dim: usize, triplets: &[(usize, usize, C64)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); dim];
        for &(r, c, v) in triplets {
            if r >= dim || c >= dim {
                return Err(Error::Invalid(format!(
                    "triplet ({r}, {c}) outside a {dim}x{dim} matrix"
                )));
            }
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(Error::NonFinite("sparse matrix entry".into()));
            }
            rows[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut v = row[k].1;
                let mut j = k + 1;
                while j < row.len() && row[j].0 == c {
                    v += row[j].1;
                    j += 1;
                }
                if v != C64::new(0.0, 0.0) {
                    col_idx.push(c);
                    vals.push(v);
                }
                k = j;
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            dim,
            row_ptr,
            col_idx,
            vals,
        })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: vec![0; dim + 1],
            col_idx: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: (0..=dim).collect(),
            col_idx: (0..dim).collect(),
            vals: vec![C64::new(1.0, 0.0); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Entries `(col, value)` of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        self.col_idx[lo..hi]
            .iter()
            .zip(&self.vals[lo..hi])
            .map(|(&c, &v)| (c, v))
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut out = Array2::zeros((self.dim, self.dim));
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                out[(r, c)] = v;
            }
        }
        out
    }

    pub fn from_dense(m: &Array2<C64>, drop_tol: f64) -> Result<Self> {
        let (nr, nc) = m.dim();
        if nr != nc {
            return Err(Error::DimensionMismatch {
                context: "from_dense",
                left: nr,
                right: nc,
            });
        }
        let mut triplets = Vec::new();
        for r in 0..nr {
            for c in 0..nc {
                let v = m[(r, c)];
                if v.norm_sqr() > drop_tol * drop_tol {
                    triplets.push((r, c, v));
                }
            }
        }
        Self::from_triplets(nr, &triplets)
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                triplets.push((c, r, v.conj()));
            }
        }
        Self::from_triplets(self.dim, &triplets).expect("adjoint of a valid matrix is valid")
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, other: &Self, c: C64) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                context: "sparse add",
                left: self.dim,
                right: other.dim,
            });
        }
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.dim {
            for (col, v) in self.row(r) {
                triplets.push((r, col, v));
            }
            for (col, v) in other.row(r) {
                triplets.push((r, col, c * v));
            }
        }
        Self::from_triplets(self.dim, &triplets)
    }

    pub fn scaled(&self, c: C64) -> Self {
        let mut out = self.clone();
        for v in &mut out.vals {
            *v *= c;
        }
        out
    }

    /// Sparse matrix product `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                context: "sparse matmul",
                left: self.dim,
                right: other.dim,
            });
        }
        // Row-by-row accumulation into a dense scratch row.
        let mut scratch = vec![C64::new(0.0, 0.0); self.dim];
        let mut touched: Vec<usize> = Vec::new();
        let mut triplets = Vec::new();
        for r in 0..self.dim {
            for (k, va) in self.row(r) {
                for (c, vb) in other.row(k) {
                    if scratch[c] == C64::new(0.0, 0.0) {
                        touched.push(c);
                    }
                    scratch[c] += va * vb;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                let v = scratch[c];
                if v != C64::new(0.0, 0.0) {
                    triplets.push((r, c, v));
                }
                scratch[c] = C64::new(0.0, 0.0);
            }
            touched.clear();
        }
        Self::from_triplets(self.dim, &triplets)
    }

    /// Kronecker product; block index convention `(i1, i2) -> i1 * other.dim + i2`.
    pub fn kron(&self, other: &Self) -> Self {
        let dim = self.dim * other.dim;
        let mut triplets = Vec::with_capacity(self.nnz() * other.nnz());
        for r1 in 0..self.dim {
            for (c1, v1) in self.row(r1) {
                for r2 in 0..other.dim {
                    for (c2, v2) in other.row(r2) {
                        triplets.push((r1 * other.dim + r2, c1 * other.dim + c2, v1 * v2));
                    }
                }
            }
        }
        Self::from_triplets(dim, &triplets).expect("kron of valid matrices is valid")
    }

    /// `y += c * A·x`. Slices must have length `dim`.
    pub fn matvec_acc(&self, c: C64, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        for r in 0..self.dim {
            let lo = self.row_ptr[r];
            let hi = self.row_ptr[r + 1];
            let mut acc = C64::new(0.0, 0.0);
            for k in lo..hi {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            y[r] += c * acc;
        }
    }

    /// `out += c * A·B` with `B`, `out` dense row-major `dim × dim`.
    pub fn spmm_left_acc(&self, c: C64, b: &Array2<C64>, out: &mut Array2<C64>) {
        let d = self.dim;
        debug_assert_eq!(b.dim(), (d, d));
        debug_assert_eq!(out.dim(), (d, d));
        let bs = b.as_slice().expect("contiguous row-major matrix");
        let os = out.as_slice_mut().expect("contiguous row-major matrix");
        for r in 0..d {
            let lo = self.row_ptr[r];
            let hi = self.row_ptr[r + 1];
            let orow = &mut os[r * d..(r + 1) * d];
            for k in lo..hi {
                let coeff = c * self.vals[k];
                let brow = &bs[self.col_idx[k] * d..(self.col_idx[k] + 1) * d];
                for j in 0..d {
                    orow[j] += coeff * brow[j];
                }
            }
        }
    }

    /// `out += c * B·A` with `B`, `out` dense row-major `dim × dim`.
    pub fn spmm_right_acc(&self, c: C64, b: &Array2<C64>, out: &mut Array2<C64>) {
        let d = self.dim;
        debug_assert_eq!(b.dim(), (d, d));
        debug_assert_eq!(out.dim(), (d, d));
        let bs = b.as_slice().expect("contiguous row-major matrix");
        let os = out.as_slice_mut().expect("contiguous row-major matrix");
        for i in 0..d {
            let brow = &bs[i * d..(i + 1) * d];
            let orow = &mut os[i * d..(i + 1) * d];
            for k in 0..d {
                let v = brow[k];
                if v == C64::new(0.0, 0.0) {
                    continue;
                }
                let coeff = c * v;
                let lo = self.row_ptr[k];
                let hi = self.row_ptr[k + 1];
                for t in lo..hi {
                    orow[self.col_idx[t]] += coeff * self.vals[t];
                }
            }
        }
    }

    /// Largest absolute deviation from hermiticity, `max |M - M†|`.
    pub fn hermiticity_deviation(&self) -> f64 {
        let adj = self.adjoint();
        let mut dev: f64 = 0.0;
        for r in 0..self.dim {
            let mut a: Vec<(usize, C64)> = self.row(r).collect();
            let b: Vec<(usize, C64)> = adj.row(r).collect();
            // Merge: indices are sorted in both.
            let mut i = 0;
            let mut j = 0;
            while i < a.len() || j < b.len() {
                match (a.get(i), b.get(j)) {
                    (Some(&(ca, va)), Some(&(cb, vb))) if ca == cb => {
                        dev = dev.max((va - vb).norm());
                        i += 1;
                        j += 1;
                    }
                    (Some(&(ca, va)), Some(&(cb, _))) if ca < cb => {
                        dev = dev.max(va.norm());
                        i += 1;
                    }
                    (Some(_), Some(&(_, vb))) => {
                        dev = dev.max(vb.norm());
                        j += 1;
                    }
                    (Some(&(_, va)), None) => {
                        dev = dev.max(va.norm());
                        i += 1;
                    }
                    (None, Some(&(_, vb))) => {
                        dev = dev.max(vb.norm());
                        j += 1;
                    }
                    (None, None) => unreachable!(),
                }
            }
            a.clear();
        }
        dev
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.vals.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Eigendecomposition of a Hermitian matrix: `A·vectors = vectors·diag(values)`.
#[derive(Debug, Clone)]
pub struct Eigh {
    /// Ascending eigenvalues.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, matching `values` order.
    pub vectors: Array2<C64>,
}

/// Cyclic Jacobi diagonalization of a Hermitian matrix.
///
/// Suited to the moderate dimensions used here (≤ a few hundred); returns
/// machine-precision residuals. The input is only read from; a symmetrized
/// working copy `(A + A†)/2` is rotated, so small hermiticity violations are
/// averaged away rather than amplified.
pub fn eigh(m: &Array2<C64>) -> Result<Eigh> {
    let (nr, nc) = m.dim();
    if nr != nc {
        return Err(Error::DimensionMismatch {
            context: "eigh",
            left: nr,
            right: nc,
        });
    }
    let d = nr;
    let mut a = Array2::<C64>::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            a[(i, j)] = 0.5 * (m[(i, j)] + m[(j, i)].conj());
        }
    }
    let mut v = Array2::<C64>::eye(d);
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
    let tol = 1e-15 * scale;

    for _sweep in 0..100 {
        let mut off: f64 = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off = off.max(a[(p, q)].norm());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[(p, q)];
                let napq = apq.norm();
                if napq <= tol * 1e-2 {
                    continue;
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                // Phase factor making the 2x2 block real, then a real
                // rotation eliminating it: J = diag(1, ū)·R(θ).
                let u = apq / napq;
                let tau = (aqq - app) / (2.0 * napq);
                let t = if tau >= 0.0 {
                    -1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let ubar = u.conj();

                // Column update: A <- A·J, V <- V·J.
                for k in 0..d {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp + ubar * s * akq;
                    a[(k, q)] = -s * akp + ubar * c * akq;
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp + ubar * s * vkq;
                    v[(k, q)] = -s * vkp + ubar * c * vkq;
                }
                // Row update: A <- J†·A.
                for k in 0..d {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk + s * u * aqk;
                    a[(q, k)] = -s * apk + c * u * aqk;
                }
                a[(p, q)] = C64::new(0.0, 0.0);
                a[(q, p)] = C64::new(0.0, 0.0);
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    let diag: Vec<f64> = (0..d).map(|i| a[(i, i)].re).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).expect("finite eigenvalues"));
    let values: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = Array2::<C64>::zeros((d, d));
    for (new, &old) in order.iter().enumerate() {
        for r in 0..d {
            vectors[(r, new)] = v[(r, old)];
        }
    }
    Ok(Eigh { values, vectors })
}

/// `exp(M)` for anti-Hermitian `M` (so `iM` is... `-iM` is Hermitian), via
/// eigendecomposition; used for unitary generators such as displacements.
pub fn expm_antihermitian(m: &Array2<C64>) -> Result<Array2<C64>> {
    let d = m.dim().0;
    // G = -i M is Hermitian; exp(M) = V diag(e^{iλ}) V†.
    let g = m.mapv(|z| C64::new(0.0, -1.0) * z);
    let Eigh { values, vectors } = eigh(&g)?;
    let mut out = Array2::<C64>::zeros((d, d));
    for k in 0..d {
        let phase = C64::new(0.0, values[k]).exp();
        for r in 0..d {
            let vr = vectors[(r, k)] * phase;
            for c in 0..d {
                out[(r, c)] += vr * vectors[(c, k)].conj();
            }
        }
    }
    Ok(out)
}
