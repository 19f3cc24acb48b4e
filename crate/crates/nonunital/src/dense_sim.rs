//! Exact simulators used as ground truth.
//!
//! [`DensityMatrix`] stores the full `2^n x 2^n` state and applies gates by
//! index-remapped contraction and noise through the Kraus superoperator.
//! [`PauliVector`] stores the real Pauli coefficients `r_Q` of
//! `rho = 2^{-n} sum_Q r_Q Q` and applies every operation through its Pauli
//! transfer matrix; Clifford gates become signed permutations there, which
//! makes large Monte-Carlo sweeps cheap.
//!
//! In both representations qubit 0 is the most significant tensor factor.

use std::ops::Range;

use nalgebra::{DMatrix, Matrix2, Matrix4};

use crate::channels::PauliTransferMatrix;
use crate::circuit::{Gate, GateSpec, GateUnitary, InitialState, NoisyCircuit, Sites};
use crate::error::{Error, Result};
use crate::pauli::{Pauli, PauliString};
use crate::C64;

/// Default qubit cap of the dense simulators.
pub const DEFAULT_CAP: usize = 10;

/// Contraction kernels on row-major `2^k x 2^k` operators.
pub(crate) mod kernel {
    use super::*;

    /// Mask of qubit `q` in a `k`-qubit index.
    #[inline]
    pub fn mask(k: usize, q: usize) -> usize {
        1usize << (k - 1 - q)
    }

    /// All indices with the bits of `masks` cleared, in increasing order.
    pub fn bases(k: usize, masks: &[usize]) -> Vec<usize> {
        let all: usize = masks.iter().sum();
        (0..(1usize << k)).filter(|i| i & all == 0).collect()
    }

    /// `m <- U m U^dagger` with `U` acting on qubits `(a, b)`; `a` is the
    /// first tensor factor of `U`.
    pub fn conj_2q(m: &mut [C64], k: usize, a: usize, b: usize, u: &Matrix4<C64>) {
        let d = 1usize << k;
        let (ma, mb) = (mask(k, a), mask(k, b));
        let offs = [0, mb, ma, ma | mb];
        let bs = bases(k, &[ma, mb]);
        let ud = u.adjoint();
        // rows: U m
        for &r0 in &bs {
            let rows = offs.map(|o| (r0 | o) * d);
            for c in 0..d {
                let v = rows.map(|r| m[r + c]);
                for l in 0..4 {
                    m[rows[l] + c] = u[(l, 0)] * v[0] + u[(l, 1)] * v[1] + u[(l, 2)] * v[2] + u[(l, 3)] * v[3];
                }
            }
        }
        // columns: (U m) U^dagger
        for r in 0..d {
            let row = &mut m[r * d..(r + 1) * d];
            for &c0 in &bs {
                let cols = offs.map(|o| c0 | o);
                let w = cols.map(|c| row[c]);
                for l in 0..4 {
                    row[cols[l]] = w[0] * ud[(0, l)] + w[1] * ud[(1, l)] + w[2] * ud[(2, l)] + w[3] * ud[(3, l)];
                }
            }
        }
    }

    /// Applies a single-qubit superoperator `s` (layout of
    /// [`crate::channels::KrausChannel::superop`]) on qubit `q`.
    pub fn superop_1q(m: &mut [C64], k: usize, q: usize, s: &Matrix4<C64>) {
        let d = 1usize << k;
        let mq = mask(k, q);
        let bs = bases(k, &[mq]);
        for &r0 in &bs {
            let (ra, rb) = (r0 * d, (r0 | mq) * d);
            for &c0 in &bs {
                let c1 = c0 | mq;
                let idx = [ra + c0, ra + c1, rb + c0, rb + c1];
                let e = idx.map(|i| m[i]);
                for l in 0..4 {
                    m[idx[l]] = s[(l, 0)] * e[0] + s[(l, 1)] * e[1] + s[(l, 2)] * e[2] + s[(l, 3)] * e[3];
                }
            }
        }
    }

    /// `m <- U m U^dagger` for a single-qubit `U` on qubit `q`.
    pub fn conj_1q(m: &mut [C64], k: usize, q: usize, u: &Matrix2<C64>) {
        superop_1q(m, k, q, &u.kronecker(&u.conjugate()));
    }
}

/// Density matrix on `n` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n: usize,
    data: Vec<C64>,
}

fn index_masks(n: usize, p: &PauliString) -> (usize, usize) {
    let (mut xm, mut zm) = (0usize, 0usize);
    for q in 0..n {
        let (x, z) = p.get(q).bits();
        let m = kernel::mask(n, q);
        if x {
            xm |= m;
        }
        if z {
            zm |= m;
        }
    }
    (xm, zm)
}

impl DensityMatrix {
    /// Product state with every qubit in `init`.
    pub fn product(n: usize, init: InitialState) -> Self {
        let v = init.qubit_vector();
        let dim = 1usize << n;
        let amp: Vec<C64> = (0..dim)
            .map(|i| (0..n).fold(C64::new(1.0, 0.0), |acc, q| acc * v[(i >> (n - 1 - q)) & 1]))
            .collect();
        let mut data = vec![C64::new(0.0, 0.0); dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                data[r * dim + c] = amp[r] * amp[c].conj();
            }
        }
        DensityMatrix { n, data }
    }

    /// `|0...0><0...0|`.
    pub fn zero_state(n: usize) -> Self {
        Self::product(n, InitialState::Zero)
    }

    /// Computational basis state `|bits>`, qubit 0 being the most significant bit.
    pub fn basis_state(n: usize, index: usize) -> Self {
        let dim = 1usize << n;
        let mut data = vec![C64::new(0.0, 0.0); dim * dim];
        data[index * dim + index] = C64::new(1.0, 0.0);
        DensityMatrix { n, data }
    }

    /// `I / 2^n`.
    pub fn maximally_mixed(n: usize) -> Self {
        let dim = 1usize << n;
        let mut data = vec![C64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            data[i * dim + i] = C64::new(1.0 / dim as f64, 0.0);
        }
        DensityMatrix { n, data }
    }

    /// Wraps a dense matrix after checking the dimension and invariants.
    pub fn from_matrix(m: &DMatrix<C64>) -> Result<Self> {
        let dim = m.nrows();
        if dim != m.ncols() || !dim.is_power_of_two() {
            return Err(Error::InvalidArgument("matrix is not 2^n x 2^n".into()));
        }
        let n = dim.trailing_zeros() as usize;
        let data = (0..dim * dim).map(|i| m[(i / dim, i % dim)]).collect();
        let rho = DensityMatrix { n, data };
        rho.check()?;
        Ok(rho)
    }

    /// Dense copy.
    pub fn to_matrix(&self) -> DMatrix<C64> {
        let dim = self.dim();
        DMatrix::from_fn(dim, dim, |r, c| self.data[r * dim + c])
    }

    /// Qubit count.
    pub fn num_qubits(&self) -> usize {
        self.n
    }

    /// Hilbert-space dimension `2^n`.
    pub fn dim(&self) -> usize {
        1usize << self.n
    }

    /// Trace.
    pub fn trace(&self) -> C64 {
        let dim = self.dim();
        (0..dim).map(|i| self.data[i * dim + i]).sum()
    }

    /// Checks unit trace, hermiticity (both to `1e-10`) and a minimum
    /// eigenvalue of at least `-1e-9`.
    pub fn check(&self) -> Result<()> {
        let tr = self.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > 1e-10 {
            return Err(Error::InvalidArgument(format!("trace {tr} differs from 1")));
        }
        let dim = self.dim();
        for r in 0..dim {
            for c in 0..r {
                if (self.data[r * dim + c] - self.data[c * dim + r].conj()).norm() > 1e-10 {
                    return Err(Error::InvalidArgument("matrix is not Hermitian".into()));
                }
            }
        }
        let min = self
            .to_matrix()
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if min < -1e-9 {
            return Err(Error::InvalidArgument(format!(
                "negative eigenvalue {min:.3e}"
            )));
        }
        Ok(())
    }

    /// Applies a gate.
    pub fn apply_gate(&mut self, g: &Gate) {
        match (g.sites(), g.unitary()) {
            (Sites::Two(a, b), GateUnitary::Two(u)) => kernel::conj_2q(&mut self.data, self.n, a, b, u),
            (Sites::One(q), GateUnitary::One(u)) => kernel::conj_1q(&mut self.data, self.n, q, u),
            _ => unreachable!("gate arity checked at construction"),
        }
    }

    /// Applies a single-qubit unitary.
    pub fn apply_unitary_1q(&mut self, q: usize, u: &Matrix2<C64>) {
        kernel::conj_1q(&mut self.data, self.n, q, u);
    }

    /// Applies a single-qubit superoperator.
    pub fn apply_superop_1q(&mut self, q: usize, s: &Matrix4<C64>) {
        kernel::superop_1q(&mut self.data, self.n, q, s);
    }

    /// `Tr(P rho)`, real by hermiticity.
    ///
    /// # Panics
    /// Panics if `P` has a different qubit count.
    pub fn expectation(&self, p: &PauliString) -> f64 {
        assert_eq!(p.num_qubits(), self.n, "Pauli and state sizes differ");
        let (xm, zm) = index_masks(self.n, p);
        let ys = (xm & zm).count_ones();
        let dim = self.dim();
        // P|j> = sign i^{#Y} (-1)^{|z & j|} |j ^ x>
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..dim {
            let v = self.data[j * dim + (j ^ xm)];
            if (zm & j).count_ones() % 2 == 1 {
                acc -= v;
            } else {
                acc += v;
            }
        }
        let phase = match ys % 4 {
            0 => C64::new(1.0, 0.0),
            1 => C64::new(0.0, 1.0),
            2 => C64::new(-1.0, 0.0),
            _ => C64::new(0.0, -1.0),
        };
        (acc * phase).re * p.sign() as f64
    }

    /// `Tr(rho^2)`.
    pub fn purity(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    /// `Tr(rho sigma)`.
    ///
    /// # Panics
    /// Panics if the qubit counts differ.
    pub fn overlap(&self, other: &DensityMatrix) -> f64 {
        assert_eq!(self.n, other.n, "state sizes differ");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a * b.conj()).re)
            .sum()
    }

    /// `|rho - sigma|_1`, the sum of singular values of the difference
    /// (the absolute eigenvalues, since the difference is Hermitian).
    ///
    /// # Panics
    /// Panics if the qubit counts differ.
    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        assert_eq!(self.n, other.n, "state sizes differ");
        let dim = self.dim();
        let diff = DMatrix::from_fn(dim, dim, |r, c| {
            self.data[r * dim + c] - other.data[r * dim + c]
        });
        diff.symmetric_eigenvalues().iter().map(|v| v.abs()).sum()
    }

    /// Reduced state of qubit `k`.
    ///
    /// # Panics
    /// Panics if `k >= n`.
    pub fn reduced_1q(&self, k: usize) -> DensityMatrix {
        assert!(k < self.n, "qubit {k} out of range");
        let dim = self.dim();
        let mk = kernel::mask(self.n, k);
        let mut out = [C64::new(0.0, 0.0); 4];
        for r in 0..dim {
            for rest_c in [r & !mk, r | mk] {
                let (a, b) = (((r & mk) != 0) as usize, ((rest_c & mk) != 0) as usize);
                out[2 * a + b] += self.data[r * dim + rest_c];
            }
        }
        DensityMatrix {
            n: 1,
            data: out.to_vec(),
        }
    }

    /// Reduced state of qubit `k` as a 2x2 matrix.
    pub fn reduced_1q_matrix(&self, k: usize) -> Matrix2<C64> {
        let r = self.reduced_1q(k);
        Matrix2::new(r.data[0], r.data[1], r.data[2], r.data[3])
    }
}

/// Density-matrix simulator with a qubit cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseSimulator {
    /// Largest admissible qubit count.
    pub cap: usize,
}

impl Default for DenseSimulator {
    fn default() -> Self {
        DenseSimulator { cap: DEFAULT_CAP }
    }
}

impl DenseSimulator {
    /// Simulator with the given cap.
    pub fn with_cap(cap: usize) -> Self {
        DenseSimulator { cap }
    }

    fn check_cap(&self, n: usize) -> Result<()> {
        if n > self.cap {
            Err(Error::OracleCap { n, cap: self.cap })
        } else {
            Ok(())
        }
    }

    /// Runs the whole circuit on `rho0`.
    pub fn run(&self, circ: &NoisyCircuit, rho0: &DensityMatrix) -> Result<DensityMatrix> {
        self.run_layers(circ, 0..circ.depth(), rho0)
    }

    /// Runs the circuit from its own initial product state.
    pub fn run_from_init(&self, circ: &NoisyCircuit) -> Result<DensityMatrix> {
        self.check_cap(circ.num_qubits())?;
        let rho0 = DensityMatrix::product(circ.num_qubits(), circ.init());
        self.run(circ, &rho0)
    }

    /// Applies layers `range`, and the final single-qubit layer when a
    /// non-empty range reaches the end of the circuit.
    pub fn run_layers(
        &self,
        circ: &NoisyCircuit,
        range: Range<usize>,
        rho0: &DensityMatrix,
    ) -> Result<DensityMatrix> {
        let n = circ.num_qubits();
        self.check_cap(n)?;
        if rho0.n != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: rho0.n,
            });
        }
        if range.end > circ.depth() || range.start > range.end {
            return Err(Error::InvalidArgument(format!(
                "layer range {range:?} outside depth {}",
                circ.depth()
            )));
        }
        let s = circ.noise().kraus().superop();
        let mut rho = rho0.clone();
        let closes = range.end == circ.depth() && range.start < range.end;
        for layer in &circ.layers()[range] {
            for g in &layer.gates {
                rho.apply_gate(g);
            }
            if let Some(t) = &layer.twirl {
                for (q, u) in t.iter().enumerate() {
                    rho.apply_unitary_1q(q, u);
                }
            }
            for q in 0..n {
                rho.apply_superop_1q(q, &s);
            }
        }
        if closes {
            if let Some(f) = circ.final_layer() {
                for (q, u) in f.iter().enumerate() {
                    rho.apply_unitary_1q(q, u);
                }
            }
        }
        Ok(rho)
    }

    /// `Tr(P Phi(rho_init))`.
    pub fn expectation(&self, circ: &NoisyCircuit, p: &PauliString) -> Result<f64> {
        if p.num_qubits() != circ.num_qubits() {
            return Err(Error::LengthMismatch {
                left: circ.num_qubits(),
                right: p.num_qubits(),
            });
        }
        Ok(self.run_from_init(circ)?.expectation(p))
    }
}

/// Sparse real matrix rows `(column, value)` for a 16x16 two-qubit PTM.
#[derive(Debug, Clone)]
pub struct SparsePtm2 {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparsePtm2 {
    /// PTM `T[Q, P] = Tr(Q U P U^dagger) / 4` of a two-qubit unitary; index
    /// `4 * first + second` over (I, X, Y, Z).
    pub fn from_unitary(u: &Matrix4<C64>) -> Self {
        let paulis: Vec<Matrix4<C64>> = (0..16)
            .map(|i| {
                crate::pauli::to_matrix4(&PauliString::from_paulis(&[
                    Pauli::from_index(i / 4),
                    Pauli::from_index(i % 4),
                ]))
            })
            .collect();
        let mut rows = vec![Vec::new(); 16];
        for (pi, p) in paulis.iter().enumerate() {
            let img = u * p * u.adjoint();
            for (qi, q) in paulis.iter().enumerate() {
                let v = (q * img).trace().re / 4.0;
                if v.abs() > 1e-14 {
                    rows[qi].push((pi, v));
                }
            }
        }
        SparsePtm2 { rows }
    }

    /// PTM of a gate, read off the tableau for Cliffords.
    pub fn from_gate(g: &Gate) -> Option<Self> {
        match (g.spec(), g.unitary()) {
            (GateSpec::Clifford2(t), _) => {
                let mut rows = vec![Vec::new(); 16];
                for pi in 0..16 {
                    let p = PauliString::from_paulis(&[
                        Pauli::from_index(pi / 4),
                        Pauli::from_index(pi % 4),
                    ]);
                    let img = p.conjugate(t, (0, 1));
                    let qi = 4 * img.get(0).index() + img.get(1).index();
                    rows[qi].push((pi, img.sign() as f64));
                }
                Some(SparsePtm2 { rows })
            }
            (_, GateUnitary::Two(u)) => Some(Self::from_unitary(u)),
            _ => None,
        }
    }
}

/// State as real Pauli coefficients: `rho = 2^{-n} sum_Q r_Q Q`, with `Q`
/// indexed in base 4 (qubit 0 most significant, digits I=0, X=1, Y=2, Z=3).
#[derive(Debug, Clone, PartialEq)]
pub struct PauliVector {
    n: usize,
    r: Vec<f64>,
}

impl PauliVector {
    /// Product state.
    pub fn product(n: usize, init: InitialState) -> Self {
        let axis = init.stabilizer_axis().index();
        let r = (0..(1usize << (2 * n)))
            .map(|i| {
                let ok = (0..n).all(|q| {
                    let d = (i >> (2 * (n - 1 - q))) & 3;
                    d == 0 || d == axis
                });
                if ok {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        PauliVector { n, r }
    }

    /// Qubit count.
    pub fn num_qubits(&self) -> usize {
        self.n
    }

    fn shift(&self, q: usize) -> usize {
        2 * (self.n - 1 - q)
    }

    /// Applies a single-qubit PTM on qubit `q`.
    pub fn apply_ptm_1q(&mut self, q: usize, t: &Matrix4<f64>) {
        let sh = self.shift(q);
        let stride = 1usize << sh;
        let block = stride * 4;
        let len = self.r.len();
        let mut hi = 0;
        while hi < len {
            for lo in 0..stride {
                let base = hi + lo;
                let v = [
                    self.r[base],
                    self.r[base + stride],
                    self.r[base + 2 * stride],
                    self.r[base + 3 * stride],
                ];
                for (l, row) in (0..4).map(|l| (l, t.row(l))) {
                    self.r[base + l * stride] =
                        row[0] * v[0] + row[1] * v[1] + row[2] * v[2] + row[3] * v[3];
                }
            }
            hi += block;
        }
    }

    /// Applies a two-qubit PTM on `(a, b)`.
    pub fn apply_ptm_2q(&mut self, a: usize, b: usize, t: &SparsePtm2) {
        let (sa, sb) = (self.shift(a), self.shift(b));
        let clear = !((3usize << sa) | (3usize << sb));
        let mut v = [0.0f64; 16];
        for base in 0..self.r.len() {
            if base & !clear != 0 {
                continue;
            }
            let idx = |l: usize| base | ((l >> 2) << sa) | ((l & 3) << sb);
            for (l, slot) in v.iter_mut().enumerate() {
                *slot = self.r[idx(l)];
            }
            for (l, row) in t.rows.iter().enumerate() {
                self.r[idx(l)] = row.iter().map(|&(c, w)| w * v[c]).sum();
            }
        }
    }

    /// Coefficient `r_P = Tr(P rho)` including the sign of `P`.
    pub fn expectation(&self, p: &PauliString) -> f64 {
        let idx = (0..self.n).fold(0usize, |acc, q| (acc << 2) | p.get(q).index());
        self.r[idx] * p.sign() as f64
    }

    /// Bloch vector of qubit `q`.
    pub fn bloch(&self, q: usize) -> [f64; 3] {
        let sh = self.shift(q);
        [self.r[1 << sh], self.r[2 << sh], self.r[3 << sh]]
    }

    /// `Tr(rho^2) = 2^{-n} sum_Q r_Q^2`.
    pub fn purity(&self) -> f64 {
        self.r.iter().map(|v| v * v).sum::<f64>() / (1u64 << self.n) as f64
    }

    /// Applies one layer of `circ` (gates, twirl, noise).
    pub fn apply_layer(&mut self, circ: &NoisyCircuit, k: usize, noise: &Matrix4<f64>) {
        let layer = &circ.layers()[k];
        for g in &layer.gates {
            match (g.sites(), g.unitary()) {
                (Sites::Two(a, b), _) => {
                    let t = SparsePtm2::from_gate(g).expect("two-qubit gate");
                    self.apply_ptm_2q(a, b, &t);
                }
                (Sites::One(q), GateUnitary::One(u)) => {
                    self.apply_ptm_1q(q, &unitary_ptm(u));
                }
                _ => unreachable!("gate arity checked at construction"),
            }
        }
        if let Some(t) = &layer.twirl {
            for (q, u) in t.iter().enumerate() {
                self.apply_ptm_1q(q, &unitary_ptm(u));
            }
        }
        for q in 0..self.n {
            self.apply_ptm_1q(q, noise);
        }
    }

    /// Runs a whole circuit from its initial state.
    pub fn run(circ: &NoisyCircuit, cap: usize) -> Result<PauliVector> {
        let n = circ.num_qubits();
        if n > cap {
            return Err(Error::OracleCap { n, cap });
        }
        let mut v = PauliVector::product(n, circ.init());
        let noise = circ.noise().ptm().0;
        for k in 0..circ.depth() {
            v.apply_layer(circ, k, &noise);
        }
        if let Some(f) = circ.final_layer() {
            for (q, u) in f.iter().enumerate() {
                v.apply_ptm_1q(q, &unitary_ptm(u));
            }
        }
        Ok(v)
    }
}

/// PTM of a single-qubit unitary channel.
pub fn unitary_ptm(u: &Matrix2<C64>) -> Matrix4<f64> {
    let r = crate::channels::rotation_of_unitary(u);
    PauliTransferMatrix::from_parts(nalgebra::Vector3::zeros(), r).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::Channel;
    use crate::circuit::{random_circuit, CircuitOptions, CouplingGraph, GateMode, Layer};
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;

    fn ps(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    /// Full-matrix reference for `U rho U^dagger` on arbitrary qubits.
    fn embed_2q(n: usize, a: usize, b: usize, u: &Matrix4<C64>) -> DMatrix<C64> {
        let dim = 1usize << n;
        let (ma, mb) = (kernel::mask(n, a), kernel::mask(n, b));
        DMatrix::from_fn(dim, dim, |r, c| {
            if (r & !(ma | mb)) != (c & !(ma | mb)) {
                return C64::new(0.0, 0.0);
            }
            let lr = 2 * ((r & ma != 0) as usize) + (r & mb != 0) as usize;
            let lc = 2 * ((c & ma != 0) as usize) + (c & mb != 0) as usize;
            u[(lr, lc)]
        })
    }

    #[test]
    fn conj_2q_matches_embedded_matrix() {
        let mut rng = stream(1, 0);
        let n = 4;
        let rho = {
            let u = crate::circuit::sample_haar(16, &mut rng);
            let z = DensityMatrix::zero_state(n).to_matrix();
            DensityMatrix::from_matrix(&(&u * z * u.adjoint())).unwrap()
        };
        for (a, b) in [(0, 1), (2, 0), (1, 3), (3, 2)] {
            let u = crate::circuit::sample_haar2(&mut rng);
            let mut m = rho.clone();
            kernel::conj_2q(&mut m.data, n, a, b, &u);
            let full = embed_2q(n, a, b, &u);
            let want = &full * rho.to_matrix() * full.adjoint();
            assert!((m.to_matrix() - want).camax() < 1e-12);
        }
    }

    #[test]
    fn expectation_examples() {
        assert_abs_diff_eq!(DensityMatrix::zero_state(1).expectation(&ps("Z")), 1.0);
        assert_abs_diff_eq!(DensityMatrix::maximally_mixed(2).expectation(&ps("XY")), 0.0);
        let plus = DensityMatrix::product(1, InitialState::Plus);
        assert_abs_diff_eq!(plus.expectation(&ps("X")), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(plus.expectation(&ps("-X")), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn expectation_matches_dense_trace() {
        let mut rng = stream(2, 0);
        let n = 3;
        let u = crate::circuit::sample_haar(8, &mut rng);
        let rho = DensityMatrix::from_matrix(&(&u * DensityMatrix::zero_state(n).to_matrix() * u.adjoint())).unwrap();
        for s in ["XYZ", "-YYI", "IZX", "YIY", "III"] {
            let p = ps(s);
            let want = (p.to_matrix() * rho.to_matrix()).trace().re;
            assert_abs_diff_eq!(rho.expectation(&p), want, epsilon = 1e-12);
        }
    }

    #[test]
    fn purity_and_trace_distance_examples() {
        assert_abs_diff_eq!(DensityMatrix::zero_state(3).purity(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(DensityMatrix::maximally_mixed(3).purity(), 0.125, epsilon = 1e-15);
        let d = DensityMatrix::basis_state(1, 0).trace_distance(&DensityMatrix::basis_state(1, 1));
        assert_abs_diff_eq!(d, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn reduced_state_of_product() {
        let rho = DensityMatrix::basis_state(3, 0b010);
        let r1 = rho.reduced_1q_matrix(1);
        assert_abs_diff_eq!(r1[(1, 1)].re, 1.0);
        let r0 = rho.reduced_1q_matrix(0);
        assert_abs_diff_eq!(r0[(0, 0)].re, 1.0);
        let plus = DensityMatrix::product(2, InitialState::Plus).reduced_1q_matrix(1);
        assert_abs_diff_eq!(plus[(0, 1)].re, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn amplitude_damping_on_excited_state() {
        let q = 0.2;
        let circ = NoisyCircuit::new(
            1,
            vec![Layer {
                gates: vec![],
                twirl: None,
            }],
            Channel::amplitude_damping(q).unwrap(),
            None,
            InitialState::Zero,
        )
        .unwrap();
        let out = DenseSimulator::default()
            .run(&circ, &DensityMatrix::basis_state(1, 1))
            .unwrap();
        assert_abs_diff_eq!(out.expectation(&ps("Z")), 2.0 * q - 1.0, epsilon = 1e-14);
    }

    #[test]
    fn identity_circuit_preserves_state() {
        let g = CouplingGraph::brickwork_1d(3, 4).unwrap();
        let ident = crate::pauli::CliffordTableau2::identity();
        let layers = g
            .layers()
            .iter()
            .map(|pairs| Layer {
                gates: pairs
                    .iter()
                    .map(|&(a, b)| Gate::new(Sites::Two(a, b), GateSpec::Clifford2(ident.clone())).unwrap())
                    .collect(),
                twirl: None,
            })
            .collect();
        let circ = NoisyCircuit::new(3, layers, Channel::identity(), None, InitialState::Zero).unwrap();
        let out = DenseSimulator::default().run_from_init(&circ).unwrap();
        assert!((out.to_matrix() - DensityMatrix::zero_state(3).to_matrix()).camax() < 1e-12);
    }

    #[test]
    fn unital_noise_fixes_maximally_mixed() {
        let mut rng = stream(3, 0);
        let g = CouplingGraph::brickwork_1d(4, 5).unwrap();
        let noise = Channel::depolarizing(0.1).unwrap().compose(&Channel::dephasing(0.3).unwrap());
        let circ = random_circuit(&g, GateMode::Haar, &noise, CircuitOptions::default(), &mut rng).unwrap();
        let out = DenseSimulator::default().run(&circ, &DensityMatrix::maximally_mixed(4)).unwrap();
        assert!((out.to_matrix() - DensityMatrix::maximally_mixed(4).to_matrix()).camax() < 1e-13);
    }

    #[test]
    fn cap_is_enforced() {
        let sim = DenseSimulator::with_cap(3);
        let mut rng = stream(4, 0);
        let g = CouplingGraph::brickwork_1d(4, 1).unwrap();
        let circ = random_circuit(&g, GateMode::Haar, &Channel::identity(), CircuitOptions::default(), &mut rng).unwrap();
        assert!(matches!(sim.run_from_init(&circ), Err(Error::OracleCap { n: 4, cap: 3 })));
    }

    #[test]
    fn layer_ranges_compose() {
        let mut rng = stream(5, 0);
        let g = CouplingGraph::brickwork_1d(4, 6).unwrap();
        let noise = Channel::dep_amp(0.1, 0.2).unwrap();
        let opts = CircuitOptions { twirl: true, ..Default::default() };
        let circ = random_circuit(&g, GateMode::Haar, &noise, opts, &mut rng).unwrap();
        let sim = DenseSimulator::default();
        let rho0 = DensityMatrix::zero_state(4);
        let full = sim.run(&circ, &rho0).unwrap();
        for k in 0..=6 {
            let mid = sim.run_layers(&circ, 0..k, &rho0).unwrap();
            let end = sim.run_layers(&circ, k..6, &mid).unwrap();
            assert!((end.to_matrix() - full.to_matrix()).camax() < 1e-10);
        }
        assert!(full.check().is_ok());
    }

    #[test]
    fn pauli_vector_matches_density_matrix() {
        let mut rng = stream(6, 0);
        let sim = DenseSimulator::default();
        for (mode, twirl) in [(GateMode::Haar, false), (GateMode::Clifford, true), (GateMode::Haar, true)] {
            let g = CouplingGraph::brickwork_1d(4, 5).unwrap();
            let noise = Channel::dep_amp(0.15, 0.3).unwrap();
            let opts = CircuitOptions { twirl, ..Default::default() };
            let circ = random_circuit(&g, mode, &noise, opts, &mut rng).unwrap();
            let rho = sim.run_from_init(&circ).unwrap();
            let pv = PauliVector::run(&circ, 10).unwrap();
            for s in ["ZIII", "XYIZ", "-IIYX", "ZZZZ"] {
                assert_abs_diff_eq!(pv.expectation(&ps(s)), rho.expectation(&ps(s)), epsilon = 1e-12);
            }
            assert_abs_diff_eq!(pv.purity(), rho.purity(), epsilon = 1e-12);
        }
        let qaoa = crate::circuit::random_qaoa(3, 2, &Channel::dep_amp(0.1, 0.1).unwrap(), &mut rng).unwrap();
        let rho = sim.run_from_init(&qaoa).unwrap();
        let pv = PauliVector::run(&qaoa, 10).unwrap();
        assert_abs_diff_eq!(pv.expectation(&ps("XII")), rho.expectation(&ps("XII")), epsilon = 1e-12);
    }

    #[test]
    fn clifford_ptm_is_signed_permutation() {
        let mut rng = stream(7, 0);
        let t = crate::circuit::sample_clifford2(&mut rng);
        let g = Gate::new(Sites::Two(0, 1), GateSpec::Clifford2(t.clone())).unwrap();
        let sparse = SparsePtm2::from_gate(&g).unwrap();
        let dense = SparsePtm2::from_unitary(&t.to_unitary());
        for (a, b) in sparse.rows.iter().zip(&dense.rows) {
            assert_eq!(a.len(), 1);
            assert_eq!(b.len(), 1);
            assert_eq!(a[0].0, b[0].0);
            assert_abs_diff_eq!(a[0].1, b[0].1, epsilon = 1e-12);
        }
    }
}
