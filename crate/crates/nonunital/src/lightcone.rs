//! Heisenberg back-propagation of a Pauli observable inside its light cone,
//! with a spectral early-break certificate and a global-Pauli zero rule.
//!
//! The observable after `t` steps is `P_t = Phi^*_{[L-t+1, L]}(P)`, kept as
//! a dense Hermitian matrix on the qubits its light cone has reached. Qubits
//! outside the support carry the identity, which every adjoint channel and
//! every adjoint gate leaves invariant.

use nalgebra::{DMatrix, Matrix4};

use crate::circuit::{GateUnitary, InitialState, NoisyCircuit, Sites};
use crate::dense_sim::kernel;
use crate::error::{Error, Result};
use crate::pauli::PauliString;
use crate::C64;

/// Default cap on the number of support qubits.
pub const DEFAULT_SUPPORT_CAP: usize = 22;

/// Tolerance below which a support qubit counts as carrying the identity.
const SHRINK_TOL: f64 = 1e-14;

/// Hermitian operator `identity_offset * I + M`, with `M` acting on
/// `support` (first entry = most significant tensor factor) and the
/// identity elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedObservable {
    n: usize,
    support: Vec<usize>,
    m: Vec<C64>,
    identity_offset: f64,
}

impl PropagatedObservable {
    /// Dense form of a Pauli string restricted to its support.
    pub fn from_pauli(p: &PauliString) -> Self {
        let n = p.num_qubits();
        let support = p.support();
        if support.is_empty() {
            return PropagatedObservable {
                n,
                support,
                m: Vec::new(),
                identity_offset: p.sign() as f64,
            };
        }
        let mut m = DMatrix::from_element(1, 1, C64::new(p.sign() as f64, 0.0));
        for &q in &support {
            m = m.kronecker(&p.get(q).matrix());
        }
        let dim = m.nrows();
        let data = (0..dim * dim).map(|i| m[(i / dim, i % dim)]).collect();
        PropagatedObservable {
            n,
            support,
            m: data,
            identity_offset: 0.0,
        }
    }

    /// Support qubits in tensor order.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Coefficient of the global identity split off from `M`.
    pub fn identity_offset(&self) -> f64 {
        self.identity_offset
    }

    /// Dense `M` on the support.
    pub fn matrix(&self) -> DMatrix<C64> {
        let dim = 1usize << self.support.len();
        DMatrix::from_fn(dim, dim, |r, c| self.m[r * dim + c])
    }

    /// Full `2^n x 2^n` operator, for testing against dense references.
    pub fn to_full_matrix(&self) -> DMatrix<C64> {
        let n = self.n;
        let dim = 1usize << n;
        let k = self.support.len();
        let local = |i: usize| {
            self.support
                .iter()
                .enumerate()
                .fold(0usize, |acc, (j, &q)| acc | (((i >> (n - 1 - q)) & 1) << (k - 1 - j)))
        };
        let mut sup_mask = 0usize;
        for &q in &self.support {
            sup_mask |= 1 << (n - 1 - q);
        }
        let ldim = 1usize << k;
        DMatrix::from_fn(dim, dim, |r, c| {
            let mut v = C64::new(0.0, 0.0);
            if r == c {
                v += self.identity_offset;
            }
            if (r & !sup_mask) == (c & !sup_mask) && k > 0 {
                v += self.m[local(r) * ldim + local(c)];
            }
            v
        })
    }

    fn position(&self, q: usize) -> Option<usize> {
        self.support.iter().position(|&s| s == q)
    }

    fn extend(&mut self, q: usize, cap: usize) -> Result<()> {
        let k = self.support.len();
        if k + 1 > cap {
            return Err(Error::SupportCap { needed: k + 1, cap });
        }
        let dim = 1usize << k;
        let nd = dim * 2;
        let mut out = vec![C64::new(0.0, 0.0); nd * nd];
        if k == 0 {
            // nothing but the identity offset so far
        } else {
            for r in 0..dim {
                for c in 0..dim {
                    let v = self.m[r * dim + c];
                    out[(2 * r) * nd + 2 * c] = v;
                    out[(2 * r + 1) * nd + 2 * c + 1] = v;
                }
            }
        }
        self.support.push(q);
        self.m = out;
        Ok(())
    }

    /// Removes support qubits on which `M` acts as the identity.
    fn shrink(&mut self) {
        let mut j = 0;
        while j < self.support.len() {
            if self.try_remove(j) {
                continue;
            }
            j += 1;
        }
    }

    fn try_remove(&mut self, j: usize) -> bool {
        let k = self.support.len();
        let dim = 1usize << k;
        let mj = kernel::mask(k, j);
        for r in 0..dim {
            for c in 0..dim {
                let v = self.m[r * dim + c];
                if (r & mj) != (c & mj) {
                    if v.norm() > SHRINK_TOL {
                        return false;
                    }
                } else if r & mj == 0 {
                    let w = self.m[(r | mj) * dim + (c | mj)];
                    if (v - w).norm() > SHRINK_TOL {
                        return false;
                    }
                }
            }
        }
        let nd = dim / 2;
        let squeeze = |i: usize| {
            ((i & !(2 * mj - 1)) >> 1) | (i & (mj - 1))
        };
        let mut out = vec![C64::new(0.0, 0.0); nd * nd];
        for r in (0..dim).filter(|r| r & mj == 0) {
            for c in (0..dim).filter(|c| c & mj == 0) {
                out[squeeze(r) * nd + squeeze(c)] = self.m[r * dim + c];
            }
        }
        self.support.remove(j);
        if self.support.is_empty() {
            self.identity_offset += out[0].re;
            self.m = Vec::new();
        } else {
            self.m = out;
        }
        true
    }

    fn apply_superop(&mut self, q: usize, s: &Matrix4<C64>) {
        if let Some(j) = self.position(q) {
            kernel::superop_1q(&mut self.m, self.support.len(), j, s);
        }
    }

    fn apply_adjoint_gate(&mut self, sites: Sites, u: &GateUnitary, cap: usize) -> Result<()> {
        match (sites, u) {
            (Sites::One(q), GateUnitary::One(u)) => {
                if let Some(j) = self.position(q) {
                    kernel::conj_1q(&mut self.m, self.support.len(), j, &u.adjoint());
                }
            }
            (Sites::Two(a, b), GateUnitary::Two(u)) => {
                let (pa, pb) = (self.position(a), self.position(b));
                if pa.is_none() && pb.is_none() {
                    return Ok(());
                }
                if pa.is_none() {
                    self.extend(a, cap)?;
                }
                if pb.is_none() {
                    self.extend(b, cap)?;
                }
                let (ja, jb) = (self.position(a).expect("added"), self.position(b).expect("added"));
                kernel::conj_2q(&mut self.m, self.support.len(), ja, jb, &u.adjoint());
            }
            _ => unreachable!("gate arity checked at construction"),
        }
        Ok(())
    }

    /// Half the spectral spread `(lambda_max - lambda_min) / 2`; the identity
    /// offset does not contribute.
    pub fn certificate(&self) -> f64 {
        if self.support.is_empty() {
            return 0.0;
        }
        let ev = self.matrix().symmetric_eigenvalues();
        let (lo, hi) = ev
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        0.5 * (hi - lo)
    }

    /// Lower bound on the spectral spread from the diagonal entries.
    fn diagonal_spread(&self) -> f64 {
        let dim = 1usize << self.support.len();
        if self.support.is_empty() {
            return 0.0;
        }
        let (lo, hi) = (0..dim)
            .map(|i| self.m[i * dim + i].re)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        hi - lo
    }

    /// `Tr(O rho)` for a product state.
    pub fn expectation_product(&self, init: InitialState) -> f64 {
        if self.support.is_empty() {
            return self.identity_offset;
        }
        let v = init.qubit_vector();
        let k = self.support.len();
        let dim = 1usize << k;
        let amp: Vec<C64> = (0..dim)
            .map(|i| (0..k).fold(C64::new(1.0, 0.0), |acc, j| acc * v[(i >> (k - 1 - j)) & 1]))
            .collect();
        let mut acc = C64::new(0.0, 0.0);
        for r in 0..dim {
            let row: C64 = self.m[r * dim..(r + 1) * dim]
                .iter()
                .zip(&amp)
                .map(|(m, a)| m * a)
                .sum();
            acc += amp[r].conj() * row;
        }
        self.identity_offset + acc.re
    }

    /// Operator norm `|O|_inf`.
    pub fn operator_norm(&self) -> f64 {
        if self.support.is_empty() {
            return self.identity_offset.abs();
        }
        self.matrix()
            .symmetric_eigenvalues()
            .iter()
            .map(|v| (v + self.identity_offset).abs())
            .fold(0.0, f64::max)
    }
}

/// Back-propagates observables through a fixed circuit.
#[derive(Debug, Clone)]
pub struct Propagator<'a> {
    circ: &'a NoisyCircuit,
    adjoint_noise: Matrix4<C64>,
    support_cap: usize,
}

impl<'a> Propagator<'a> {
    /// Propagator with the given support cap. The adjoint noise is taken from
    /// the transposed Pauli transfer matrix.
    pub fn new(circ: &'a NoisyCircuit, support_cap: usize) -> Self {
        Propagator {
            circ,
            adjoint_noise: circ.noise().ptm().adjoint().superop(),
            support_cap,
        }
    }

    /// Step `t` (1-based): applies the adjoint of layer `L - t` (0-based),
    /// preceded at `t = 1` by the adjoint of the final single-qubit layer.
    pub fn step(&self, obs: &mut PropagatedObservable, t: usize) -> Result<()> {
        let depth = self.circ.depth();
        if t == 0 || t > depth {
            return Err(Error::InvalidArgument(format!(
                "step {t} outside 1..={depth}"
            )));
        }
        if t == 1 {
            if let Some(f) = self.circ.final_layer() {
                for q in obs.support.clone() {
                    let j = obs.position(q).expect("in support");
                    kernel::conj_1q(&mut obs.m, obs.support.len(), j, &f[q].adjoint());
                }
            }
        }
        let layer = &self.circ.layers()[depth - t];
        for q in obs.support.clone() {
            obs.apply_superop(q, &self.adjoint_noise);
        }
        if let Some(tw) = &layer.twirl {
            for q in obs.support.clone() {
                let j = obs.position(q).expect("in support");
                kernel::conj_1q(&mut obs.m, obs.support.len(), j, &tw[q].adjoint());
            }
        }
        obs.shrink();
        for g in layer.gates.iter().rev() {
            obs.apply_adjoint_gate(g.sites(), g.unitary(), self.support_cap)?;
        }
        Ok(())
    }

    /// Fully back-propagated observable `Phi^*(P)`.
    pub fn full(&self, p: &PauliString) -> Result<PropagatedObservable> {
        let mut obs = PropagatedObservable::from_pauli(p);
        for t in 1..=self.circ.depth() {
            self.step(&mut obs, t)?;
        }
        Ok(obs)
    }
}

/// Output of the light-cone estimator.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EstimateReport {
    /// Estimate of `Tr(P Phi(rho_0))`.
    pub value: f64,
    /// Truncation depth `l` targeted.
    pub l_target: usize,
    /// Back-propagation steps actually executed.
    pub steps_executed: usize,
    /// True when the certificate stopped the loop early.
    pub early_break: bool,
    /// Certificate `E` of the last executed step.
    pub certificate_e: f64,
    /// Largest support reached.
    pub support_peak: usize,
}

/// `l = ceil(log(4 / (delta eps^2)) / log(1 / c))`, clamped to at least 1.
pub fn truncation_depth(c: f64, eps: f64, delta: f64) -> Result<usize> {
    if !(eps > 0.0 && delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps = {eps} and delta = {delta} must be positive"
        )));
    }
    if c >= 1.0 - crate::channels::UNITARY_TOL {
        return Err(Error::UnitaryChannel(c));
    }
    if c <= 0.0 {
        return Ok(1);
    }
    let l = ((4.0 / (delta * eps * eps)).ln() / (1.0 / c).ln()).ceil();
    Ok(if l < 1.0 { 1 } else { l as usize })
}

/// Returns `Some(0.0)` when `c^{|P|} / eps^2 <= delta`: by Chebyshev the
/// ensemble expectation is then within `eps` of zero with probability at
/// least `1 - delta`.
pub fn zero_rule(p: &PauliString, c: f64, eps: f64, delta: f64) -> Option<f64> {
    let bound = c.powi(p.weight() as i32) / (eps * eps);
    (bound <= delta).then_some(0.0)
}

/// Light-cone estimator with configurable support cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Estimator {
    /// Largest admissible support.
    pub support_cap: usize,
}

impl Default for Estimator {
    fn default() -> Self {
        Estimator {
            support_cap: DEFAULT_SUPPORT_CAP,
        }
    }
}

impl Estimator {
    /// Runs the estimation loop with truncation depth from
    /// [`truncation_depth`].
    pub fn estimate(
        &self,
        circ: &NoisyCircuit,
        p: &PauliString,
        eps: f64,
        delta: f64,
    ) -> Result<EstimateReport> {
        let c = circ.noise().params().c;
        let l = truncation_depth(c, eps, delta)?;
        self.run(circ, p, l, eps)
    }

    /// Runs at most `l` steps (and never more than the depth), stopping as
    /// soon as `2 E_t <= eps`. Pass `eps = 0` to disable the early break
    /// except for observables that became exactly proportional to identity.
    pub fn run(
        &self,
        circ: &NoisyCircuit,
        p: &PauliString,
        l: usize,
        eps: f64,
    ) -> Result<EstimateReport> {
        if p.num_qubits() != circ.num_qubits() {
            return Err(Error::LengthMismatch {
                left: circ.num_qubits(),
                right: p.num_qubits(),
            });
        }
        if p.weight() == 0 {
            return Err(Error::InvalidArgument("observable must be non-identity".into()));
        }
        let prop = Propagator::new(circ, self.support_cap);
        let mut obs = PropagatedObservable::from_pauli(p);
        let mut peak = obs.support.len();
        let steps = l.min(circ.depth());
        let mut executed = 0;
        let mut early = false;
        let mut cert = None;
        for t in 1..=steps {
            prop.step(&mut obs, t)?;
            executed = t;
            peak = peak.max(obs.support.len());
            // the diagonal spread bounds the spectral spread from below
            if obs.diagonal_spread() <= eps {
                let e = obs.certificate();
                cert = Some(e);
                if 2.0 * e <= eps {
                    early = true;
                    break;
                }
            } else {
                cert = None;
            }
        }
        let certificate_e = cert.unwrap_or_else(|| obs.certificate());
        Ok(EstimateReport {
            value: obs.expectation_product(circ.init()),
            l_target: l,
            steps_executed: executed,
            early_break: early,
            certificate_e,
            support_peak: peak,
        })
    }

    /// `Tr(P_t rho_0)` for `t = 1..=l_max` (capped at the depth), without
    /// early break. The last entry with `l_max >= L` is the exact value.
    pub fn truncated_values(
        &self,
        circ: &NoisyCircuit,
        p: &PauliString,
        l_max: usize,
    ) -> Result<Vec<f64>> {
        let prop = Propagator::new(circ, self.support_cap);
        let mut obs = PropagatedObservable::from_pauli(p);
        let mut out = Vec::with_capacity(l_max);
        for t in 1..=l_max.min(circ.depth()) {
            prop.step(&mut obs, t)?;
            out.push(obs.expectation_product(circ.init()));
        }
        Ok(out)
    }
}

/// [`Estimator::estimate`] with the default support cap.
pub fn estimate(circ: &NoisyCircuit, p: &PauliString, eps: f64, delta: f64) -> Result<EstimateReport> {
    Estimator::default().estimate(circ, p, eps, delta)
}
