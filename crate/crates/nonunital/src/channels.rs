//! Single-qubit channels: Kraus form, Pauli transfer matrix (PTM), the
//! normal form `N = U . N' . V^dagger` and the constants derived from it.
//!
//! The PTM is indexed by (I, X, Y, Z) with `T[Q, P] = Tr(Q N(P)) / 2`, so a
//! channel maps the Bloch vector `r` of a state to `T r` and its adjoint acts
//! on Pauli coefficients through `T^T`. In normal form the channel `N'` sends
//! a Bloch vector `w` to `t + D w` with `D` diagonal.

use nalgebra::{Matrix2, Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pauli::Pauli;
use crate::C64;

/// Tolerance for the Kraus completeness relation.
pub const KRAUS_TOL: f64 = 1e-10;
/// Threshold on `|c - 1|` below which a channel counts as unitary.
pub const UNITARY_TOL: f64 = 1e-9;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Channel given by Kraus operators `K_i` with `sum K_i^dagger K_i = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausChannel {
    ops: Vec<Matrix2<C64>>,
}

impl KrausChannel {
    /// Validates the completeness relation to [`KRAUS_TOL`].
    pub fn new(ops: Vec<Matrix2<C64>>) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::NotTracePreserving(1.0));
        }
        let sum: Matrix2<C64> = ops.iter().map(|k| k.adjoint() * k).sum();
        let dev = (sum - Matrix2::identity()).norm();
        if !dev.is_finite() || dev > KRAUS_TOL {
            return Err(Error::NotTracePreserving(dev));
        }
        Ok(KrausChannel { ops })
    }

    /// Kraus operators.
    pub fn ops(&self) -> &[Matrix2<C64>] {
        &self.ops
    }

    /// Identity channel.
    pub fn identity() -> Self {
        KrausChannel {
            ops: vec![Matrix2::identity()],
        }
    }

    /// Unitary channel `rho -> U rho U^dagger`.
    pub fn unitary(u: Matrix2<C64>) -> Result<Self> {
        Self::new(vec![u])
    }

    /// Depolarizing channel with `D = (1-p, 1-p, 1-p)`, `p` in `[0, 1]`.
    pub fn depolarizing(p: f64) -> Result<Self> {
        check_prob("p", p)?;
        let a = (1.0 - 0.75 * p).sqrt();
        let b = (0.25 * p).sqrt();
        Self::new(vec![
            Pauli::I.matrix() * c(a),
            Pauli::X.matrix() * c(b),
            Pauli::Y.matrix() * c(b),
            Pauli::Z.matrix() * c(b),
        ])
    }

    /// Amplitude damping towards `|0>` with decay probability `q`.
    pub fn amplitude_damping(q: f64) -> Result<Self> {
        check_prob("q", q)?;
        let k1 = Matrix2::new(c(1.0), c(0.0), c(0.0), c((1.0 - q).sqrt()));
        let k2 = Matrix2::new(c(0.0), c(q.sqrt()), c(0.0), c(0.0));
        Self::new(vec![k1, k2])
    }

    /// Dephasing channel with `D = (1-p, 1-p, 1)`.
    pub fn dephasing(p: f64) -> Result<Self> {
        check_prob("p", p)?;
        Self::new(vec![
            Pauli::I.matrix() * c((1.0 - 0.5 * p).sqrt()),
            Pauli::Z.matrix() * c((0.5 * p).sqrt()),
        ])
    }

    /// Composition `self . other`: `other` acts first.
    pub fn compose(&self, other: &KrausChannel) -> KrausChannel {
        let ops = self
            .ops
            .iter()
            .flat_map(|a| other.ops.iter().map(move |b| a * b))
            .collect();
        KrausChannel { ops }
    }

    /// Applies the channel to a 2x2 operator.
    pub fn apply(&self, rho: &Matrix2<C64>) -> Matrix2<C64> {
        self.ops.iter().map(|k| k * rho * k.adjoint()).sum()
    }

    /// Superoperator `S` with `N(rho)_{ab} = sum_{cd} S[2a+b, 2c+d] rho_{cd}`.
    pub fn superop(&self) -> Matrix4<C64> {
        self.ops.iter().map(|k| k.kronecker(&k.conjugate())).sum()
    }
}

fn check_prob(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} = {v} is not in [0, 1]")))
    }
}

/// Real 4x4 Pauli transfer matrix indexed by (I, X, Y, Z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PauliTransferMatrix(pub Matrix4<f64>);

impl PauliTransferMatrix {
    /// PTM of the identity channel.
    pub fn identity() -> Self {
        PauliTransferMatrix(Matrix4::identity())
    }

    /// Wraps a matrix after checking the trace-preservation row and the entry range.
    pub fn new(m: Matrix4<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPtm("non-finite entry".into()));
        }
        let row = [m[(0, 0)] - 1.0, m[(0, 1)], m[(0, 2)], m[(0, 3)]];
        if row.iter().any(|v| v.abs() > 1e-10) {
            return Err(Error::InvalidPtm(format!(
                "first row is {:?}, expected (1, 0, 0, 0)",
                [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(0, 3)]]
            )));
        }
        if m.iter().any(|v| v.abs() > 1.0 + 1e-10) {
            return Err(Error::InvalidPtm("entry outside [-1, 1]".into()));
        }
        Ok(PauliTransferMatrix(m))
    }

    /// Entry `T[Q, P]`.
    pub fn entry(&self, q: Pauli, p: Pauli) -> f64 {
        self.0[(q.index(), p.index())]
    }

    /// PTM of the adjoint (Heisenberg-picture) map, i.e. the transpose.
    pub fn adjoint(&self) -> Self {
        PauliTransferMatrix(self.0.transpose())
    }

    /// Non-unital column tail `b = (T[X,I], T[Y,I], T[Z,I])`.
    pub fn shift(&self) -> Vector3<f64> {
        Vector3::new(self.0[(1, 0)], self.0[(2, 0)], self.0[(3, 0)])
    }

    /// Lower-right 3x3 block acting on Bloch vectors.
    pub fn block(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(1, 1).into_owned()
    }

    /// Assembles a PTM from a shift vector and a 3x3 block.
    pub fn from_parts(shift: Vector3<f64>, block: Matrix3<f64>) -> Self {
        let mut m = Matrix4::zeros();
        m[(0, 0)] = 1.0;
        m.fixed_view_mut::<3, 1>(1, 0).copy_from(&shift);
        m.fixed_view_mut::<3, 3>(1, 1).copy_from(&block);
        PauliTransferMatrix(m)
    }

    /// Superoperator in the computational basis, same layout as
    /// [`KrausChannel::superop`].
    pub fn superop(&self) -> Matrix4<C64> {
        let mats = Pauli::ALL.map(|p| p.matrix());
        let mut s = Matrix4::<C64>::zeros();
        for (qi, q) in mats.iter().enumerate() {
            for (pi, p) in mats.iter().enumerate() {
                let t = self.0[(qi, pi)];
                if t == 0.0 {
                    continue;
                }
                for a in 0..2 {
                    for b in 0..2 {
                        for cc in 0..2 {
                            for d in 0..2 {
                                s[(2 * a + b, 2 * cc + d)] += p[(d, cc)] * q[(a, b)] * (0.5 * t);
                            }
                        }
                    }
                }
            }
        }
        s
    }
}

/// PTM of a Kraus channel: `T[Q, P] = Tr(Q N(P)) / 2`.
pub fn ptm_from_kraus(k: &KrausChannel) -> Result<PauliTransferMatrix> {
    KrausChannel::new(k.ops.clone())?;
    let mut m = Matrix4::zeros();
    for p in Pauli::ALL {
        let np = k.apply(&p.matrix());
        for q in Pauli::ALL {
            let v = (q.matrix() * np).trace() * 0.5;
            debug_assert!(v.im.abs() < 1e-12, "PTM entry with imaginary part {}", v.im);
            m[(q.index(), p.index())] = v.re;
        }
    }
    PauliTransferMatrix::new(m)
}

/// PTM of the composition `a . b` (`b` acts first).
pub fn compose(a: &PauliTransferMatrix, b: &PauliTransferMatrix) -> PauliTransferMatrix {
    PauliTransferMatrix(a.0 * b.0)
}

/// Rotation `R` with `U sigma_j U^dagger = sum_i R[i, j] sigma_i`.
pub fn rotation_of_unitary(u: &Matrix2<C64>) -> Matrix3<f64> {
    let axes = Pauli::AXES.map(|p| p.matrix());
    Matrix3::from_fn(|i, j| ((axes[i] * u * axes[j] * u.adjoint()).trace() * 0.5).re)
}

/// SU(2) lift `exp(-i theta n.sigma / 2)` of a rotation in SO(3).
pub fn su2_from_rotation(r: &Matrix3<f64>) -> Matrix2<C64> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let mi = C64::new(0.0, -1.0);
    Pauli::I.matrix() * c(w)
        + Pauli::X.matrix() * (mi * x)
        + Pauli::Y.matrix() * (mi * y)
        + Pauli::Z.matrix() * (mi * z)
}

/// Normal form of a single-qubit channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelNormalForm {
    /// Shift vector `(t_X, t_Y, t_Z)`.
    pub t: Vector3<f64>,
    /// Diagonal `(D_X, D_Y, D_Z)`, entries sharing one sign.
    pub d: Vector3<f64>,
    /// Unitary applied after `N'`.
    pub u: Matrix2<C64>,
    /// Unitary whose adjoint is applied before `N'`.
    pub v: Matrix2<C64>,
}

/// Constants the bounds consume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionParams {
    /// Contraction coefficient `(|t|^2 + |D|^2) / 3`.
    pub c: f64,
    /// `|t|^2`.
    pub t_norm2: f64,
    /// `|D|^2`.
    pub d_norm2: f64,
    /// Worst-case W1 factor `b`, infinite when not applicable.
    pub b_worst: f64,
}

/// Normal form via the real SVD of the 3x3 block.
pub fn normal_form(t: &PauliTransferMatrix) -> Result<ChannelNormalForm> {
    let t = PauliTransferMatrix::new(t.0)?;
    let svd = t.block().svd(true, true);
    let mut r1 = svd.u.ok_or_else(|| Error::InvalidPtm("SVD failed".into()))?;
    let mut r2 = svd
        .v_t
        .ok_or_else(|| Error::InvalidPtm("SVD failed".into()))?
        .transpose();
    let mut d = svd.singular_values;
    if r1.determinant() < 0.0 {
        r1.column_mut(2).neg_mut();
        d[2] = -d[2];
    }
    if r2.determinant() < 0.0 {
        r2.column_mut(2).neg_mut();
        d[2] = -d[2];
    }
    if d[2] < 0.0 {
        // move the odd sign onto all three entries with a proper rotation
        r1.column_mut(0).neg_mut();
        r1.column_mut(1).neg_mut();
        d[0] = -d[0];
        d[1] = -d[1];
    }
    let shift = r1.transpose() * t.shift();
    Ok(ChannelNormalForm {
        t: shift,
        d,
        u: su2_from_rotation(&r1),
        v: su2_from_rotation(&r2),
    })
}

impl ChannelNormalForm {
    /// Contraction coefficient `c = (|t|^2 + |D|^2) / 3`.
    pub fn contraction_c(&self) -> f64 {
        (self.t.norm_squared() + self.d.norm_squared()) / 3.0
    }

    /// True when `|c - 1| <` [`UNITARY_TOL`].
    pub fn is_unitary(&self) -> bool {
        (self.contraction_c() - 1.0).abs() < UNITARY_TOL
    }

    /// `(t_Q, D_Q)` with `N'^*(Q) = t_Q I + D_Q Q`; for `Q = I` returns `(1, 0)`.
    pub fn adjoint_coeffs(&self, axis: Pauli) -> (f64, f64) {
        match axis {
            Pauli::I => (1.0, 0.0),
            p => (self.t[p.index() - 1], self.d[p.index() - 1]),
        }
    }

    /// PTM of `N'` alone (the rotations stripped off).
    pub fn core_ptm(&self) -> PauliTransferMatrix {
        PauliTransferMatrix::from_parts(self.t, Matrix3::from_diagonal(&self.d))
    }

    /// PTM of `U N'(V^dagger . V) U^dagger`.
    pub fn reconstruct(&self) -> PauliTransferMatrix {
        let ru = rotation_of_unitary(&self.u);
        let rv = rotation_of_unitary(&self.v);
        let shift = ru * self.t;
        let block = ru * Matrix3::from_diagonal(&self.d) * rv.transpose();
        PauliTransferMatrix::from_parts(shift, block)
    }

    /// Worst-case factor `b = 12 max_P |D_P| / (1 - |D_P|)`; `None` when some
    /// `|D_P| >= 1`, where the fixed point need not be unique.
    pub fn w1_factor(&self) -> Option<f64> {
        let m = self.d.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if m >= 1.0 - 1e-12 {
            None
        } else {
            Some(12.0 * m / (1.0 - m))
        }
    }

    /// All contraction constants at once.
    pub fn params(&self) -> ContractionParams {
        ContractionParams {
            c: self.contraction_c(),
            t_norm2: self.t.norm_squared(),
            d_norm2: self.d.norm_squared(),
            b_worst: self.w1_factor().unwrap_or(f64::INFINITY),
        }
    }
}

/// A channel carried in all three representations.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    kraus: KrausChannel,
    ptm: PauliTransferMatrix,
    normal: ChannelNormalForm,
}

impl Channel {
    /// Builds every representation from Kraus operators.
    pub fn from_kraus(kraus: KrausChannel) -> Result<Self> {
        let ptm = ptm_from_kraus(&kraus)?;
        let normal = normal_form(&ptm)?;
        Ok(Channel { kraus, ptm, normal })
    }

    /// Identity channel.
    pub fn identity() -> Self {
        Self::from_kraus(KrausChannel::identity()).expect("identity is a channel")
    }

    /// Depolarizing channel.
    pub fn depolarizing(p: f64) -> Result<Self> {
        Self::from_kraus(KrausChannel::depolarizing(p)?)
    }

    /// Amplitude damping channel.
    pub fn amplitude_damping(q: f64) -> Result<Self> {
        Self::from_kraus(KrausChannel::amplitude_damping(q)?)
    }

    /// Dephasing channel.
    pub fn dephasing(p: f64) -> Result<Self> {
        Self::from_kraus(KrausChannel::dephasing(p)?)
    }

    /// `dep(p) . amp(q)`: amplitude damping first, then depolarizing.
    pub fn dep_amp(p: f64, q: f64) -> Result<Self> {
        Ok(Self::depolarizing(p)?.compose(&Self::amplitude_damping(q)?))
    }

    /// Composition `self . other` (`other` acts first).
    pub fn compose(&self, other: &Channel) -> Channel {
        Self::from_kraus(self.kraus.compose(&other.kraus))
            .expect("composition of channels is a channel")
    }

    /// Kraus form.
    pub fn kraus(&self) -> &KrausChannel {
        &self.kraus
    }

    /// Pauli transfer matrix.
    pub fn ptm(&self) -> &PauliTransferMatrix {
        &self.ptm
    }

    /// Normal form.
    pub fn normal_form(&self) -> &ChannelNormalForm {
        &self.normal
    }

    /// Contraction constants.
    pub fn params(&self) -> ContractionParams {
        self.normal.params()
    }

    /// True when the channel is unital, i.e. `t = 0` to `1e-10`.
    pub fn is_unital(&self) -> bool {
        self.ptm.shift().norm() <= 1e-10
    }
}

/// Random channel from a Haar-random isometry into system plus an
/// `env_dim`-dimensional environment, traced over the environment.
pub fn random_channel<R: Rng + ?Sized>(env_dim: usize, rng: &mut R) -> Channel {
    let dim = 2 * env_dim;
    let w = crate::circuit::sample_haar(dim, rng);
    let ops = (0..env_dim)
        .map(|e| Matrix2::from_fn(|a, b| w[(2 * e + a, b)]))
        .collect();
    Channel::from_kraus(KrausChannel::new(ops).expect("isometry gives a channel"))
        .expect("valid channel")
}

/// Channel description used in configuration files.
///
/// `composed` lists channels left to right as in `A . B`, so the last entry
/// acts first. Kraus matrices are row-major lists of `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSpec {
    /// Depolarizing with parameter `p`.
    Depolarizing { p: f64 },
    /// Amplitude damping with parameter `q`.
    AmplitudeDamping { q: f64 },
    /// Dephasing with parameter `p`.
    Dephasing { p: f64 },
    /// Explicit Kraus operators.
    Kraus { ops: Vec<Vec<[f64; 2]>> },
    /// Composition of channels.
    Composed { channels: Vec<ChannelSpec> },
}

impl ChannelSpec {
    /// `dep(p) . amp(q)`.
    pub fn dep_amp(p: f64, q: f64) -> Self {
        ChannelSpec::Composed {
            channels: vec![
                ChannelSpec::Depolarizing { p },
                ChannelSpec::AmplitudeDamping { q },
            ],
        }
    }

    /// Builds the channel.
    pub fn build(&self) -> Result<Channel> {
        Channel::from_kraus(self.kraus()?)
    }

    fn kraus(&self) -> Result<KrausChannel> {
        match self {
            ChannelSpec::Depolarizing { p } => KrausChannel::depolarizing(*p),
            ChannelSpec::AmplitudeDamping { q } => KrausChannel::amplitude_damping(*q),
            ChannelSpec::Dephasing { p } => KrausChannel::dephasing(*p),
            ChannelSpec::Kraus { ops } => {
                let mats = ops
                    .iter()
                    .map(|m| {
                        if m.len() != 4 {
                            return Err(Error::Config(format!(
                                "Kraus matrix needs 4 entries, got {}",
                                m.len()
                            )));
                        }
                        Ok(Matrix2::from_fn(|r, cc| {
                            let [re, im] = m[2 * r + cc];
                            C64::new(re, im)
                        }))
                    })
                    .collect::<Result<Vec<_>>>()?;
                KrausChannel::new(mats)
            }
            ChannelSpec::Composed { channels } => {
                let mut acc = KrausChannel::identity();
                for ch in channels {
                    acc = acc.compose(&ch.kraus()?);
                }
                Ok(acc)
            }
        }
    }

    /// Depolarizing strength contained in the spec, if it is a single
    /// depolarizing channel or a composition with exactly one.
    pub fn depolarizing_component(&self) -> Option<f64> {
        match self {
            ChannelSpec::Depolarizing { p } => Some(*p),
            ChannelSpec::Composed { channels } => {
                let ps: Vec<f64> = channels
                    .iter()
                    .filter_map(|c| c.depolarizing_component())
                    .collect();
                if ps.len() == 1 {
                    Some(ps[0])
                } else {
                    None
                }
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn max_diff(a: &PauliTransferMatrix, b: &PauliTransferMatrix) -> f64 {
        (a.0 - b.0).camax()
    }

    #[test]
    fn depolarizing_ptm_is_diagonal() {
        let t = Channel::depolarizing(0.3).unwrap();
        let want = Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, 0.7, 0.7, 0.7));
        assert!((t.ptm().0 - want).camax() < 1e-14);
    }

    #[test]
    fn identity_ptm() {
        assert!(max_diff(Channel::identity().ptm(), &PauliTransferMatrix::identity()) < 1e-15);
    }

    #[test]
    fn amplitude_damping_ptm_entries() {
        let q = 0.2;
        let t = Channel::amplitude_damping(q).unwrap();
        let m = t.ptm();
        assert_abs_diff_eq!(m.entry(Pauli::Z, Pauli::I), q, epsilon = 1e-14);
        assert_abs_diff_eq!(m.entry(Pauli::X, Pauli::X), (1.0 - q).sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(m.entry(Pauli::Y, Pauli::Y), (1.0 - q).sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(m.entry(Pauli::Z, Pauli::Z), 1.0 - q, epsilon = 1e-14);
    }

    #[test]
    fn non_trace_preserving_kraus_rejected() {
        let k = vec![Matrix2::identity() * c(0.9)];
        assert!(matches!(
            KrausChannel::new(k),
            Err(Error::NotTracePreserving(_))
        ));
    }

    #[test]
    fn bad_first_row_rejected() {
        let mut m = Matrix4::identity();
        m[(0, 3)] = 0.1;
        assert!(normal_form(&PauliTransferMatrix(m)).is_err());
    }

    #[test]
    fn dephasing_normal_form() {
        let p = 0.3;
        let nf = normal_form(Channel::dephasing(p).unwrap().ptm()).unwrap();
        assert!(nf.t.norm() < 1e-14);
        let mut d: Vec<f64> = nf.d.iter().map(|v| v.abs()).collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_abs_diff_eq!(d[0], 1.0 - p, epsilon = 1e-14);
        assert_abs_diff_eq!(d[1], 1.0 - p, epsilon = 1e-14);
        assert_abs_diff_eq!(d[2], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn unitary_channel_saturates_contraction() {
        let mut rng = stream(3, 0);
        let u = crate::circuit::sample_haar1(&mut rng);
        let ch = Channel::from_kraus(KrausChannel::unitary(u).unwrap()).unwrap();
        let nf = ch.normal_form();
        assert!(nf.t.norm() < 1e-12);
        for v in nf.d.iter() {
            assert_abs_diff_eq!(v.abs(), 1.0, epsilon = 1e-12);
        }
        assert!(nf.is_unitary());
        assert!(max_diff(&nf.reconstruct(), ch.ptm()) < 1e-12);
    }

    #[test]
    fn contraction_examples() {
        let dep = Channel::depolarizing(0.2).unwrap();
        assert_abs_diff_eq!(dep.params().c, 0.64, epsilon = 1e-14);
        let amp = Channel::amplitude_damping(0.2).unwrap();
        assert_abs_diff_eq!(amp.params().c, (2.0 * 0.8 + 0.64 + 0.04) / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(Channel::identity().params().c, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn adjoint_coeff_examples() {
        let q = 0.2;
        let amp = Channel::amplitude_damping(q).unwrap();
        let (t, d) = amp.normal_form().adjoint_coeffs(Pauli::Z);
        assert_abs_diff_eq!(t, q, epsilon = 1e-14);
        assert_abs_diff_eq!(d, 1.0 - q, epsilon = 1e-14);
        assert_eq!(amp.normal_form().adjoint_coeffs(Pauli::I), (1.0, 0.0));
        let deph = Channel::dephasing(0.4).unwrap();
        // the SVD orders axes by singular value, so compare as a multiset
        let mut ds: Vec<f64> = Pauli::AXES
            .iter()
            .map(|&a| {
                let (t, d) = deph.normal_form().adjoint_coeffs(a);
                assert_abs_diff_eq!(t, 0.0, epsilon = 1e-14);
                d.abs()
            })
            .collect();
        ds.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(ds[0], 0.6, epsilon = 1e-14);
        assert_abs_diff_eq!(ds[1], 0.6, epsilon = 1e-14);
        assert_abs_diff_eq!(ds[2], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn adjoint_of_amplitude_damping_on_z() {
        // N^*(Z) = q I + (1 - q) Z, read off the transposed PTM
        let q = 0.35;
        let adj = Channel::amplitude_damping(q).unwrap().ptm().adjoint();
        assert_abs_diff_eq!(adj.0[(0, 3)], q, epsilon = 1e-14);
        assert_abs_diff_eq!(adj.0[(3, 3)], 1.0 - q, epsilon = 1e-14);
    }

    #[test]
    fn dep_amp_composition() {
        let ch = Channel::dep_amp(0.2, 0.2).unwrap();
        let m = ch.ptm();
        assert_abs_diff_eq!(m.entry(Pauli::Z, Pauli::I), 0.16, epsilon = 1e-14);
        assert_abs_diff_eq!(m.entry(Pauli::X, Pauli::X), 0.8 * 0.8f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(m.entry(Pauli::Y, Pauli::Y), 0.8 * 0.8f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(m.entry(Pauli::Z, Pauli::Z), 0.64, epsilon = 1e-14);
        let prod = compose(
            Channel::depolarizing(0.2).unwrap().ptm(),
            Channel::amplitude_damping(0.2).unwrap().ptm(),
        );
        assert!(max_diff(&prod, m) < 1e-14);
    }

    #[test]
    fn depolarizing_composition_closes() {
        let (p, p2) = (0.1, 0.25);
        let a = Channel::depolarizing(p).unwrap();
        let b = Channel::depolarizing(p2).unwrap();
        let want = Channel::depolarizing(1.0 - (1.0 - p) * (1.0 - p2)).unwrap();
        assert!(max_diff(&compose(a.ptm(), b.ptm()), want.ptm()) < 1e-14);
        assert!(max_diff(&compose(a.ptm(), &PauliTransferMatrix::identity()), a.ptm()) < 1e-15);
    }

    #[test]
    fn w1_factor_examples() {
        let replacer = ChannelNormalForm {
            t: Vector3::new(0.0, 0.0, 1.0),
            d: Vector3::zeros(),
            u: Matrix2::identity(),
            v: Matrix2::identity(),
        };
        assert_eq!(replacer.w1_factor(), Some(0.0));
        let amp = Channel::amplitude_damping(0.99).unwrap();
        assert_abs_diff_eq!(
            amp.normal_form().w1_factor().unwrap(),
            12.0 * 0.1 / 0.9,
            epsilon = 1e-12
        );
        let p = 0.3;
        let dep = Channel::depolarizing(p).unwrap();
        assert_abs_diff_eq!(
            dep.normal_form().w1_factor().unwrap(),
            12.0 * (1.0 - p) / p,
            epsilon = 1e-12
        );
        assert_eq!(Channel::dephasing(0.3).unwrap().normal_form().w1_factor(), None);
        assert!(Channel::identity().params().b_worst.is_infinite());
    }

    #[test]
    fn superop_forms_agree() {
        let mut rng = stream(11, 0);
        for _ in 0..20 {
            let ch = random_channel(4, &mut rng);
            let diff = (ch.kraus().superop() - ch.ptm().superop()).camax();
            assert!(diff < 1e-12, "superop mismatch {diff}");
        }
    }

    #[test]
    fn su2_lift_reproduces_rotation() {
        let mut rng = stream(5, 1);
        for _ in 0..50 {
            let u = crate::circuit::sample_haar1(&mut rng);
            let r = rotation_of_unitary(&u);
            let back = rotation_of_unitary(&su2_from_rotation(&r));
            assert!((r - back).camax() < 1e-12);
        }
    }

    #[test]
    fn channel_spec_toml_round_trip() {
        let spec = ChannelSpec::dep_amp(0.2, 0.3);
        let txt = toml::to_string(&spec).unwrap();
        let back: ChannelSpec = toml::from_str(&txt).unwrap();
        assert_eq!(back, spec);
        let built = spec.build().unwrap();
        assert!(max_diff(built.ptm(), Channel::dep_amp(0.2, 0.3).unwrap().ptm()) < 1e-14);
        assert_eq!(spec.depolarizing_component(), Some(0.2));
    }

    #[test]
    fn kraus_spec_parses() {
        let txt = r#"
kind = "kraus"
ops = [[[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]]
"#;
        let spec: ChannelSpec = toml::from_str(txt).unwrap();
        let ch = spec.build().unwrap();
        assert!(max_diff(ch.ptm(), &PauliTransferMatrix::identity()) < 1e-15);
        let bad = ChannelSpec::Kraus {
            ops: vec![vec![[1.0, 0.0]; 3]],
        };
        assert!(matches!(bad.build(), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn random_channels_round_trip(seed in 0u64..10_000) {
            let mut rng = stream(seed, 0);
            let ch = random_channel(4, &mut rng);
            let nf = ch.normal_form();
            prop_assert!(max_diff(&nf.reconstruct(), ch.ptm()) < 1e-10);
            let c = nf.contraction_c();
            prop_assert!(c <= 1.0 + 1e-12);
            prop_assert!(nf.t.norm() <= 1.0 + 1e-12);
            let same_sign = nf.d.iter().all(|v| *v >= -1e-15) || nf.d.iter().all(|v| *v <= 1e-15);
            prop_assert!(same_sign);
            let ptm = ch.ptm();
            prop_assert!(ptm.0.iter().all(|v| v.abs() <= 1.0 + 1e-12));
        }

        #[test]
        fn adjoint_is_transpose(seed in 0u64..10_000) {
            let mut rng = stream(seed, 1);
            let ch = random_channel(3, &mut rng);
            // Tr(Q N(P)) = Tr(N^*(Q) P) with N^* built from daggered Kraus operators
            let adj = KrausChannel { ops: ch.kraus().ops().iter().map(|k| k.adjoint()).collect() };
            for p in Pauli::ALL {
                for q in Pauli::ALL {
                    let lhs = (q.matrix() * ch.kraus().apply(&p.matrix())).trace() * 0.5;
                    let rhs = (adj.apply(&q.matrix()) * p.matrix()).trace() * 0.5;
                    prop_assert!((lhs - rhs).norm() < 1e-12);
                    prop_assert!((ch.ptm().adjoint().0[(p.index(), q.index())] - rhs.re).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn unital_channels_have_zero_shift(seed in 0u64..10_000) {
            let mut rng = stream(seed, 2);
            let u = crate::circuit::sample_haar1(&mut rng);
            let p: f64 = rand::Rng::random::<f64>(&mut rng);
            let ch = Channel::from_kraus(KrausChannel::unitary(u).unwrap()).unwrap()
                .compose(&Channel::depolarizing(p).unwrap());
            prop_assert!(ch.normal_form().t.norm() <= 1e-10);
        }
    }
}
