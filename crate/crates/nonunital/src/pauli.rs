//! Bit-packed Pauli strings and two-qubit Clifford tableaux.
//!
//! A [`PauliString`] on `n` qubits stores one x bit and one z bit per qubit,
//! packed into 64-bit words, together with a sign in {+1, -1}. Site `q`
//! carries `I` for (0,0), `X` for (1,0), `Z` for (0,1) and the Hermitian `Y`
//! for (1,1). In text form the leftmost character is qubit 0, and in dense
//! matrices qubit 0 is the most significant tensor factor.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix2, Matrix4};

use crate::error::{Error, Result};
use crate::C64;

/// Single-qubit Pauli operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    /// All four operators in the basis order (I, X, Y, Z).
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];
    /// The three non-identity operators.
    pub const AXES: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

    /// Position in the (I, X, Y, Z) basis.
    pub fn index(self) -> usize {
        match self {
            Pauli::I => 0,
            Pauli::X => 1,
            Pauli::Y => 2,
            Pauli::Z => 3,
        }
    }

    /// Inverse of [`Pauli::index`].
    pub fn from_index(i: usize) -> Pauli {
        Pauli::ALL[i & 3]
    }

    /// Symplectic bits `(x, z)`.
    pub fn bits(self) -> (bool, bool) {
        match self {
            Pauli::I => (false, false),
            Pauli::X => (true, false),
            Pauli::Y => (true, true),
            Pauli::Z => (false, true),
        }
    }

    /// Operator with the given symplectic bits.
    pub fn from_bits(x: bool, z: bool) -> Pauli {
        match (x, z) {
            (false, false) => Pauli::I,
            (true, false) => Pauli::X,
            (true, true) => Pauli::Y,
            (false, true) => Pauli::Z,
        }
    }

    /// Dense 2x2 matrix.
    pub fn matrix(self) -> Matrix2<C64> {
        let o = C64::new(0.0, 0.0);
        let l = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        match self {
            Pauli::I => Matrix2::new(l, o, o, l),
            Pauli::X => Matrix2::new(o, l, l, o),
            Pauli::Y => Matrix2::new(o, -i, i, o),
            Pauli::Z => Matrix2::new(l, o, o, -l),
        }
    }

    fn to_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// Signed, Hermitian Pauli string on `n` qubits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PauliString {
    n: usize,
    x: Vec<u64>,
    z: Vec<u64>,
    negative: bool,
}

fn words(n: usize) -> usize {
    n.div_ceil(64).max(1)
}

impl PauliString {
    /// The identity string on `n` qubits.
    pub fn identity(n: usize) -> Self {
        PauliString {
            n,
            x: vec![0; words(n)],
            z: vec![0; words(n)],
            negative: false,
        }
    }

    /// A string that is `p` on qubit `q` and identity elsewhere.
    ///
    /// # Panics
    /// Panics if `q >= n`.
    pub fn single(n: usize, q: usize, p: Pauli) -> Self {
        let mut s = Self::identity(n);
        s.set(q, p);
        s
    }

    /// Builds a string from per-qubit operators.
    pub fn from_paulis(ops: &[Pauli]) -> Self {
        let mut s = Self::identity(ops.len());
        for (q, &p) in ops.iter().enumerate() {
            s.set(q, p);
        }
        s
    }

    /// Number of qubits.
    pub fn num_qubits(&self) -> usize {
        self.n
    }

    /// Sign as +1 or -1.
    pub fn sign(&self) -> i8 {
        if self.negative {
            -1
        } else {
            1
        }
    }

    /// True when the sign is -1.
    pub fn is_negative(&self) -> bool {
        self.negative
    }

    /// Returns a copy with the given sign.
    pub fn with_sign(mut self, negative: bool) -> Self {
        self.negative = negative;
        self
    }

    /// Operator on qubit `q`.
    ///
    /// # Panics
    /// Panics if `q >= n`.
    pub fn get(&self, q: usize) -> Pauli {
        assert!(q < self.n, "qubit {q} out of range for {} qubits", self.n);
        let (w, b) = (q / 64, q % 64);
        Pauli::from_bits((self.x[w] >> b) & 1 == 1, (self.z[w] >> b) & 1 == 1)
    }

    /// Replaces the operator on qubit `q`.
    ///
    /// # Panics
    /// Panics if `q >= n`.
    pub fn set(&mut self, q: usize, p: Pauli) {
        assert!(q < self.n, "qubit {q} out of range for {} qubits", self.n);
        let (w, b) = (q / 64, q % 64);
        let (px, pz) = p.bits();
        self.x[w] = (self.x[w] & !(1 << b)) | ((px as u64) << b);
        self.z[w] = (self.z[w] & !(1 << b)) | ((pz as u64) << b);
        if self.x.iter().chain(self.z.iter()).all(|&v| v == 0) {
            self.negative = false;
        }
    }

    /// Packed x bits; qubit `q` is bit `q % 64` of word `q / 64`.
    pub fn x_words(&self) -> &[u64] {
        &self.x
    }

    /// Packed z bits; same layout as [`PauliString::x_words`].
    pub fn z_words(&self) -> &[u64] {
        &self.z
    }

    /// Number of non-identity sites.
    pub fn weight(&self) -> usize {
        self.x
            .iter()
            .zip(&self.z)
            .map(|(x, z)| (x | z).count_ones() as usize)
            .sum()
    }

    /// Sorted list of non-identity sites.
    pub fn support(&self) -> Vec<usize> {
        (0..self.n).filter(|&q| self.get(q) != Pauli::I).collect()
    }

    /// True when every site is the identity.
    pub fn is_identity(&self) -> bool {
        self.weight() == 0
    }

    /// Whether the two strings commute, from the parity of the symplectic form.
    pub fn commutes(&self, other: &PauliString) -> Result<bool> {
        if self.n != other.n {
            return Err(Error::LengthMismatch {
                left: self.n,
                right: other.n,
            });
        }
        let parity: u32 = (0..self.x.len())
            .map(|w| ((self.x[w] & other.z[w]) ^ (self.z[w] & other.x[w])).count_ones())
            .sum();
        Ok(parity.is_multiple_of(2))
    }

    /// Conjugates by a two-qubit Clifford acting on `(a, b)`, where `a` plays
    /// the role of the tableau's first qubit.
    ///
    /// # Panics
    /// Panics if `a` or `b` is out of range or `a == b`.
    pub fn conjugate(&self, c: &CliffordTableau2, sites: (usize, usize)) -> PauliString {
        let (a, b) = sites;
        assert!(a < self.n && b < self.n && a != b, "invalid site pair {sites:?}");
        let (x1, z1) = self.get(a).bits();
        let (x2, z2) = self.get(b).bits();
        let local = Phased::from_hermitian(local_bits(x1, z1, x2, z2), self.negative);
        let mut acc = Phased {
            x: 0,
            z: 0,
            phase: local.phase,
        };
        let gens = [(x1, 0usize), (z1, 1), (x2, 2), (z2, 3)];
        for (present, g) in gens {
            if present {
                acc = acc.mul(&c.phased[g]);
            }
        }
        let (bits, negative) = acc.into_hermitian();
        let mut out = self.clone();
        out.negative = false;
        out.set(a, Pauli::from_bits(bits.0 & 1 == 1, bits.1 & 1 == 1));
        out.set(b, Pauli::from_bits(bits.0 & 2 == 2, bits.1 & 2 == 2));
        out.negative = negative && !out.is_identity();
        out
    }

    /// Dense `2^n x 2^n` matrix including the sign.
    pub fn to_matrix(&self) -> DMatrix<C64> {
        let mut m = DMatrix::from_element(1, 1, C64::new(self.sign() as f64, 0.0));
        for q in 0..self.n {
            let p = self.get(q).matrix();
            m = m.kronecker(&p);
        }
        m
    }
}

fn local_bits(x1: bool, z1: bool, x2: bool, z2: bool) -> (u8, u8) {
    (x1 as u8 | (x2 as u8) << 1, z1 as u8 | (z2 as u8) << 1)
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negative {
            write!(f, "-")?;
        }
        for q in 0..self.n {
            write!(f, "{}", self.get(q).to_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let (negative, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        if body.is_empty() {
            return Err(Error::InvalidPauli(s.to_string()));
        }
        let ops = body
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'I' => Ok(Pauli::I),
                'X' => Ok(Pauli::X),
                'Y' => Ok(Pauli::Y),
                'Z' => Ok(Pauli::Z),
                _ => Err(Error::InvalidPauli(s.to_string())),
            })
            .collect::<Result<Vec<_>>>()?;
        let p = PauliString::from_paulis(&ops);
        let neg = negative && !p.is_identity();
        Ok(p.with_sign(neg))
    }
}

/// Two-qubit Pauli `i^phase X^x Z^z` with bit 0 for the first qubit and bit 1
/// for the second. Used only inside conjugation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Phased {
    x: u8,
    z: u8,
    phase: u8,
}

impl Phased {
    fn from_hermitian(bits: (u8, u8), negative: bool) -> Self {
        let ys = (bits.0 & bits.1).count_ones() as u8;
        Phased {
            x: bits.0,
            z: bits.1,
            phase: (2 * negative as u8 + ys) % 4,
        }
    }

    fn mul(&self, o: &Phased) -> Phased {
        let swap = (self.z & o.x).count_ones() as u8;
        Phased {
            x: self.x ^ o.x,
            z: self.z ^ o.z,
            phase: (self.phase + o.phase + 2 * swap) % 4,
        }
    }

    fn into_hermitian(self) -> ((u8, u8), bool) {
        let ys = (self.x & self.z).count_ones() as u8;
        let rel = (self.phase + 4 - ys % 4) % 4;
        assert!(
            rel.is_multiple_of(2),
            "conjugation produced an anti-Hermitian Pauli; tableau is invalid"
        );
        ((self.x, self.z), rel == 2)
    }
}

/// Two-qubit Clifford stored as the signed images of `X1, Z1, X2, Z2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliffordTableau2 {
    images: [PauliString; 4],
    phased: [Phased; 4],
}

impl CliffordTableau2 {
    /// Builds a tableau from the images of `X1, Z1, X2, Z2`, checking the
    /// symplectic relations.
    pub fn from_images(images: [PauliString; 4]) -> Result<Self> {
        for p in &images {
            if p.num_qubits() != 2 {
                return Err(Error::InvalidArgument(
                    "tableau images must be 2-qubit strings".into(),
                ));
            }
        }
        // generator pairs (X1,Z1) and (X2,Z2) anticommute, all others commute
        for i in 0..4 {
            if images[i].is_identity() {
                return Err(Error::InvalidArgument("identity image".into()));
            }
            for j in (i + 1)..4 {
                let should_commute = !((i == 0 && j == 1) || (i == 2 && j == 3));
                if images[i].commutes(&images[j])? != should_commute {
                    return Err(Error::InvalidArgument(format!(
                        "images {i} and {j} violate the symplectic relations"
                    )));
                }
            }
        }
        let phased = images.clone().map(|p| {
            let (x1, z1) = p.get(0).bits();
            let (x2, z2) = p.get(1).bits();
            Phased::from_hermitian(local_bits(x1, z1, x2, z2), p.is_negative())
        });
        Ok(CliffordTableau2 { images, phased })
    }

    /// Images of `X1, Z1, X2, Z2`.
    pub fn images(&self) -> &[PauliString; 4] {
        &self.images
    }

    /// The identity Clifford.
    pub fn identity() -> Self {
        Self::from_strs(["XI", "ZI", "IX", "IZ"])
    }

    /// CNOT with the first qubit as control.
    pub fn cnot() -> Self {
        Self::from_strs(["XX", "ZI", "IX", "ZZ"])
    }

    /// SWAP of the two qubits.
    pub fn swap() -> Self {
        Self::from_strs(["IX", "IZ", "XI", "ZI"])
    }

    fn from_strs(s: [&str; 4]) -> Self {
        let images = s.map(|t| t.parse::<PauliString>().expect("static Pauli literal"));
        Self::from_images(images).expect("static tableau literal")
    }

    /// True for the identity tableau.
    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    /// Reads the tableau off a 4x4 unitary. Fails if the unitary is not
    /// Clifford to tolerance `1e-9`.
    pub fn from_unitary(u: &Matrix4<C64>) -> Result<Self> {
        let gens = ["XI", "ZI", "IX", "IZ"];
        let mut images = Vec::with_capacity(4);
        for g in gens {
            let gm = to_matrix4(&g.parse::<PauliString>()?);
            let img = u * gm * u.adjoint();
            images.push(decompose_pauli4(&img).ok_or_else(|| {
                Error::InvalidArgument("unitary is not a two-qubit Clifford".into())
            })?);
        }
        let arr: [PauliString; 4] = images.try_into().expect("four images");
        Self::from_images(arr)
    }

    /// A 4x4 unitary implementing the tableau, defined up to global phase.
    pub fn to_unitary(&self) -> Matrix4<C64> {
        let [x1, z1, x2, z2] = self.images.clone().map(|p| to_matrix4(&p));
        let id = Matrix4::<C64>::identity();
        let proj = (id + z1) * (id + z2) * C64::new(0.25, 0.0);
        // pick the column of the rank-one projector with the largest norm
        let col = (0..4)
            .max_by(|&a, &b| {
                proj.column(a)
                    .norm()
                    .partial_cmp(&proj.column(b).norm())
                    .expect("finite norms")
            })
            .expect("four columns");
        let v0 = proj.column(col).into_owned();
        let v0 = v0.unscale(v0.norm());
        let mut u = Matrix4::<C64>::zeros();
        for idx in 0..4 {
            let mut v = v0;
            if idx & 1 == 1 {
                v = x2 * v;
            }
            if idx & 2 == 2 {
                v = x1 * v;
            }
            u.set_column(idx, &v);
        }
        u
    }
}

/// Dense 4x4 matrix of a 2-qubit string.
pub fn to_matrix4(p: &PauliString) -> Matrix4<C64> {
    assert_eq!(p.num_qubits(), 2);
    let m = p.to_matrix();
    Matrix4::from_fn(|r, c| m[(r, c)])
}

/// Finds the signed 2-qubit Pauli equal to `m`, if any.
pub fn decompose_pauli4(m: &Matrix4<C64>) -> Option<PauliString> {
    for a in Pauli::ALL {
        for b in Pauli::ALL {
            let p = PauliString::from_paulis(&[a, b]);
            let pm = to_matrix4(&p);
            let overlap = (pm * m).trace() / 4.0;
            if (overlap.re - 1.0).abs() < 1e-9 && overlap.im.abs() < 1e-9 {
                return Some(p);
            }
            if (overlap.re + 1.0).abs() < 1e-9 && overlap.im.abs() < 1e-9 {
                return Some(p.with_sign(true));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ps(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    #[test]
    fn weight_examples() {
        assert_eq!(ps("XIY").weight(), 2);
        assert_eq!(ps("III").weight(), 0);
        assert_eq!(ps("ZZZ").weight(), 3);
        assert_eq!(ps("XIY").support(), vec![0, 2]);
    }

    #[test]
    fn parse_and_display_round_trip() {
        for s in ["X", "-XYZI", "IIII", "YYZ"] {
            assert_eq!(ps(s).to_string(), s);
        }
        assert_eq!(ps("-III").to_string(), "III");
        assert!("XQ".parse::<PauliString>().is_err());
        assert!("".parse::<PauliString>().is_err());
    }

    #[test]
    fn commutation_examples() {
        assert!(ps("X").commutes(&ps("X")).unwrap());
        assert!(!ps("X").commutes(&ps("Z")).unwrap());
        assert!(ps("XZ").commutes(&ps("ZX")).unwrap());
        assert!(ps("X").commutes(&ps("XX")).is_err());
    }

    #[test]
    fn commutation_matches_matrix_product_for_xz_zx() {
        let a = ps("XZ").to_matrix();
        let b = ps("ZX").to_matrix();
        assert!((&a * &b - &b * &a).norm() < 1e-12);
    }

    #[test]
    fn many_words() {
        let mut p = PauliString::identity(130);
        p.set(129, Pauli::Y);
        p.set(64, Pauli::X);
        assert_eq!(p.weight(), 2);
        assert_eq!(p.get(129), Pauli::Y);
        assert_eq!(p.support(), vec![64, 129]);
        let q = PauliString::single(130, 129, Pauli::Z);
        assert!(!p.commutes(&q).unwrap());
    }

    #[test]
    fn cnot_and_swap_examples() {
        let cnot = CliffordTableau2::cnot();
        assert_eq!(ps("XI").conjugate(&cnot, (0, 1)), ps("XX"));
        let swap = CliffordTableau2::swap();
        assert_eq!(ps("XZ").conjugate(&swap, (0, 1)), ps("ZX"));
        let id = CliffordTableau2::identity();
        assert_eq!(ps("-YZ").conjugate(&id, (0, 1)), ps("-YZ"));
    }

    #[test]
    fn tableau_round_trips_through_unitary() {
        for t in [
            CliffordTableau2::identity(),
            CliffordTableau2::cnot(),
            CliffordTableau2::swap(),
        ] {
            let u = t.to_unitary();
            assert!((u.adjoint() * u - Matrix4::identity()).norm() < 1e-12);
            assert_eq!(CliffordTableau2::from_unitary(&u).unwrap(), t);
        }
    }

    #[test]
    fn conjugation_on_distant_sites_leaves_rest_untouched() {
        let p = ps("XYZIX");
        let q = p.conjugate(&CliffordTableau2::cnot(), (4, 1));
        assert_eq!(q.get(0), Pauli::X);
        assert_eq!(q.get(2), Pauli::Z);
        assert_eq!(q.get(3), Pauli::I);
    }

    #[test]
    fn invalid_tableau_rejected() {
        let bad = ["XI", "XI", "IX", "IZ"].map(ps);
        assert!(CliffordTableau2::from_images(bad).is_err());
    }

    fn arb_pauli(n: usize) -> impl Strategy<Value = PauliString> {
        (proptest::collection::vec(0usize..4, n), any::<bool>()).prop_map(|(v, neg)| {
            let ops: Vec<Pauli> = v.into_iter().map(Pauli::from_index).collect();
            let p = PauliString::from_paulis(&ops);
            let neg = neg && !p.is_identity();
            p.with_sign(neg)
        })
    }

    proptest! {
        #[test]
        fn commutes_matches_dense(a in arb_pauli(3), b in arb_pauli(3)) {
            let (ma, mb) = (a.to_matrix(), b.to_matrix());
            let comm = (&ma * &mb - &mb * &ma).norm() < 1e-12;
            prop_assert_eq!(a.commutes(&b).unwrap(), comm);
        }

        #[test]
        fn weight_equals_support_len(a in arb_pauli(9)) {
            prop_assert_eq!(a.weight(), a.support().len());
        }

        #[test]
        fn display_parse_round_trip(a in arb_pauli(7)) {
            prop_assert_eq!(a.to_string().parse::<PauliString>().unwrap(), a);
        }
    }
}
