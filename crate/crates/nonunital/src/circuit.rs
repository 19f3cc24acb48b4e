//! Noisy circuit instances: coupling graphs, gate sampling, parametrized
//! ansatze and the layered circuit model
//!
//! `Phi = V_single . N^{(x)n} . U_L . ... . N^{(x)n} . U_1`.
//!
//! Each [`Layer`] applies its gates in order, then an optional single-qubit
//! layer (the 2-design twirl used by moment experiments), then the noise
//! channel on every qubit. The optional final single-qubit layer acts after
//! the last noise layer.

use nalgebra::{DMatrix, Matrix2, Matrix4};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channels::{Channel, ChannelSpec};
use crate::error::{Error, Result};
use crate::pauli::{CliffordTableau2, Pauli, PauliString};
use crate::rng;
use crate::C64;

/// Number of elements of the two-qubit Clifford group modulo phases.
pub const CLIFFORD2_ORDER: usize = 11520;

/// Haar-random `dim x dim` unitary from the QR decomposition of a complex
/// Ginibre matrix, with the phases of `R`'s diagonal divided out.
pub fn sample_haar<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<C64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let g = DMatrix::from_fn(dim, dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * s, im * s)
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..dim {
            q[(i, j)] *= ph;
        }
    }
    q
}

/// Haar-random single-qubit unitary.
pub fn sample_haar1<R: Rng + ?Sized>(rng: &mut R) -> Matrix2<C64> {
    let u = sample_haar(2, rng);
    Matrix2::from_fn(|r, c| u[(r, c)])
}

/// Haar-random two-qubit unitary.
pub fn sample_haar2<R: Rng + ?Sized>(rng: &mut R) -> Matrix4<C64> {
    let u = sample_haar(4, rng);
    Matrix4::from_fn(|r, c| u[(r, c)])
}

fn signed_paulis_2q() -> Vec<PauliString> {
    let mut out = Vec::with_capacity(30);
    for a in Pauli::ALL {
        for b in Pauli::ALL {
            let p = PauliString::from_paulis(&[a, b]);
            if !p.is_identity() {
                out.push(p.clone());
                out.push(p.with_sign(true));
            }
        }
    }
    out
}

/// Uniformly random element of the two-qubit Clifford group.
///
/// The image of `X1` is uniform over the 30 signed non-identity Paulis, the
/// image of `Z1` uniform over the 16 signed Paulis anticommuting with it, and
/// the images of `X2, Z2` uniform over the anticommuting signed pairs in the
/// symplectic complement, giving `30 * 16 * 6 * 4 = 11520` equally likely
/// tableaux.
pub fn sample_clifford2<R: Rng + ?Sized>(rng: &mut R) -> CliffordTableau2 {
    let all = signed_paulis_2q();
    let x1 = all.choose(rng).expect("nonempty").clone();
    let anti = |p: &PauliString, q: &PauliString| !p.commutes(q).expect("same length");
    let z1_opts: Vec<&PauliString> = all.iter().filter(|q| anti(&x1, q)).collect();
    let z1 = (*z1_opts.choose(rng).expect("nonempty")).clone();
    let comp: Vec<&PauliString> = all
        .iter()
        .filter(|q| !anti(&x1, q) && !anti(&z1, q))
        .collect();
    let x2 = (*comp.choose(rng).expect("nonempty")).clone();
    let z2_opts: Vec<&PauliString> = comp.iter().copied().filter(|q| anti(&x2, q)).collect();
    let z2 = (*z2_opts.choose(rng).expect("nonempty")).clone();
    CliffordTableau2::from_images([x1, z1, x2, z2]).expect("sampled images are symplectic")
}

/// Uniformly random single-qubit Clifford (24 elements modulo phase) as a matrix.
pub fn sample_clifford1<R: Rng + ?Sized>(rng: &mut R) -> Matrix2<C64> {
    let axes = Pauli::AXES;
    let xa = *axes.choose(rng).expect("nonempty");
    let za_opts: Vec<Pauli> = axes.iter().copied().filter(|&p| p != xa).collect();
    let za = *za_opts.choose(rng).expect("nonempty");
    let sx = if rng.random::<bool>() { -1.0 } else { 1.0 };
    let sz = if rng.random::<bool>() { -1.0 } else { 1.0 };
    let xm = xa.matrix() * C64::new(sx, 0.0);
    let zm = za.matrix() * C64::new(sz, 0.0);
    // U|0> is the +1 eigenvector of the image of Z, U|1> = img(X) U|0>
    let proj = (Matrix2::identity() + zm) * C64::new(0.5, 0.0);
    let col = if proj.column(0).norm() > proj.column(1).norm() { 0 } else { 1 };
    let v0 = proj.column(col).into_owned();
    let v0 = v0.unscale(v0.norm());
    let v1 = xm * v0;
    Matrix2::from_columns(&[v0, v1])
}

fn cr(v: f64) -> C64 {
    C64::new(v, 0.0)
}

/// `R_X(theta) = exp(-i theta X / 2)`.
pub fn rx(theta: f64) -> Matrix2<C64> {
    let (s, c) = (theta / 2.0).sin_cos();
    Matrix2::new(cr(c), C64::new(0.0, -s), C64::new(0.0, -s), cr(c))
}

/// `R_Y(theta) = exp(-i theta Y / 2)`.
pub fn ry(theta: f64) -> Matrix2<C64> {
    let (s, c) = (theta / 2.0).sin_cos();
    Matrix2::new(cr(c), cr(-s), cr(s), cr(c))
}

/// CNOT with the first tensor factor as control.
pub fn cnot() -> Matrix4<C64> {
    let mut m = Matrix4::zeros();
    m[(0, 0)] = cr(1.0);
    m[(1, 1)] = cr(1.0);
    m[(2, 3)] = cr(1.0);
    m[(3, 2)] = cr(1.0);
    m
}

/// `(R_Y(t4) (x) R_Y(t3)) CNOT (R_X(t2) (x) R_X(t1))`; `t1` and `t3` act on
/// the second qubit of the pair.
pub fn hardware_efficient_gate(theta: [f64; 4]) -> Matrix4<C64> {
    let [t1, t2, t3, t4] = theta;
    ry(t4).kronecker(&ry(t3)) * cnot() * rx(t2).kronecker(&rx(t1))
}

/// `exp(-i gamma Z (x) Z)`.
pub fn zz_rotation(gamma: f64) -> Matrix4<C64> {
    let a = C64::from_polar(1.0, -gamma);
    let b = C64::from_polar(1.0, gamma);
    Matrix4::from_diagonal(&nalgebra::Vector4::new(a, b, b, a))
}

/// `exp(-i beta X)`.
pub fn x_rotation(beta: f64) -> Matrix2<C64> {
    rx(2.0 * beta)
}

/// Layers of disjoint qubit pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingGraph {
    n: usize,
    layers: Vec<Vec<(usize, usize)>>,
}

impl CouplingGraph {
    /// Validates pair ranges and disjointness inside each layer.
    pub fn new(n: usize, layers: Vec<Vec<(usize, usize)>>) -> Result<Self> {
        for (k, layer) in layers.iter().enumerate() {
            let mut used = vec![false; n];
            for &(a, b) in layer {
                if a >= n || b >= n || a == b {
                    return Err(Error::InvalidArgument(format!(
                        "pair ({a}, {b}) in layer {k} is invalid for {n} qubits"
                    )));
                }
                if used[a] || used[b] {
                    return Err(Error::InvalidArgument(format!(
                        "pairs in layer {k} overlap on qubit {}",
                        if used[a] { a } else { b }
                    )));
                }
                used[a] = true;
                used[b] = true;
            }
        }
        Ok(CouplingGraph { n, layers })
    }

    /// 1D brickwork with open boundary: odd layers (1-based) pair `(0,1), (2,3), ...`,
    /// even layers pair `(1,2), (3,4), ...`.
    pub fn brickwork_1d(n: usize, depth: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "brickwork needs at least 2 qubits, got {n}"
            )));
        }
        let layers = (0..depth)
            .map(|k| {
                let start = k % 2;
                (start..n.saturating_sub(1))
                    .step_by(2)
                    .map(|i| (i, i + 1))
                    .collect::<Vec<_>>()
            })
            .map(|l| if l.is_empty() { vec![(0, 1)] } else { l })
            .collect();
        Self::new(n, layers)
    }

    /// Qubit count.
    pub fn num_qubits(&self) -> usize {
        self.n
    }

    /// Pairs per layer.
    pub fn layers(&self) -> &[Vec<(usize, usize)>] {
        &self.layers
    }

    /// Number of layers.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

/// Qubits a gate acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sites {
    One(usize),
    Two(usize, usize),
}

impl Sites {
    /// Qubits as a small vector.
    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Sites::One(a) => vec![a],
            Sites::Two(a, b) => vec![a, b],
        }
    }

    /// Whether the gate touches qubit `q`.
    pub fn touches(&self, q: usize) -> bool {
        match *self {
            Sites::One(a) => a == q,
            Sites::Two(a, b) => a == q || b == q,
        }
    }
}

/// Gate description.
#[derive(Debug, Clone, PartialEq)]
pub enum GateSpec {
    /// Haar-random two-qubit unitary.
    Haar2(Matrix4<C64>),
    /// Two-qubit Clifford.
    Clifford2(CliffordTableau2),
    /// Hardware-efficient gate with parameters `theta_1..theta_4`.
    HardwareEfficient([f64; 4]),
    /// `exp(-i gamma Z Z)` term of a QAOA cost layer.
    QaoaZz(f64),
    /// `exp(-i beta X)` term of a QAOA mixer layer.
    QaoaX(f64),
    /// Fixed single-qubit unitary.
    Single(Matrix2<C64>),
}

/// Dense unitary of a gate.
#[derive(Debug, Clone, PartialEq)]
pub enum GateUnitary {
    One(Matrix2<C64>),
    Two(Matrix4<C64>),
}

/// A gate placed on specific qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    sites: Sites,
    spec: GateSpec,
    unitary: GateUnitary,
}

impl Gate {
    /// Places a gate, checking that its arity matches the sites.
    pub fn new(sites: Sites, spec: GateSpec) -> Result<Self> {
        let unitary = match (&spec, sites) {
            (GateSpec::Haar2(u), Sites::Two(..)) => GateUnitary::Two(*u),
            (GateSpec::Clifford2(t), Sites::Two(..)) => GateUnitary::Two(t.to_unitary()),
            (GateSpec::HardwareEfficient(th), Sites::Two(..)) => {
                GateUnitary::Two(hardware_efficient_gate(*th))
            }
            (GateSpec::QaoaZz(g), Sites::Two(..)) => GateUnitary::Two(zz_rotation(*g)),
            (GateSpec::QaoaX(b), Sites::One(_)) => GateUnitary::One(x_rotation(*b)),
            (GateSpec::Single(u), Sites::One(_)) => GateUnitary::One(*u),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "gate arity does not match sites {sites:?}"
                )))
            }
        };
        Ok(Gate {
            sites,
            spec,
            unitary,
        })
    }

    /// Qubits acted on.
    pub fn sites(&self) -> Sites {
        self.sites
    }

    /// Gate description.
    pub fn spec(&self) -> &GateSpec {
        &self.spec
    }

    /// Dense unitary.
    pub fn unitary(&self) -> &GateUnitary {
        &self.unitary
    }

    /// Number of continuous parameters.
    pub fn num_params(&self) -> usize {
        match self.spec {
            GateSpec::HardwareEfficient(_) => 4,
            GateSpec::QaoaZz(_) | GateSpec::QaoaX(_) => 1,
            _ => 0,
        }
    }

    /// Value of parameter `slot`.
    pub fn param(&self, slot: usize) -> Option<f64> {
        match (&self.spec, slot) {
            (GateSpec::HardwareEfficient(th), s) if s < 4 => Some(th[s]),
            (GateSpec::QaoaZz(g), 0) => Some(*g),
            (GateSpec::QaoaX(b), 0) => Some(*b),
            _ => None,
        }
    }

    /// Copy with parameter `slot` replaced.
    pub fn with_param(&self, slot: usize, value: f64) -> Result<Gate> {
        let spec = match (&self.spec, slot) {
            (GateSpec::HardwareEfficient(th), s) if s < 4 => {
                let mut th = *th;
                th[s] = value;
                GateSpec::HardwareEfficient(th)
            }
            (GateSpec::QaoaZz(_), 0) => GateSpec::QaoaZz(value),
            (GateSpec::QaoaX(_), 0) => GateSpec::QaoaX(value),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "gate has no parameter slot {slot}"
                )))
            }
        };
        Gate::new(self.sites, spec)
    }

    /// Shift rule `(s, f)` with `dC/dx = f (C(x + s) - C(x - s))` when the
    /// parameter enters through an involutory generator.
    pub fn shift_rule(&self, slot: usize) -> Option<(f64, f64)> {
        use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
        match (&self.spec, slot) {
            // exp(-i x G / 2) with G^2 = I
            (GateSpec::HardwareEfficient(_), s) if s < 4 => Some((FRAC_PI_2, 0.5)),
            // exp(-i x G) with G^2 = I
            (GateSpec::QaoaZz(_), 0) | (GateSpec::QaoaX(_), 0) => Some((FRAC_PI_4, 1.0)),
            _ => None,
        }
    }
}

/// One unitary layer followed by local noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Gates, applied in order.
    pub gates: Vec<Gate>,
    /// Optional single-qubit unitaries applied to every qubit before the noise.
    pub twirl: Option<Vec<Matrix2<C64>>>,
}

/// Initial product state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// `|0...0>`.
    #[default]
    Zero,
    /// `|+...+>`.
    Plus,
}

impl InitialState {
    /// Single-qubit state vector.
    pub fn qubit_vector(self) -> [C64; 2] {
        match self {
            InitialState::Zero => [cr(1.0), cr(0.0)],
            InitialState::Plus => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                [cr(s), cr(s)]
            }
        }
    }

    /// The single Pauli axis with expectation one in this state.
    pub fn stabilizer_axis(self) -> Pauli {
        match self {
            InitialState::Zero => Pauli::Z,
            InitialState::Plus => Pauli::X,
        }
    }
}

/// Layered noisy circuit.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyCircuit {
    n: usize,
    layers: Vec<Layer>,
    noise: Channel,
    final_layer: Option<Vec<Matrix2<C64>>>,
    init: InitialState,
}

/// Address of one scalar gate parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamRef {
    /// Layer index, 0-based.
    pub layer: usize,
    /// Gate index inside the layer.
    pub gate: usize,
    /// Parameter slot inside the gate.
    pub slot: usize,
}

impl NoisyCircuit {
    /// Assembles a circuit, checking qubit ranges and layer sizes.
    pub fn new(
        n: usize,
        layers: Vec<Layer>,
        noise: Channel,
        final_layer: Option<Vec<Matrix2<C64>>>,
        init: InitialState,
    ) -> Result<Self> {
        for (k, layer) in layers.iter().enumerate() {
            for g in &layer.gates {
                if g.sites.qubits().iter().any(|&q| q >= n) {
                    return Err(Error::InvalidArgument(format!(
                        "gate in layer {k} acts outside {n} qubits"
                    )));
                }
            }
            if let Some(t) = &layer.twirl {
                if t.len() != n {
                    return Err(Error::InvalidArgument(format!(
                        "twirl layer {k} has {} unitaries for {n} qubits",
                        t.len()
                    )));
                }
            }
        }
        if let Some(f) = &final_layer {
            if f.len() != n {
                return Err(Error::InvalidArgument(
                    "final layer size does not match qubit count".into(),
                ));
            }
        }
        Ok(NoisyCircuit {
            n,
            layers,
            noise,
            final_layer,
            init,
        })
    }

    /// Qubit count.
    pub fn num_qubits(&self) -> usize {
        self.n
    }

    /// Number of unitary layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Layers in application order.
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Noise channel applied to every qubit after every layer.
    pub fn noise(&self) -> &Channel {
        &self.noise
    }

    /// Final single-qubit layer, if any.
    pub fn final_layer(&self) -> Option<&[Matrix2<C64>]> {
        self.final_layer.as_deref()
    }

    /// Initial product state.
    pub fn init(&self) -> InitialState {
        self.init
    }

    /// Copy with a different noise channel.
    pub fn with_noise(&self, noise: Channel) -> NoisyCircuit {
        NoisyCircuit {
            noise,
            ..self.clone()
        }
    }

    /// Layers `a..b` (0-based, half open). The final single-qubit layer is
    /// kept only when the range reaches the end of the circuit.
    pub fn slice(&self, a: usize, b: usize) -> Result<NoisyCircuit> {
        if a > b || b > self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "layer range {a}..{b} outside depth {}",
                self.layers.len()
            )));
        }
        let final_layer = if b == self.layers.len() {
            self.final_layer.clone()
        } else {
            None
        };
        Ok(NoisyCircuit {
            n: self.n,
            layers: self.layers[a..b].to_vec(),
            noise: self.noise.clone(),
            final_layer,
            init: self.init,
        })
    }

    /// Value of one parameter.
    pub fn param(&self, r: ParamRef) -> Option<f64> {
        self.layers.get(r.layer)?.gates.get(r.gate)?.param(r.slot)
    }

    /// Copy with one parameter replaced.
    pub fn with_param(&self, r: ParamRef, value: f64) -> Result<NoisyCircuit> {
        let gate = self
            .layers
            .get(r.layer)
            .and_then(|l| l.gates.get(r.gate))
            .ok_or_else(|| Error::InvalidArgument(format!("no gate at {r:?}")))?;
        let g = gate.with_param(r.slot, value)?;
        let mut out = self.clone();
        out.layers[r.layer].gates[r.gate] = g;
        Ok(out)
    }

    /// Gate addressed by a parameter reference.
    pub fn gate(&self, r: ParamRef) -> Option<&Gate> {
        self.layers.get(r.layer)?.gates.get(r.gate)
    }

    /// Marks every gate that lies in the backward light cone of an observable
    /// supported on `support`: `out[k][g]` is true when gate `g` of layer `k`
    /// can influence the observable.
    pub fn light_cone(&self, support: &[usize]) -> Vec<Vec<bool>> {
        let mut inside = vec![false; self.n];
        for &q in support {
            inside[q] = true;
        }
        let mut out: Vec<Vec<bool>> = self
            .layers
            .iter()
            .map(|l| vec![false; l.gates.len()])
            .collect();
        for k in (0..self.layers.len()).rev() {
            for g in (0..self.layers[k].gates.len()).rev() {
                let qs = self.layers[k].gates[g].sites.qubits();
                if qs.iter().any(|&q| inside[q]) {
                    out[k][g] = true;
                    for q in qs {
                        inside[q] = true;
                    }
                }
            }
        }
        out
    }
}

/// Two-qubit gate ensemble for random circuits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Haar-random gates; twirl and final layers are Haar-random too.
    Haar,
    /// Uniform Clifford gates; twirl and final layers are single-qubit Cliffords.
    Clifford,
    /// Hardware-efficient ansatz with uniform angles in `[0, 2 pi]`.
    Hwe,
    /// QAOA ansatz with uniform angles in `[0, 2 pi]`.
    Qaoa,
}

/// Structural switches for random circuits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CircuitOptions {
    /// Insert a random single-qubit layer before each noise layer.
    pub twirl: bool,
    /// End with a random single-qubit layer.
    pub final_layer: bool,
    /// Initial product state.
    pub init: InitialState,
}

impl Default for CircuitOptions {
    fn default() -> Self {
        CircuitOptions {
            twirl: false,
            final_layer: true,
            init: InitialState::Zero,
        }
    }
}

/// Random circuit on a coupling graph with Haar or Clifford gates.
pub fn random_circuit<R: Rng + ?Sized>(
    graph: &CouplingGraph,
    mode: GateMode,
    noise: &Channel,
    opts: CircuitOptions,
    rng: &mut R,
) -> Result<NoisyCircuit> {
    let n = graph.num_qubits();
    let single = |rng: &mut R| match mode {
        GateMode::Clifford => sample_clifford1(rng),
        _ => sample_haar1(rng),
    };
    let mut layers = Vec::with_capacity(graph.depth());
    for pairs in graph.layers() {
        let gates = pairs
            .iter()
            .map(|&(a, b)| {
                let spec = match mode {
                    GateMode::Haar => GateSpec::Haar2(sample_haar2(rng)),
                    GateMode::Clifford => GateSpec::Clifford2(sample_clifford2(rng)),
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "random_circuit does not build {mode:?} circuits"
                        )))
                    }
                };
                Gate::new(Sites::Two(a, b), spec)
            })
            .collect::<Result<Vec<_>>>()?;
        let twirl = opts.twirl.then(|| (0..n).map(|_| single(rng)).collect());
        layers.push(Layer { gates, twirl });
    }
    let final_layer = opts
        .final_layer
        .then(|| (0..n).map(|_| single(rng)).collect());
    NoisyCircuit::new(n, layers, noise.clone(), final_layer, opts.init)
}

/// Hardware-efficient circuit on a coupling graph; `thetas` holds one
/// parameter quadruple per gate in layer order. The circuit ends with noise.
pub fn hwe_circuit(
    graph: &CouplingGraph,
    thetas: &[[f64; 4]],
    noise: &Channel,
) -> Result<NoisyCircuit> {
    let count: usize = graph.layers().iter().map(|l| l.len()).sum();
    if thetas.len() != count {
        return Err(Error::InvalidArgument(format!(
            "{} parameter quadruples for {count} gates",
            thetas.len()
        )));
    }
    let mut it = thetas.iter();
    let layers = graph
        .layers()
        .iter()
        .map(|pairs| {
            let gates = pairs
                .iter()
                .map(|&(a, b)| {
                    let th = *it.next().expect("counted");
                    Gate::new(Sites::Two(a, b), GateSpec::HardwareEfficient(th))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Layer { gates, twirl: None })
        })
        .collect::<Result<Vec<_>>>()?;
    NoisyCircuit::new(
        graph.num_qubits(),
        layers,
        noise.clone(),
        None,
        InitialState::Zero,
    )
}

/// Hardware-efficient circuit with angles uniform in `[0, 2 pi]`.
pub fn random_hwe<R: Rng + ?Sized>(
    graph: &CouplingGraph,
    noise: &Channel,
    rng: &mut R,
) -> Result<NoisyCircuit> {
    let count: usize = graph.layers().iter().map(|l| l.len()).sum();
    let tau = std::f64::consts::TAU;
    let thetas: Vec<[f64; 4]> = (0..count)
        .map(|_| std::array::from_fn(|_| rng.random::<f64>() * tau))
        .collect();
    hwe_circuit(graph, &thetas, noise)
}

/// QAOA circuit `prod_i exp(-i beta_i H_x) exp(-i gamma_i H_z) |+>^n` with
/// `H_z = sum_i Z_i Z_{i+1}` on an open chain and `H_x = sum_i X_i`. Noise
/// follows each of the `2D` exponential layers; layer `2i` carries `gamma_i`
/// and layer `2i + 1` carries `beta_i`.
pub fn qaoa_circuit(n: usize, gammas: &[f64], betas: &[f64], noise: &Channel) -> Result<NoisyCircuit> {
    if gammas.len() != betas.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gammas but {} betas",
            gammas.len(),
            betas.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("QAOA needs at least one qubit".into()));
    }
    let mut layers = Vec::with_capacity(2 * gammas.len());
    for (&g, &b) in gammas.iter().zip(betas) {
        let zz = (0..n.saturating_sub(1))
            .map(|i| Gate::new(Sites::Two(i, i + 1), GateSpec::QaoaZz(g)))
            .collect::<Result<Vec<_>>>()?;
        layers.push(Layer {
            gates: zz,
            twirl: None,
        });
        let xs = (0..n)
            .map(|i| Gate::new(Sites::One(i), GateSpec::QaoaX(b)))
            .collect::<Result<Vec<_>>>()?;
        layers.push(Layer {
            gates: xs,
            twirl: None,
        });
    }
    NoisyCircuit::new(n, layers, noise.clone(), None, InitialState::Plus)
}

/// QAOA circuit with `rounds` rounds and angles uniform in `[0, 2 pi]`.
pub fn random_qaoa<R: Rng + ?Sized>(
    n: usize,
    rounds: usize,
    noise: &Channel,
    rng: &mut R,
) -> Result<NoisyCircuit> {
    let tau = std::f64::consts::TAU;
    let gammas: Vec<f64> = (0..rounds).map(|_| rng.random::<f64>() * tau).collect();
    let betas: Vec<f64> = (0..rounds).map(|_| rng.random::<f64>() * tau).collect();
    qaoa_circuit(n, &gammas, &betas, noise)
}

/// Qubit layout of a circuit configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    /// 1D brickwork with open boundary.
    Brickwork1d,
    /// Explicit pairs per layer; the list is cycled to reach the depth.
    Pairs { layers: Vec<Vec<(usize, usize)>> },
}

/// Circuit configuration as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitConfig {
    /// Qubit count.
    pub n: usize,
    /// Number of unitary layers (QAOA: number of rounds).
    pub depth: usize,
    /// Layout.
    #[serde(default = "default_geometry")]
    pub geometry: Geometry,
    /// Gate ensemble.
    pub gate_mode: GateMode,
    /// Noise channel.
    pub noise: ChannelSpec,
    /// Master seed.
    #[serde(default)]
    pub seed: u64,
    /// Random single-qubit layer before each noise layer.
    #[serde(default)]
    pub twirl: bool,
    /// Final random single-qubit layer (Haar and Clifford modes only).
    #[serde(default = "default_true")]
    pub final_layer: bool,
}

fn default_geometry() -> Geometry {
    Geometry::Brickwork1d
}

fn default_true() -> bool {
    true
}

impl CircuitConfig {
    /// Coupling graph described by the configuration.
    pub fn graph(&self) -> Result<CouplingGraph> {
        match &self.geometry {
            Geometry::Brickwork1d => CouplingGraph::brickwork_1d(self.n, self.depth),
            Geometry::Pairs { layers } => {
                if layers.is_empty() {
                    return Err(Error::Config("pairs geometry has no layers".into()));
                }
                let cycled = (0..self.depth).map(|k| layers[k % layers.len()].clone()).collect();
                CouplingGraph::new(self.n, cycled)
            }
        }
    }

    /// Samples circuit number `stream` of the ensemble.
    pub fn sample(&self, stream: u64) -> Result<NoisyCircuit> {
        let noise = self.noise.build()?;
        let mut rng = rng::stream(self.seed, stream);
        match self.gate_mode {
            GateMode::Haar | GateMode::Clifford => {
                let opts = CircuitOptions {
                    twirl: self.twirl,
                    final_layer: self.final_layer,
                    init: InitialState::Zero,
                };
                random_circuit(&self.graph()?, self.gate_mode, &noise, opts, &mut rng)
            }
            GateMode::Hwe => random_hwe(&self.graph()?, &noise, &mut rng),
            GateMode::Qaoa => random_qaoa(self.n, self.depth, &noise, &mut rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::{decompose_pauli4, to_matrix4};
    use crate::rng::stream;

    fn unitarity_err4(u: &Matrix4<C64>) -> f64 {
        (u.adjoint() * u - Matrix4::identity()).norm()
    }

    #[test]
    fn brickwork_examples() {
        let g = CouplingGraph::brickwork_1d(4, 2).unwrap();
        assert_eq!(g.layers(), &[vec![(0, 1), (2, 3)], vec![(1, 2)]]);
        let g = CouplingGraph::brickwork_1d(2, 3).unwrap();
        assert_eq!(g.layers(), &[vec![(0, 1)], vec![(0, 1)], vec![(0, 1)]]);
        let g = CouplingGraph::brickwork_1d(5, 2).unwrap();
        assert_eq!(g.layers(), &[vec![(0, 1), (2, 3)], vec![(1, 2), (3, 4)]]);
        assert!(CouplingGraph::brickwork_1d(1, 2).is_err());
    }

    #[test]
    fn overlapping_pairs_rejected() {
        assert!(CouplingGraph::new(3, vec![vec![(0, 1), (1, 2)]]).is_err());
        assert!(CouplingGraph::new(3, vec![vec![(0, 3)]]).is_err());
    }

    #[test]
    fn haar_samples_are_unitary() {
        let mut rng = stream(1, 0);
        for _ in 0..100 {
            assert!(unitarity_err4(&sample_haar2(&mut rng)) < 1e-12);
        }
    }

    #[test]
    fn hwe_examples() {
        assert!((hardware_efficient_gate([0.0; 4]) - cnot()).norm() < 1e-15);
        let u = hardware_efficient_gate([std::f64::consts::PI, 0.0, 0.0, 0.0]);
        let want = cnot() * Matrix2::identity().kronecker(&Pauli::X.matrix());
        // equal up to the global phase -i
        let phase = (want.adjoint() * u).trace() / 4.0;
        assert!((phase.norm() - 1.0).abs() < 1e-12);
        assert!((u - want * phase).norm() < 1e-12);
        let mut rng = stream(2, 0);
        for _ in 0..20 {
            let th: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>() * 6.3);
            assert!(unitarity_err4(&hardware_efficient_gate(th)) < 1e-12);
        }
    }

    #[test]
    fn clifford_samples_are_valid_and_match_unitaries() {
        let mut rng = stream(3, 0);
        for _ in 0..200 {
            let t = sample_clifford2(&mut rng);
            let u = t.to_unitary();
            assert!(unitarity_err4(&u) < 1e-12);
            for (g, img) in ["XI", "ZI", "IX", "IZ"].iter().zip(t.images()) {
                let gm = to_matrix4(&g.parse().unwrap());
                assert_eq!(decompose_pauli4(&(u * gm * u.adjoint())).unwrap(), *img);
            }
        }
    }

    #[test]
    fn single_qubit_cliffords_map_paulis_to_paulis() {
        let mut rng = stream(4, 0);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..2000 {
            let u = sample_clifford1(&mut rng);
            let r = crate::channels::rotation_of_unitary(&u);
            for v in r.iter() {
                assert!(v.abs() < 1e-12 || (v.abs() - 1.0).abs() < 1e-12);
            }
            let key: Vec<i8> = r.iter().map(|v| v.round() as i8).collect();
            seen.insert(key);
        }
        assert_eq!(seen.len(), 24);
    }

    #[test]
    fn qaoa_length_mismatch() {
        let ch = Channel::identity();
        assert!(qaoa_circuit(3, &[0.1, 0.2], &[0.3], &ch).is_err());
        let c = qaoa_circuit(3, &[0.1], &[0.3], &ch).unwrap();
        assert_eq!(c.depth(), 2);
        assert_eq!(c.init(), InitialState::Plus);
    }

    #[test]
    fn light_cone_of_brickwork() {
        let g = CouplingGraph::brickwork_1d(6, 3).unwrap();
        let c = hwe_circuit(&g, &vec![[0.0; 4]; 8], &Channel::identity()).unwrap();
        let cone = c.light_cone(&[0]);
        // layer 3 pairs (0,1),(2,3),(4,5); layer 2 (1,2),(3,4); layer 1 like layer 3
        assert_eq!(cone[2], vec![true, false, false]);
        assert_eq!(cone[1], vec![true, false]);
        assert_eq!(cone[0], vec![true, true, false]);
    }

    #[test]
    fn params_round_trip() {
        let g = CouplingGraph::brickwork_1d(3, 2).unwrap();
        let mut rng = stream(9, 0);
        let c = random_hwe(&g, &Channel::identity(), &mut rng).unwrap();
        let r = ParamRef {
            layer: 1,
            gate: 0,
            slot: 2,
        };
        let c2 = c.with_param(r, 1.25).unwrap();
        assert_eq!(c2.param(r), Some(1.25));
        assert!(c.with_param(ParamRef { layer: 0, gate: 0, slot: 4 }, 0.0).is_err());
    }

    #[test]
    fn config_parses_and_samples_deterministically() {
        let txt = r#"
n = 4
depth = 3
gate_mode = "haar"
seed = 17
[noise]
kind = "composed"
channels = [{ kind = "depolarizing", p = 0.2 }, { kind = "amplitude_damping", q = 0.2 }]
"#;
        let cfg: CircuitConfig = toml::from_str(txt).unwrap();
        assert_eq!(cfg.geometry, Geometry::Brickwork1d);
        let a = cfg.sample(5).unwrap();
        let b = cfg.sample(5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, cfg.sample(6).unwrap());
        assert_eq!(a.depth(), 3);
        assert!(a.final_layer().is_some());
    }
}
