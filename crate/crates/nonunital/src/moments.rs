//! Ensemble statistics of noisy random circuits: Monte-Carlo estimators with
//! jackknife error bars, the exact second-moment recursion for 2-design
//! circuits, gradient sampling, and the closed-form bound calculators.

use std::collections::BTreeMap;

use nalgebra::Matrix4;
use rayon::prelude::*;

use crate::channels::{Channel, ChannelNormalForm};
use crate::circuit::{
    sample_clifford1, sample_clifford2, sample_haar1, sample_haar2, CircuitConfig, CouplingGraph,
    Gate, GateMode, GateSpec, NoisyCircuit, ParamRef, Sites, CLIFFORD2_ORDER,
};
use crate::dense_sim::{unitary_ptm, DenseSimulator, DensityMatrix, PauliVector, SparsePtm2};
use crate::error::{Error, Result};
use crate::lightcone::Estimator;
use crate::pauli::{Pauli, PauliString};
use crate::rng;

/// Step of the central-difference fallback.
pub const FD_STEP: f64 = 1e-4;

/// Largest number of distinct supports tracked by [`exact_second_moment`].
pub const EXACT_STATE_CAP: usize = 1 << 20;

/// Mean and variance of a sample with jackknife standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MCStat {
    /// Sample mean.
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Jackknife standard error of the mean.
    pub stderr_mean: f64,
    /// Jackknife standard error of the variance.
    pub stderr_var: f64,
    /// Number of samples.
    pub samples: usize,
    /// Seed the samples were drawn with.
    pub seed: u64,
}

impl MCStat {
    /// Statistics of `xs`. Needs at least two samples.
    pub fn from_samples(xs: &[f64], seed: u64) -> Result<Self> {
        let n = xs.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 samples, got {n}"
            )));
        }
        let nf = n as f64;
        let mean = xs.iter().sum::<f64>() / nf;
        // centred sums keep the leave-one-out formulas well conditioned
        let d: Vec<f64> = xs.iter().map(|x| x - mean).collect();
        let s2: f64 = d.iter().map(|v| v * v).sum();
        let variance = s2 / (nf - 1.0);
        let stderr_mean = (variance / nf).sqrt();
        let stderr_var = if n >= 3 {
            // leave-one-out variances; the centred sum of d is zero
            let loo: Vec<f64> = d
                .iter()
                .map(|&di| {
                    let m = -di / (nf - 1.0);
                    (s2 - di * di - (nf - 1.0) * m * m) / (nf - 2.0)
                })
                .collect();
            let lbar = loo.iter().sum::<f64>() / nf;
            ((nf - 1.0) / nf * loo.iter().map(|v| (v - lbar).powi(2)).sum::<f64>()).sqrt()
        } else {
            // Gaussian-theory error; the jackknife needs three samples
            variance * (2.0 / (nf - 1.0)).sqrt()
        };
        Ok(MCStat {
            mean,
            variance,
            stderr_mean,
            stderr_var,
            samples: n,
            seed,
        })
    }

    /// Statistics of the squares of `xs`; `mean` then estimates the second
    /// moment.
    pub fn second_moment(xs: &[f64], seed: u64) -> Result<Self> {
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        Self::from_samples(&sq, seed)
    }
}

/// How `Tr(P Phi(rho_0))` is evaluated for a sampled circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    /// Full density-matrix simulation.
    #[default]
    Dense,
    /// Exact Heisenberg propagation restricted to the light cone.
    LightCone,
}

/// `Tr(P Phi(rho_0))` with the chosen backend.
pub fn expectation(circ: &NoisyCircuit, p: &PauliString, backend: Backend) -> Result<f64> {
    match backend {
        Backend::Dense => DenseSimulator::default().expectation(circ, p),
        Backend::LightCone => {
            if p.is_identity() {
                return Ok(p.sign() as f64);
            }
            Ok(Estimator::default().run(circ, p, circ.depth(), 0.0)?.value)
        }
    }
}

fn with_seed(cfg: &CircuitConfig, seed: u64) -> CircuitConfig {
    CircuitConfig {
        seed,
        ..cfg.clone()
    }
}

/// Evaluates `f` on samples `0..n` in parallel and returns the values in
/// sample order.
fn sample_values<F>(n: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(u64) -> Result<f64> + Sync + Send,
{
    (0..n as u64).into_par_iter().map(f).collect()
}

/// Mean and variance of `Tr(P Phi(rho_0))` over `n` circuits drawn from
/// `cfg` with master seed `seed`.
pub fn mc_variance(
    cfg: &CircuitConfig,
    p: &PauliString,
    n: usize,
    seed: u64,
    backend: Backend,
) -> Result<MCStat> {
    let cfg = with_seed(cfg, seed);
    let xs = sample_values(n, |i| expectation(&cfg.sample(i)?, p, backend))?;
    MCStat::from_samples(&xs, seed)
}

/// Samples `Tr(Z_q Phi_L(rho_0))` for every depth `L = 1..=graph.depth()`
/// from one forward pass per sample. Each pass draws a fresh circuit with a
/// random single-qubit layer before every noise layer; the value at depth
/// `L` uses the first `L` layers followed by an independent random
/// single-qubit rotation on qubit `q`. Returns `out[L - 1][sample]`.
///
/// Gates are drawn from `mode` (Haar or Clifford); both are 2-designs, so
/// second moments agree with the Haar ensemble.
pub fn prefix_samples(
    graph: &CouplingGraph,
    mode: GateMode,
    noise: &Channel,
    q: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let nq = graph.num_qubits();
    if q >= nq {
        return Err(Error::InvalidArgument(format!("qubit {q} out of range")));
    }
    if !matches!(mode, GateMode::Haar | GateMode::Clifford) {
        return Err(Error::InvalidArgument(format!(
            "prefix sampling needs a 2-design gate mode, got {mode:?}"
        )));
    }
    let noise_ptm = noise.ptm().0;
    let depth = graph.depth();
    let rows: Vec<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, i);
            let single = |rng: &mut rng::StreamRng| match mode {
                GateMode::Clifford => sample_clifford1(rng),
                _ => sample_haar1(rng),
            };
            let mut v = PauliVector::product(nq, crate::circuit::InitialState::Zero);
            let mut out = Vec::with_capacity(depth);
            for pairs in graph.layers() {
                for &(a, b) in pairs {
                    let spec = match mode {
                        GateMode::Clifford => GateSpec::Clifford2(sample_clifford2(&mut rng)),
                        _ => GateSpec::Haar2(sample_haar2(&mut rng)),
                    };
                    let g = Gate::new(Sites::Two(a, b), spec)?;
                    let t = SparsePtm2::from_gate(&g).expect("two-qubit gate");
                    v.apply_ptm_2q(a, b, &t);
                }
                for site in 0..nq {
                    let m: Matrix4<f64> = noise_ptm * unitary_ptm(&single(&mut rng));
                    v.apply_ptm_1q(site, &m);
                }
                let r = unitary_ptm(&single(&mut rng));
                let b = v.bloch(q);
                out.push(r[(3, 1)] * b[0] + r[(3, 2)] * b[1] + r[(3, 3)] * b[2]);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok((0..depth)
        .map(|l| rows.iter().map(|r| r[l]).collect())
        .collect())
}

/// Product reference state seen by [`exact_second_moment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    /// Identical pure product state on every qubit.
    PureProduct,
    /// `I / 2^n`.
    MaximallyMixed,
}

/// Exact `E[Tr(P Phi(rho_0))^2]` over circuits on `graph` with 2-design
/// two-qubit gates, a single-qubit 2-design layer before every noise layer,
/// and (if `final_layer`) a final single-qubit 2-design layer.
///
/// The second-moment operator is carried as weights over supports; every
/// supported site holds a uniformly distributed axis. Going backwards
/// through a layer, the adjoint noise sends a supported site to the
/// identity with weight `|t|^2 / 3` or keeps it with weight `|D|^2 / 3`,
/// and a two-qubit gate touching the support spreads the weight uniformly
/// over the 15 non-identity Paulis of its pair. A support `S` finally
/// contributes `(1/3)^{|S|}` against a pure product state and `[S = {}]`
/// against `I / 2^n`.
pub fn exact_second_moment(
    graph: &CouplingGraph,
    channel: &Channel,
    p: &PauliString,
    final_layer: bool,
    reference: Reference,
) -> Result<f64> {
    let n = graph.num_qubits();
    if p.num_qubits() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: p.num_qubits(),
        });
    }
    if n > 64 {
        return Err(Error::StateSpaceCap {
            needed: n,
            cap: 64,
        });
    }
    if graph.depth() == 0 {
        return Err(Error::InvalidArgument("graph has no layers".into()));
    }
    let t = channel.ptm().0;
    let id_w = |a: usize| t[(a, 0)] * t[(a, 0)];
    let keep_w = |a: usize| (1..4).map(|b| t[(a, b)] * t[(a, b)]).sum::<f64>();
    let id_u = (1..4).map(id_w).sum::<f64>() / 3.0;
    let keep_u = (1..4).map(keep_w).sum::<f64>() / 3.0;

    let mut mask = 0u64;
    for q in p.support() {
        mask |= 1 << q;
    }
    let mut state: BTreeMap<u64, f64> = BTreeMap::new();
    state.insert(mask, 1.0);

    let add = |m: &mut BTreeMap<u64, f64>, k: u64, w: f64| {
        if w != 0.0 {
            *m.entry(k).or_insert(0.0) += w;
        }
    };
    let check = |m: &BTreeMap<u64, f64>| {
        if m.len() > EXACT_STATE_CAP {
            Err(Error::StateSpaceCap {
                needed: m.len(),
                cap: EXACT_STATE_CAP,
            })
        } else {
            Ok(())
        }
    };

    for (step, pairs) in graph.layers().iter().rev().enumerate() {
        // adjoint noise, site by site
        for q in 0..n {
            let bit = 1u64 << q;
            let (wi, wk) = if step == 0 && !final_layer {
                let a = p.get(q).index();
                (id_w(a), keep_w(a))
            } else {
                (id_u, keep_u)
            };
            let mut next = BTreeMap::new();
            for (&s, &w) in &state {
                if s & bit == 0 {
                    add(&mut next, s, w);
                } else {
                    add(&mut next, s & !bit, w * wi);
                    add(&mut next, s, w * wk);
                }
            }
            state = next;
        }
        // adjoint two-qubit gates
        for &(a, b) in pairs.iter().rev() {
            let (ba, bb) = (1u64 << a, 1u64 << b);
            let mut next = BTreeMap::new();
            for (&s, &w) in &state {
                if s & (ba | bb) == 0 {
                    add(&mut next, s, w);
                } else {
                    let base = s & !(ba | bb);
                    add(&mut next, base | ba | bb, w * 9.0 / 15.0);
                    add(&mut next, base | ba, w * 3.0 / 15.0);
                    add(&mut next, base | bb, w * 3.0 / 15.0);
                }
            }
            state = next;
            check(&state)?;
        }
    }
    Ok(state
        .iter()
        .map(|(&s, &w)| match reference {
            Reference::PureProduct => w * (1.0 / 3.0f64).powi(s.count_ones() as i32),
            Reference::MaximallyMixed => {
                if s == 0 {
                    w
                } else {
                    0.0
                }
            }
        })
        .sum())
}

/// Inputs of [`bounds`] besides the channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    /// Qubit count.
    pub n: usize,
    /// Pauli weight `|P|`.
    pub weight: usize,
    /// Circuit depth `L`.
    pub depth: usize,
    /// Layer `k` (1-based, `k <= L`) of the differentiated gate.
    pub layer: usize,
    /// Depolarizing component `p`, when the channel has one.
    pub p_dep: Option<f64>,
    /// `|H_mu|_inf` of the differentiated generator.
    pub h_norm: f64,
}

/// Every closed-form bound at one parameter point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundSet {
    /// `(|t|^2 / 3)^{|P|}`.
    pub var_lower: f64,
    /// `c^{|P|}`.
    pub var_upper: f64,
    /// `4 c^{|P| + L - 1}`.
    pub trunc_sq: f64,
    /// `4 c^{|P| + L - k - 1}`.
    pub grad_upper: f64,
    /// `sum_Q 1/2 (D_Q^2 |t|^2 / (3 |C_2|))^{|P| (L - k + 1)} |H_mu|_inf`.
    pub grad_lower: f64,
    /// `((1 + |t|^2) / 2)^n`.
    pub purity_lower: f64,
    /// `((1 + |t|^2 + |D|^2) / 2)^n`.
    pub purity_upper: f64,
    /// `(1 - p)^{2L} + |t| (1 - (1 - p)^{2L}) / (2p - p^2)`.
    pub delta_l: Option<f64>,
    /// `sqrt(2n) (1 - p)^L`.
    pub sdpi_td: Option<f64>,
    /// `n b^L`, absent when `b` is not defined.
    pub wc_td: Option<f64>,
}

/// Evaluates every bound for the channel with normal form `nf`.
pub fn bounds(nf: &ChannelNormalForm, inp: &BoundInputs) -> BoundSet {
    let prm = nf.params();
    let c = prm.c;
    let w = inp.weight as i32;
    let l = inp.depth as i32;
    let k = inp.layer as i32;
    let nn = inp.n as i32;
    let grad_exp = w * (l - k + 1);
    let grad_lower = nf
        .d
        .iter()
        .map(|dq| 0.5 * (dq * dq * prm.t_norm2 / (3.0 * CLIFFORD2_ORDER as f64)).powi(grad_exp))
        .sum::<f64>()
        * inp.h_norm;
    let delta_l = inp.p_dep.map(|p| {
        let a = (1.0 - p).powi(2 * l);
        a + prm.t_norm2.sqrt() * (1.0 - a) / (2.0 * p - p * p)
    });
    BoundSet {
        var_lower: (prm.t_norm2 / 3.0).powi(w),
        var_upper: c.powi(w),
        trunc_sq: 4.0 * c.powi(w + l - 1),
        grad_upper: 4.0 * c.powi(w + l - k - 1),
        grad_lower,
        purity_lower: ((1.0 + prm.t_norm2) / 2.0).powi(nn),
        purity_upper: ((1.0 + prm.t_norm2 + prm.d_norm2) / 2.0).powi(nn),
        delta_l,
        sdpi_td: inp.p_dep.map(|p| (2.0 * inp.n as f64).sqrt() * (1.0 - p).powi(l)),
        wc_td: nf.w1_factor().map(|b| inp.n as f64 * b.powi(l)),
    }
}

/// `2^{n+1} c^{(L-1)/2}`, the ensemble bound on the mean trace distance
/// between the outputs of two input states.
pub fn avg_trace_distance_bound(n: usize, c: f64, depth: usize) -> f64 {
    2f64.powi(n as i32 + 1) * c.powf((depth as f64 - 1.0) / 2.0)
}

/// `Var / (8 sup^2)`: lower bound on the probability that a zero-mean
/// quantity deviates by more than half its standard deviation scale.
pub fn deviation_bound(var: f64, sup_abs: f64) -> f64 {
    var / (8.0 * sup_abs * sup_abs)
}

/// `mean / (2 sup)`: lower bound on the probability that a non-negative
/// quantity exceeds half its mean.
pub fn first_moment_bound(mean: f64, sup_abs: f64) -> f64 {
    mean / (2.0 * sup_abs)
}

/// How a partial derivative is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMethod {
    /// Parameter shift where available, central difference otherwise.
    #[default]
    Auto,
    /// Exact parameter-shift rule.
    ParameterShift,
    /// Central difference with step [`FD_STEP`].
    CentralDifference,
}

/// `dC/dx` where `x` is shared by every parameter in `refs`.
pub fn derivative(
    circ: &NoisyCircuit,
    refs: &[ParamRef],
    p: &PauliString,
    method: DerivativeMethod,
    backend: Backend,
) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::InvalidArgument("no parameter selected".into()));
    }
    let value = |r: ParamRef| {
        circ.param(r)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter at {r:?}")))
    };
    let rules: Option<Vec<(f64, f64)>> = refs
        .iter()
        .map(|&r| circ.gate(r).and_then(|g| g.shift_rule(r.slot)))
        .collect();
    let use_shift = match method {
        DerivativeMethod::ParameterShift => {
            if rules.is_none() {
                return Err(Error::InvalidArgument(
                    "parameter has no shift rule".into(),
                ));
            }
            true
        }
        DerivativeMethod::CentralDifference => false,
        DerivativeMethod::Auto => rules.is_some(),
    };
    if use_shift {
        let rules = rules.expect("checked");
        let mut acc = 0.0;
        for (&r, &(s, f)) in refs.iter().zip(&rules) {
            let x = value(r)?;
            let plus = expectation(&circ.with_param(r, x + s)?, p, backend)?;
            let minus = expectation(&circ.with_param(r, x - s)?, p, backend)?;
            acc += f * (plus - minus);
        }
        Ok(acc)
    } else {
        let shifted = |h: f64| -> Result<NoisyCircuit> {
            let mut c = circ.clone();
            for &r in refs {
                c = c.with_param(r, value(r)? + h)?;
            }
            Ok(c)
        };
        let plus = expectation(&shifted(FD_STEP)?, p, backend)?;
        let minus = expectation(&shifted(-FD_STEP)?, p, backend)?;
        Ok((plus - minus) / (2.0 * FD_STEP))
    }
}

/// Which parameter of a layer is differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamChoice {
    /// Slot `slot` of one hardware-efficient gate; `gate = None` picks the
    /// lowest-index gate inside the observable's light cone.
    Hwe { gate: Option<usize>, slot: usize },
    /// The angle shared by every parametrized gate of the layer (QAOA).
    Tied,
}

/// Selected parameter references plus whether they lie in the light cone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradTarget {
    /// Circuit layer (0-based).
    pub layer: usize,
    /// Parameter references sharing one angle.
    pub refs: Vec<ParamRef>,
    /// True when some selected gate lies in the light cone of the observable.
    pub in_cone: bool,
}

/// Resolves `choice` in layer `layer` (0-based) of `circ`.
pub fn select_target(
    circ: &NoisyCircuit,
    layer: usize,
    choice: ParamChoice,
    p: &PauliString,
) -> Result<GradTarget> {
    let l = circ
        .layers()
        .get(layer)
        .ok_or_else(|| Error::InvalidArgument(format!("layer {layer} out of range")))?;
    let cone = circ.light_cone(&p.support());
    let refs: Vec<ParamRef> = match choice {
        ParamChoice::Hwe { gate, slot } => {
            let g = match gate {
                Some(g) => g,
                None => (0..l.gates.len()).find(|&g| cone[layer][g]).unwrap_or(0),
            };
            let r = ParamRef { layer, gate: g, slot };
            if circ.param(r).is_none() {
                return Err(Error::InvalidArgument(format!("no parameter at {r:?}")));
            }
            vec![r]
        }
        ParamChoice::Tied => (0..l.gates.len())
            .filter(|&g| l.gates[g].num_params() > 0)
            .map(|g| ParamRef { layer, gate: g, slot: 0 })
            .collect(),
    };
    if refs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} has no parameters"
        )));
    }
    let in_cone = refs.iter().any(|r| cone[layer][r.gate]);
    Ok(GradTarget { layer, refs, in_cone })
}

/// Largest layer (0-based) holding a parametrized gate in the light cone of
/// `p`.
pub fn last_in_cone_layer(circ: &NoisyCircuit, p: &PauliString) -> Option<usize> {
    let cone = circ.light_cone(&p.support());
    (0..circ.depth()).rev().find(|&k| {
        circ.layers()[k]
            .gates
            .iter()
            .enumerate()
            .any(|(g, gate)| cone[k][g] && gate.num_params() > 0)
    })
}

/// Derivative samples over `n` parameter draws from `cfg` (HWE or QAOA).
/// The gate structure does not depend on the draw, so the target is
/// resolved once on sample 0.
#[allow(clippy::too_many_arguments)]
pub fn gradient_samples(
    cfg: &CircuitConfig,
    layer: usize,
    choice: ParamChoice,
    p: &PauliString,
    n: usize,
    seed: u64,
    method: DerivativeMethod,
    backend: Backend,
) -> Result<(Vec<f64>, GradTarget)> {
    let cfg = with_seed(cfg, seed);
    let target = select_target(&cfg.sample(0)?, layer, choice, p)?;
    let xs = sample_values(n, |i| {
        derivative(&cfg.sample(i)?, &target.refs, p, method, backend)
    })?;
    Ok((xs, target))
}

/// `Var[dC/dx]` over `n` parameter draws.
#[allow(clippy::too_many_arguments)]
pub fn grad_variance_scan(
    cfg: &CircuitConfig,
    layer: usize,
    choice: ParamChoice,
    p: &PauliString,
    n: usize,
    seed: u64,
    method: DerivativeMethod,
    backend: Backend,
) -> Result<(MCStat, GradTarget)> {
    let (xs, target) = gradient_samples(cfg, layer, choice, p, n, seed, method, backend)?;
    Ok((MCStat::from_samples(&xs, seed)?, target))
}

/// Purity `Tr(Phi(rho_0)^2)` over `n` circuits.
pub fn purity_mc(cfg: &CircuitConfig, n: usize, seed: u64) -> Result<MCStat> {
    let cfg = with_seed(cfg, seed);
    let sim = DenseSimulator::default();
    let xs = sample_values(n, |i| Ok(sim.run_from_init(&cfg.sample(i)?)?.purity()))?;
    MCStat::from_samples(&xs, seed)
}

/// Fidelity and projected-kernel statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelStats {
    /// `Tr(Phi(rho_0) Phi'(rho_0))`.
    pub fidelity: MCStat,
    /// `sum_k |rho_k - rho'_k|_2^2` over single-qubit marginals.
    pub projected_q: MCStat,
}

/// Kernel statistics over `n` independent circuit pairs.
pub fn kernel_mc(cfg: &CircuitConfig, n: usize, seed: u64) -> Result<KernelStats> {
    let cfg = with_seed(cfg, seed);
    let sim = DenseSimulator::default();
    let pairs: Vec<(f64, f64)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let a = sim.run_from_init(&cfg.sample(2 * i)?)?;
            let b = sim.run_from_init(&cfg.sample(2 * i + 1)?)?;
            let q = (0..a.num_qubits())
                .map(|k| (a.reduced_1q_matrix(k) - b.reduced_1q_matrix(k)).norm_squared())
                .sum();
            Ok((a.overlap(&b), q))
        })
        .collect::<Result<_>>()?;
    let (f, q): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok(KernelStats {
        fidelity: MCStat::from_samples(&f, seed)?,
        projected_q: MCStat::from_samples(&q, seed)?,
    })
}

/// `|Phi(rho) - Phi(sigma)|_1` over `n` circuits.
pub fn trace_distance_decay_mc(
    cfg: &CircuitConfig,
    rho: &DensityMatrix,
    sigma: &DensityMatrix,
    n: usize,
    seed: u64,
) -> Result<MCStat> {
    let cfg = with_seed(cfg, seed);
    let sim = DenseSimulator::default();
    let xs = sample_values(n, |i| {
        let c = cfg.sample(i)?;
        Ok(sim.run(&c, rho)?.trace_distance(&sim.run(&c, sigma)?))
    })?;
    MCStat::from_samples(&xs, seed)
}

/// Single-qubit Pauli `P` on qubit `q` of `n`.
pub fn local_pauli(n: usize, q: usize, p: Pauli) -> PauliString {
    PauliString::single(n, q, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::ChannelSpec;
    use crate::circuit::Geometry;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cfg(n: usize, depth: usize, mode: GateMode, noise: ChannelSpec) -> CircuitConfig {
        CircuitConfig {
            n,
            depth,
            geometry: Geometry::Brickwork1d,
            gate_mode: mode,
            noise,
            seed: 0,
            twirl: true,
            final_layer: true,
        }
    }

    #[test]
    fn mcstat_known_values() {
        let s = MCStat::from_samples(&[1.0, 2.0, 3.0, 4.0], 7).unwrap();
        assert_abs_diff_eq!(s.mean, 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.variance, 5.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.stderr_mean, (5.0 / 12.0f64).sqrt(), epsilon = 1e-15);
        // leave-one-out variances: 7/3, 7/3, 7/3 ... by hand: {2,3,4}->1, {1,3,4}->7/3,
        // {1,2,4}->7/3, {1,2,3}->1
        let loo = [1.0, 7.0 / 3.0, 7.0 / 3.0, 1.0];
        let m: f64 = loo.iter().sum::<f64>() / 4.0;
        let want = (0.75 * loo.iter().map(|v| (v - m).powi(2)).sum::<f64>()).sqrt();
        assert_abs_diff_eq!(s.stderr_var, want, epsilon = 1e-14);
        assert_eq!(s.seed, 7);
        assert!(MCStat::from_samples(&[1.0], 0).is_err());
        let two = MCStat::from_samples(&[0.0, 1.0], 0).unwrap();
        assert!(two.stderr_var.is_finite() && two.stderr_var > 0.0);
    }

    proptest! {
        #[test]
        fn jackknife_mean_error_matches_closed_form(xs in prop::collection::vec(-5.0f64..5.0, 3..40)) {
            let s = MCStat::from_samples(&xs, 0).unwrap();
            let n = xs.len() as f64;
            let loo: Vec<f64> = xs.iter().map(|x| (xs.iter().sum::<f64>() - x) / (n - 1.0)).collect();
            let lbar = loo.iter().sum::<f64>() / n;
            let jk = ((n - 1.0) / n * loo.iter().map(|v| (v - lbar).powi(2)).sum::<f64>()).sqrt();
            prop_assert!((s.stderr_mean - jk).abs() <= 1e-10 * (1.0 + jk));
            prop_assert!(s.variance >= 0.0);
        }
    }

    #[test]
    fn exact_second_moment_single_qubit_example() {
        let g = CouplingGraph::new(1, vec![vec![]]).unwrap();
        let amp = Channel::amplitude_damping(0.2).unwrap();
        let z = PauliString::single(1, 0, Pauli::Z);
        let v = exact_second_moment(&g, &amp, &z, false, Reference::PureProduct).unwrap();
        assert_abs_diff_eq!(v, 0.04 + 0.64 / 3.0, epsilon = 1e-15);
        // with a final random layer the Z axis is averaged first:
        // |t|^2 / 3 + (|D|^2 / 3) / 3
        let v = exact_second_moment(&g, &amp, &z, true, Reference::PureProduct).unwrap();
        assert_abs_diff_eq!(v, 0.04 / 3.0 + (2.0 * 0.8 + 0.64) / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn unital_noise_against_maximally_mixed_is_zero() {
        let g = CouplingGraph::brickwork_1d(4, 3).unwrap();
        let dep = Channel::depolarizing(0.3).unwrap();
        let p = PauliString::single(4, 1, Pauli::X);
        let v = exact_second_moment(&g, &dep, &p, true, Reference::MaximallyMixed).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn exact_second_moment_matches_dense_mc() {
        // n = 4 brickwork, L = 3, |P| = 1
        let spec = ChannelSpec::dep_amp(0.1, 0.3);
        let ch = spec.build().unwrap();
        let g = CouplingGraph::brickwork_1d(4, 3).unwrap();
        let p = PauliString::single(4, 1, Pauli::Z);
        let exact = exact_second_moment(&g, &ch, &p, true, Reference::PureProduct).unwrap();
        let c = cfg(4, 3, GateMode::Haar, spec);
        let xs: Vec<f64> = (0..4000u64)
            .map(|i| expectation(&with_seed(&c, 11).sample(i).unwrap(), &p, Backend::Dense).unwrap())
            .collect();
        let s = MCStat::second_moment(&xs, 11).unwrap();
        assert!((s.mean - exact).abs() <= 4.0 * s.stderr_mean, "{} vs {exact}", s.mean);
    }

    #[test]
    fn exact_second_moment_sandwich_and_global_concentration() {
        for ch in [
            Channel::amplitude_damping(0.2).unwrap(),
            Channel::dep_amp(0.2, 0.2).unwrap(),
            Channel::dep_amp(0.05, 0.6).unwrap(),
        ] {
            let prm = ch.params();
            for n in 2..=6 {
                for l in [2, 5, 12] {
                    let g = CouplingGraph::brickwork_1d(n, l).unwrap();
                    for w in 1..=2.min(n) {
                        let ops: Vec<Pauli> =
                            (0..n).map(|q| if q < w { Pauli::Z } else { Pauli::I }).collect();
                        let p = PauliString::from_paulis(&ops);
                        let v = exact_second_moment(&g, &ch, &p, true, Reference::PureProduct).unwrap();
                        assert!(v >= (prm.t_norm2 / 3.0).powi(w as i32) - 1e-15);
                        assert!(v <= prm.c.powi(w as i32) + 1e-15);
                    }
                    let global = PauliString::from_paulis(&vec![Pauli::X; n]);
                    let v = exact_second_moment(&g, &ch, &global, true, Reference::PureProduct).unwrap();
                    assert!(v <= prm.c.powi(n as i32) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn prefix_samples_match_exact_second_moment() {
        let ch = Channel::dep_amp(0.2, 0.2).unwrap();
        let g = CouplingGraph::brickwork_1d(3, 4).unwrap();
        let rows = prefix_samples(&g, GateMode::Clifford, &ch, 0, 20_000, 3).unwrap();
        let p = PauliString::single(3, 0, Pauli::Z);
        for (l, xs) in rows.iter().enumerate() {
            let gl = CouplingGraph::brickwork_1d(3, l + 1).unwrap();
            let exact = exact_second_moment(&gl, &ch, &p, true, Reference::PureProduct).unwrap();
            let s = MCStat::second_moment(xs, 3).unwrap();
            assert!((s.mean - exact).abs() <= 4.0 * s.stderr_mean, "L = {}: {} vs {exact}", l + 1, s.mean);
        }
    }

    #[test]
    fn bounds_special_cases() {
        let inp = BoundInputs {
            n: 3,
            weight: 1,
            depth: 4,
            layer: 4,
            p_dep: None,
            h_norm: 0.5,
        };
        let dep = Channel::depolarizing(0.3).unwrap();
        assert_eq!(bounds(dep.normal_form(), &inp).var_lower, 0.0);
        let amp = Channel::amplitude_damping(0.2).unwrap();
        let b = bounds(amp.normal_form(), &inp);
        assert_abs_diff_eq!(b.var_lower, 0.04 / 3.0, epsilon = 1e-16);
        assert!(b.var_lower <= b.var_upper);
        assert!(b.delta_l.is_none() && b.sdpi_td.is_none());
        // replacer onto |0>: D = 0
        let k0 = nalgebra::Matrix2::new(
            crate::C64::new(1.0, 0.0),
            crate::C64::new(0.0, 0.0),
            crate::C64::new(0.0, 0.0),
            crate::C64::new(0.0, 0.0),
        );
        let k1 = nalgebra::Matrix2::new(
            crate::C64::new(0.0, 0.0),
            crate::C64::new(1.0, 0.0),
            crate::C64::new(0.0, 0.0),
            crate::C64::new(0.0, 0.0),
        );
        let rep = Channel::from_kraus(crate::channels::KrausChannel::new(vec![k0, k1]).unwrap()).unwrap();
        assert_eq!(bounds(rep.normal_form(), &inp).grad_lower, 0.0);
    }

    #[test]
    fn delta_l_decreases_to_its_limit() {
        let ch = Channel::dep_amp(0.3, 0.1).unwrap();
        let tn = ch.params().t_norm2.sqrt();
        let p = 0.3;
        let limit = tn / (2.0 * p - p * p);
        let mut prev = f64::INFINITY;
        for l in 1..40 {
            let inp = BoundInputs { n: 2, weight: 1, depth: l, layer: 1, p_dep: Some(p), h_norm: 1.0 };
            let d = bounds(ch.normal_form(), &inp).delta_l.unwrap();
            assert!(d <= prev && d >= limit - 1e-15);
            prev = d;
        }
        assert_abs_diff_eq!(prev, limit, epsilon = 1e-12);
    }

    #[test]
    fn probability_helpers() {
        assert_abs_diff_eq!(deviation_bound(0.8, 1.0), 0.1, epsilon = 1e-16);
        assert_eq!(deviation_bound(0.0, 1.0), 0.0);
        assert_abs_diff_eq!(first_moment_bound(0.5, 1.0), 0.25, epsilon = 1e-16);
    }

    #[test]
    fn shift_rule_agrees_with_central_difference() {
        let noise = ChannelSpec::dep_amp(0.2, 0.2);
        for mode in [GateMode::Hwe, GateMode::Qaoa] {
            let c = CircuitConfig {
                twirl: false,
                final_layer: false,
                ..cfg(4, 3, mode, noise.clone())
            };
            let p = match mode {
                GateMode::Qaoa => PauliString::single(4, 0, Pauli::X),
                _ => PauliString::single(4, 0, Pauli::Z),
            };
            for i in 0..50u64 {
                let circ = with_seed(&c, 5).sample(i).unwrap();
                let layer = (i as usize) % circ.depth();
                let choice = match mode {
                    GateMode::Qaoa => ParamChoice::Tied,
                    _ => ParamChoice::Hwe { gate: Some(0), slot: (i as usize) % 4 },
                };
                let t = select_target(&circ, layer, choice, &p).unwrap();
                let a = derivative(&circ, &t.refs, &p, DerivativeMethod::ParameterShift, Backend::LightCone).unwrap();
                let b = derivative(&circ, &t.refs, &p, DerivativeMethod::CentralDifference, Backend::LightCone).unwrap();
                assert!((a - b).abs() < 1e-6, "{mode:?} sample {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn backends_agree() {
        let c = cfg(5, 4, GateMode::Haar, ChannelSpec::dep_amp(0.1, 0.2));
        let p = PauliString::single(5, 2, Pauli::Y);
        for i in 0..10 {
            let circ = c.sample(i).unwrap();
            let a = expectation(&circ, &p, Backend::Dense).unwrap();
            let b = expectation(&circ, &p, Backend::LightCone).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-11);
        }
    }

    #[test]
    fn unitary_noise_keeps_purity_one() {
        let u = crate::circuit::rx(0.3);
        let spec = ChannelSpec::Kraus {
            ops: vec![(0..4).map(|i| [u[(i / 2, i % 2)].re, u[(i / 2, i % 2)].im]).collect()],
        };
        let c = cfg(3, 3, GateMode::Haar, spec);
        let s = purity_mc(&c, 10, 1).unwrap();
        assert_abs_diff_eq!(s.mean, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn trace_distance_trivial_cases() {
        let c = cfg(3, 2, GateMode::Haar, ChannelSpec::dep_amp(0.2, 0.2));
        let rho = DensityMatrix::zero_state(3);
        let s = trace_distance_decay_mc(&c, &rho, &rho, 5, 2).unwrap();
        assert_eq!(s.mean, 0.0);
        let sigma = DensityMatrix::maximally_mixed(3);
        let replacer = ChannelSpec::AmplitudeDamping { q: 1.0 };
        let c = cfg(3, 2, GateMode::Haar, replacer);
        let s = trace_distance_decay_mc(&c, &rho, &sigma, 5, 2).unwrap();
        assert!(s.mean.abs() < 1e-10);
    }

    #[test]
    fn gradient_mean_is_zero() {
        let c = CircuitConfig {
            twirl: false,
            final_layer: false,
            ..cfg(4, 4, GateMode::Hwe, ChannelSpec::dep_amp(0.2, 0.2))
        };
        let p = PauliString::single(4, 0, Pauli::Z);
        let (s, t) = grad_variance_scan(
            &c,
            2,
            ParamChoice::Hwe { gate: None, slot: 1 },
            &p,
            400,
            9,
            DerivativeMethod::Auto,
            Backend::LightCone,
        )
        .unwrap();
        assert!(t.in_cone);
        assert!(s.mean.abs() <= 3.0 * s.stderr_mean + 1e-12);
        assert!(s.variance > 0.0);
    }
}
