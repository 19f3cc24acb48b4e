//! Experiment driver behind the `nonunital` binary.
//!
//! Every subcommand reads an optional TOML file whose keys mirror the long
//! flags; flags override the file, and the file overrides the experiment's
//! defaults. Results go to `--out` (or stdout) as CSV with `#`-prefixed
//! header lines that record the artifact version and the resolved
//! configuration. `estimate` prints JSON instead.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::channels::ChannelSpec;
use crate::circuit::{CircuitConfig, GateMode, Geometry};
use crate::dense_sim::{DenseSimulator, DensityMatrix};
use crate::error::{Error, Result};
use crate::lightcone::{zero_rule, EstimateReport, Estimator, DEFAULT_SUPPORT_CAP};
use crate::moments::{
    self, avg_trace_distance_bound, bounds, exact_second_moment, BoundInputs, BoundSet, Backend,
    DerivativeMethod, MCStat, ParamChoice, Reference,
};
use crate::pauli::{Pauli, PauliString};
use crate::rng::subseed;

/// Artifact version written into every output header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit code for invalid configurations.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for exceeded resource caps.
pub const EXIT_RESOURCE: i32 = 3;

/// Command line.
#[derive(Debug, Parser)]
#[command(name = "nonunital", version, about = "Noisy random-circuit experiments")]
pub struct Cli {
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Experiment to run.
    #[command(subcommand)]
    pub command: Command,
}

/// Subcommands.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Light-cone estimate of one Pauli expectation value (JSON).
    Estimate(Opts),
    /// Mean and variance of a Pauli expectation over random circuits.
    Variance(Opts),
    /// Gradient variance per layer for a parametrized ansatz.
    Gradscan(Opts),
    /// Output purity over random circuits.
    Purity(Opts),
    /// Fidelity and projected kernels over random circuit pairs.
    Kernel(Opts),
    /// Closed-form bounds at one parameter point.
    Bounds(Opts),
    /// Trace distance between the outputs of |0..0> and |1..1> versus depth.
    Tracedist(Opts),
    /// Gradient variance versus layer (hardware-efficient ansatz).
    FigLayer(Opts),
    /// Last-layer gradient variance versus qubit count.
    FigQubits(Opts),
    /// Layer and qubit scans for the QAOA ansatz.
    FigQaoa(Opts),
    /// Estimator wall time and support versus qubit count.
    Bench(Opts),
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Opts {
    /// TOML file with any of the settings below.
    #[arg(long, alias = "circuit")]
    pub config: Option<PathBuf>,
    /// Settings given on the command line.
    #[command(flatten)]
    pub settings: Settings,
}

fn parse_gate_mode(s: &str) -> std::result::Result<GateMode, String> {
    match s {
        "haar" => Ok(GateMode::Haar),
        "clifford" => Ok(GateMode::Clifford),
        "hwe" => Ok(GateMode::Hwe),
        "qaoa" => Ok(GateMode::Qaoa),
        _ => Err(format!("unknown gate mode {s:?} (haar, clifford, hwe, qaoa)")),
    }
}

fn parse_method(s: &str) -> std::result::Result<DerivativeMethod, String> {
    match s {
        "auto" => Ok(DerivativeMethod::Auto),
        "parameter_shift" | "shift" => Ok(DerivativeMethod::ParameterShift),
        "central_difference" | "fd" => Ok(DerivativeMethod::CentralDifference),
        _ => Err(format!("unknown derivative method {s:?}")),
    }
}

/// Experiment settings; every field is optional so that file, flags and
/// defaults can be layered.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Qubit count.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of layers (QAOA: number of rounds).
    #[arg(long)]
    pub depth: Option<usize>,
    /// Gate ensemble: haar, clifford, hwe or qaoa.
    #[arg(long, value_parser = parse_gate_mode)]
    pub gate_mode: Option<GateMode>,
    /// Explicit coupling layers (file only; cycled to the depth).
    #[arg(skip)]
    pub geometry: Option<Geometry>,
    /// Depolarizing rate of the default depolarizing-after-damping noise.
    #[arg(long)]
    pub p: Option<f64>,
    /// Amplitude-damping rate of the default noise.
    #[arg(long)]
    pub q: Option<f64>,
    /// Arbitrary noise channel (file only; excludes `p` and `q`).
    #[arg(skip)]
    pub noise: Option<ChannelSpec>,
    /// Number of sampled circuits or parameter points.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Master seed.
    #[arg(skip)]
    pub seed: Option<u64>,
    /// Pauli observable, one character per qubit (qubit 0 first).
    #[arg(long)]
    pub pauli: Option<String>,
    /// Random single-qubit layer before every noise layer.
    #[arg(long)]
    pub twirl: Option<bool>,
    /// Final random single-qubit layer.
    #[arg(long)]
    pub final_layer: Option<bool>,
    /// Target additive error.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Failure probability.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Largest light-cone support.
    #[arg(long)]
    pub support_cap: Option<usize>,
    /// Circuit instance used by `estimate`.
    #[arg(long)]
    pub instance: Option<u64>,
    /// Layer (1-based) for `gradscan` and `bounds`.
    #[arg(long)]
    pub layer: Option<usize>,
    /// Parameter slot of a hardware-efficient gate (0..4).
    #[arg(long)]
    pub slot: Option<usize>,
    /// Qubit counts for scans, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub qubits: Option<Vec<usize>>,
    /// Derivative method: auto, shift or fd.
    #[arg(long, value_parser = parse_method)]
    pub method: Option<DerivativeMethod>,
    /// Pauli weight for `bounds`.
    #[arg(long)]
    pub weight: Option<usize>,
    /// Generator norm for `bounds`.
    #[arg(long)]
    pub h_norm: Option<f64>,
}

macro_rules! layer {
    ($a:expr, $b:expr; $($f:ident),*) => {
        Settings { $($f: $a.$f.clone().or_else(|| $b.$f.clone()),)* }
    };
}

impl Settings {
    /// Fields of `self`, falling back to `other`.
    pub fn or(&self, other: &Settings) -> Settings {
        layer!(self, other; n, depth, gate_mode, geometry, p, q, noise, samples, seed, pauli,
            twirl, final_layer, eps, delta, support_cap, instance, layer, slot, qubits, method,
            weight, h_norm)
    }

    /// Fills missing fields from experiment defaults. A user-supplied noise
    /// channel suppresses the default `p` and `q`.
    pub fn with_defaults(&self, defaults: &Settings) -> Result<Settings> {
        if self.noise.is_some() && (self.p.is_some() || self.q.is_some()) {
            return Err(Error::Config("give either `noise` or `p`/`q`, not both".into()));
        }
        let mut d = defaults.clone();
        if self.noise.is_some() {
            d.p = None;
            d.q = None;
        }
        if self.p.is_some() || self.q.is_some() {
            d.noise = None;
        }
        Ok(self.or(&d))
    }

    fn need<T: Clone>(v: &Option<T>, name: &str) -> Result<T> {
        v.clone()
            .ok_or_else(|| Error::Config(format!("missing setting `{name}`")))
    }

    /// Noise channel described by the settings.
    pub fn noise_spec(&self) -> Result<ChannelSpec> {
        match (&self.noise, self.p, self.q) {
            (Some(n), None, None) => Ok(n.clone()),
            (None, p, q) if p.is_some() || q.is_some() => {
                Ok(ChannelSpec::dep_amp(p.unwrap_or(0.0), q.unwrap_or(0.0)))
            }
            (None, _, _) => Err(Error::Config("no noise channel configured".into())),
            _ => Err(Error::Config("give either `noise` or `p`/`q`, not both".into())),
        }
    }

    /// Circuit ensemble described by the settings.
    pub fn circuit(&self) -> Result<CircuitConfig> {
        Ok(CircuitConfig {
            n: Self::need(&self.n, "n")?,
            depth: Self::need(&self.depth, "depth")?,
            geometry: self.geometry.clone().unwrap_or(Geometry::Brickwork1d),
            gate_mode: Self::need(&self.gate_mode, "gate_mode")?,
            noise: self.noise_spec()?,
            seed: self.seed.unwrap_or(0),
            twirl: self.twirl.unwrap_or(false),
            final_layer: self.final_layer.unwrap_or(true),
        })
    }

    /// Observable; defaults to `axis` on qubit 0.
    pub fn observable(&self, n: usize, axis: Pauli) -> Result<PauliString> {
        match &self.pauli {
            Some(s) => {
                let p: PauliString = s
                    .parse()
                    .map_err(|e: Error| Error::Config(e.to_string()))?;
                if p.num_qubits() != n {
                    return Err(Error::Config(format!(
                        "Pauli {s:?} has {} qubits, circuit has {n}",
                        p.num_qubits()
                    )));
                }
                Ok(p)
            }
            None => Ok(PauliString::single(n, 0, axis)),
        }
    }

    fn samples(&self) -> Result<usize> {
        let s = Self::need(&self.samples, "samples")?;
        if s < 2 {
            return Err(Error::Config("need at least 2 samples".into()));
        }
        Ok(s)
    }
}

/// Reads a settings file.
pub fn read_settings(path: &Path) -> Result<Settings> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Column-oriented result table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    /// Header row.
    pub columns: Vec<String>,
    /// Data rows, already formatted.
    pub rows: Vec<Vec<String>>,
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Renders the table with the comment header.
    pub fn to_csv(&self, experiment: &str, settings: &Settings) -> Result<String> {
        let cfg = serde_json::to_string(settings).map_err(|e| Error::Io(e.to_string()))?;
        let mut out = format!(
            "# nonunital {VERSION}\n# experiment: {experiment}\n# config: {cfg}\n"
        );
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(&self.columns).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let body = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        out.push_str(&String::from_utf8(body).map_err(|e| Error::Io(e.to_string()))?);
        Ok(out)
    }
}

/// One gradient-variance data point.
#[derive(Debug, Clone, PartialEq)]
pub struct GradRow {
    /// `layer` or `qubits`.
    pub scan: String,
    /// `hwe` or `qaoa`.
    pub ansatz: String,
    /// Qubit count.
    pub n: usize,
    /// Noisy layers in the circuit.
    pub depth: usize,
    /// Depolarizing rate.
    pub p: f64,
    /// Amplitude-damping rate.
    pub q: f64,
    /// Scan position: layer for the hardware-efficient ansatz, round for QAOA (1-based).
    pub k: usize,
    /// Circuit layer of the differentiated gates (1-based).
    pub circuit_layer: usize,
    /// Whether the differentiated gate lies in the light cone.
    pub in_cone: bool,
    /// Derivative statistics.
    pub stat: MCStat,
    /// `4 c^{|P| + L - k - 1}` at `circuit_layer`.
    pub grad_upper: f64,
}

fn grad_table(rows: &[GradRow]) -> Table {
    let mut t = Table::new(&[
        "scan", "ansatz", "n", "depth", "p", "q", "k", "circuit_layer", "in_cone", "samples",
        "seed", "mean", "stderr_mean", "var", "stderr_var", "grad_upper",
    ]);
    for r in rows {
        t.rows.push(vec![
            r.scan.clone(),
            r.ansatz.clone(),
            r.n.to_string(),
            r.depth.to_string(),
            fmt_f64(r.p),
            fmt_f64(r.q),
            r.k.to_string(),
            r.circuit_layer.to_string(),
            r.in_cone.to_string(),
            r.stat.samples.to_string(),
            r.stat.seed.to_string(),
            fmt_f64(r.stat.mean),
            fmt_f64(r.stat.stderr_mean),
            fmt_f64(r.stat.variance),
            fmt_f64(r.stat.stderr_var),
            fmt_f64(r.grad_upper),
        ]);
    }
    t
}

fn ansatz_name(mode: GateMode) -> Result<&'static str> {
    match mode {
        GateMode::Hwe => Ok("hwe"),
        GateMode::Qaoa => Ok("qaoa"),
        m => Err(Error::Config(format!(
            "gradient experiments need the hwe or qaoa ansatz, got {m:?}"
        ))),
    }
}

/// Gradient statistics of one scan point. `index` is the 0-based layer
/// (hardware-efficient) or round (QAOA); QAOA differentiates the `gamma`
/// angle of the round.
fn grad_point(
    s: &Settings,
    cfg: &CircuitConfig,
    index: usize,
    scan: &str,
    seed: u64,
) -> Result<GradRow> {
    let n = cfg.n;
    let (layer, choice, axis) = match cfg.gate_mode {
        GateMode::Hwe => (
            index,
            ParamChoice::Hwe {
                gate: None,
                slot: s.slot.unwrap_or(1),
            },
            Pauli::Z,
        ),
        GateMode::Qaoa => (2 * index, ParamChoice::Tied, Pauli::X),
        m => return Err(Error::Config(format!("no gradient scan for {m:?}"))),
    };
    let p = s.observable(n, axis)?;
    let (stat, target) = moments::grad_variance_scan(
        cfg,
        layer,
        choice,
        &p,
        s.samples()?,
        seed,
        s.method.unwrap_or_default(),
        Backend::LightCone,
    )?;
    let circ_depth = cfg.sample(0)?.depth();
    let nf = cfg.noise.build()?;
    let b = bounds(
        nf.normal_form(),
        &BoundInputs {
            n,
            weight: p.weight(),
            depth: circ_depth,
            layer: layer + 1,
            p_dep: None,
            h_norm: 1.0,
        },
    );
    let (pp, qq) = (s.p.unwrap_or(f64::NAN), s.q.unwrap_or(f64::NAN));
    Ok(GradRow {
        scan: scan.to_string(),
        ansatz: ansatz_name(cfg.gate_mode)?.to_string(),
        n,
        depth: circ_depth,
        p: pp,
        q: qq,
        k: index + 1,
        circuit_layer: layer + 1,
        in_cone: target.in_cone,
        stat,
        grad_upper: b.grad_upper,
    })
}

fn scan_positions(cfg: &CircuitConfig) -> usize {
    cfg.depth
}

/// Gradient variance at every layer (hardware-efficient) or round (QAOA).
/// All positions reuse the same parameter draws.
pub fn layer_scan(s: &Settings, scan: &str) -> Result<Vec<GradRow>> {
    let cfg = s.circuit()?;
    let seed = s.seed.unwrap_or(0);
    let only = s.layer;
    (0..scan_positions(&cfg))
        .filter(|k| only.is_none_or(|l| l == k + 1))
        .map(|k| grad_point(s, &cfg, k, scan, seed))
        .collect()
}

/// Index (0-based layer or round) of the last differentiable position
/// inside the observable's light cone.
fn last_position(s: &Settings, cfg: &CircuitConfig) -> Result<usize> {
    match cfg.gate_mode {
        GateMode::Qaoa => Ok(cfg.depth - 1),
        _ => {
            let circ = cfg.sample(0)?;
            let p = s.observable(cfg.n, Pauli::Z)?;
            moments::last_in_cone_layer(&circ, &p)
                .ok_or_else(|| Error::Config("no parametrized gate in the light cone".into()))
        }
    }
}

/// Last-layer gradient variance for each qubit count at depth `2n`, with
/// the configured damping rate and with `q = 0`.
pub fn qubit_scan(s: &Settings, scan: &str) -> Result<Vec<GradRow>> {
    let qubits = Settings::need(&s.qubits, "qubits")?;
    let seed = s.seed.unwrap_or(0);
    let q = Settings::need(&s.q, "q")?;
    let mut rows = Vec::new();
    for (qi, qv) in [q, 0.0].into_iter().enumerate() {
        for &n in &qubits {
            let point = Settings {
                n: Some(n),
                depth: Some(2 * n),
                q: Some(qv),
                pauli: None,
                ..s.clone()
            };
            let cfg = point.circuit()?;
            let k = last_position(&point, &cfg)?;
            let tag = ((qi as u64) << 32) | n as u64;
            rows.push(grad_point(&point, &cfg, k, scan, subseed(seed, tag))?);
        }
    }
    Ok(rows)
}

fn fig_defaults(mode: GateMode) -> Settings {
    Settings {
        n: Some(5),
        depth: Some(10),
        gate_mode: Some(mode),
        p: Some(0.2),
        q: Some(0.2),
        samples: Some(100),
        seed: Some(1),
        twirl: Some(false),
        final_layer: Some(false),
        slot: Some(1),
        qubits: Some(vec![2, 3, 4, 5, 6]),
        method: Some(DerivativeMethod::Auto),
        ..Settings::default()
    }
}

/// Gradient variance versus layer for the hardware-efficient ansatz
/// (defaults: n = 5, depth 10, p = q = 0.2, 100 samples, observable Z on
/// qubit 0).
pub fn run_fig_layer_scan(s: &Settings) -> Result<(Settings, Vec<GradRow>)> {
    let s = s.with_defaults(&fig_defaults(GateMode::Hwe))?;
    let rows = layer_scan(&s, "layer")?;
    Ok((s, rows))
}

/// Last-layer gradient variance versus qubit count for the
/// hardware-efficient ansatz.
pub fn run_fig_qubit_scan(s: &Settings) -> Result<(Settings, Vec<GradRow>)> {
    let s = s.with_defaults(&fig_defaults(GateMode::Hwe))?;
    let rows = qubit_scan(&s, "qubits")?;
    Ok((s, rows))
}

/// Layer and qubit scans for the QAOA ansatz with observable X on qubit 0.
pub fn run_qaoa_variants(s: &Settings) -> Result<(Settings, Vec<GradRow>)> {
    let s = s.with_defaults(&fig_defaults(GateMode::Qaoa))?;
    let mut rows = layer_scan(&s, "layer")?;
    rows.extend(qubit_scan(&s, "qubits")?);
    Ok((s, rows))
}

/// One estimator benchmark row.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    /// Qubit count.
    pub n: usize,
    /// Circuit instance.
    pub instance: u64,
    /// Estimator output.
    pub report: EstimateReport,
    /// Wall time in seconds.
    pub seconds: f64,
    /// `|estimate - exact|` when the dense oracle fits.
    pub error: Option<f64>,
}

/// Estimator wall time, support and error versus qubit count.
pub fn run_estimator_bench(s: &Settings) -> Result<(Settings, Vec<BenchRow>)> {
    let s = s.with_defaults(&Settings {
        depth: Some(20),
        gate_mode: Some(GateMode::Haar),
        p: Some(0.2),
        q: Some(0.2),
        samples: Some(3),
        seed: Some(1),
        eps: Some(0.2),
        delta: Some(0.2),
        support_cap: Some(DEFAULT_SUPPORT_CAP),
        qubits: Some(vec![20, 40, 80]),
        ..Settings::default()
    })?;
    let est = Estimator {
        support_cap: Settings::need(&s.support_cap, "support_cap")?,
    };
    let (eps, delta) = (Settings::need(&s.eps, "eps")?, Settings::need(&s.delta, "delta")?);
    let oracle = DenseSimulator::default();
    let mut rows = Vec::new();
    for &n in &Settings::need(&s.qubits, "qubits")? {
        let point = Settings {
            n: Some(n),
            pauli: None,
            ..s.clone()
        };
        let cfg = point.circuit()?;
        let p = point.observable(n, Pauli::Z)?;
        for i in 0..Settings::need(&s.samples, "samples")? as u64 {
            let circ = cfg.sample(i)?;
            let t0 = Instant::now();
            let report = est.estimate(&circ, &p, eps, delta)?;
            let seconds = t0.elapsed().as_secs_f64();
            let error = if n <= oracle.cap {
                Some((report.value - oracle.expectation(&circ, &p)?).abs())
            } else {
                None
            };
            rows.push(BenchRow {
                n,
                instance: i,
                report,
                seconds,
                error,
            });
        }
    }
    Ok((s, rows))
}

fn bench_table(rows: &[BenchRow]) -> Table {
    let mut t = Table::new(&[
        "n", "instance", "l", "steps", "early_break", "certificate_e", "support_peak", "seconds",
        "value", "error",
    ]);
    for r in rows {
        t.rows.push(vec![
            r.n.to_string(),
            r.instance.to_string(),
            r.report.l_target.to_string(),
            r.report.steps_executed.to_string(),
            r.report.early_break.to_string(),
            fmt_f64(r.report.certificate_e),
            r.report.support_peak.to_string(),
            fmt_f64(r.seconds),
            fmt_f64(r.report.value),
            fmt_opt(r.error),
        ]);
    }
    t
}

fn random_defaults() -> Settings {
    Settings {
        n: Some(4),
        depth: Some(6),
        gate_mode: Some(GateMode::Haar),
        p: Some(0.2),
        q: Some(0.2),
        samples: Some(1000),
        seed: Some(1),
        twirl: Some(true),
        final_layer: Some(true),
        ..Settings::default()
    }
}

fn stat_columns(t: &mut Vec<String>, s: &MCStat) {
    t.extend([
        s.samples.to_string(),
        s.seed.to_string(),
        fmt_f64(s.mean),
        fmt_f64(s.stderr_mean),
        fmt_f64(s.variance),
        fmt_f64(s.stderr_var),
    ]);
}

const STAT_COLUMNS: [&str; 6] = ["samples", "seed", "mean", "stderr_mean", "var", "stderr_var"];

fn with_stat_columns(head: &[&str], tail: &[&str]) -> Table {
    let cols: Vec<&str> = head
        .iter()
        .chain(STAT_COLUMNS.iter())
        .chain(tail.iter())
        .copied()
        .collect();
    Table::new(&cols)
}

fn noise_label(cfg: &CircuitConfig) -> Result<String> {
    serde_json::to_string(&cfg.noise).map_err(|e| Error::Io(e.to_string()))
}

fn run_variance(s: &Settings) -> Result<(Settings, Table)> {
    let s = s.with_defaults(&random_defaults())?;
    let cfg = s.circuit()?;
    let p = s.observable(cfg.n, Pauli::Z)?;
    let seed = s.seed.unwrap_or(0);
    let stat = moments::mc_variance(&cfg, &p, s.samples()?, seed, Backend::Dense)?;
    let ch = cfg.noise.build()?;
    let exact = if cfg.twirl && matches!(cfg.gate_mode, GateMode::Haar | GateMode::Clifford) {
        Some(exact_second_moment(&cfg.graph()?, &ch, &p, cfg.final_layer, Reference::PureProduct)?)
    } else {
        None
    };
    let b = bounds(
        ch.normal_form(),
        &BoundInputs {
            n: cfg.n,
            weight: p.weight(),
            depth: cfg.depth,
            layer: cfg.depth,
            p_dep: None,
            h_norm: 1.0,
        },
    );
    let mut t = with_stat_columns(
        &["experiment", "n", "depth", "noise", "pauli"],
        &["exact_second_moment", "var_lower", "var_upper"],
    );
    let mut row = vec![
        "variance".to_string(),
        cfg.n.to_string(),
        cfg.depth.to_string(),
        noise_label(&cfg)?,
        p.to_string(),
    ];
    stat_columns(&mut row, &stat);
    row.extend([fmt_opt(exact), fmt_f64(b.var_lower), fmt_f64(b.var_upper)]);
    t.rows.push(row);
    Ok((s, t))
}

fn run_purity(s: &Settings) -> Result<(Settings, Table)> {
    let s = s.with_defaults(&Settings {
        n: Some(5),
        samples: Some(200),
        ..random_defaults()
    })?;
    let cfg = s.circuit()?;
    let stat = moments::purity_mc(&cfg, s.samples()?, s.seed.unwrap_or(0))?;
    let ch = cfg.noise.build()?;
    let b = bounds(
        ch.normal_form(),
        &BoundInputs {
            n: cfg.n,
            weight: 1,
            depth: cfg.depth,
            layer: cfg.depth,
            p_dep: None,
            h_norm: 1.0,
        },
    );
    let mut t = with_stat_columns(
        &["experiment", "n", "depth", "noise"],
        &["purity_lower", "purity_upper"],
    );
    let mut row = vec![
        "purity".to_string(),
        cfg.n.to_string(),
        cfg.depth.to_string(),
        noise_label(&cfg)?,
    ];
    stat_columns(&mut row, &stat);
    row.extend([fmt_f64(b.purity_lower), fmt_f64(b.purity_upper)]);
    t.rows.push(row);
    Ok((s, t))
}

fn run_kernel(s: &Settings) -> Result<(Settings, Table)> {
    let s = s.with_defaults(&Settings {
        n: Some(5),
        samples: Some(200),
        ..random_defaults()
    })?;
    let cfg = s.circuit()?;
    let k = moments::kernel_mc(&cfg, s.samples()?, s.seed.unwrap_or(0))?;
    let prm = cfg.noise.build()?.params();
    let mut t = with_stat_columns(
        &["experiment", "n", "depth", "noise", "kernel"],
        &["per_qubit_lower", "per_qubit_upper"],
    );
    for (name, stat, lo, hi) in [
        ("fidelity", k.fidelity, None, None),
        (
            "projected_q",
            k.projected_q,
            Some(prm.t_norm2),
            Some(prm.t_norm2 + prm.d_norm2),
        ),
    ] {
        let mut row = vec![
            "kernel".to_string(),
            cfg.n.to_string(),
            cfg.depth.to_string(),
            noise_label(&cfg)?,
            name.to_string(),
        ];
        stat_columns(&mut row, &stat);
        row.extend([fmt_opt(lo), fmt_opt(hi)]);
        t.rows.push(row);
    }
    Ok((s, t))
}

fn run_tracedist(s: &Settings) -> Result<(Settings, Table)> {
    let s = s.with_defaults(&Settings {
        samples: Some(100),
        ..random_defaults()
    })?;
    let base = s.circuit()?;
    let n = base.n;
    let rho = DensityMatrix::zero_state(n);
    let sigma = DensityMatrix::basis_state(n, (1 << n) - 1);
    let p_dep = base.noise.depolarizing_component();
    let c = base.noise.build()?.params().c;
    let mut t = with_stat_columns(
        &["experiment", "n", "depth", "noise"],
        &["avg_bound", "sdpi_bound"],
    );
    for l in 1..=base.depth {
        let cfg = CircuitConfig {
            depth: l,
            ..base.clone()
        };
        let seed = subseed(s.seed.unwrap_or(0), l as u64);
        let stat = moments::trace_distance_decay_mc(&cfg, &rho, &sigma, s.samples()?, seed)?;
        let mut row = vec![
            "tracedist".to_string(),
            n.to_string(),
            l.to_string(),
            noise_label(&cfg)?,
        ];
        stat_columns(&mut row, &stat);
        row.extend([
            fmt_f64(avg_trace_distance_bound(n, c, l)),
            // both outputs are within the single-state bound of I/2^n
            fmt_opt(p_dep.map(|p| 2.0 * (2.0 * n as f64).sqrt() * (1.0 - p).powi(l as i32))),
        ]);
        t.rows.push(row);
    }
    Ok((s, t))
}

fn run_bounds(s: &Settings) -> Result<(Settings, Table)> {
    let s = s.with_defaults(&Settings {
        n: Some(5),
        depth: Some(10),
        p: Some(0.2),
        q: Some(0.2),
        weight: Some(1),
        h_norm: Some(1.0),
        ..Settings::default()
    })?;
    let spec = s.noise_spec()?;
    let ch = spec.build()?;
    let depth = Settings::need(&s.depth, "depth")?;
    let inp = BoundInputs {
        n: Settings::need(&s.n, "n")?,
        weight: Settings::need(&s.weight, "weight")?,
        depth,
        layer: s.layer.unwrap_or(depth),
        p_dep: spec.depolarizing_component(),
        h_norm: Settings::need(&s.h_norm, "h_norm")?,
    };
    let b: BoundSet = bounds(ch.normal_form(), &inp);
    let prm = ch.params();
    let mut t = Table::new(&[
        "experiment", "n", "weight", "depth", "layer", "c", "t_norm2", "d_norm2", "b",
        "var_lower", "var_upper", "trunc_sq", "grad_upper", "grad_lower", "purity_lower",
        "purity_upper", "delta_l", "sdpi_td", "wc_td",
    ]);
    t.rows.push(vec![
        "bounds".to_string(),
        inp.n.to_string(),
        inp.weight.to_string(),
        inp.depth.to_string(),
        inp.layer.to_string(),
        fmt_f64(prm.c),
        fmt_f64(prm.t_norm2),
        fmt_f64(prm.d_norm2),
        fmt_opt(ch.normal_form().w1_factor()),
        fmt_f64(b.var_lower),
        fmt_f64(b.var_upper),
        fmt_f64(b.trunc_sq),
        fmt_f64(b.grad_upper),
        fmt_f64(b.grad_lower),
        fmt_f64(b.purity_lower),
        fmt_f64(b.purity_upper),
        fmt_opt(b.delta_l),
        fmt_opt(b.sdpi_td),
        fmt_opt(b.wc_td),
    ]);
    Ok((s, t))
}

/// JSON document printed by `estimate`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateOutput {
    /// Observable.
    pub pauli: String,
    /// Target error.
    pub eps: f64,
    /// Failure probability.
    pub delta: f64,
    /// Contraction coefficient of the noise.
    pub c: f64,
    /// True when the global-Pauli rule answered zero without propagation.
    pub zero_rule: bool,
    /// Estimator report; absent when the zero rule fired.
    pub report: Option<EstimateReport>,
    /// Value returned.
    pub value: f64,
    /// Resolved settings.
    pub config: Settings,
}

/// Runs the `estimate` subcommand.
pub fn run_estimate(s: &Settings) -> Result<EstimateOutput> {
    let s = s.with_defaults(&Settings {
        eps: Some(0.1),
        delta: Some(0.1),
        support_cap: Some(DEFAULT_SUPPORT_CAP),
        instance: Some(0),
        ..random_defaults()
    })?;
    let cfg = s.circuit()?;
    let p = s.observable(cfg.n, Pauli::Z)?;
    let (eps, delta) = (Settings::need(&s.eps, "eps")?, Settings::need(&s.delta, "delta")?);
    let c = cfg.noise.build()?.params().c;
    if let Some(v) = zero_rule(&p, c, eps, delta) {
        return Ok(EstimateOutput {
            pauli: p.to_string(),
            eps,
            delta,
            c,
            zero_rule: true,
            report: None,
            value: v,
            config: s,
        });
    }
    let circ = cfg.sample(s.instance.unwrap_or(0))?;
    let est = Estimator {
        support_cap: s.support_cap.unwrap_or(DEFAULT_SUPPORT_CAP),
    };
    let report = est.estimate(&circ, &p, eps, delta)?;
    Ok(EstimateOutput {
        pauli: p.to_string(),
        eps,
        delta,
        c,
        zero_rule: false,
        value: report.value,
        report: Some(report),
        config: s,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::Io(e.to_string())),
    }
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        // a second initialisation in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let opts = match &cli.command {
        Command::Estimate(o)
        | Command::Variance(o)
        | Command::Gradscan(o)
        | Command::Purity(o)
        | Command::Kernel(o)
        | Command::Bounds(o)
        | Command::Tracedist(o)
        | Command::FigLayer(o)
        | Command::FigQubits(o)
        | Command::FigQaoa(o)
        | Command::Bench(o) => o,
    };
    let file = match &opts.config {
        Some(p) => read_settings(p)?,
        None => Settings::default(),
    };
    let mut s = opts.settings.or(&file);
    if cli.seed.is_some() {
        s.seed = cli.seed;
    }
    let out = cli.out.as_deref();
    let (name, settings, table) = match &cli.command {
        Command::Estimate(_) => {
            let r = run_estimate(&s)?;
            let text = serde_json::to_string_pretty(&r).map_err(|e| Error::Io(e.to_string()))?;
            return emit(out, &(text + "\n"));
        }
        Command::Variance(_) => {
            let (s, t) = run_variance(&s)?;
            ("variance", s, t)
        }
        Command::Gradscan(_) => {
            let s = s.with_defaults(&fig_defaults(s.gate_mode.unwrap_or(GateMode::Hwe)))?;
            let rows = layer_scan(&s, "gradscan")?;
            ("gradscan", s, grad_table(&rows))
        }
        Command::Purity(_) => {
            let (s, t) = run_purity(&s)?;
            ("purity", s, t)
        }
        Command::Kernel(_) => {
            let (s, t) = run_kernel(&s)?;
            ("kernel", s, t)
        }
        Command::Bounds(_) => {
            let (s, t) = run_bounds(&s)?;
            ("bounds", s, t)
        }
        Command::Tracedist(_) => {
            let (s, t) = run_tracedist(&s)?;
            ("tracedist", s, t)
        }
        Command::FigLayer(_) => {
            let (s, rows) = run_fig_layer_scan(&s)?;
            ("fig-layer", s, grad_table(&rows))
        }
        Command::FigQubits(_) => {
            let (s, rows) = run_fig_qubit_scan(&s)?;
            ("fig-qubits", s, grad_table(&rows))
        }
        Command::FigQaoa(_) => {
            let (s, rows) = run_qaoa_variants(&s)?;
            ("fig-qaoa", s, grad_table(&rows))
        }
        Command::Bench(_) => {
            let (s, rows) = run_estimator_bench(&s)?;
            ("bench", s, bench_table(&rows))
        }
    };
    emit(out, &table.to_csv(name, &settings)?)
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_resource_cap() {
        EXIT_RESOURCE
    } else if matches!(e, Error::Io(_)) {
        1
    } else {
        EXIT_CONFIG
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
