//! Ground-truth noisy device and shot-sampled execution of schedules.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{
    choi_of_map, measurement_tensor, ChoiMatrix, Povm, Process, QndMeasurement, CP_TOL, TP_TOL,
};
use crate::circuits::{
    Batch, BatchTarget, DeviceGraph, GateLabel, Schedule, Setting, Target, GATE_SET, U_GATES, V_GATES,
};
use crate::counts::{check_shots, keyed_rng, sample_multinomial, CircuitKey, CountsTable, OutcomeCounts};
use crate::error::{Error, Result};
use crate::linalg::{kron, pauli_x, CMatrix, C64, ZERO};

pub const DEFAULT_SHOTS: u64 = 8192;

/// Per-qubit measurement and gate noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    /// Relaxation probability during the measurement window; derived from
    /// `t_meas` and `t1` when absent.
    pub p_decay: Option<f64>,
    pub p_excite: f64,
    /// `eps_assign[m][n]`: probability of reporting `n` when projected onto `m`.
    pub eps_assign: [[f64; 2]; 2],
    /// Measurement time in μs.
    pub t_meas: f64,
    /// Relaxation time in μs.
    pub t1: f64,
    pub crosstalk_strength: f64,
    /// Depolarizing strength applied after every gate.
    pub gate_depolarizing: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            p_decay: None,
            p_excite: 0.0,
            eps_assign: [[1.0, 0.0], [0.0, 1.0]],
            t_meas: 5.0,
            t1: 100.0,
            crosstalk_strength: 0.0,
            gate_depolarizing: 0.0,
        }
    }
}

impl NoiseParams {
    pub fn ideal() -> Self {
        Self { p_decay: Some(0.0), ..Self::default() }
    }

    /// Decay, excitation and symmetric misassignment `eps`.
    pub fn with_errors(p_decay: f64, p_excite: f64, eps: f64) -> Self {
        Self {
            p_decay: Some(p_decay),
            p_excite,
            eps_assign: [[1.0 - eps, eps], [eps, 1.0 - eps]],
            ..Self::default()
        }
    }

    pub fn effective_p_decay(&self) -> f64 {
        self.p_decay.unwrap_or_else(|| thermal_decay(self.t_meas, self.t1))
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {p} is not a probability")))
            }
        };
        if let Some(p) = self.p_decay {
            prob("p_decay", p)?;
        } else if !(self.t_meas >= 0.0 && self.t1 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "t_meas = {} and t1 = {} must be nonnegative and positive",
                self.t_meas, self.t1
            )));
        }
        prob("p_excite", self.p_excite)?;
        prob("crosstalk_strength", self.crosstalk_strength)?;
        prob("gate_depolarizing", self.gate_depolarizing)?;
        for (m, row) in self.eps_assign.iter().enumerate() {
            for &p in row {
                prob(&format!("eps_assign[{m}]"), p)?;
            }
            if (row[0] + row[1] - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!("eps_assign[{m}] does not sum to 1")));
            }
        }
        Ok(())
    }
}

/// Probability of relaxing during a window of length `t` with lifetime `t1`.
pub fn thermal_decay(t: f64, t1: f64) -> f64 {
    -(-t / t1).exp_m1()
}

/// Projective readout followed by misassignment and post-measurement
/// relaxation/excitation: `Υ_n(ρ) = Σ_m eps[m][n] Λ(P_m ρ P_m)`.
pub fn build_decay_channel(p: &NoiseParams) -> Result<QndMeasurement> {
    p.validate()?;
    let pd = p.effective_p_decay();
    let pe = p.p_excite;
    // Λ on the projected (diagonal) states
    let lambda = |m: usize| -> [f64; 2] {
        if m == 0 {
            [1.0 - pe, pe]
        } else {
            [pd, 1.0 - pd]
        }
    };
    let blocks = (0..2)
        .map(|n| {
            ChoiMatrix::from_map(2, n, |x| {
                let mut out = CMatrix::zeros(2, 2);
                for m in 0..2 {
                    let w = p.eps_assign[m][n] * x[(m, m)];
                    let pop = lambda(m);
                    out[(0, 0)] += w * pop[0];
                    out[(1, 1)] += w * pop[1];
                }
                out
            })
        })
        .collect::<Result<Vec<_>>>()?;
    QndMeasurement::new(blocks)
}

/// Fixed correlated-flip channel: ideal two-qubit readout except that the
/// outcome `11` leaves both qubits in `|00⟩`.
pub fn correlated_flip_channel() -> QndMeasurement {
    let blocks = (0..4)
        .map(|nm| {
            ChoiMatrix::from_map(4, nm, |x| {
                let dest = if nm == 3 { 0 } else { nm };
                let mut out = CMatrix::zeros(4, 4);
                out[(dest, dest)] = x[(nm, nm)];
                out
            })
            .expect("valid block")
        })
        .collect();
    QndMeasurement::new(blocks).expect("complete measurement")
}

/// `(1−s)·(a ⊗̄ b) + s·K` with `K` the correlated-flip channel.
pub fn build_edge_channel(a: &QndMeasurement, b: &QndMeasurement, strength: f64) -> Result<QndMeasurement> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::InvalidParameter(format!("crosstalk strength {strength} outside [0, 1]")));
    }
    let product = measurement_tensor(a, b)?;
    if strength == 0.0 {
        return Ok(product);
    }
    let k = correlated_flip_channel();
    let blocks = product
        .outcomes()
        .iter()
        .zip(k.outcomes())
        .map(|(p, q)| p.combine(1.0 - strength, q, strength))
        .collect::<Result<Vec<_>>>()?;
    QndMeasurement::new(blocks)
}

/// Two-qubit Bell-basis measurement that leaves the measured Bell state.
/// Outcome `xy` projects onto `(|0y⟩ + (−1)^x |1ȳ⟩)/√2`.
pub fn bell_measurement() -> QndMeasurement {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let blocks = (0..4)
        .map(|n| {
            let (x, y) = (n / 2, n % 2);
            let mut v = CMatrix::zeros(4, 1);
            v[(y, 0)] = C64::new(s, 0.0);
            v[(2 + (1 - y), 0)] = C64::new(if x == 0 { s } else { -s }, 0.0);
            let p = &v * &v.adjoint();
            ChoiMatrix::from_map(4, n, |rho| &(&p * rho) * &p).expect("valid block")
        })
        .collect();
    QndMeasurement::new(blocks).expect("complete measurement")
}

/// Random instrument with one Kraus operator per outcome, drawn with
/// uniformly distributed real and imaginary entries and then normalized so
/// that the total process is trace preserving.
pub fn random_measurement(rng: &mut impl rand::Rng, dim: usize) -> Result<QndMeasurement> {
    let ks: Vec<CMatrix> = (0..dim)
        .map(|_| CMatrix::from_fn(dim, dim, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))))
        .collect();
    let mut s = CMatrix::zeros(dim, dim);
    for k in &ks {
        s.add_scaled(&(&k.adjoint() * k), 1.0);
    }
    let inv = s.hermitian_fn(|x| 1.0 / x.sqrt())?;
    let blocks = ks
        .iter()
        .enumerate()
        .map(|(n, k)| {
            let k = k * &inv;
            ChoiMatrix::from_map(dim, n, |rho| &(&k * rho) * &k.adjoint())
        })
        .collect::<Result<Vec<_>>>()?;
    QndMeasurement::new(blocks)
}

/// Conditional reset for one qubit after reporting `bit`: reset to |0⟩ with
/// probability `f` (otherwise leave the state), then flip if `bit` is 1.
fn reset_process(bit: usize, f: f64) -> Process {
    let x = pauli_x();
    let psd = choi_of_map(2, |m| {
        let mut out = m.scale_real(1.0 - f);
        out[(0, 0)] += m.trace() * f;
        if bit == 1 {
            &(&x * &out) * &x
        } else {
            out
        }
    });
    Process::from_psd(2, psd).expect("2x2 process")
}

/// Appends a reset and classically-conditioned NOT to every outcome block.
pub fn wrap_measure_and_reset(m: &QndMeasurement, reset_fidelity: f64) -> Result<QndMeasurement> {
    if !(0.0..=1.0).contains(&reset_fidelity) {
        return Err(Error::InvalidParameter(format!("reset fidelity {reset_fidelity} outside [0, 1]")));
    }
    let nq = m.n_qubits();
    let blocks = m
        .outcomes()
        .iter()
        .map(|c| {
            let n = c.outcome();
            let r = (0..nq)
                .map(|q| reset_process((n >> (nq - 1 - q)) & 1, reset_fidelity))
                .reduce(|a, b| a.tensor(&b))
                .expect("at least one qubit");
            let psd = choi_of_map(m.dim(), |x| r.apply(&crate::channels::apply_process(c, x).expect("dims agree")));
            ChoiMatrix::new(m.dim(), n, psd)
        })
        .collect::<Result<Vec<_>>>()?;
    QndMeasurement::new(blocks)
}

/// Ground-truth device.
#[derive(Clone, Debug)]
pub struct DeviceModel {
    pub graph: DeviceGraph,
    pub noise: Vec<NoiseParams>,
    pub qubit_channels: Vec<QndMeasurement>,
    /// Aligned with `graph.edges()`.
    pub edge_channels: Vec<QndMeasurement>,
    pub init_states: Vec<CMatrix>,
    /// `gates[q][g]` for `g` in gate-set order.
    pub gates: Vec<[Process; 4]>,
    pub reset_fidelity: f64,
    pub rng_seed: u64,
}

impl DeviceModel {
    /// Builds channels from per-qubit noise. Edge cross-talk strength is the
    /// mean of the endpoint values.
    pub fn new(graph: DeviceGraph, noise: Vec<NoiseParams>, rng_seed: u64) -> Result<Self> {
        if noise.len() != graph.n_qubits() {
            return Err(Error::DimensionMismatch(format!(
                "{} noise entries for {} qubits",
                noise.len(),
                graph.n_qubits()
            )));
        }
        let qubit_channels = noise.iter().map(build_decay_channel).collect::<Result<Vec<_>>>()?;
        let edge_channels = graph
            .edges()
            .iter()
            .map(|&(a, b)| {
                let s = 0.5 * (noise[a].crosstalk_strength + noise[b].crosstalk_strength);
                build_edge_channel(&qubit_channels[a], &qubit_channels[b], s)
            })
            .collect::<Result<Vec<_>>>()?;
        let gates = noise
            .iter()
            .map(|p| GATE_SET.map(|g| Process::from_unitary(&g.unitary()).depolarized(p.gate_depolarizing)))
            .collect();
        let init_states = vec![CMatrix::unit(2, 0, 0); graph.n_qubits()];
        Ok(Self { graph, noise, qubit_channels, edge_channels, init_states, gates, reset_fidelity: 1.0, rng_seed })
    }

    pub fn uniform(graph: DeviceGraph, noise: NoiseParams, rng_seed: u64) -> Result<Self> {
        let n = graph.n_qubits();
        Self::new(graph, vec![noise; n], rng_seed)
    }

    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.graph.edges().iter().position(|&e| e == (a, b))
    }

    pub fn validate(&self) -> Result<()> {
        for m in self.qubit_channels.iter().chain(&self.edge_channels) {
            m.validate(CP_TOL, TP_TOL)?;
        }
        Ok(())
    }

    /// Ground-truth detector of a target, in the direct or the
    /// measure-and-reset variant.
    pub fn detector(&self, target: Target, reset: bool) -> Result<QndMeasurement> {
        let m = match target {
            Target::Qubit(q) => self
                .qubit_channels
                .get(q)
                .ok_or_else(|| Error::OutOfRange(format!("qubit {q} not in device")))?,
            Target::Edge(a, b) => {
                let idx = self.edge_index(a, b).ok_or_else(|| Error::OutOfRange(format!("edge {target} not in device")))?;
                &self.edge_channels[idx]
            }
        };
        if reset {
            wrap_measure_and_reset(m, self.reset_fidelity)
        } else {
            Ok(m.clone())
        }
    }

    fn gate(&self, q: usize, g: GateLabel) -> &Process {
        &self.gates[q][g.index()]
    }

    fn sequence(&self, q: usize, gates: &[GateLabel]) -> Process {
        gates.iter().fold(Process::identity(2), |acc, &g| acc.then(self.gate(q, g)))
    }
}

/// Detector channels actually used for measurement in a given variant.
struct Detectors {
    qubits: Vec<QndMeasurement>,
    edges: Vec<QndMeasurement>,
}

impl Detectors {
    fn new(model: &DeviceModel, reset: bool) -> Result<Self> {
        if !reset {
            return Ok(Self { qubits: model.qubit_channels.clone(), edges: model.edge_channels.clone() });
        }
        let f = model.reset_fidelity;
        Ok(Self {
            qubits: model.qubit_channels.iter().map(|m| wrap_measure_and_reset(m, f)).collect::<Result<_>>()?,
            edges: model.edge_channels.iter().map(|m| wrap_measure_and_reset(m, f)).collect::<Result<_>>()?,
        })
    }
}

/// `Tr[(A ⊗ Bᵀ) Υ̃]` evaluated without forming the Kronecker product.
pub fn trace_formula(a: &CMatrix, b: &CMatrix, psd: &CMatrix) -> C64 {
    let d = a.rows();
    let mut acc = ZERO;
    for i in 0..d {
        for j in 0..d {
            let aji = a[(j, i)];
            if aji == ZERO {
                continue;
            }
            let mut inner = ZERO;
            for k in 0..d {
                for l in 0..d {
                    inner += b[(k, l)] * psd[(i * d + k, j * d + l)];
                }
            }
            acc += aji * inner;
        }
    }
    acc
}

/// Exact outcome probabilities of one circuit on one target, row-major over
/// (first, second) outcome; GST circuits have a single measurement.
pub fn circuit_probabilities(model: &DeviceModel, target: &BatchTarget, reset: bool) -> Result<Vec<f64>> {
    let det = Detectors::new(model, reset)?;
    target_probabilities(model, &det, target)
}

fn target_probabilities(model: &DeviceModel, det: &Detectors, bt: &BatchTarget) -> Result<Vec<f64>> {
    match (&bt.setting, bt.target) {
        (Setting::Gst { gates }, Target::Qubit(q)) => {
            let sigma = model.sequence(q, gates).apply(&model.init_states[q]);
            Ok(det.qubits[q].povm().probabilities(&sigma))
        }
        (Setting::Block { preps, rotations }, target) => {
            let (qubits, detector): (Vec<usize>, &QndMeasurement) = match target {
                Target::Qubit(q) => (vec![q], &det.qubits[q]),
                Target::Edge(a, b) => {
                    let idx = model
                        .edge_index(a, b)
                        .ok_or_else(|| Error::ScheduleMismatch(format!("edge {target} not in device")))?;
                    (vec![a, b], &det.edges[idx])
                }
            };
            if preps.len() != qubits.len() || rotations.len() != qubits.len() {
                return Err(Error::ScheduleMismatch(format!("setting size does not match {target}")));
            }
            let rho = qubits.iter().map(|&q| model.init_states[q].clone()).reduce(|a, b| kron(&a, &b)).expect("nonempty");
            let prep = qubits
                .iter()
                .zip(preps)
                .map(|(&q, &v)| model.sequence(q, V_GATES[v].gates))
                .reduce(|a, b| a.tensor(&b))
                .expect("nonempty");
            let rot = qubits
                .iter()
                .zip(rotations)
                .map(|(&q, &u)| model.sequence(q, U_GATES[u].gates))
                .reduce(|a, b| a.tensor(&b))
                .expect("nonempty");
            let sigma = prep.apply(&rho);
            let povm: Povm = detector.povm();
            let d = detector.dim();
            let pulled: Vec<CMatrix> = povm.elements().iter().map(|pm| rot.adjoint_apply(pm)).collect();
            let mut probs = vec![0.0; d * d];
            for n in 0..d {
                for m in 0..d {
                    probs[n * d + m] = trace_formula(&pulled[m], &sigma, detector.outcome(n).psd_form()).re;
                }
            }
            Ok(probs)
        }
        (Setting::Gst { .. }, Target::Edge(..)) => {
            Err(Error::ScheduleMismatch("GST circuits target single qubits".into()))
        }
    }
}

/// Runs every batch of the schedule with `shots` per circuit.
///
/// Batches are evaluated in parallel; each (batch, target) draws from its own
/// keyed stream so the table does not depend on evaluation order.
pub fn execute(model: &DeviceModel, schedule: &Schedule, shots: u64, seed: u64) -> Result<CountsTable> {
    check_shots(shots)?;
    schedule.check_graph(&model.graph)?;
    let direct = Detectors::new(model, false)?;
    let reset = if schedule.batches.iter().any(|b| b.circuit.reset_variant) {
        Some(Detectors::new(model, true)?)
    } else {
        None
    };
    let per_batch: Vec<Vec<(CircuitKey, OutcomeCounts)>> = schedule
        .batches
        .par_iter()
        .map(|batch: &Batch| {
            let det = if batch.circuit.reset_variant { reset.as_ref().expect("built above") } else { &direct };
            batch
                .targets
                .iter()
                .map(|bt| {
                    let probs = target_probabilities(model, det, bt)?;
                    let total: f64 = probs.iter().sum();
                    if (total - 1.0).abs() > 1e-9 {
                        return Err(Error::InvalidParameter(format!(
                            "probabilities of batch {} on {} sum to {total}",
                            batch.index, bt.target
                        )));
                    }
                    let mut rng = keyed_rng(seed, batch.index, bt.target);
                    let counts = sample_multinomial(&mut rng, shots, &probs);
                    let (n_first, n_second) = match bt.setting {
                        Setting::Gst { .. } => (2, 1),
                        Setting::Block { ref preps, .. } => (1 << preps.len(), 1 << preps.len()),
                    };
                    Ok((
                        CircuitKey {
                            batch: batch.index,
                            target: bt.target,
                            prep: bt.prep.clone(),
                            rotation: bt.rotation.clone(),
                        },
                        OutcomeCounts { n_first, n_second, counts },
                    ))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = CountsTable::new(shots)?;
    for (k, v) in per_batch.into_iter().flatten() {
        table.insert(k, v)?;
    }
    Ok(table)
}
