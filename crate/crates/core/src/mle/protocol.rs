//! Full reconstruction of a device: GST per qubit, then single-qubit Choi
//! matrices, two-qubit POVMs and two-qubit Choi matrices.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gst::{gst_solve, GstDocument};
use super::{choi_mle, povm_mle, ChoiConstraint, ChoiProblem, GstEstimate, GstProblem, OptimizerConfig, PovmProblem, ProblemLog};
use crate::channels::{ChoiMatrix, MeasurementDocument, Povm, QndMeasurement};
use crate::circuits::{DeviceGraph, Target};
use crate::counts::CountsTable;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProblemKind {
    #[serde(rename = "GST")]
    Gst,
    #[serde(rename = "Choi-1Q")]
    Choi1q,
    #[serde(rename = "POVM-2Q")]
    Povm2q,
    #[serde(rename = "Choi-2Q")]
    Choi2q,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProblemId {
    pub kind: ProblemKind,
    pub target: Target,
    pub outcome: Option<usize>,
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ProblemKind::Gst => "gst",
            ProblemKind::Choi1q => "choi-1q",
            ProblemKind::Povm2q => "povm-2q",
            ProblemKind::Choi2q => "choi-2q",
        };
        write!(f, "{kind}/{}", self.target)?;
        if let Some(n) = self.outcome {
            let bits = match self.target {
                Target::Qubit(_) => 1,
                Target::Edge(..) => 2,
            };
            write!(f, "/{}", crate::channels::outcome_label(n, bits))?;
        }
        Ok(())
    }
}

/// The reconstruction problems of a device: per qubit one GST and two Choi
/// problems, per edge one POVM and four Choi problems.
pub fn plan_problems(graph: &DeviceGraph) -> Vec<ProblemId> {
    let mut out = Vec::with_capacity(3 * graph.n_qubits() + 5 * graph.edges().len());
    for q in 0..graph.n_qubits() {
        out.push(ProblemId { kind: ProblemKind::Gst, target: Target::Qubit(q), outcome: None });
    }
    for q in 0..graph.n_qubits() {
        for n in 0..2 {
            out.push(ProblemId { kind: ProblemKind::Choi1q, target: Target::Qubit(q), outcome: Some(n) });
        }
    }
    for &(a, b) in graph.edges() {
        out.push(ProblemId { kind: ProblemKind::Povm2q, target: Target::Edge(a, b), outcome: None });
    }
    for &(a, b) in graph.edges() {
        for n in 0..4 {
            out.push(ProblemId { kind: ProblemKind::Choi2q, target: Target::Edge(a, b), outcome: Some(n) });
        }
    }
    out
}

/// Reconstructed gate sets and QND measurements of a device.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateSet {
    pub gst: BTreeMap<usize, GstEstimate>,
    pub qubits: BTreeMap<usize, QndMeasurement>,
    pub edges: BTreeMap<(usize, usize), QndMeasurement>,
    /// Two-qubit POVMs as reconstructed (before the Choi step).
    pub edge_povms: BTreeMap<(usize, usize), Povm>,
    pub logs: Vec<ProblemLog>,
}

impl EstimateSet {
    pub fn measurement(&self, target: Target) -> Option<&QndMeasurement> {
        match target {
            Target::Qubit(q) => self.qubits.get(&q),
            Target::Edge(a, b) => self.edges.get(&(a, b)),
        }
    }

    pub fn all_converged(&self) -> bool {
        self.logs.iter().all(|l| l.converged)
    }

    pub fn total_log_likelihood(&self) -> f64 {
        self.logs.iter().map(|l| l.log_likelihood).sum()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ProtocolOptions {
    pub optimizer: OptimizerConfig,
    pub constraint: ChoiConstraint,
    /// Use these gate sets instead of running GST.
    pub fixed_gst: Option<BTreeMap<usize, GstEstimate>>,
    /// Warm starts for every problem (e.g. the point estimate during a
    /// bootstrap).
    pub warm_start: Option<EstimateSet>,
    /// Fail with [`Error::NotConverged`] instead of returning a flagged log.
    pub require_convergence: bool,
}

pub fn run_protocol(counts: &CountsTable, graph: &DeviceGraph, cfg: &OptimizerConfig) -> Result<EstimateSet> {
    run_protocol_with(counts, graph, &ProtocolOptions { optimizer: cfg.clone(), ..Default::default() })
}

fn check(log: &ProblemLog, opts: &ProtocolOptions) -> Result<()> {
    if opts.require_convergence && !log.converged {
        return Err(Error::NotConverged(format!("{} after {} iterations", log.problem, log.iterations)));
    }
    Ok(())
}

pub fn run_protocol_with(counts: &CountsTable, graph: &DeviceGraph, opts: &ProtocolOptions) -> Result<EstimateSet> {
    opts.optimizer.validate()?;
    let plan = plan_problems(graph);
    let cfg = &opts.optimizer;
    let warm = opts.warm_start.as_ref();
    let mut logs = Vec::with_capacity(plan.len());

    let gst: BTreeMap<usize, GstEstimate> = match &opts.fixed_gst {
        Some(fixed) => {
            for q in 0..graph.n_qubits() {
                if !fixed.contains_key(&q) {
                    return Err(Error::InvalidParameter(format!("no fixed gate set for qubit {q}")));
                }
            }
            fixed.clone()
        }
        None => {
            let ids: Vec<&ProblemId> = plan.iter().filter(|p| p.kind == ProblemKind::Gst).collect();
            let solved: Vec<(usize, GstEstimate)> = ids
                .par_iter()
                .map(|id| {
                    let Target::Qubit(q) = id.target else { unreachable!("GST targets qubits") };
                    let name = id.to_string();
                    let run = || -> Result<GstEstimate> {
                        let problem = GstProblem::from_counts(counts, q)?;
                        let est = gst_solve(&problem, &name, cfg, warm.and_then(|w| w.gst.get(&q)))?;
                        check(&est.log, opts)?;
                        Ok(est)
                    };
                    run().map(|e| (q, e)).map_err(|e| e.in_problem(&name))
                })
                .collect::<Result<_>>()?;
            logs.extend(solved.iter().map(|(_, e)| e.log.clone()));
            solved.into_iter().collect()
        }
    };

    // single-qubit Choi problems and two-qubit POVMs only need the gate sets
    let stage2: Vec<&ProblemId> =
        plan.iter().filter(|p| matches!(p.kind, ProblemKind::Choi1q | ProblemKind::Povm2q)).collect();
    enum Stage2 {
        Choi(usize, ChoiMatrix),
        Povm((usize, usize), Povm),
    }
    let solved: Vec<(Stage2, ProblemLog)> = stage2
        .par_iter()
        .map(|id| {
            let name = id.to_string();
            let run = || -> Result<(Stage2, ProblemLog)> {
                match (id.kind, id.target) {
                    (ProblemKind::Choi1q, Target::Qubit(q)) => {
                        let n = id.outcome.expect("Choi problems have an outcome");
                        let g = &gst[&q];
                        let data = counts.block_data(id.target)?;
                        let problem = ChoiProblem::from_block(&data, &[g], &g.povm, n, opts.constraint)?;
                        let start = warm.and_then(|w| w.qubits.get(&q)).map(|m| m.outcome(n).psd_form());
                        let (choi, log) = choi_mle(&problem, &name, cfg, start)?;
                        check(&log, opts)?;
                        Ok((Stage2::Choi(q, choi), log))
                    }
                    (ProblemKind::Povm2q, Target::Edge(a, b)) => {
                        let data = counts.block_data(id.target)?;
                        let problem = PovmProblem::from_block(&data, &[&gst[&a], &gst[&b]])?;
                        let start = warm.and_then(|w| w.edge_povms.get(&(a, b)));
                        let (povm, log) = povm_mle(&problem, &name, cfg, start)?;
                        check(&log, opts)?;
                        Ok((Stage2::Povm((a, b), povm), log))
                    }
                    _ => unreachable!("stage two holds single-qubit Choi and two-qubit POVM problems"),
                }
            };
            run().map_err(|e| e.in_problem(&name))
        })
        .collect::<Result<_>>()?;
    let mut qubit_outcomes: BTreeMap<usize, Vec<ChoiMatrix>> = BTreeMap::new();
    let mut edge_povms = BTreeMap::new();
    for (item, log) in solved {
        logs.push(log);
        match item {
            Stage2::Choi(q, c) => qubit_outcomes.entry(q).or_default().push(c),
            Stage2::Povm(e, p) => {
                edge_povms.insert(e, p);
            }
        }
    }
    let qubits = qubit_outcomes
        .into_iter()
        .map(|(q, mut cs)| {
            cs.sort_by_key(ChoiMatrix::outcome);
            QndMeasurement::new(cs).map(|m| (q, m))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;

    let stage3: Vec<&ProblemId> = plan.iter().filter(|p| p.kind == ProblemKind::Choi2q).collect();
    let solved: Vec<((usize, usize), ChoiMatrix, ProblemLog)> = stage3
        .par_iter()
        .map(|id| {
            let name = id.to_string();
            let run = || -> Result<((usize, usize), ChoiMatrix, ProblemLog)> {
                let Target::Edge(a, b) = id.target else { unreachable!("two-qubit problems target edges") };
                let n = id.outcome.expect("Choi problems have an outcome");
                let data = counts.block_data(id.target)?;
                let problem =
                    ChoiProblem::from_block(&data, &[&gst[&a], &gst[&b]], &edge_povms[&(a, b)], n, opts.constraint)?;
                let start = warm.and_then(|w| w.edges.get(&(a, b))).map(|m| m.outcome(n).psd_form());
                let (choi, log) = choi_mle(&problem, &name, cfg, start)?;
                check(&log, opts)?;
                Ok(((a, b), choi, log))
            };
            run().map_err(|e| e.in_problem(&name))
        })
        .collect::<Result<_>>()?;
    let mut edge_outcomes: BTreeMap<(usize, usize), Vec<ChoiMatrix>> = BTreeMap::new();
    for (e, c, log) in solved {
        logs.push(log);
        edge_outcomes.entry(e).or_default().push(c);
    }
    let edges = edge_outcomes
        .into_iter()
        .map(|(e, mut cs)| {
            cs.sort_by_key(ChoiMatrix::outcome);
            QndMeasurement::new(cs).map(|m| (e, m))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;

    Ok(EstimateSet { gst, qubits, edges, edge_povms, logs })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TargetMeasurement {
    pub target: Target,
    pub measurement: MeasurementDocument,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TargetGst {
    pub qubit: usize,
    pub estimate: GstDocument,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimateSetDocument {
    pub gst: Vec<TargetGst>,
    pub measurements: Vec<TargetMeasurement>,
    pub edge_povms: Vec<(Target, crate::channels::PovmDocument)>,
    pub logs: Vec<ProblemLog>,
}

impl From<&EstimateSet> for EstimateSetDocument {
    fn from(e: &EstimateSet) -> Self {
        let mut measurements: Vec<TargetMeasurement> = e
            .qubits
            .iter()
            .map(|(&q, m)| TargetMeasurement { target: Target::Qubit(q), measurement: m.into() })
            .collect();
        measurements.extend(
            e.edges.iter().map(|(&(a, b), m)| TargetMeasurement { target: Target::Edge(a, b), measurement: m.into() }),
        );
        Self {
            gst: e.gst.iter().map(|(&qubit, g)| TargetGst { qubit, estimate: g.into() }).collect(),
            measurements,
            edge_povms: e.edge_povms.iter().map(|(&(a, b), p)| (Target::Edge(a, b), p.into())).collect(),
            logs: e.logs.clone(),
        }
    }
}

impl TryFrom<&EstimateSetDocument> for EstimateSet {
    type Error = Error;
    fn try_from(doc: &EstimateSetDocument) -> Result<Self> {
        let mut out = EstimateSet {
            gst: BTreeMap::new(),
            qubits: BTreeMap::new(),
            edges: BTreeMap::new(),
            edge_povms: BTreeMap::new(),
            logs: doc.logs.clone(),
        };
        for g in &doc.gst {
            out.gst.insert(g.qubit, GstEstimate::try_from(&g.estimate)?);
        }
        for m in &doc.measurements {
            let meas = QndMeasurement::try_from(&m.measurement)?;
            match m.target {
                Target::Qubit(q) => out.qubits.insert(q, meas),
                Target::Edge(a, b) => out.edges.insert((a, b), meas),
            };
        }
        for (t, p) in &doc.edge_povms {
            let Target::Edge(a, b) = *t else {
                return Err(Error::Malformed(format!("two-qubit POVM stored for {t}")));
            };
            out.edge_povms.insert((a, b), Povm::try_from(p)?);
        }
        Ok(out)
    }
}
