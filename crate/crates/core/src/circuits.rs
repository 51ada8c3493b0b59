//! Gate sets, tomography circuit families and the parallel batch scheduler.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pauli_x, pauli_y, pauli_rotation, CMatrix};

pub const GST_CIRCUITS: usize = 64;
pub const QNDMT_1Q_CIRCUITS: usize = 18;
pub const QNDMT_2Q_CIRCUITS: usize = 324;

/// Native single-qubit gates, the GST gate set G.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GateLabel {
    I,
    X,
    /// e^{−iπσ_y/4}
    Y90,
    /// e^{−iπσ_x/4}
    X90,
}

pub const GATE_SET: [GateLabel; 4] = [GateLabel::I, GateLabel::X, GateLabel::Y90, GateLabel::X90];

impl GateLabel {
    pub fn index(self) -> usize {
        match self {
            GateLabel::I => 0,
            GateLabel::X => 1,
            GateLabel::Y90 => 2,
            GateLabel::X90 => 3,
        }
    }

    pub fn unitary(self) -> CMatrix {
        match self {
            GateLabel::I => CMatrix::identity(2),
            GateLabel::X => pauli_x(),
            GateLabel::Y90 => pauli_rotation(&pauli_y(), std::f64::consts::FRAC_PI_2),
            GateLabel::X90 => pauli_rotation(&pauli_x(), std::f64::consts::FRAC_PI_2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GateLabel::I => "I",
            GateLabel::X => "X",
            GateLabel::Y90 => "Y90",
            GateLabel::X90 => "X90",
        }
    }
}

impl fmt::Display for GateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub label: String,
    pub unitary: CMatrix,
}

/// A labeled gate sequence, applied left to right in time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GateSequence {
    pub label: &'static str,
    pub gates: &'static [GateLabel],
}

impl GateSequence {
    pub fn unitary(&self) -> CMatrix {
        self.gates.iter().fold(CMatrix::identity(2), |acc, g| &g.unitary() * &acc)
    }

    pub fn gate(&self) -> Gate {
        Gate { label: self.label.to_string(), unitary: self.unitary() }
    }
}

use GateLabel::{X as GX, X90 as GX90, Y90 as GY90};

/// State preparations V: ±z, ±x, ∓y eigenstates from |0⟩. The rotations with
/// positive exponent are realized by an X flip followed by the native gate.
pub const V_GATES: [GateSequence; 6] = [
    GateSequence { label: "I", gates: &[] },
    GateSequence { label: "X", gates: &[GX] },
    GateSequence { label: "Y90", gates: &[GY90] },
    GateSequence { label: "Ym90", gates: &[GX, GY90] },
    GateSequence { label: "X90", gates: &[GX90] },
    GateSequence { label: "Xm90", gates: &[GX, GX90] },
];

/// Measurement-basis rotations U: z, x and y readout.
pub const U_GATES: [GateSequence; 3] = [
    GateSequence { label: "I", gates: &[] },
    GateSequence { label: "Y90", gates: &[GY90] },
    GateSequence { label: "X90", gates: &[GX90] },
];

/// All ordered triples over the gate set; entry `16i + 4j + k` is `(i, j, k)`,
/// applied in that order before the final measurement.
pub fn gst_circuits() -> Vec<[GateLabel; 3]> {
    let mut out = Vec::with_capacity(GST_CIRCUITS);
    for a in GATE_SET {
        for b in GATE_SET {
            for c in GATE_SET {
                out.push([a, b, c]);
            }
        }
    }
    out
}

pub fn gst_label(triple: &[GateLabel; 3]) -> String {
    format!("{}.{}.{}", triple[0], triple[1], triple[2])
}

pub fn block_prep_label(v: &[usize]) -> String {
    v.iter().map(|&i| V_GATES[i].label).collect::<Vec<_>>().join(",")
}

pub fn block_rotation_label(u: &[usize]) -> String {
    u.iter().map(|&i| U_GATES[i].label).collect::<Vec<_>>().join(",")
}

/// Per-target circuit content, indexed into the gate tables above.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    Gst { gates: [GateLabel; 3] },
    Block { preps: Vec<usize>, rotations: Vec<usize> },
}

impl Setting {
    pub fn prep_label(&self) -> String {
        match self {
            Setting::Gst { gates } => gst_label(gates),
            Setting::Block { preps, .. } => block_prep_label(preps),
        }
    }

    pub fn rotation_label(&self) -> String {
        match self {
            Setting::Gst { .. } => "-".to_string(),
            Setting::Block { rotations, .. } => block_rotation_label(rotations),
        }
    }
}

/// Enumerates the V×U settings of a one- or two-qubit block, V-major and with
/// the first block qubit as the leading digit.
pub fn qndmt_settings(n_qubits_in_block: usize) -> Result<Vec<Setting>> {
    match n_qubits_in_block {
        1 => Ok((0..6)
            .flat_map(|v| (0..3).map(move |u| Setting::Block { preps: vec![v], rotations: vec![u] }))
            .collect()),
        2 => {
            let mut out = Vec::with_capacity(QNDMT_2Q_CIRCUITS);
            for va in 0..6 {
                for vb in 0..6 {
                    for ua in 0..3 {
                        for ub in 0..3 {
                            out.push(Setting::Block { preps: vec![va, vb], rotations: vec![ua, ub] });
                        }
                    }
                }
            }
            Ok(out)
        }
        n => Err(Error::InvalidParameter(format!("QND-MT blocks have 1 or 2 qubits, got {n}"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CircuitKind {
    #[serde(rename = "GST")]
    Gst,
    #[serde(rename = "QNDMT-1Q")]
    Qndmt1q,
    #[serde(rename = "QNDMT-2Q")]
    Qndmt2q,
}

/// What one device qubit does during a circuit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QubitProgram {
    pub prep: Vec<GateLabel>,
    pub mid_measure: bool,
    pub rotation: Vec<GateLabel>,
    pub final_measure: bool,
}

impl QubitProgram {
    pub fn idle() -> Self {
        Self { prep: vec![], mid_measure: false, rotation: vec![], final_measure: false }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Circuit {
    pub kind: CircuitKind,
    pub qubit_assignment: BTreeMap<usize, QubitProgram>,
    pub reset_variant: bool,
}

impl Circuit {
    /// Block-local circuit: qubit keys are positions inside the block.
    pub fn from_setting(setting: &Setting, reset_variant: bool) -> Self {
        let mut qubit_assignment = BTreeMap::new();
        let kind = match setting {
            Setting::Gst { gates } => {
                qubit_assignment.insert(
                    0,
                    QubitProgram { prep: gates.to_vec(), mid_measure: false, rotation: vec![], final_measure: true },
                );
                CircuitKind::Gst
            }
            Setting::Block { preps, rotations } => {
                for (q, (&v, &u)) in preps.iter().zip(rotations).enumerate() {
                    qubit_assignment.insert(
                        q,
                        QubitProgram {
                            prep: V_GATES[v].gates.to_vec(),
                            mid_measure: true,
                            rotation: U_GATES[u].gates.to_vec(),
                            final_measure: true,
                        },
                    );
                }
                if preps.len() == 1 {
                    CircuitKind::Qndmt1q
                } else {
                    CircuitKind::Qndmt2q
                }
            }
        };
        Self { kind, qubit_assignment, reset_variant }
    }
}

/// The block-local circuits of a QND-MT block of one or two qubits.
pub fn qndmt_circuits(n_qubits_in_block: usize) -> Result<Vec<Circuit>> {
    Ok(qndmt_settings(n_qubits_in_block)?.iter().map(|s| Circuit::from_setting(s, false)).collect())
}

/// A tomography target: a single qubit or a connected pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    Qubit(usize),
    Edge(usize, usize),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Qubit(q) => write!(f, "q{q}"),
            Target::Edge(a, b) => write!(f, "e{a}-{b}"),
        }
    }
}

impl FromStr for Target {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Malformed(format!("target {s:?}"));
        if let Some(rest) = s.strip_prefix('q') {
            return rest.parse().map(Target::Qubit).map_err(|_| bad());
        }
        if let Some(rest) = s.strip_prefix('e') {
            let (a, b) = rest.split_once('-').ok_or_else(bad)?;
            return Ok(Target::Edge(a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?));
        }
        Err(bad())
    }
}

impl Serialize for Target {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Target {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Device connectivity. Edges are stored as `(min, max)` in declaration order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceGraph {
    n_qubits: usize,
    edges: Vec<(usize, usize)>,
}

impl DeviceGraph {
    pub fn new(n_qubits: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n_qubits == 0 {
            return Err(Error::InvalidGraph("device needs at least one qubit".into()));
        }
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::with_capacity(edges.len());
        for (idx, &(a, b)) in edges.iter().enumerate() {
            if a >= n_qubits || b >= n_qubits {
                return Err(Error::InvalidGraph(format!(
                    "edge {idx} ({a},{b}) references a qubit outside 0..{n_qubits}"
                )));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("edge {idx} ({a},{b}) is a self-loop")));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(Error::InvalidGraph(format!("edge {idx} ({a},{b}) is repeated")));
            }
            out.push(e);
        }
        Ok(Self { n_qubits, edges: out })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degree(&self, q: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == q || b == q).count()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n_qubits).map(|q| self.degree(q)).max().unwrap_or(0)
    }
}

/// Partition of the edges into groups of vertex-disjoint edges.
///
/// Greedy first-fit over edges sorted by descending `deg(u)+deg(v)`, ties by
/// `(min, max)`. If that exceeds Δ+1 colors the Misra–Gries construction is
/// used instead, which always fits in Δ+1.
pub fn edge_coloring(g: &DeviceGraph) -> Vec<Vec<(usize, usize)>> {
    if g.edges.is_empty() {
        return vec![];
    }
    let delta = g.max_degree();
    let greedy = greedy_coloring(g);
    let colors = if greedy.iter().max().map_or(0, |&c| c + 1) <= delta + 1 {
        greedy
    } else {
        misra_gries(g, delta)
    };
    let n_colors = colors.iter().max().map_or(0, |&c| c + 1);
    let mut groups = vec![Vec::new(); n_colors];
    for (e, &c) in g.edges.iter().zip(&colors) {
        groups[c].push(*e);
    }
    for grp in &mut groups {
        grp.sort_unstable();
    }
    groups.retain(|grp| !grp.is_empty());
    groups
}

fn greedy_coloring(g: &DeviceGraph) -> Vec<usize> {
    let deg: Vec<usize> = (0..g.n_qubits).map(|q| g.degree(q)).collect();
    let mut order: Vec<usize> = (0..g.edges.len()).collect();
    order.sort_by_key(|&i| {
        let (a, b) = g.edges[i];
        (std::cmp::Reverse(deg[a] + deg[b]), a, b)
    });
    let mut used: Vec<Vec<bool>> = vec![Vec::new(); g.n_qubits];
    let mut colors = vec![0; g.edges.len()];
    for i in order {
        let (a, b) = g.edges[i];
        let c = (0..)
            .find(|&c| !used[a].get(c).copied().unwrap_or(false) && !used[b].get(c).copied().unwrap_or(false))
            .expect("unbounded search");
        for v in [a, b] {
            if used[v].len() <= c {
                used[v].resize(c + 1, false);
            }
            used[v][c] = true;
        }
        colors[i] = c;
    }
    colors
}

struct Coloring {
    /// `at[v][c]` is the neighbour joined to `v` by an edge of color `c`.
    at: Vec<Vec<Option<usize>>>,
    color: HashMap<(usize, usize), usize>,
}

impl Coloring {
    fn key(u: usize, v: usize) -> (usize, usize) {
        (u.min(v), u.max(v))
    }

    fn get(&self, u: usize, v: usize) -> Option<usize> {
        self.color.get(&Self::key(u, v)).copied()
    }

    fn is_free(&self, v: usize, c: usize) -> bool {
        self.at[v][c].is_none()
    }

    fn free_color(&self, v: usize) -> usize {
        (0..self.at[v].len()).find(|&c| self.is_free(v, c)).expect("Δ+1 colors leave one free")
    }

    fn clear(&mut self, u: usize, v: usize) {
        if let Some(c) = self.color.remove(&Self::key(u, v)) {
            self.at[u][c] = None;
            self.at[v][c] = None;
        }
    }

    fn set(&mut self, u: usize, v: usize, c: usize) {
        self.clear(u, v);
        debug_assert!(self.is_free(u, c) && self.is_free(v, c));
        self.color.insert(Self::key(u, v), c);
        self.at[u][c] = Some(v);
        self.at[v][c] = Some(u);
    }
}

fn misra_gries(g: &DeviceGraph, delta: usize) -> Vec<usize> {
    let n_colors = delta + 1;
    let mut adj = vec![Vec::new(); g.n_qubits];
    for &(a, b) in &g.edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut st = Coloring { at: vec![vec![None; n_colors]; g.n_qubits], color: HashMap::new() };
    for &(u, v) in &g.edges {
        // maximal fan of u starting at v
        let mut fan = vec![v];
        loop {
            let last = *fan.last().expect("nonempty");
            let next = adj[u].iter().copied().find(|&w| {
                !fan.contains(&w) && st.get(u, w).is_some_and(|c| st.is_free(last, c))
            });
            match next {
                Some(w) => fan.push(w),
                None => break,
            }
        }
        let c = st.free_color(u);
        let d = st.free_color(*fan.last().expect("nonempty"));
        // invert the cd-path starting at u
        if c != d {
            let mut path = Vec::new();
            let mut x = u;
            let mut want = d;
            while let Some(y) = st.at[x][want] {
                path.push((x, y, want));
                x = y;
                want = if want == d { c } else { d };
            }
            for &(a, b, _) in &path {
                st.clear(a, b);
            }
            for &(a, b, col) in &path {
                st.set(a, b, if col == d { c } else { d });
            }
        }
        // the shortest fan prefix ending in a vertex where d is free
        let mut w_idx = 0;
        for j in 0..fan.len() {
            if j > 0 {
                let still_fan = st.get(u, fan[j]).is_some_and(|col| st.is_free(fan[j - 1], col));
                if !still_fan {
                    break;
                }
            }
            if st.is_free(fan[j], d) {
                w_idx = j;
                break;
            }
        }
        let shifted: Vec<usize> = (0..w_idx).map(|j| st.get(u, fan[j + 1]).expect("fan edge colored")).collect();
        for &f in &fan[1..=w_idx] {
            st.clear(u, f);
        }
        for (j, &col) in shifted.iter().enumerate() {
            st.set(u, fan[j], col);
        }
        st.set(u, fan[w_idx], d);
    }
    g.edges.iter().map(|&(a, b)| st.get(a, b).expect("every edge colored")).collect()
}

/// Who a batch measures and with which labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchTarget {
    pub target: Target,
    pub prep: String,
    pub rotation: String,
    pub setting: Setting,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub index: usize,
    pub kind: CircuitKind,
    pub color_group: Option<usize>,
    pub circuit: Circuit,
    pub targets: Vec<BatchTarget>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub graph: DeviceGraph,
    pub color_groups: Vec<Vec<(usize, usize)>>,
    pub batches: Vec<Batch>,
}

/// Upper bound on batches when at most `groups` color groups are needed.
pub fn batch_bound(groups: usize) -> usize {
    groups * QNDMT_2Q_CIRCUITS + GST_CIRCUITS + QNDMT_1Q_CIRCUITS
}

pub fn build_schedule(g: &DeviceGraph) -> Schedule {
    build_schedule_with(g, false)
}

/// GST batches first, then single-qubit QND-MT, then one run of the 324
/// two-qubit circuits per color group. Qubits outside the active pairs idle.
pub fn build_schedule_with(g: &DeviceGraph, reset_variant: bool) -> Schedule {
    let color_groups = edge_coloring(g);
    let n = g.n_qubits;
    let mut batches = Vec::with_capacity(batch_bound(color_groups.len()));

    for gates in gst_circuits() {
        let setting = Setting::Gst { gates };
        let local = Circuit::from_setting(&setting, reset_variant);
        let program = &local.qubit_assignment[&0];
        let qubit_assignment = (0..n).map(|q| (q, program.clone())).collect();
        let targets = (0..n).map(|q| target_entry(Target::Qubit(q), &setting)).collect();
        batches.push(Batch {
            index: batches.len(),
            kind: CircuitKind::Gst,
            color_group: None,
            circuit: Circuit { kind: CircuitKind::Gst, qubit_assignment, reset_variant },
            targets,
        });
    }

    for setting in qndmt_settings(1).expect("valid block size") {
        let local = Circuit::from_setting(&setting, reset_variant);
        let program = &local.qubit_assignment[&0];
        let qubit_assignment = (0..n).map(|q| (q, program.clone())).collect();
        let targets = (0..n).map(|q| target_entry(Target::Qubit(q), &setting)).collect();
        batches.push(Batch {
            index: batches.len(),
            kind: CircuitKind::Qndmt1q,
            color_group: None,
            circuit: Circuit { kind: CircuitKind::Qndmt1q, qubit_assignment, reset_variant },
            targets,
        });
    }

    let settings2 = qndmt_settings(2).expect("valid block size");
    for (gi, group) in color_groups.iter().enumerate() {
        for setting in &settings2 {
            let local = Circuit::from_setting(setting, reset_variant);
            let mut qubit_assignment: BTreeMap<usize, QubitProgram> =
                (0..n).map(|q| (q, QubitProgram::idle())).collect();
            for &(a, b) in group {
                qubit_assignment.insert(a, local.qubit_assignment[&0].clone());
                qubit_assignment.insert(b, local.qubit_assignment[&1].clone());
            }
            let targets = group.iter().map(|&(a, b)| target_entry(Target::Edge(a, b), setting)).collect();
            batches.push(Batch {
                index: batches.len(),
                kind: CircuitKind::Qndmt2q,
                color_group: Some(gi),
                circuit: Circuit { kind: CircuitKind::Qndmt2q, qubit_assignment, reset_variant },
                targets,
            });
        }
    }

    Schedule { graph: g.clone(), color_groups, batches }
}

fn target_entry(target: Target, setting: &Setting) -> BatchTarget {
    BatchTarget { target, prep: setting.prep_label(), rotation: setting.rotation_label(), setting: setting.clone() }
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn reset_variant(&self) -> bool {
        self.batches.first().is_some_and(|b| b.circuit.reset_variant)
    }

    /// Checks that the schedule was built for `g`.
    pub fn check_graph(&self, g: &DeviceGraph) -> Result<()> {
        if &self.graph != g {
            return Err(Error::ScheduleMismatch("schedule was built for a different device graph".into()));
        }
        for batch in &self.batches {
            for t in &batch.targets {
                let ok = match t.target {
                    Target::Qubit(q) => q < g.n_qubits(),
                    Target::Edge(a, b) => g.edges().contains(&(a, b)),
                };
                if !ok {
                    return Err(Error::ScheduleMismatch(format!("batch {} targets unknown {}", batch.index, t.target)));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{C64, ONE};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn fig1e() -> DeviceGraph {
        DeviceGraph::new(7, &[(0, 1), (1, 2), (1, 3), (3, 5), (4, 5), (5, 6)]).unwrap()
    }

    fn check_partition(g: &DeviceGraph, groups: &[Vec<(usize, usize)>]) {
        let mut all: Vec<_> = groups.iter().flatten().copied().collect();
        all.sort_unstable();
        let mut expected = g.edges().to_vec();
        expected.sort_unstable();
        assert_eq!(all, expected);
        for grp in groups {
            let mut seen = std::collections::HashSet::new();
            for &(a, b) in grp {
                assert!(seen.insert(a) && seen.insert(b), "group {grp:?} shares a qubit");
            }
        }
    }

    /// Smallest number of colors, by exhaustive search.
    fn brute_force_chromatic_index(g: &DeviceGraph) -> usize {
        let m = g.edges().len();
        for k in 1..=m.max(1) {
            let mut colors = vec![0usize; m];
            loop {
                let ok = (0..m).all(|i| {
                    (0..i).all(|j| {
                        let (a, b) = g.edges()[i];
                        let (c, d) = g.edges()[j];
                        colors[i] != colors[j] || (a != c && a != d && b != c && b != d)
                    })
                });
                if ok {
                    return k;
                }
                let mut i = 0;
                while i < m && colors[i] == k - 1 {
                    colors[i] = 0;
                    i += 1;
                }
                if i == m {
                    break;
                }
                colors[i] += 1;
            }
        }
        m
    }

    #[test]
    fn gate_unitarity_and_identities() {
        for g in GATE_SET {
            let u = g.unitary();
            assert!((&u.adjoint() * &u).approx_eq(&CMatrix::identity(2), 1e-12));
        }
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = GateLabel::Y90.unitary().matvec(&[ONE, C64::new(0.0, 0.0)]);
        assert!((plus[0] - C64::new(s, 0.0)).norm() < 1e-12);
        assert!((plus[1] - C64::new(s, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn v_gates_prepare_pauli_eigenstates() {
        let zero = [ONE, C64::new(0.0, 0.0)];
        let states: Vec<Vec<C64>> = V_GATES.iter().map(|v| v.unitary().matvec(&zero)).collect();
        let bloch = |psi: &[C64]| {
            let rho = CMatrix::outer(psi, psi);
            [
                rho.trace_product(&crate::linalg::pauli_x()).re,
                rho.trace_product(&crate::linalg::pauli_y()).re,
                rho.trace_product(&crate::linalg::pauli_z()).re,
            ]
        };
        let expected = [
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 1.0, 0.0],
        ];
        for (psi, want) in states.iter().zip(expected) {
            let got = bloch(psi);
            for k in 0..3 {
                assert!((got[k] - want[k]).abs() < 1e-12, "{got:?} vs {want:?}");
            }
        }
        // Gram matrix |⟨ψ_a|ψ_b⟩|² of Pauli eigenstates: 1 on the diagonal,
        // 0 for antipodal pairs, 1/2 otherwise.
        for a in 0..6 {
            for b in 0..6 {
                let ov: C64 = states[a].iter().zip(&states[b]).map(|(x, y)| x.conj() * y).sum();
                let want = if a == b {
                    1.0
                } else if a / 2 == b / 2 {
                    0.0
                } else {
                    0.5
                };
                assert!((ov.norm_sqr() - want).abs() < 1e-12);
            }
        }
        // informational completeness: the projectors span the operator space
        let projs: Vec<CMatrix> = states.iter().map(|p| CMatrix::outer(p, p)).collect();
        let gram = CMatrix::from_fn(6, 6, |a, b| projs[a].adjoint().trace_product(&projs[b]));
        let rank = gram.eigenvalues_hermitian().unwrap().iter().filter(|&&l| l > 1e-9).count();
        assert_eq!(rank, 4);
    }

    #[test]
    fn gst_enumeration() {
        let c = gst_circuits();
        assert_eq!(c.len(), 64);
        assert!(c.contains(&[GateLabel::I; 3]));
        for slot in 0..3 {
            for g in GATE_SET {
                assert_eq!(c.iter().filter(|t| t[slot] == g).count(), 16);
            }
        }
        assert_eq!(c[16 + 4 * 2 + 3], [GateLabel::X, GateLabel::Y90, GateLabel::X90]);
    }

    #[test]
    fn qndmt_enumeration() {
        let one = qndmt_circuits(1).unwrap();
        assert_eq!(one.len(), 18);
        assert_eq!(qndmt_circuits(2).unwrap().len(), 324);
        assert!(qndmt_circuits(3).is_err());
        assert!(qndmt_circuits(0).is_err());
        let plain = &one[0].qubit_assignment[&0];
        assert!(plain.prep.is_empty() && plain.rotation.is_empty() && plain.mid_measure && plain.final_measure);
        for c in &one {
            let p = &c.qubit_assignment[&0];
            assert!(p.prep.len() <= 2 && p.rotation.len() <= 1 && p.mid_measure);
        }
    }

    #[test]
    fn fig1e_coloring() {
        let g = fig1e();
        let groups = edge_coloring(&g);
        assert_eq!(groups.len(), 3);
        assert!(groups.iter().all(|grp| grp.len() == 2));
        check_partition(&g, &groups);
    }

    #[test]
    fn small_colorings() {
        let single = DeviceGraph::new(2, &[(0, 1)]).unwrap();
        assert_eq!(edge_coloring(&single).len(), 1);
        let path = DeviceGraph::new(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let groups = edge_coloring(&path);
        assert_eq!(groups.len(), brute_force_chromatic_index(&path));
        assert_eq!(groups.len(), 2);
    }

    #[test]
    fn misra_gries_fits_delta_plus_one() {
        // a graph on which first-fit needs more than Δ+1 colors in this order
        let mut r = crate::linalg::test_util::rng(3);
        for _ in 0..200 {
            let n = r.random_range(2..12);
            let mut edges = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    if r.random_bool(0.4) {
                        edges.push((a, b));
                    }
                }
            }
            let g = DeviceGraph::new(n, &edges).unwrap();
            let colors = misra_gries(&g, g.max_degree());
            assert!(colors.iter().all(|&c| c <= g.max_degree()));
            for i in 0..edges.len() {
                for j in 0..i {
                    let (a, b) = g.edges()[i];
                    let (c, d) = g.edges()[j];
                    if a == c || a == d || b == c || b == d {
                        assert_ne!(colors[i], colors[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn schedule_counts() {
        let s = build_schedule(&fig1e());
        assert_eq!(s.len(), 1054);
        assert_eq!(batch_bound(4), 1378);
        let lone = build_schedule(&DeviceGraph::new(1, &[]).unwrap());
        assert_eq!(lone.len(), 82);
        let empty = build_schedule(&DeviceGraph::new(5, &[]).unwrap());
        assert_eq!(empty.len(), 82);
        assert_eq!(empty.batches[0].targets.len(), 5);
    }

    #[test]
    fn two_qubit_batches_idle_spectators() {
        let s = build_schedule(&fig1e());
        let b = &s.batches[82];
        assert_eq!(b.kind, CircuitKind::Qndmt2q);
        assert_eq!(b.targets.len(), 2);
        let active: Vec<usize> = b.targets.iter().flat_map(|t| match t.target {
            Target::Edge(a, c) => vec![a, c],
            Target::Qubit(q) => vec![q],
        }).collect();
        for (q, p) in &b.circuit.qubit_assignment {
            if active.contains(q) {
                assert!(p.mid_measure && p.final_measure);
            } else {
                assert_eq!(p, &QubitProgram::idle());
            }
        }
    }

    #[test]
    fn graph_validation() {
        assert!(DeviceGraph::new(7, &[(7, 8)]).is_err());
        assert!(DeviceGraph::new(3, &[(1, 1)]).is_err());
        assert!(DeviceGraph::new(3, &[(0, 1), (1, 0)]).is_err());
        assert_eq!(DeviceGraph::new(3, &[(2, 0)]).unwrap().edges(), &[(0, 2)]);
    }

    #[test]
    fn target_round_trip() {
        for t in [Target::Qubit(4), Target::Edge(3, 5)] {
            assert_eq!(t.to_string().parse::<Target>().unwrap(), t);
        }
        assert!("x1".parse::<Target>().is_err());
    }

    #[test]
    fn schedule_json_round_trip() {
        let s = build_schedule(&DeviceGraph::new(2, &[(0, 1)]).unwrap());
        let text = serde_json::to_string(&s).unwrap();
        let back: Schedule = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #[test]
        fn coloring_is_valid(n in 2usize..30, density in 0.0f64..0.5, seed in any::<u64>()) {
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut edges = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    if r.random_bool(density) {
                        edges.push((a, b));
                    }
                }
            }
            let g = DeviceGraph::new(n, &edges).unwrap();
            let groups = edge_coloring(&g);
            check_partition(&g, &groups);
            prop_assert!(groups.len() <= g.max_degree() + 1);
        }
    }
}
