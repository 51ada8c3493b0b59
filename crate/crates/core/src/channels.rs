//! Measurement processes in Choi form.
//!
//! A Choi block is stored in the positive-semidefinite ordering
//! `⟨ik|Υ̃|jl⟩ = ⟨i|𝓔(|k⟩⟨l|)|j⟩` (output index first, input index second).
//! The element-wise ordering `⟨ij|Υ|kl⟩`, which is also the row-major
//! Liouville matrix of the map, is obtained by [`reshuffle`].
//!
//! Outcome labels are bit strings whose character `q` is the outcome of block
//! qubit `q`; qubit 0 is the leftmost tensor factor, so the dense outcome
//! index of `"01"` is 1 and of `"10"` is 2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kron, partial_trace_first, CMatrix, C64, ZERO};

pub const CP_TOL: f64 = 1e-9;
pub const TP_TOL: f64 = 1e-6;

/// Swaps the middle two indices of a `d²×d²` matrix: `M[(a,b),(c,e)] ↦ M[(a,c),(b,e)]`.
/// Maps PSD-ordered Choi matrices to Liouville superoperators and back.
pub fn reshuffle(m: &CMatrix, d: usize) -> CMatrix {
    CMatrix::from_fn(d * d, d * d, |r, c| {
        let (a, b) = (r / d, r % d);
        let (cc, e) = (c / d, c % d);
        m[(a * d + cc, b * d + e)]
    })
}

/// PSD-ordered Choi matrix of an arbitrary linear map on `dim`-dimensional operators.
pub fn choi_of_map(dim: usize, f: impl Fn(&CMatrix) -> CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(dim * dim, dim * dim);
    for k in 0..dim {
        for l in 0..dim {
            let image = f(&CMatrix::unit(dim, k, l));
            for i in 0..dim {
                for j in 0..dim {
                    out[(i * dim + k, j * dim + l)] = image[(i, j)];
                }
            }
        }
    }
    out
}

pub fn qubits_for_dim(dim: usize) -> Result<usize> {
    match dim {
        2 => Ok(1),
        4 => Ok(2),
        _ => Err(Error::DimensionMismatch(format!("dimension {dim} is not a 1- or 2-qubit space"))),
    }
}

pub fn outcome_label(outcome: usize, n_qubits: usize) -> String {
    (0..n_qubits).map(|q| if (outcome >> (n_qubits - 1 - q)) & 1 == 1 { '1' } else { '0' }).collect()
}

pub fn parse_outcome_label(label: &str) -> Result<usize> {
    if label.is_empty() || label.len() > 2 {
        return Err(Error::Malformed(format!("outcome label {label:?}")));
    }
    label.chars().try_fold(0usize, |acc, ch| match ch {
        '0' => Ok(acc << 1),
        '1' => Ok((acc << 1) | 1),
        _ => Err(Error::Malformed(format!("outcome label {label:?}"))),
    })
}

/// Υ(ρ) = Σ_{ijkl} ⟨ik|Υ̃|jl⟩ ρ_{kl} |i⟩⟨j| without dimension checks.
pub(crate) fn apply_psd_choi(psd: &CMatrix, d: usize, rho: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut acc = ZERO;
            for k in 0..d {
                for l in 0..d {
                    acc += psd[(i * d + k, j * d + l)] * rho[(k, l)];
                }
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// Heisenberg picture 𝓔†(O) of the map with PSD-ordered Choi matrix `psd`.
pub(crate) fn adjoint_psd_choi(psd: &CMatrix, d: usize, o: &CMatrix) -> CMatrix {
    // Tr(O 𝓔(ρ)) = Σ O_{ji} Υ̃[(i,k),(j,l)] ρ_{kl}  ⇒  𝓔†(O)_{lk} = Σ_{ij} O_{ji} Υ̃[(i,k),(j,l)]
    let mut out = CMatrix::zeros(d, d);
    for k in 0..d {
        for l in 0..d {
            let mut acc = ZERO;
            for i in 0..d {
                for j in 0..d {
                    acc += o[(j, i)] * psd[(i * d + k, j * d + l)];
                }
            }
            out[(l, k)] = acc;
        }
    }
    out
}

/// Choi block of one measurement outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiMatrix {
    dim: usize,
    outcome: usize,
    psd: CMatrix,
}

impl ChoiMatrix {
    pub fn new(dim: usize, outcome: usize, psd: CMatrix) -> Result<Self> {
        qubits_for_dim(dim)?;
        if psd.rows() != dim * dim || psd.cols() != dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "Choi block of dimension {dim} must be {0}x{0}, got {1}x{2}",
                dim * dim,
                psd.rows(),
                psd.cols()
            )));
        }
        if outcome >= dim {
            return Err(Error::OutOfRange(format!("outcome {outcome} for dimension {dim}")));
        }
        Ok(Self { dim, outcome, psd })
    }

    /// Builds a block from its element-wise (element-ordered) form `⟨ij|Υ|kl⟩`.
    pub fn from_element_form(dim: usize, outcome: usize, entries: &CMatrix) -> Result<Self> {
        if entries.rows() != dim * dim || entries.cols() != dim * dim {
            return Err(Error::DimensionMismatch("element-ordered block has wrong size".into()));
        }
        Self::new(dim, outcome, reshuffle(entries, dim))
    }

    /// Choi block of the linear map `f`.
    pub fn from_map(dim: usize, outcome: usize, f: impl Fn(&CMatrix) -> CMatrix) -> Result<Self> {
        Self::new(dim, outcome, choi_of_map(dim, f))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_qubits(&self) -> usize {
        qubits_for_dim(self.dim).expect("validated at construction")
    }

    pub fn outcome(&self) -> usize {
        self.outcome
    }

    pub fn label(&self) -> String {
        outcome_label(self.outcome, self.n_qubits())
    }

    pub fn psd_form(&self) -> &CMatrix {
        &self.psd
    }

    /// `⟨ij|Υ|kl⟩`.
    pub fn element(&self, i: usize, j: usize, k: usize, l: usize) -> C64 {
        let d = self.dim;
        self.psd[(i * d + k, j * d + l)]
    }

    /// Element-wise form, equal to the Liouville matrix of the outcome's map.
    pub fn element_form(&self) -> CMatrix {
        reshuffle(&self.psd, self.dim)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.psd.hermitian_part().min_eigenvalue().expect("square by construction")
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.psd.is_hermitian(tol.max(1e-12)) && self.min_eigenvalue() >= -tol
    }

    pub fn with_outcome(mut self, outcome: usize) -> Result<Self> {
        if outcome >= self.dim {
            return Err(Error::OutOfRange(format!("outcome {outcome} for dimension {}", self.dim)));
        }
        self.outcome = outcome;
        Ok(self)
    }

    /// Convex/linear combination helper: `a·self + b·other` (same dim and outcome).
    pub fn combine(&self, a: f64, other: &ChoiMatrix, b: f64) -> Result<ChoiMatrix> {
        if self.dim != other.dim || self.outcome != other.outcome {
            return Err(Error::DimensionMismatch("combining Choi blocks of different shape".into()));
        }
        let mut m = self.psd.scale_real(a);
        m.add_scaled(&other.psd, b);
        ChoiMatrix::new(self.dim, self.outcome, m)
    }
}

/// Unnormalized conditional state 𝓔_n(ρ).
pub fn apply_process(c: &ChoiMatrix, rho: &CMatrix) -> Result<CMatrix> {
    if rho.rows() != c.dim || rho.cols() != c.dim {
        return Err(Error::DimensionMismatch(format!(
            "state is {}x{}, process acts on dimension {}",
            rho.rows(),
            rho.cols(),
            c.dim
        )));
    }
    Ok(apply_psd_choi(&c.psd, c.dim, rho))
}

/// POVM element Π_n with Tr(𝓔_n(ρ)) = Tr(Π_n ρ): the transpose of the
/// partial trace of Υ̃_n over its output factor.
pub fn povm_from_choi(c: &ChoiMatrix) -> CMatrix {
    partial_trace_first(&c.psd, c.dim, c.dim).transpose()
}

/// Complete set of outcome blocks of a measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct QndMeasurement {
    dim: usize,
    outcomes: Vec<ChoiMatrix>,
}

impl QndMeasurement {
    pub fn new(outcomes: Vec<ChoiMatrix>) -> Result<Self> {
        let dim = outcomes.first().map(|c| c.dim).ok_or_else(|| Error::Malformed("no outcomes".into()))?;
        if outcomes.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "{} outcome blocks for a {dim}-outcome measurement",
                outcomes.len()
            )));
        }
        for (n, c) in outcomes.iter().enumerate() {
            if c.dim != dim || c.outcome != n {
                return Err(Error::Malformed(format!("block {n} has dim {} and outcome {}", c.dim, c.outcome)));
            }
        }
        Ok(Self { dim, outcomes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_qubits(&self) -> usize {
        qubits_for_dim(self.dim).expect("validated at construction")
    }

    pub fn outcomes(&self) -> &[ChoiMatrix] {
        &self.outcomes
    }

    pub fn outcome(&self, n: usize) -> &ChoiMatrix {
        &self.outcomes[n]
    }

    pub fn povm(&self) -> Povm {
        Povm { dim: self.dim, elements: self.outcomes.iter().map(povm_from_choi).collect() }
    }

    /// PSD form of the collective process 𝓔 = Σ_n 𝓔_n.
    pub fn total_choi(&self) -> CMatrix {
        let mut acc = CMatrix::zeros(self.dim * self.dim, self.dim * self.dim);
        for c in &self.outcomes {
            acc.add_scaled(&c.psd, 1.0);
        }
        acc
    }

    pub fn apply_total(&self, rho: &CMatrix) -> Result<CMatrix> {
        let mut acc = CMatrix::zeros(self.dim, self.dim);
        for c in &self.outcomes {
            acc.add_scaled(&apply_process(c, rho)?, 1.0);
        }
        Ok(acc)
    }

    /// Largest deviation of Σ_n Σ_i ⟨ik|Υ̃_n|il⟩ from δ_kl.
    pub fn trace_preservation_error(&self) -> f64 {
        let reduced = partial_trace_first(&self.total_choi(), self.dim, self.dim);
        (&reduced - &CMatrix::identity(self.dim)).max_abs()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.outcomes.iter().map(|c| c.min_eigenvalue()).fold(f64::INFINITY, f64::min)
    }

    /// CP/TP check used across the crate.
    pub fn validate(&self, cp_tol: f64, tp_tol: f64) -> Result<()> {
        for c in &self.outcomes {
            if !c.psd.is_hermitian(cp_tol.max(1e-12)) {
                return Err(Error::NotPositive(format!("outcome {} block is not Hermitian", c.label())));
            }
            let lam = c.min_eigenvalue();
            if lam < -cp_tol {
                return Err(Error::NotPositive(format!("outcome {} block has eigenvalue {lam:e}", c.label())));
            }
        }
        let tp = self.trace_preservation_error();
        if tp > tp_tol {
            return Err(Error::InvalidParameter(format!("trace preservation violated by {tp:e}")));
        }
        Ok(())
    }
}

/// Heisenberg-picture image of `o` under the full process.
pub fn adjoint_apply(m: &QndMeasurement, o: &CMatrix) -> Result<CMatrix> {
    if o.rows() != m.dim || o.cols() != m.dim {
        return Err(Error::DimensionMismatch(format!(
            "observable is {}x{}, process acts on dimension {}",
            o.rows(),
            o.cols(),
            m.dim
        )));
    }
    Ok(adjoint_psd_choi(&m.total_choi(), m.dim, o))
}

/// Choi block of the product channel acting independently on two qubits:
/// `⟨i₁i₂ j₁j₂|Υ|k₁k₂ l₁l₂⟩ = ⟨i₁j₁|Υ_a|k₁l₁⟩·⟨i₂j₂|Υ_b|k₂l₂⟩`.
pub fn superop_tensor(a: &ChoiMatrix, b: &ChoiMatrix) -> Result<ChoiMatrix> {
    if a.dim != 2 || b.dim != 2 {
        return Err(Error::DimensionMismatch(format!(
            "superoperator tensor needs two single-qubit blocks, got dimensions {} and {}",
            a.dim, b.dim
        )));
    }
    let psd = psd_tensor(&a.psd, &b.psd, 2, 2);
    ChoiMatrix::new(4, a.outcome * 2 + b.outcome, psd)
}

/// PSD-ordered Choi matrix of `𝓐 ⊗ 𝓑` from the factors' PSD forms.
pub(crate) fn psd_tensor(a: &CMatrix, b: &CMatrix, da: usize, db: usize) -> CMatrix {
    let d = da * db;
    CMatrix::from_fn(d * d, d * d, |r, c| {
        // r = (i, k), c = (j, l), with i = (i1, i2) etc.
        let (i, k) = (r / d, r % d);
        let (j, l) = (c / d, c % d);
        let (i1, i2, k1, k2) = (i / db, i % db, k / db, k % db);
        let (j1, j2, l1, l2) = (j / db, j % db, l / db, l % db);
        a[(i1 * da + k1, j1 * da + l1)] * b[(i2 * db + k2, j2 * db + l2)]
    })
}

/// Product of two single-qubit measurements as a four-outcome measurement.
pub fn measurement_tensor(a: &QndMeasurement, b: &QndMeasurement) -> Result<QndMeasurement> {
    let mut blocks = Vec::with_capacity(4);
    for ca in &a.outcomes {
        for cb in &b.outcomes {
            blocks.push(superop_tensor(ca, cb)?);
        }
    }
    QndMeasurement::new(blocks)
}

/// Ideal projective block |nn⟩⟨nn|.
pub fn ideal_choi(n: usize, d: usize) -> Result<ChoiMatrix> {
    qubits_for_dim(d)?;
    if n >= d {
        return Err(Error::OutOfRange(format!("outcome {n} for dimension {d}")));
    }
    let mut psd = CMatrix::zeros(d * d, d * d);
    psd[(n * d + n, n * d + n)] = C64::new(1.0, 0.0);
    ChoiMatrix::new(d, n, psd)
}

pub fn ideal_measurement(d: usize) -> Result<QndMeasurement> {
    QndMeasurement::new((0..d).map(|n| ideal_choi(n, d)).collect::<Result<_>>()?)
}

/// Positive operator-valued measure.
#[derive(Clone, Debug, PartialEq)]
pub struct Povm {
    dim: usize,
    elements: Vec<CMatrix>,
}

impl Povm {
    pub fn new(elements: Vec<CMatrix>) -> Result<Self> {
        let dim = elements.first().map(|e| e.rows()).ok_or_else(|| Error::Malformed("empty POVM".into()))?;
        for e in &elements {
            if e.rows() != dim || e.cols() != dim {
                return Err(Error::DimensionMismatch("POVM elements differ in shape".into()));
            }
        }
        Ok(Self { dim, elements })
    }

    pub fn ideal(dim: usize) -> Self {
        Self { dim, elements: (0..dim).map(|n| CMatrix::unit(dim, n, n)).collect() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn elements(&self) -> &[CMatrix] {
        &self.elements
    }

    pub fn element(&self, n: usize) -> &CMatrix {
        &self.elements[n]
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn completeness_error(&self) -> f64 {
        let mut sum = CMatrix::zeros(self.dim, self.dim);
        for e in &self.elements {
            sum.add_scaled(e, 1.0);
        }
        (&sum - &CMatrix::identity(self.dim)).max_abs()
    }

    pub fn validate(&self, psd_tol: f64, completeness_tol: f64) -> Result<()> {
        for (n, e) in self.elements.iter().enumerate() {
            if !e.is_psd(psd_tol) {
                return Err(Error::NotPositive(format!("POVM element {n}")));
            }
        }
        let err = self.completeness_error();
        if err > completeness_tol {
            return Err(Error::InvalidParameter(format!("POVM completeness violated by {err:e}")));
        }
        Ok(())
    }

    /// Outcome probabilities Tr(Π_n ρ).
    pub fn probabilities(&self, rho: &CMatrix) -> Vec<f64> {
        self.elements.iter().map(|e| e.trace_product(rho).re).collect()
    }

    /// `{Π_n ⊗ Π_m}` ordered with `n` (this POVM) as the leading digit.
    pub fn tensor(&self, other: &Povm) -> Povm {
        let mut elements = Vec::with_capacity(self.len() * other.len());
        for a in &self.elements {
            for b in &other.elements {
                elements.push(kron(a, b));
            }
        }
        Povm { dim: self.dim * other.dim, elements }
    }
}

/// A trace-preserving process (a gate), kept in PSD Choi form.
#[derive(Clone, Debug, PartialEq)]
pub struct Process {
    dim: usize,
    psd: CMatrix,
}

impl Process {
    pub fn from_psd(dim: usize, psd: CMatrix) -> Result<Self> {
        if psd.rows() != dim * dim || psd.cols() != dim * dim {
            return Err(Error::DimensionMismatch("process Choi matrix has wrong size".into()));
        }
        Ok(Self { dim, psd })
    }

    pub fn from_superop(dim: usize, superop: &CMatrix) -> Result<Self> {
        Self::from_psd(dim, reshuffle(superop, dim))
    }

    pub fn from_unitary(u: &CMatrix) -> Self {
        let d = u.rows();
        let ud = u.adjoint();
        Self { dim: d, psd: choi_of_map(d, |x| &(u * x) * &ud) }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_unitary(&CMatrix::identity(dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn psd_form(&self) -> &CMatrix {
        &self.psd
    }

    /// Row-major Liouville matrix: vec(𝓔(X)) = S vec(X).
    pub fn superop(&self) -> CMatrix {
        reshuffle(&self.psd, self.dim)
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        apply_psd_choi(&self.psd, self.dim, rho)
    }

    pub fn adjoint_apply(&self, o: &CMatrix) -> CMatrix {
        adjoint_psd_choi(&self.psd, self.dim, o)
    }

    /// `after ∘ self`.
    pub fn then(&self, after: &Process) -> Process {
        let s = &after.superop() * &self.superop();
        Process::from_superop(self.dim, &s).expect("same dimension")
    }

    pub fn tensor(&self, other: &Process) -> Process {
        Process { dim: self.dim * other.dim, psd: psd_tensor(&self.psd, &other.psd, self.dim, other.dim) }
    }

    /// (1-p)·𝓔 + p·Tr(·) I/d.
    pub fn depolarized(&self, p: f64) -> Process {
        let d = self.dim;
        let mut psd = self.psd.scale_real(1.0 - p);
        psd.add_scaled(&CMatrix::identity(d * d), p / d as f64);
        Process { dim: d, psd }
    }

    pub fn trace_preservation_error(&self) -> f64 {
        (&partial_trace_first(&self.psd, self.dim, self.dim) - &CMatrix::identity(self.dim)).max_abs()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.psd.hermitian_part().min_eigenvalue().expect("square")
    }

    pub fn is_cptp(&self, cp_tol: f64, tp_tol: f64) -> bool {
        self.min_eigenvalue() >= -cp_tol && self.trace_preservation_error() <= tp_tol
    }

    /// Process fidelity ⟨⟨U|Υ̃|U⟩⟩ / d² with the unitary `u`.
    pub fn process_fidelity(&self, u: &CMatrix) -> f64 {
        let d = self.dim;
        let v: Vec<C64> = (0..d * d).map(|r| u[(r / d, r % d)]).collect();
        let mv = self.psd.matvec(&v);
        let num: C64 = v.iter().zip(&mv).map(|(a, b)| a.conj() * b).sum();
        num.re / (d * d) as f64
    }

    /// Purity Tr(Υ̃²)/d² of the normalized Choi state.
    pub fn purity(&self) -> f64 {
        let d2 = (self.dim * self.dim) as f64;
        self.psd.trace_product(&self.psd).re / (d2)
    }
}

// ---------------------------------------------------------------------------
// JSON documents: flat (re, im) arrays in PSD ordering, row-major.

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChoiDocument {
    pub dim: usize,
    pub outcome: String,
    pub psd: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PovmDocument {
    pub dim: usize,
    pub elements: Vec<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasurementDocument {
    pub dim: usize,
    pub outcomes: Vec<ChoiDocument>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProcessDocument {
    pub dim: usize,
    pub psd: Vec<[f64; 2]>,
}

pub fn flatten(m: &CMatrix) -> Vec<[f64; 2]> {
    m.as_slice().iter().map(|z| [z.re, z.im]).collect()
}

pub fn unflatten(n: usize, flat: &[[f64; 2]]) -> Result<CMatrix> {
    CMatrix::from_vec(n, n, flat.iter().map(|p| C64::new(p[0], p[1])).collect())
}

impl From<&ChoiMatrix> for ChoiDocument {
    fn from(c: &ChoiMatrix) -> Self {
        Self { dim: c.dim, outcome: c.label(), psd: flatten(&c.psd) }
    }
}

impl TryFrom<&ChoiDocument> for ChoiMatrix {
    type Error = Error;
    fn try_from(doc: &ChoiDocument) -> Result<Self> {
        let n_qubits = qubits_for_dim(doc.dim)?;
        if doc.outcome.len() != n_qubits {
            return Err(Error::Malformed(format!("label {:?} for {n_qubits} qubits", doc.outcome)));
        }
        let outcome = parse_outcome_label(&doc.outcome)?;
        ChoiMatrix::new(doc.dim, outcome, unflatten(doc.dim * doc.dim, &doc.psd)?)
    }
}

impl From<&Povm> for PovmDocument {
    fn from(p: &Povm) -> Self {
        Self { dim: p.dim, elements: p.elements.iter().map(flatten).collect() }
    }
}

impl TryFrom<&PovmDocument> for Povm {
    type Error = Error;
    fn try_from(doc: &PovmDocument) -> Result<Self> {
        Povm::new(doc.elements.iter().map(|e| unflatten(doc.dim, e)).collect::<Result<_>>()?)
    }
}

impl From<&QndMeasurement> for MeasurementDocument {
    fn from(m: &QndMeasurement) -> Self {
        Self { dim: m.dim, outcomes: m.outcomes.iter().map(ChoiDocument::from).collect() }
    }
}

impl TryFrom<&MeasurementDocument> for QndMeasurement {
    type Error = Error;
    fn try_from(doc: &MeasurementDocument) -> Result<Self> {
        let blocks = doc.outcomes.iter().map(ChoiMatrix::try_from).collect::<Result<Vec<_>>>()?;
        let m = QndMeasurement::new(blocks)?;
        if m.dim != doc.dim {
            return Err(Error::Malformed("measurement dim disagrees with its blocks".into()));
        }
        Ok(m)
    }
}

impl From<&Process> for ProcessDocument {
    fn from(p: &Process) -> Self {
        Self { dim: p.dim, psd: flatten(&p.psd) }
    }
}

impl TryFrom<&ProcessDocument> for Process {
    type Error = Error;
    fn try_from(doc: &ProcessDocument) -> Result<Self> {
        Process::from_psd(doc.dim, unflatten(doc.dim * doc.dim, &doc.psd)?)
    }
}
