//! Single-qubit gate set tomography.

use serde::{Deserialize, Serialize};

use super::elim::{trace_normalize, trace_normalize_pullback, EliminatedChoi, NormalizedPovm};
use super::{complete_povm, interior, match_reduced, neg_log_likelihood, OptimizerConfig, ProblemLog};
use crate::channels::{
    flatten, reshuffle, unflatten, Povm, PovmDocument, Process, ProcessDocument, CP_TOL,
};
use crate::circuits::{gst_circuits, GateLabel, GATE_SET, U_GATES, V_GATES};
use crate::counts::CountsTable;
use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_build, cholesky_params, cholesky_pullback, pauli_x, pauli_y, pauli_z, CMatrix, C64, ZERO,
};
use crate::optimize::{bfgs, numeric_gradient, solve_with_restarts, Problem};

const RHO: usize = 0;
const GATES: usize = 4;
const POVM: usize = 4 + 4 * 16;
const N_PARAMS: usize = POVM + 2 * 4;

/// Self-consistent estimate of state, gates and measurement of one qubit.
#[derive(Clone, Debug, PartialEq)]
pub struct GstEstimate {
    pub rho: CMatrix,
    /// In [`GATE_SET`] order.
    pub gates: Vec<Process>,
    pub povm: Povm,
    pub log: ProblemLog,
}

impl GstEstimate {
    /// |0⟩, ideal gates and the computational-basis POVM.
    pub fn ideal() -> Self {
        Self {
            rho: CMatrix::unit(2, 0, 0),
            gates: GATE_SET.iter().map(|g| Process::from_unitary(&g.unitary())).collect(),
            povm: Povm::ideal(2),
            log: ProblemLog {
                problem: "ideal".into(),
                iterations: 0,
                log_likelihood: 0.0,
                residual: 0.0,
                converged: true,
            },
        }
    }

    pub fn gate(&self, g: GateLabel) -> &Process {
        &self.gates[g.index()]
    }

    pub fn sequence(&self, gates: &[GateLabel]) -> Process {
        gates.iter().fold(Process::identity(2), |acc, &g| acc.then(self.gate(g)))
    }

    /// State after the preparation `V_GATES[v]`.
    pub fn prepared_state(&self, v: usize) -> CMatrix {
        self.sequence(V_GATES[v].gates).apply(&self.rho)
    }

    pub fn rotation(&self, u: usize) -> Process {
        self.sequence(U_GATES[u].gates)
    }

    pub fn probabilities(&self, triple: &[GateLabel; 3]) -> Vec<f64> {
        self.povm.probabilities(&self.sequence(triple).apply(&self.rho))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rho.is_psd(1e-9) || (self.rho.trace().re - 1.0).abs() > 1e-8 {
            return Err(Error::NotPositive("GST state is not a density matrix".into()));
        }
        for (g, p) in GATE_SET.iter().zip(&self.gates) {
            if !p.is_cptp(CP_TOL, 1e-6) {
                return Err(Error::NotPositive(format!("GST gate {g} is not CPTP")));
            }
        }
        self.povm.validate(1e-9, 1e-6)
    }

    fn map_frame(&self, rho: impl Fn(&CMatrix) -> CMatrix, effect: impl Fn(&CMatrix) -> CMatrix, fwd: &Process, inv: &Process) -> Self {
        Self {
            rho: rho(&self.rho).hermitian_part(),
            gates: self.gates.iter().map(|g| inv.then(g).then(fwd)).collect(),
            povm: Povm::new(self.povm.elements().iter().map(|e| effect(e).hermitian_part()).collect()).expect("same shape"),
            log: self.log.clone(),
        }
    }

    /// Conjugates the whole gate set by the unitary `v`.
    pub fn unitary_gauge(&self, v: &CMatrix) -> Self {
        let vd = v.adjoint();
        let fwd = Process::from_unitary(v);
        let inv = Process::from_unitary(&vd);
        self.map_frame(|r| &(v * r) * &vd, |e| &(v * e) * &vd, &fwd, &inv)
    }

    /// SPAM gauge `B_β(X) = Tr(X) I/2 + β (X − Tr(X) I/2)` applied to the
    /// state, with `B_{1/β}` on the effects and `B_β 𝓕 B_{1/β}` on gates.
    pub fn spam_gauge(&self, beta: f64) -> Self {
        let fwd = bloch_scaling(beta);
        let inv = bloch_scaling(1.0 / beta);
        self.map_frame(|r| fwd.apply(r), |e| inv.apply(e), &fwd, &inv)
    }

    /// Sum of squared Frobenius distances to the ideal gate set.
    pub fn distance_to_ideal(&self) -> f64 {
        let ideal = GstEstimate::ideal();
        let mut acc = (&self.rho - &ideal.rho).frobenius_norm().powi(2);
        for (a, b) in self.gates.iter().zip(&ideal.gates) {
            acc += (a.psd_form() - b.psd_form()).frobenius_norm().powi(2);
        }
        for (a, b) in self.povm.elements().iter().zip(ideal.povm.elements()) {
            acc += (a - b).frobenius_norm().powi(2);
        }
        acc
    }
}

fn bloch_scaling(beta: f64) -> Process {
    let psd = crate::channels::choi_of_map(2, |x| {
        let t = x.trace();
        let mut out = x.scale_real(beta);
        let shift = t * (1.0 - beta) * 0.5;
        out[(0, 0)] += shift;
        out[(1, 1)] += shift;
        out
    });
    Process::from_psd(2, psd).expect("2x2")
}

fn su2(a: &[f64]) -> CMatrix {
    let theta = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    if theta < 1e-15 {
        return CMatrix::identity(2);
    }
    let mut gen = pauli_x().scale_real(a[0] / theta);
    gen.add_scaled(&pauli_y(), a[1] / theta);
    gen.add_scaled(&pauli_z(), a[2] / theta);
    crate::linalg::pauli_rotation(&gen, theta)
}

/// Unitary gauge closest to the ideal frame, then the SPAM scaling that makes
/// the prepared state pure.
pub fn gauge_fix(est: &GstEstimate) -> GstEstimate {
    let cost = |a: &[f64]| est.unitary_gauge(&su2(a)).distance_to_ideal();
    let inner = bfgs(
        |a, g| {
            let num = numeric_gradient(cost, a, 1e-6);
            g.copy_from_slice(&num);
            cost(a)
        },
        &[0.0; 3],
        200,
        1e-9,
    );
    let rotated = if inner.value < cost(&[0.0; 3]) { est.unitary_gauge(&su2(&inner.x)) } else { est.clone() };

    let r = rotated.rho.normalized_trace();
    let bloch = [
        r.trace_product(&pauli_x()).re,
        r.trace_product(&pauli_y()).re,
        r.trace_product(&pauli_z()).re,
    ];
    let len = (bloch[0].powi(2) + bloch[1].powi(2) + bloch[2].powi(2)).sqrt();
    if len < 1e-6 {
        return rotated;
    }
    let beta = (1.0 / len) * (1.0 - 1e-10);
    if beta <= 1.0 {
        return rotated;
    }
    let mut out = rotated.spam_gauge(beta);
    // rescaling amplifies the statistical non-unital part of the gates; map
    // them back to the nearest CPTP maps
    out.gates = out
        .gates
        .iter()
        .map(|g| {
            let clipped = g.psd_form().hermitian_fn(|l| l.max(0.0)).expect("square");
            Process::from_psd(2, match_reduced(&clipped, 2, &CMatrix::identity(2))).expect("4x4")
        })
        .collect();
    out.rho = out.rho.hermitian_fn(|l| l.max(0.0)).expect("square").normalized_trace();
    out.povm = Povm::new(complete_povm(
        &out.povm.elements().iter().map(|e| e.hermitian_fn(|l| l.max(0.0)).expect("square")).collect::<Vec<_>>(),
    ))
    .expect("same shape");
    out
}

/// Weight of the proximity term that picks, among gate sets the data cannot
/// tell apart, the one closest to the ideal gates. Every circuit has three
/// gates, so for instance a depolarization shared by all gates is exactly
/// interchangeable with reduced SPAM visibility.
pub const GST_PROXIMITY: f64 = 1.0;

/// Negative log-likelihood of the 64 GST circuits over Cholesky parameters of
/// the state, the four gate Choi matrices and the two POVM effects, plus
/// [`GST_PROXIMITY`] times the squared distance of the gates to the ideal
/// ones. Trace, trace preservation and completeness are imposed by
/// normalizing the factors, so the problem is unconstrained.
pub struct GstProblem {
    freqs: Vec<[f64; 2]>,
    circuits: Vec<[usize; 3]>,
    ideal: Vec<CMatrix>,
    proximity: f64,
}

struct Unpacked {
    raw_rho: CMatrix,
    raw_gates: Vec<CMatrix>,
    raw_effects: Vec<CMatrix>,
    rho: CMatrix,
    gates: Vec<EliminatedChoi>,
    povm: NormalizedPovm,
}

impl GstProblem {
    pub fn from_frequencies(freqs: Vec<[f64; 2]>) -> Result<Self> {
        if freqs.len() != 64 {
            return Err(Error::DimensionMismatch(format!("{} GST circuits, expected 64", freqs.len())));
        }
        let circuits = gst_circuits().iter().map(|t| [t[0].index(), t[1].index(), t[2].index()]).collect();
        let ideal = GstEstimate::ideal().gates.iter().map(|g| g.psd_form().clone()).collect();
        Ok(Self { freqs, circuits, ideal, proximity: GST_PROXIMITY })
    }

    pub fn with_proximity(mut self, weight: f64) -> Self {
        self.proximity = weight;
        self
    }

    pub fn from_counts(counts: &CountsTable, qubit: usize) -> Result<Self> {
        let data = counts.gst_data(qubit)?;
        Self::from_frequencies(
            data.counts
                .iter()
                .map(|c| {
                    let n = (c[0] + c[1]).max(1) as f64;
                    [c[0] as f64 / n, c[1] as f64 / n]
                })
                .collect(),
        )
    }

    pub fn initial_point(start: &GstEstimate) -> Vec<f64> {
        let mut x = Vec::with_capacity(N_PARAMS);
        x.extend(cholesky_params(&interior(&start.rho, 0.02), 0.0).expect("interior"));
        for g in &start.gates {
            x.extend(cholesky_params(&interior(g.psd_form(), 0.02), 0.0).expect("interior"));
        }
        for e in start.povm.elements() {
            x.extend(cholesky_params(&interior(e, 0.02), 0.0).expect("interior"));
        }
        x
    }

    fn unpack(x: &[f64]) -> Unpacked {
        let raw_rho = cholesky_build(&x[RHO..RHO + 4], 2).expect("length");
        let raw_gates: Vec<CMatrix> =
            (0..4).map(|g| cholesky_build(&x[GATES + 16 * g..GATES + 16 * (g + 1)], 4).expect("length")).collect();
        let raw_effects: Vec<CMatrix> =
            (0..2).map(|n| cholesky_build(&x[POVM + 4 * n..POVM + 4 * (n + 1)], 2).expect("length")).collect();
        let id = CMatrix::identity(2);
        Unpacked {
            rho: trace_normalize(&raw_rho),
            gates: raw_gates.iter().map(|g| EliminatedChoi::new(g, &id, 2)).collect(),
            povm: NormalizedPovm::new(&raw_effects),
            raw_rho,
            raw_gates,
            raw_effects,
        }
    }

    /// Estimate at the parameter point, without gauge fixing.
    pub fn estimate_at(&self, x: &[f64]) -> GstEstimate {
        let u = Self::unpack(x);
        GstEstimate {
            rho: u.rho.hermitian_part(),
            gates: u.gates.into_iter().map(|c| Process::from_psd(2, c.choi.hermitian_part()).expect("4x4")).collect(),
            povm: Povm::new(u.povm.elements.iter().map(CMatrix::hermitian_part).collect()).expect("2x2"),
            log: ProblemLog { problem: String::new(), iterations: 0, log_likelihood: 0.0, residual: 0.0, converged: false },
        }
    }

    /// Log-likelihood per circuit-frequency sum of a complete estimate.
    pub fn log_likelihood(&self, est: &GstEstimate) -> f64 {
        let mut total = 0.0;
        for (triple, f) in gst_circuits().iter().zip(&self.freqs) {
            let q = est.probabilities(triple);
            let mut w = [0.0; 2];
            total -= neg_log_likelihood(f, &q, &mut w);
        }
        total
    }
}

fn vec_row_major(m: &CMatrix) -> Vec<C64> {
    m.as_slice().to_vec()
}

fn outer_acc(w: &mut CMatrix, u: &[C64], v: &[C64]) {
    for (r, ur) in u.iter().enumerate() {
        for (c, vc) in v.iter().enumerate() {
            w[(r, c)] += ur * vc;
        }
    }
}

impl Problem for GstProblem {
    fn n_params(&self) -> usize {
        N_PARAMS
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let u = Self::unpack(x);
        let supers: Vec<CMatrix> = u.gates.iter().map(|c| reshuffle(&c.choi, 2)).collect();
        let r = vec_row_major(&u.rho);
        // q_n = π_n · v with π_n = vec(Π_nᵀ)
        let pis: Vec<Vec<C64>> = u.povm.elements.iter().map(|e| vec_row_major(&e.transpose())).collect();
        let mut w_super = vec![CMatrix::zeros(4, 4); 4];
        let mut w_rho = vec![ZERO; 4];
        let mut w_eff = vec![CMatrix::zeros(2, 2); 2];
        let mut value = 0.0;
        for (c, f) in self.circuits.iter().zip(&self.freqs) {
            let v1 = supers[c[0]].matvec(&r);
            let v2 = supers[c[1]].matvec(&v1);
            let v3 = supers[c[2]].matvec(&v2);
            let q: Vec<f64> = pis.iter().map(|p| p.iter().zip(&v3).map(|(a, b)| a * b).sum::<C64>().re).collect();
            let mut w = [0.0; 2];
            value += neg_log_likelihood(f, &q, &mut w);
            if w == [0.0, 0.0] {
                continue;
            }
            let uvec: Vec<C64> = (0..4).map(|i| pis[0][i] * w[0] + pis[1][i] * w[1]).collect();
            for n in 0..2 {
                if w[n] != 0.0 {
                    // ∂q_n/∂Π_n[j][i] = v3[(i,j)]
                    for i in 0..2 {
                        for j in 0..2 {
                            w_eff[n][(j, i)] += v3[i * 2 + j] * w[n];
                        }
                    }
                }
            }
            outer_acc(&mut w_super[c[2]], &uvec, &v2);
            let g2 = supers[c[2]].vecmat(&uvec);
            outer_acc(&mut w_super[c[1]], &g2, &v1);
            let g1 = supers[c[1]].vecmat(&g2);
            outer_acc(&mut w_super[c[0]], &g1, &r);
            let g0 = supers[c[0]].vecmat(&g1);
            for (acc, gi) in w_rho.iter_mut().zip(&g0) {
                *acc += gi;
            }
        }
        // holomorphic coefficients W become G = Wᵀ (df = Re Tr(G dX))
        let g_rho = CMatrix::from_vec(2, 2, w_rho).expect("2x2").transpose();
        let g_rho = trace_normalize_pullback(&u.raw_rho, &g_rho);
        cholesky_pullback(&x[RHO..RHO + 4], 2, &g_rho, &mut grad[RHO..RHO + 4]);
        for g in 0..4 {
            let mut g_choi = reshuffle(&w_super[g], 2).transpose();
            if self.proximity > 0.0 {
                let diff = &u.gates[g].choi - &self.ideal[g];
                value += self.proximity * diff.frobenius_norm().powi(2);
                g_choi.add_scaled(&diff, 2.0 * self.proximity);
            }
            let g_raw = u.gates[g].pullback(&u.raw_gates[g], &g_choi);
            let s = GATES + 16 * g;
            cholesky_pullback(&x[s..s + 16], 4, &g_raw, &mut grad[s..s + 16]);
        }
        let g_eff: Vec<CMatrix> = w_eff.iter().map(CMatrix::transpose).collect();
        let g_raw = u.povm.pullback(&u.raw_effects, &g_eff);
        for n in 0..2 {
            let s = POVM + 4 * n;
            cholesky_pullback(&x[s..s + 4], 2, &g_raw[n], &mut grad[s..s + 4]);
        }
        value
    }
}

/// Maximum-likelihood gate set for one qubit, seeded from the ideal gate set
/// and gauge-fixed towards it.
pub fn gst_mle(counts: &CountsTable, qubit: usize, cfg: &OptimizerConfig) -> Result<GstEstimate> {
    let problem = GstProblem::from_counts(counts, qubit)?;
    gst_solve(&problem, &format!("gst/q{qubit}"), cfg, None)
}

/// Solves from `start` (perturbed restarts only if it does not converge) or,
/// without one, from the ideal gate set plus the configured restarts.
pub fn gst_solve(problem: &GstProblem, name: &str, cfg: &OptimizerConfig, start: Option<&GstEstimate>) -> Result<GstEstimate> {
    cfg.validate()?;
    let x0 = GstProblem::initial_point(start.unwrap_or(&GstEstimate::ideal()));
    let sol = solve_with_restarts(problem, &x0, cfg, 0.05, start.is_some());
    let raw = problem.estimate_at(&sol.x);
    let rho = raw.rho.hermitian_part().normalized_trace();
    let gates = raw
        .gates
        .iter()
        .map(|g| Process::from_psd(2, match_reduced(g.psd_form(), 2, &CMatrix::identity(2))).expect("4x4"))
        .collect();
    let povm = Povm::new(complete_povm(raw.povm.elements()))?;
    let polished = GstEstimate { rho, gates, povm, log: raw.log.clone() };
    let mut est = gauge_fix(&polished);
    est.log = ProblemLog {
        problem: name.to_string(),
        iterations: sol.iterations,
        log_likelihood: problem.log_likelihood(&est),
        residual: sol.residual,
        converged: sol.converged,
    };
    Ok(est)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GstDocument {
    pub rho: Vec<[f64; 2]>,
    pub gates: Vec<ProcessDocument>,
    pub povm: PovmDocument,
    pub log: ProblemLog,
}

impl From<&GstEstimate> for GstDocument {
    fn from(e: &GstEstimate) -> Self {
        Self {
            rho: flatten(&e.rho),
            gates: e.gates.iter().map(ProcessDocument::from).collect(),
            povm: PovmDocument::from(&e.povm),
            log: e.log.clone(),
        }
    }
}

impl TryFrom<&GstDocument> for GstEstimate {
    type Error = Error;
    fn try_from(doc: &GstDocument) -> Result<Self> {
        if doc.gates.len() != 4 {
            return Err(Error::Malformed("GST estimate needs four gates".into()));
        }
        Ok(Self {
            rho: unflatten(2, &doc.rho)?,
            gates: doc.gates.iter().map(Process::try_from).collect::<Result<_>>()?,
            povm: Povm::try_from(&doc.povm)?,
            log: doc.log.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::test_util::*;
    use rand::Rng;

    fn exact_frequencies(est: &GstEstimate) -> Vec<[f64; 2]> {
        gst_circuits().iter().map(|t| {
            let p = est.probabilities(t);
            [p[0], p[1]]
        }).collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let truth = GstEstimate::ideal().spam_gauge(1.0);
        let problem = GstProblem::from_frequencies(exact_frequencies(&truth)).unwrap();
        let mut r = rng(21);
        for _ in 0..5 {
            let x: Vec<f64> = GstProblem::initial_point(&GstEstimate::ideal())
                .iter()
                .map(|v| v + r.random_range(-0.1..0.1))
                .collect();
            let mut g = vec![0.0; N_PARAMS];
            problem.value_grad(&x, &mut g);
            let num = numeric_gradient(|y| problem.value_grad(y, &mut vec![0.0; N_PARAMS]), &x, 1e-6);
            let err: f64 = g.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = num.iter().map(|b| b * b).sum::<f64>().sqrt();
            assert!(err / scale < 1e-6, "relative error {}", err / scale);
        }
    }

    #[test]
    fn exact_probabilities_reach_entropy_bound() {
        let truth = GstEstimate::ideal();
        let freqs = exact_frequencies(&truth);
        let bound: f64 = freqs.iter().flatten().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum();
        let problem = GstProblem::from_frequencies(freqs).unwrap();
        assert!((problem.log_likelihood(&truth) - bound).abs() < 1e-9);
        let est = gst_solve(&problem, "gst/test", &OptimizerConfig::default(), None).unwrap();
        assert!(est.log.log_likelihood <= bound + 1e-9);
        assert!((est.log.log_likelihood - bound).abs() < 1e-5, "{} vs {bound}", est.log.log_likelihood);
        est.validate().unwrap();
        for (g, p) in GATE_SET.iter().zip(&est.gates) {
            assert!(p.process_fidelity(&g.unitary()) > 0.999, "{g}: {}", p.process_fidelity(&g.unitary()));
        }
    }

    #[test]
    fn gauge_transforms_preserve_probabilities() {
        let mut est = GstEstimate::ideal();
        est.gates = est.gates.iter().map(|g| g.depolarized(0.05)).collect();
        est.rho = CMatrix::diag_real(&[0.9, 0.1]);
        let v = su2(&[0.3, -0.2, 0.7]);
        for other in [est.unitary_gauge(&v), est.spam_gauge(1.2)] {
            for t in gst_circuits() {
                let a = est.probabilities(&t);
                let b = other.probabilities(&t);
                assert!((a[0] - b[0]).abs() < 1e-12);
            }
        }
        let fixed = gauge_fix(&est.unitary_gauge(&v));
        assert!(fixed.distance_to_ideal() < est.unitary_gauge(&v).distance_to_ideal());
        // the purest admissible state is pure here
        assert!(fixed.rho.min_eigenvalue().unwrap().abs() < 1e-6);
    }

    #[test]
    fn document_round_trip() {
        let est = GstEstimate::ideal();
        let doc = GstDocument::from(&est);
        let text = serde_json::to_string(&doc).unwrap();
        let back: GstDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(GstEstimate::try_from(&back).unwrap(), est);
    }
}
