//! Per-outcome Choi tomography of a QND measurement.
//!
//! For outcome `n` the likelihood only involves `Υ̃_n`, so each outcome is a
//! separate problem. The reduced operator `Tr_out Υ̃_n` must equal `Π_nᵀ`
//! for the already reconstructed POVM.

use serde::{Deserialize, Serialize};

use super::elim::EliminatedChoi;
use super::{
    block_rotation, block_state, hermitian_coefficients, hermitian_gradient_matrix, hermitian_vector, interior,
    match_reduced, neg_log_likelihood, GstEstimate, OptimizerConfig, ProblemLog,
};
use crate::channels::{ChoiMatrix, Povm, Process};
use crate::counts::BlockData;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_build, cholesky_len, cholesky_params, cholesky_pullback, kron, partial_trace_first, CMatrix, C64};
use crate::optimize::{solve_with_restarts, Problem};

/// How the POVM-consistency constraint is enforced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChoiConstraint {
    /// `Υ̃ = (I⊗M) X (I⊗M)†` with `M = Π^{T/2} (Tr_out X)^{-1/2}`.
    #[default]
    Elimination,
    /// Augmented Lagrangian on the reduced operator, followed by an exact
    /// rescaling.
    Penalty,
}

/// One circuit's contribution: the design rows for each second outcome and
/// the matching frequencies.
struct Row {
    coeffs: Vec<f64>,
    freq: f64,
}

pub struct ChoiProblem {
    dim: usize,
    outcome: usize,
    /// Grouped per circuit so probabilities normalize together.
    circuits: Vec<Vec<Row>>,
    target: CMatrix,
    sqrt_target: CMatrix,
    constraint: ChoiConstraint,
}

impl ChoiProblem {
    /// `settings` holds per circuit the input state, the second-readout effects
    /// pulled back through the rotation, and the frequencies `f(n, m)` of the
    /// given outcome `n` over `m`.
    pub fn new(
        outcome: usize,
        povm: &Povm,
        settings: &[(CMatrix, Vec<CMatrix>, Vec<f64>)],
        constraint: ChoiConstraint,
    ) -> Result<Self> {
        let dim = povm.dim();
        if outcome >= povm.len() {
            return Err(Error::OutOfRange(format!("outcome {outcome} of a {}-outcome POVM", povm.len())));
        }
        let mut circuits = Vec::with_capacity(settings.len());
        for (state, pulled, freqs) in settings {
            if state.rows() != dim || pulled.len() != freqs.len() {
                return Err(Error::DimensionMismatch("Choi data does not match the POVM".into()));
            }
            let bt = state.transpose();
            circuits.push(
                pulled
                    .iter()
                    .zip(freqs)
                    .map(|(a, &freq)| Row { coeffs: hermitian_coefficients(&kron(a, &bt)), freq })
                    .collect(),
            );
        }
        let target = povm.element(outcome).transpose();
        let sqrt_target = target.psd_sqrt()?;
        Ok(Self { dim, outcome, circuits, target, sqrt_target, constraint })
    }

    pub fn from_block(
        data: &BlockData,
        gst: &[&GstEstimate],
        povm: &Povm,
        outcome: usize,
        constraint: ChoiConstraint,
    ) -> Result<Self> {
        let d = data.dim;
        if povm.dim() != d || 1 << gst.len() != d {
            return Err(Error::DimensionMismatch(format!("block of dimension {d} does not match its inputs")));
        }
        let settings: Vec<_> = data
            .circuits
            .iter()
            .map(|c| {
                let total = c.counts.iter().sum::<u64>().max(1) as f64;
                let rot: Process = block_rotation(gst, &c.rotations);
                let pulled = povm.elements().iter().map(|e| rot.adjoint_apply(e)).collect();
                let freqs = (0..d).map(|m| c.counts[outcome * d + m] as f64 / total).collect();
                (block_state(gst, &c.preps), pulled, freqs)
            })
            .collect();
        Self::new(outcome, povm, &settings, constraint)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn identity_choi(&self) -> CMatrix {
        Process::identity(self.dim).psd_form().clone()
    }

    /// Start from `start`, or from the Lüders instrument of the target POVM
    /// element.
    pub fn initial_point(&self, start: Option<&CMatrix>) -> Vec<f64> {
        let x = match start {
            Some(psd) => interior(psd, 0.02),
            None => interior(&self.identity_choi(), 0.05),
        };
        let x = match self.constraint {
            ChoiConstraint::Elimination => x,
            ChoiConstraint::Penalty => interior(&match_reduced(&x, self.dim, &self.target), 0.01),
        };
        cholesky_params(&x, 0.0).expect("interior point")
    }

    pub fn choi_at(&self, x: &[f64]) -> CMatrix {
        let raw = cholesky_build(x, self.dim * self.dim).expect("length");
        match self.constraint {
            ChoiConstraint::Elimination => EliminatedChoi::new(&raw, &self.sqrt_target, self.dim).choi.hermitian_part(),
            ChoiConstraint::Penalty => raw,
        }
    }

    fn objective(&self, h: &[f64], gh: Option<&mut [f64]>) -> f64 {
        let mut value = 0.0;
        let mut acc = gh;
        for rows in &self.circuits {
            let q: Vec<f64> = rows.iter().map(|r| r.coeffs.iter().zip(h).map(|(a, b)| a * b).sum()).collect();
            let f: Vec<f64> = rows.iter().map(|r| r.freq).collect();
            let mut w = vec![0.0; rows.len()];
            value += neg_log_likelihood(&f, &q, &mut w);
            if let Some(g) = acc.as_deref_mut() {
                for (r, &wm) in rows.iter().zip(&w) {
                    if wm != 0.0 {
                        for (gi, c) in g.iter_mut().zip(&r.coeffs) {
                            *gi += wm * c;
                        }
                    }
                }
            }
        }
        value
    }

    pub fn log_likelihood(&self, psd: &CMatrix) -> f64 {
        -self.objective(&hermitian_vector(psd), None)
    }
}

/// Trace functionals `E` with `Re Tr(E Y)` equal to the components of
/// `hermitian_vector(Y)`.
fn component_functionals(d: usize) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(d * d);
    for a in 0..d {
        out.push(CMatrix::unit(d, a, a));
    }
    for a in 0..d {
        for b in a + 1..d {
            out.push(CMatrix::unit(d, b, a));
            out.push(CMatrix::unit(d, b, a).scale(C64::new(0.0, -1.0)));
        }
    }
    out
}

impl Problem for ChoiProblem {
    fn n_params(&self) -> usize {
        cholesky_len(self.dim * self.dim)
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let dd = self.dim * self.dim;
        let raw = cholesky_build(x, dd).expect("length");
        let elim = match self.constraint {
            ChoiConstraint::Elimination => Some(EliminatedChoi::new(&raw, &self.sqrt_target, self.dim)),
            ChoiConstraint::Penalty => None,
        };
        let choi = elim.as_ref().map_or(&raw, |e| &e.choi);
        let mut gh = vec![0.0; dd * dd];
        let value = self.objective(&hermitian_vector(choi), Some(&mut gh));
        let g = hermitian_gradient_matrix(&gh, dd);
        let g = match &elim {
            Some(e) => e.pullback(&raw, &g),
            None => g,
        };
        cholesky_pullback(x, dd, &g, grad);
        value
    }

    fn n_constraints(&self) -> usize {
        match self.constraint {
            ChoiConstraint::Elimination => 0,
            ChoiConstraint::Penalty => self.dim * self.dim,
        }
    }

    fn constraints(&self, x: &[f64], c: &mut [f64], jac: &mut [f64]) {
        let d = self.dim;
        let n = self.n_params();
        let raw = cholesky_build(x, d * d).expect("length");
        let residual = hermitian_vector(&(&partial_trace_first(&raw, d, d) - &self.target));
        c.copy_from_slice(&residual);
        let id = CMatrix::identity(d);
        for (row, e) in component_functionals(d).iter().enumerate() {
            cholesky_pullback(x, d * d, &kron(&id, e), &mut jac[row * n..(row + 1) * n]);
        }
    }
}

/// Maximum-likelihood Choi matrix of one outcome.
pub fn choi_mle(
    problem: &ChoiProblem,
    name: &str,
    cfg: &OptimizerConfig,
    start: Option<&CMatrix>,
) -> Result<(ChoiMatrix, ProblemLog)> {
    cfg.validate()?;
    let x0 = problem.initial_point(start);
    let sol = solve_with_restarts(problem, &x0, cfg, 0.05, true);
    let mut psd = problem.choi_at(&sol.x);
    if problem.constraint == ChoiConstraint::Penalty {
        psd = match_reduced(&psd, problem.dim, &problem.target);
    }
    let residual = (&partial_trace_first(&psd, problem.dim, problem.dim) - &problem.target).max_abs();
    let log = ProblemLog {
        problem: name.to_string(),
        iterations: sol.iterations,
        log_likelihood: problem.log_likelihood(&psd),
        residual,
        converged: sol.converged,
    };
    Ok((ChoiMatrix::new(problem.dim, problem.outcome, psd)?, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{ideal_measurement, QndMeasurement};
    use crate::circuits::qndmt_settings;
    use crate::circuits::Setting;
    use crate::linalg::test_util::*;
    use crate::optimize::numeric_gradient;
    use crate::simulator::{build_decay_channel, trace_formula, NoiseParams};
    use rand::Rng;

    fn settings(truth: &QndMeasurement, outcome: usize) -> Vec<(CMatrix, Vec<CMatrix>, Vec<f64>)> {
        let n_q = truth.n_qubits();
        let g = GstEstimate::ideal();
        let gs: Vec<&GstEstimate> = vec![&g; n_q];
        let povm = truth.povm();
        qndmt_settings(n_q)
            .unwrap()
            .into_iter()
            .map(|s| {
                let Setting::Block { preps, rotations } = s else { unreachable!() };
                let rho = block_state(&gs, &preps);
                let rot = block_rotation(&gs, &rotations);
                let pulled: Vec<CMatrix> = povm.elements().iter().map(|e| rot.adjoint_apply(e)).collect();
                let f = pulled.iter().map(|a| trace_formula(a, &rho, truth.outcome(outcome).psd_form()).re).collect();
                (rho, pulled, f)
            })
            .collect()
    }

    fn noisy_qubit() -> QndMeasurement {
        build_decay_channel(&NoiseParams::with_errors(0.02, 0.01, 0.03)).unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let truth = noisy_qubit();
        for constraint in [ChoiConstraint::Elimination, ChoiConstraint::Penalty] {
            let p = ChoiProblem::new(1, &truth.povm(), &settings(&truth, 1), constraint).unwrap();
            let mut r = rng(61);
            let x: Vec<f64> = p.initial_point(None).iter().map(|v| v + r.random_range(-0.1..0.1)).collect();
            let mut g = vec![0.0; p.n_params()];
            p.value_grad(&x, &mut g);
            let num = numeric_gradient(|y| p.value_grad(y, &mut vec![0.0; p.n_params()]), &x, 1e-6);
            for (a, b) in g.iter().zip(&num) {
                assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "{constraint:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn exact_data_recovers_truth_with_both_constraints() {
        let truth = noisy_qubit();
        for constraint in [ChoiConstraint::Elimination, ChoiConstraint::Penalty] {
            for n in 0..2 {
                let p = ChoiProblem::new(n, &truth.povm(), &settings(&truth, n), constraint).unwrap();
                let (est, log) = choi_mle(&p, "choi/test", &OptimizerConfig::default(), None).unwrap();
                assert!(log.residual < 1e-8, "{constraint:?} residual {}", log.residual);
                assert!(est.is_psd(1e-9));
                let err = (est.psd_form() - truth.outcome(n).psd_form()).max_abs();
                assert!(err < 2e-3, "{constraint:?} outcome {n}: {err}");
                assert!((log.log_likelihood - p.log_likelihood(truth.outcome(n).psd_form())).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ideal_two_qubit_outcome() {
        let truth = ideal_measurement(4).unwrap();
        let p = ChoiProblem::new(2, &truth.povm(), &settings(&truth, 2), ChoiConstraint::Elimination).unwrap();
        let (est, log) = choi_mle(&p, "choi/test", &OptimizerConfig::default(), None).unwrap();
        assert!(log.residual < 1e-8);
        let bound = p.log_likelihood(truth.outcome(2).psd_form());
        assert!((log.log_likelihood - bound).abs() < 1e-5, "{} vs {bound}", log.log_likelihood);
        assert!((est.psd_form() - truth.outcome(2).psd_form()).max_abs() < 1e-2);
    }
}
