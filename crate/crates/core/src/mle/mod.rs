//! Constrained maximum-likelihood reconstruction: gate set tomography, POVM
//! tomography and per-outcome Choi tomography.
//!
//! All three objectives are the frequency-weighted log-likelihood
//! `Σ f log q`; the optimizer minimizes its negative. Positivity comes from
//! Cholesky factors, equality constraints from the augmented Lagrangian or,
//! for the Choi POVM constraint, from exact elimination.

pub mod choi;
mod elim;
pub mod gst;
pub mod povm;
pub mod protocol;

use serde::{Deserialize, Serialize};

use crate::channels::Process;
use crate::linalg::{kron, partial_trace_first, CMatrix, C64};
pub use crate::optimize::OptimizerConfig;

pub use choi::{choi_mle, ChoiConstraint, ChoiProblem};
pub use gst::{gst_mle, GstEstimate, GstProblem};
pub use povm::{povm_mle, PovmProblem};
pub use protocol::{
    plan_problems, run_protocol, run_protocol_with, EstimateSet, EstimateSetDocument, ProblemId, ProblemKind,
    ProtocolOptions, TargetGst, TargetMeasurement,
};

/// Model probabilities are floored here inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Convergence record of one optimization problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemLog {
    pub problem: String,
    pub iterations: usize,
    /// Log-likelihood per shot at the returned point.
    pub log_likelihood: f64,
    pub residual: f64,
    pub converged: bool,
}

/// `−Σ f log max(q, floor)`; writes `∂/∂q` into `w` (zero for floored or
/// zero-frequency cells).
pub(crate) fn neg_log_likelihood(freqs: &[f64], q: &[f64], w: &mut [f64]) -> f64 {
    let mut val = 0.0;
    for ((f, &qi), wi) in freqs.iter().zip(q).zip(w.iter_mut()) {
        if *f == 0.0 {
            *wi = 0.0;
            continue;
        }
        if qi > PROB_FLOOR {
            val -= f * qi.ln();
            *wi = -f / qi;
        } else {
            val -= f * PROB_FLOOR.ln();
            *wi = 0.0;
        }
    }
    val
}

/// Coefficients `c` with `Re Tr(K X) = c · h(X)` for Hermitian X, where
/// `h(X)` lists the real diagonal then (Re, Im) of the strict upper triangle.
pub(crate) fn hermitian_coefficients(k: &CMatrix) -> Vec<f64> {
    let d = k.rows();
    let mut out = Vec::with_capacity(d * d);
    out.extend((0..d).map(|a| k[(a, a)].re));
    for a in 0..d {
        for b in a + 1..d {
            out.push(k[(b, a)].re + k[(a, b)].re);
            out.push(k[(a, b)].im - k[(b, a)].im);
        }
    }
    out
}

pub(crate) fn hermitian_vector(x: &CMatrix) -> Vec<f64> {
    let d = x.rows();
    let mut out = Vec::with_capacity(d * d);
    out.extend((0..d).map(|a| x[(a, a)].re));
    for a in 0..d {
        for b in a + 1..d {
            out.push(x[(a, b)].re);
            out.push(x[(a, b)].im);
        }
    }
    out
}

/// Hermitian G with `Re Tr(G dX) = gh · dh(X)`.
pub(crate) fn hermitian_gradient_matrix(gh: &[f64], d: usize) -> CMatrix {
    let mut g = CMatrix::zeros(d, d);
    for a in 0..d {
        g[(a, a)] = C64::new(gh[a], 0.0);
    }
    let mut p = d;
    for a in 0..d {
        for b in a + 1..d {
            let z = C64::new(gh[p] / 2.0, -gh[p + 1] / 2.0);
            g[(b, a)] = z;
            g[(a, b)] = z.conj();
            p += 2;
        }
    }
    g
}

/// Product state prepared by `V_GATES[preps[q]]` on each block qubit, using
/// the estimated gate sets.
pub fn block_state(gst: &[&GstEstimate], preps: &[usize]) -> CMatrix {
    gst.iter()
        .zip(preps)
        .map(|(g, &v)| g.prepared_state(v))
        .reduce(|a, b| kron(&a, &b))
        .expect("nonempty block")
}

/// Product of the estimated `U_GATES[rotations[q]]` on each block qubit.
pub fn block_rotation(gst: &[&GstEstimate], rotations: &[usize]) -> Process {
    gst.iter()
        .zip(rotations)
        .map(|(g, &u)| g.rotation(u))
        .reduce(|a, b| a.tensor(&b))
        .expect("nonempty block")
}

/// Exact normalization `X ↦ S^{-1/2} X S^{-1/2}` applied to every element so
/// that they sum to the identity.
pub(crate) fn complete_povm(elements: &[CMatrix]) -> Vec<CMatrix> {
    let d = elements[0].rows();
    let mut s = CMatrix::zeros(d, d);
    for e in elements {
        s.add_scaled(e, 1.0);
    }
    let r = s.hermitian_fn(|l| 1.0 / l.max(1e-300).sqrt()).expect("square");
    elements.iter().map(|e| (&(&r * e) * &r).hermitian_part()).collect()
}

/// Rescales a PSD Choi matrix so that `Tr_out Υ̃ = target` exactly:
/// `Υ̃ ↦ (I⊗M) Υ̃ (I⊗M)†` with `M = target^{1/2} S^{-1/2}`.
pub(crate) fn match_reduced(psd: &CMatrix, d: usize, target: &CMatrix) -> CMatrix {
    let s = partial_trace_first(psd, d, d);
    let m = &target.psd_sqrt().expect("square") * &s.hermitian_fn(|l| 1.0 / l.max(1e-300).sqrt()).expect("square");
    let k = kron(&CMatrix::identity(d), &m);
    (&(&k * psd) * &k.adjoint()).hermitian_part()
}

/// Mixes `x` with a multiple of the identity so Cholesky parameters exist and
/// the start is interior.
pub(crate) fn interior(x: &CMatrix, eps: f64) -> CMatrix {
    let d = x.rows();
    let t = x.trace().re.max(1e-12);
    let mut out = x.hermitian_part().scale_real(1.0 - eps);
    out.add_scaled(&CMatrix::identity(d), eps * t / d as f64);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::test_util::*;

    #[test]
    fn hermitian_coefficients_reproduce_trace() {
        let mut r = rng(5);
        for d in [2, 4] {
            let k = random_hermitian(&mut r, d);
            let x = random_hermitian(&mut r, d);
            let c = hermitian_coefficients(&k);
            let h = hermitian_vector(&x);
            let lhs: f64 = c.iter().zip(&h).map(|(a, b)| a * b).sum();
            assert!((lhs - k.trace_product(&x).re).abs() < 1e-12);
            // and the gradient matrix inverts the map
            let g = hermitian_gradient_matrix(&c, d);
            assert!(g.approx_eq(&k, 1e-12));
        }
    }

    #[test]
    fn completion_and_reduction() {
        let mut r = rng(6);
        let els: Vec<CMatrix> = (0..2).map(|_| random_density(&mut r, 2)).collect();
        let fixed = complete_povm(&els);
        assert!((&fixed[0] + &fixed[1]).approx_eq(&CMatrix::identity(2), 1e-12));
        let x = random_density(&mut r, 4);
        let target = random_density(&mut r, 2);
        let y = match_reduced(&x, 2, &target);
        assert!(partial_trace_first(&y, 2, 2).approx_eq(&target, 1e-12));
        assert!(y.is_psd(1e-12));
    }

    #[test]
    fn floored_log_likelihood() {
        let mut w = [0.0; 3];
        let v = neg_log_likelihood(&[0.5, 0.5, 0.0], &[0.5, 0.0, 0.3], &mut w);
        assert!((v - (-0.5 * 0.5f64.ln() - 0.5 * PROB_FLOOR.ln())).abs() < 1e-12);
        assert_eq!(w, [-1.0, 0.0, 0.0]);
    }
}
