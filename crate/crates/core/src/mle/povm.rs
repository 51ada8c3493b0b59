//! POVM tomography from first-outcome statistics of known input states.

use std::collections::BTreeMap;

use super::elim::NormalizedPovm;
use super::{block_state, interior, neg_log_likelihood, GstEstimate, OptimizerConfig, ProblemLog};
use crate::channels::Povm;
use crate::counts::BlockData;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_build, cholesky_len, cholesky_params, cholesky_pullback, CMatrix};
use crate::optimize::{solve_with_restarts, Problem};

/// Negative log-likelihood of `Π_n` given states `ρ_i` and frequencies
/// `f_i(n)`; completeness is imposed by normalizing the Cholesky factors.
pub struct PovmProblem {
    dim: usize,
    states: Vec<CMatrix>,
    freqs: Vec<Vec<f64>>,
}

impl PovmProblem {
    pub fn new(states: Vec<CMatrix>, freqs: Vec<Vec<f64>>) -> Result<Self> {
        let dim = states.first().map(CMatrix::rows).ok_or_else(|| Error::InvalidParameter("no states".into()))?;
        if states.len() != freqs.len() || freqs.iter().any(|f| f.len() != dim) {
            return Err(Error::DimensionMismatch("POVM data does not match the states".into()));
        }
        Ok(Self { dim, states, freqs })
    }

    /// Uses the first-outcome marginals of a block, pooled over rotations and
    /// second outcomes (the rotation acts after the first readout).
    pub fn from_block(data: &BlockData, gst: &[&GstEstimate]) -> Result<Self> {
        let d = data.dim;
        if 1 << gst.len() != d {
            return Err(Error::DimensionMismatch(format!("{} gate sets for dimension {d}", gst.len())));
        }
        let mut pooled: BTreeMap<Vec<usize>, Vec<u64>> = BTreeMap::new();
        for c in &data.circuits {
            let acc = pooled.entry(c.preps.clone()).or_insert_with(|| vec![0; d]);
            for n in 0..d {
                acc[n] += c.counts[n * d..(n + 1) * d].iter().sum::<u64>();
            }
        }
        let mut states = Vec::with_capacity(pooled.len());
        let mut freqs = Vec::with_capacity(pooled.len());
        for (preps, counts) in pooled {
            let total = counts.iter().sum::<u64>().max(1) as f64;
            states.push(block_state(gst, &preps));
            freqs.push(counts.iter().map(|&c| c as f64 / total).collect());
        }
        Self::new(states, freqs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn block(&self) -> usize {
        cholesky_len(self.dim)
    }

    fn raw(&self, x: &[f64]) -> Vec<CMatrix> {
        let b = self.block();
        (0..self.dim).map(|n| cholesky_build(&x[n * b..(n + 1) * b], self.dim).expect("length")).collect()
    }

    pub fn povm_at(&self, x: &[f64]) -> Povm {
        let np = NormalizedPovm::new(&self.raw(x));
        Povm::new(np.elements.iter().map(CMatrix::hermitian_part).collect()).expect("same shape")
    }

    pub fn initial_point(&self, start: &Povm) -> Vec<f64> {
        start.elements().iter().flat_map(|e| cholesky_params(&interior(e, 0.05), 0.0).expect("interior")).collect()
    }

    pub fn log_likelihood(&self, povm: &Povm) -> f64 {
        let mut w = vec![0.0; self.dim];
        self.states.iter().zip(&self.freqs).map(|(s, f)| -neg_log_likelihood(f, &povm.probabilities(s), &mut w)).sum()
    }
}

impl Problem for PovmProblem {
    fn n_params(&self) -> usize {
        self.dim * self.block()
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let raw = self.raw(x);
        let np = NormalizedPovm::new(&raw);
        let d = self.dim;
        let mut gs = vec![CMatrix::zeros(d, d); d];
        let mut w = vec![0.0; d];
        let mut value = 0.0;
        for (rho, f) in self.states.iter().zip(&self.freqs) {
            let q: Vec<f64> = np.elements.iter().map(|e| e.trace_product(rho).re).collect();
            value += neg_log_likelihood(f, &q, &mut w);
            for (g, &wn) in gs.iter_mut().zip(&w) {
                if wn != 0.0 {
                    g.add_scaled(rho, wn);
                }
            }
        }
        let g_raw = np.pullback(&raw, &gs);
        let b = self.block();
        for n in 0..d {
            cholesky_pullback(&x[n * b..(n + 1) * b], d, &g_raw[n], &mut grad[n * b..(n + 1) * b]);
        }
        value
    }
}

/// Maximum-likelihood POVM, seeded from `start` or the ideal
/// computational-basis measurement.
pub fn povm_mle(
    problem: &PovmProblem,
    name: &str,
    cfg: &OptimizerConfig,
    start: Option<&Povm>,
) -> Result<(Povm, ProblemLog)> {
    cfg.validate()?;
    let x0 = problem.initial_point(start.unwrap_or(&Povm::ideal(problem.dim)));
    let sol = solve_with_restarts(problem, &x0, cfg, 0.05, true);
    let povm = problem.povm_at(&sol.x);
    let log = ProblemLog {
        problem: name.to_string(),
        iterations: sol.iterations,
        log_likelihood: problem.log_likelihood(&povm),
        residual: povm.completeness_error(),
        converged: sol.converged,
    };
    Ok((povm, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::test_util::*;
    use crate::optimize::numeric_gradient;
    use rand::Rng;

    fn tomographic_states() -> Vec<CMatrix> {
        let g = GstEstimate::ideal();
        let mut out = Vec::new();
        for a in 0..6 {
            for b in 0..6 {
                out.push(block_state(&[&g, &g], &[a, b]));
            }
        }
        out
    }

    fn noisy_povm() -> Povm {
        let mut r = rng(51);
        let raw: Vec<CMatrix> = (0..4)
            .map(|n| interior(&CMatrix::unit(4, n, n), 0.1 + 0.05 * n as f64))
            .map(|e| {
                let h = random_hermitian(&mut r, 4).scale_real(0.01);
                &e + &h
            })
            .collect();
        Povm::new(super::super::complete_povm(&raw)).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let truth = noisy_povm();
        let states = tomographic_states();
        let freqs = states.iter().map(|s| truth.probabilities(s)).collect();
        let p = PovmProblem::new(states, freqs).unwrap();
        let mut r = rng(52);
        let x: Vec<f64> = p.initial_point(&Povm::ideal(4)).iter().map(|v| v + r.random_range(-0.1..0.1)).collect();
        let mut g = vec![0.0; p.n_params()];
        p.value_grad(&x, &mut g);
        let num = numeric_gradient(|y| p.value_grad(y, &mut vec![0.0; p.n_params()]), &x, 1e-6);
        for (a, b) in g.iter().zip(&num) {
            assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn exact_data_recovers_truth() {
        let truth = noisy_povm();
        let states = tomographic_states();
        let freqs = states.iter().map(|s| truth.probabilities(s)).collect();
        let p = PovmProblem::new(states, freqs).unwrap();
        let (est, log) = povm_mle(&p, "povm/test", &OptimizerConfig::default(), None).unwrap();
        assert!(log.converged);
        assert!(est.completeness_error() < 1e-9);
        for (a, b) in est.elements().iter().zip(truth.elements()) {
            assert!((a - b).max_abs() < 1e-4, "{}", (a - b).max_abs());
        }
        assert!((log.log_likelihood - p.log_likelihood(&truth)).abs() < 1e-8);
    }
}
