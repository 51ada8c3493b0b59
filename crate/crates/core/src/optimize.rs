//! Quasi-Newton minimization with equality constraints handled by an
//! augmented Lagrangian (multiplier updates plus penalty doubling).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub constraint_tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { max_iterations: 4000, gradient_tolerance: 1e-7, constraint_tolerance: 1e-6, restarts: 3, seed: 0 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.max_iterations == 0 || !(self.gradient_tolerance > 0.0) || !(self.constraint_tolerance > 0.0) {
            return Err(crate::Error::InvalidParameter(
                "optimizer needs positive iterations and tolerances".into(),
            ));
        }
        Ok(())
    }
}

/// A smooth problem `min f(x)` subject to `c(x) = 0`.
pub trait Problem: Sync {
    fn n_params(&self) -> usize;

    /// Objective value; writes the gradient into `grad`.
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn n_constraints(&self) -> usize {
        0
    }

    /// Constraint values and the row-major Jacobian (`n_constraints × n_params`).
    fn constraints(&self, _x: &[f64], _c: &mut [f64], _jac: &mut [f64]) {}
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    /// Objective without penalty terms.
    pub objective: f64,
    /// Largest absolute constraint value.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Merit value after each accepted step, per inner solve.
    pub history: Vec<f64>,
}

pub struct InnerResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Accepted steps over which [`bfgs`] measures progress.
pub const STALL_WINDOW: usize = 100;
/// Relative objective decrease over [`STALL_WINDOW`] steps below which [`bfgs`]
/// stops. Positivity-constrained likelihoods with rank-deficient optima
/// converge sublinearly, and the remaining gain is far below statistical
/// resolution by then.
pub const STALL_TOL: f64 = 1e-7;

/// BFGS on the inverse Hessian with Armijo backtracking. Accepted steps never
/// increase the objective.
pub fn bfgs(f: impl Fn(&[f64], &mut [f64]) -> f64, x0: &[f64], max_iter: usize, gtol: f64) -> InnerResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut h = vec![0.0; n * n];
    let reset = |h: &mut [f64], scale: f64| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            h[i * n + i] = scale;
        }
    };
    reset(&mut h, 1.0 / inf_norm(&g).max(1.0));
    let mut history = vec![fx];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut hy = vec![0.0; n];
    let mut fresh = true;
    let mut stalls = 0;
    for it in 0..max_iter {
        if !fx.is_finite() {
            return InnerResult { x, value: fx, iterations: it, converged: false, history };
        }
        if inf_norm(&g) <= gtol {
            return InnerResult { x, value: fx, iterations: it, converged: true, history };
        }
        for i in 0..n {
            d[i] = -dot(&h[i * n..(i + 1) * n], &g);
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 || !slope.is_finite() {
            reset(&mut h, 1.0 / inf_norm(&g).max(1.0));
            fresh = true;
            for i in 0..n {
                d[i] = -h[i * n + i] * g[i];
            }
            slope = dot(&g, &d);
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut f_new = fx;
        for _ in 0..50 {
            for i in 0..n {
                x_new[i] = x[i] + alpha * d[i];
            }
            f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * alpha * slope {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            if fresh {
                // no descent along the scaled gradient: stationary to working precision
                return InnerResult { x, value: fx, iterations: it, converged: true, history };
            }
            reset(&mut h, 1.0 / inf_norm(&g).max(1.0));
            fresh = true;
            continue;
        }
        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy = dot(&s, &y);
        let rel_drop = (fx - f_new) / fx.abs().max(1.0);
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_new;
        history.push(fx);
        if history.len() > STALL_WINDOW {
            let before = history[history.len() - 1 - STALL_WINDOW];
            if before - fx < STALL_TOL * fx.abs().max(1.0) {
                return InnerResult { x, value: fx, iterations: it + 1, converged: true, history };
            }
        }
        if rel_drop < 1e-15 {
            stalls += 1;
            if stalls >= 5 {
                return InnerResult { x, value: fx, iterations: it + 1, converged: true, history };
            }
        } else {
            stalls = 0;
        }
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                let scale = sy / dot(&y, &y);
                reset(&mut h, scale);
            }
            fresh = false;
            let rho = 1.0 / sy;
            for i in 0..n {
                hy[i] = dot(&h[i * n..(i + 1) * n], &y);
            }
            let yhy = dot(&y, &hy);
            let coef = rho * rho * yhy + rho;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + coef * s[i] * s[j];
                }
            }
        }
    }
    InnerResult { x, value: fx, iterations: max_iter, converged: false, history }
}

/// Augmented-Lagrangian solve from `x0`.
pub fn solve(problem: &dyn Problem, x0: &[f64], cfg: &OptimizerConfig) -> Solution {
    let n = problem.n_params();
    let m = problem.n_constraints();
    let mut grad = vec![0.0; n];
    if m == 0 {
        let inner = bfgs(|x, g| problem.value_grad(x, g), x0, cfg.max_iterations, cfg.gradient_tolerance);
        let objective = problem.value_grad(&inner.x, &mut grad);
        return Solution {
            x: inner.x,
            objective,
            residual: 0.0,
            iterations: inner.iterations,
            converged: inner.converged,
            history: inner.history,
        };
    }
    let mut lambda = vec![0.0; m];
    let mut mu = 1000.0;
    let mut x = x0.to_vec();
    let mut c = vec![0.0; m];
    let mut jac = vec![0.0; m * n];
    let mut iterations = 0;
    let mut history = Vec::new();
    let mut prev_residual = f64::INFINITY;
    let mut converged = false;
    for _outer in 0..60 {
        let budget = cfg.max_iterations.saturating_sub(iterations).max(1);
        let merit = |x: &[f64], g: &mut [f64]| {
            let mut c = vec![0.0; m];
            let mut jac = vec![0.0; m * n];
            let fx = problem.value_grad(x, g);
            problem.constraints(x, &mut c, &mut jac);
            let mut val = fx;
            for k in 0..m {
                let w = lambda[k] + mu * c[k];
                val += lambda[k] * c[k] + 0.5 * mu * c[k] * c[k];
                for (gi, ji) in g.iter_mut().zip(&jac[k * n..(k + 1) * n]) {
                    *gi += w * ji;
                }
            }
            val
        };
        let inner = bfgs(merit, &x, budget, cfg.gradient_tolerance);
        iterations += inner.iterations;
        history.extend(inner.history);
        x = inner.x;
        problem.constraints(&x, &mut c, &mut jac);
        let residual = inf_norm(&c);
        if residual < cfg.constraint_tolerance {
            converged = inner.converged;
            break;
        }
        if iterations >= cfg.max_iterations {
            break;
        }
        for k in 0..m {
            lambda[k] += mu * c[k];
        }
        if residual > 0.25 * prev_residual {
            mu *= 5.0;
        }
        prev_residual = residual;
    }
    problem.constraints(&x, &mut c, &mut jac);
    let objective = problem.value_grad(&x, &mut grad);
    Solution { residual: inf_norm(&c), x, objective, iterations, converged, history }
}

/// Runs from `x0`, then from `restarts` Gaussian perturbations of it, and keeps
/// the feasible run with the lowest objective. With `only_if_unconverged`
/// the perturbed runs are skipped once the first run converges.
pub fn solve_with_restarts(
    problem: &dyn Problem,
    x0: &[f64],
    cfg: &OptimizerConfig,
    perturbation: f64,
    only_if_unconverged: bool,
) -> Solution {
    let mut best = solve(problem, x0, cfg);
    let mut total = best.iterations;
    for r in 0..cfg.restarts {
        if only_if_unconverged && best.converged {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(r as u64 + 1));
        let start: Vec<f64> = x0
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v + perturbation * z
            })
            .collect();
        let cand = solve(problem, &start, cfg);
        total += cand.iterations;
        let feasible = |s: &Solution| s.residual < cfg.constraint_tolerance;
        let better = match (feasible(&cand), feasible(&best)) {
            (true, false) => true,
            (false, true) => false,
            _ => cand.objective < best.objective - 1e-12,
        };
        if better {
            best = cand;
        }
    }
    best.iterations = total;
    best
}

/// Central finite-difference gradient.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}
