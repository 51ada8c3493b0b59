//! Exact elimination of normalization constraints, with gradients in the
//! convention `df = Re Tr(G dX)`.

use crate::linalg::{kron, partial_trace_first, CMatrix};

/// `R = S^{-1/2}` of a positive Hermitian `S`, kept with its eigenbasis so
/// that gradients can be pulled back through it.
pub(crate) struct InvSqrt {
    v: CMatrix,
    lam: Vec<f64>,
    pub r: CMatrix,
}

impl InvSqrt {
    pub fn new(s: &CMatrix) -> Self {
        let (lam, v) = s.hermitian_part().hermitian_eigen().expect("square");
        let lam: Vec<f64> = lam.iter().map(|l| l.max(1e-300)).collect();
        let d = lam.len();
        let diag = CMatrix::diag_real(&lam.iter().map(|l| 1.0 / l.sqrt()).collect::<Vec<_>>());
        let r = &(&v * &diag) * &v.adjoint();
        debug_assert_eq!(r.rows(), d);
        Self { v, lam, r }
    }

    /// Given `Re Tr(Q dR)`, returns `Z` with the same value as `Re Tr(Z dS)`.
    pub fn pullback(&self, q: &CMatrix) -> CMatrix {
        let d = self.lam.len();
        let qt = &(&self.v.adjoint() * q) * &self.v;
        let mut w = CMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let (li, lj) = (self.lam[i], self.lam[j]);
                let gamma = if (li - lj).abs() > 1e-9 * li.max(lj) {
                    (1.0 / li.sqrt() - 1.0 / lj.sqrt()) / (li - lj)
                } else {
                    let l = 0.5 * (li + lj);
                    -0.5 * l.powf(-1.5)
                };
                w[(i, j)] = qt[(i, j)] * gamma;
            }
        }
        &(&self.v * &w) * &self.v.adjoint()
    }
}

/// `ρ = X / Tr X`.
pub(crate) fn trace_normalize(x: &CMatrix) -> CMatrix {
    x.scale_real(1.0 / x.trace().re)
}

pub(crate) fn trace_normalize_pullback(x: &CMatrix, g: &CMatrix) -> CMatrix {
    let t = x.trace().re;
    let mut out = g.scale_real(1.0 / t);
    let c = g.trace_product(x).re / (t * t);
    out.add_scaled(&CMatrix::identity(x.rows()), -c);
    out
}

/// `Π_n = R X_n R` with `R = (Σ X_n)^{-1/2}`.
pub(crate) struct NormalizedPovm {
    pub elements: Vec<CMatrix>,
    inv: InvSqrt,
}

impl NormalizedPovm {
    pub fn new(xs: &[CMatrix]) -> Self {
        let d = xs[0].rows();
        let mut s = CMatrix::zeros(d, d);
        for x in xs {
            s.add_scaled(x, 1.0);
        }
        let inv = InvSqrt::new(&s);
        let elements = xs.iter().map(|x| &(&inv.r * x) * &inv.r).collect();
        Self { elements, inv }
    }

    pub fn pullback(&self, xs: &[CMatrix], gs: &[CMatrix]) -> Vec<CMatrix> {
        let r = &self.inv.r;
        let d = r.rows();
        let mut h = CMatrix::zeros(d, d);
        for (x, g) in xs.iter().zip(gs) {
            h.add_scaled(&(&(x * r) * g), 1.0);
            h.add_scaled(&(&(g * r) * x), 1.0);
        }
        let z = self.inv.pullback(&h);
        gs.iter()
            .map(|g| {
                let mut out = &(r * g) * r;
                out.add_scaled(&z, 1.0);
                out
            })
            .collect()
    }
}

/// `Υ̃ = K X K†` with `K = I ⊗ A S^{-1/2}` and `S = Tr_out X`, so that the
/// reduced operator `Tr_out Υ̃` equals `A A†`.
pub(crate) struct EliminatedChoi {
    pub choi: CMatrix,
    k: CMatrix,
    a: CMatrix,
    inv: InvSqrt,
    d: usize,
}

impl EliminatedChoi {
    pub fn new(x: &CMatrix, a: &CMatrix, d: usize) -> Self {
        let inv = InvSqrt::new(&partial_trace_first(x, d, d));
        let k = kron(&CMatrix::identity(d), &(a * &inv.r));
        let choi = &(&k * x) * &k.adjoint();
        Self { choi, k, a: a.clone(), inv, d }
    }

    pub fn pullback(&self, x: &CMatrix, g: &CMatrix) -> CMatrix {
        let kd = self.k.adjoint();
        let mut gs = g.clone();
        gs.add_scaled(&g.adjoint(), 1.0);
        let p = partial_trace_first(&(&(x * &kd) * &gs), self.d, self.d);
        let z = self.inv.pullback(&(&p * &self.a));
        let mut out = &(&kd * g) * &self.k;
        out.add_scaled(&kron(&CMatrix::identity(self.d), &z), 1.0);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::test_util::*;

    fn re_tr(a: &CMatrix, b: &CMatrix) -> f64 {
        a.trace_product(b).re
    }

    fn check(f: impl Fn(&CMatrix) -> f64, g: &CMatrix, x: &CMatrix, r: &mut impl rand::Rng) {
        let dx = random_hermitian(r, x.rows());
        let h = 1e-6;
        let mut xp = x.clone();
        xp.add_scaled(&dx, h);
        let mut xm = x.clone();
        xm.add_scaled(&dx, -h);
        let num = (f(&xp) - f(&xm)) / (2.0 * h);
        assert!((num - re_tr(g, &dx)).abs() < 1e-6 * (1.0 + num.abs()), "{num} vs {}", re_tr(g, &dx));
    }

    #[test]
    fn inverse_sqrt_gradient() {
        let mut r = rng(41);
        for _ in 0..5 {
            let s = random_density(&mut r, 3);
            let q = random_matrix(&mut r, 3, 3);
            let z = InvSqrt::new(&s).pullback(&q);
            check(|y| re_tr(&q, &InvSqrt::new(y).r), &z, &s, &mut r);
        }
        // degenerate spectrum
        let s = CMatrix::identity(2).scale_real(0.5);
        let q = random_matrix(&mut r, 2, 2);
        let z = InvSqrt::new(&s).pullback(&q);
        check(|y| re_tr(&q, &InvSqrt::new(y).r), &z, &s, &mut r);
    }

    #[test]
    fn normalization_gradients() {
        let mut r = rng(42);
        let x = random_density(&mut r, 2).scale_real(1.7);
        let g = random_matrix(&mut r, 2, 2);
        check(|y| re_tr(&g, &trace_normalize(y)), &trace_normalize_pullback(&x, &g), &x, &mut r);

        let xs: Vec<CMatrix> = (0..4).map(|_| random_density(&mut r, 4)).collect();
        let gs: Vec<CMatrix> = (0..4).map(|_| random_matrix(&mut r, 4, 4)).collect();
        let np = NormalizedPovm::new(&xs);
        let mut sum = CMatrix::zeros(4, 4);
        for e in &np.elements {
            sum.add_scaled(e, 1.0);
        }
        assert!(sum.approx_eq(&CMatrix::identity(4), 1e-10));
        let grads = np.pullback(&xs, &gs);
        for n in 0..4 {
            let f = |y: &CMatrix| {
                let mut ys = xs.clone();
                ys[n] = y.clone();
                NormalizedPovm::new(&ys).elements.iter().zip(&gs).map(|(e, g)| re_tr(g, e)).sum()
            };
            check(f, &grads[n], &xs[n], &mut r);
        }
    }

    #[test]
    fn eliminated_choi_gradient_and_marginal() {
        let mut r = rng(43);
        for d in [2, 4] {
            let x = random_density(&mut r, d * d);
            let pi = random_density(&mut r, d);
            let a = pi.transpose().psd_sqrt().unwrap();
            let e = EliminatedChoi::new(&x, &a, d);
            assert!(partial_trace_first(&e.choi, d, d).approx_eq(&pi.transpose(), 1e-10));
            let g = random_matrix(&mut r, d * d, d * d);
            let grad = e.pullback(&x, &g);
            check(|y| re_tr(&g, &EliminatedChoi::new(y, &a, d).choi), &grad, &x, &mut r);
        }
    }
}
