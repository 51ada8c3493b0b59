//! Dense complex matrices for the small dimensions used by single- and
//! two-qubit tomography (2, 4 and 16).

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Tolerance for algebraic identities.
pub const ALGEBRAIC_TOL: f64 = 1e-12;
/// Tolerance for results of iterative procedures.
pub const ITERATIVE_TOL: f64 = 1e-9;

/// Row-major dense complex matrix.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from real rows; panics on ragged input.
    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let m = rows[0].len();
        Self::from_fn(n, m, |r, c| C64::new(rows[r][c], 0.0))
    }

    pub fn from_rows(rows: &[&[C64]]) -> Self {
        let n = rows.len();
        let m = rows[0].len();
        Self::from_fn(n, m, |r, c| rows[r][c])
    }

    pub fn diag_real(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = C64::new(*v, 0.0);
        }
        m
    }

    /// Projector |v><v| for a (not necessarily normalized) column vector.
    pub fn outer(u: &[C64], v: &[C64]) -> Self {
        Self::from_fn(u.len(), v.len(), |r, c| u[r] * v[c].conj())
    }

    /// |k><l| in dimension `dim`.
    pub fn unit(dim: usize, k: usize, l: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        m[(k, l)] = ONE;
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn conj(&self) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| f(*z)).collect() }
    }

    /// `self += s * other`; dimensions must agree.
    pub fn add_scaled(&mut self, other: &CMatrix, s: f64) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    pub fn try_add(&self, other: &CMatrix) -> Result<CMatrix> {
        self.check_same_shape(other)?;
        Ok(self + other)
    }

    pub fn try_sub(&self, other: &CMatrix) -> Result<CMatrix> {
        self.check_same_shape(other)?;
        Ok(self - other)
    }

    pub fn try_mul(&self, other: &CMatrix) -> Result<CMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self * other)
    }

    fn check_same_shape(&self, other: &CMatrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|r| self.data[r * self.cols..(r + 1) * self.cols].iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `v^T M` (no conjugation).
    pub fn vecmat(&self, v: &[C64]) -> Vec<C64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![ZERO; self.cols];
        for (r, vr) in v.iter().enumerate() {
            if *vr == ZERO {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += vr * a;
            }
        }
        out
    }

    /// Tr(A B) without forming the product.
    pub fn trace_product(&self, other: &CMatrix) -> C64 {
        debug_assert_eq!(self.cols, other.rows);
        debug_assert_eq!(self.rows, other.cols);
        let mut acc = ZERO;
        for i in 0..self.rows {
            for k in 0..self.cols {
                acc += self[(i, k)] * other[(k, i)];
            }
        }
        acc
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows)
                .all(|r| (r..self.cols).all(|c| (self[(r, c)] - self[(c, r)].conj()).norm() <= tol))
    }

    /// (M + M†)/2.
    pub fn hermitian_part(&self) -> CMatrix {
        let mut h = self + &self.adjoint();
        h.data.iter_mut().for_each(|z| *z *= 0.5);
        h
    }

    pub fn approx_eq(&self, other: &CMatrix, tol: f64) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.data.iter().zip(&other.data).all(|(a, b)| (a - b).norm() <= tol)
    }

    /// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues and
    /// the unitary whose columns are the matching eigenvectors.
    pub fn hermitian_eigen(&self) -> Result<(Vec<f64>, CMatrix)> {
        if !self.is_square() {
            return Err(Error::NotSquare(self.rows, self.cols));
        }
        Ok(jacobi_eigen(self))
    }

    pub fn eigenvalues_hermitian(&self) -> Result<Vec<f64>> {
        Ok(self.hermitian_eigen()?.0)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigenvalues_hermitian()?[0])
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.is_hermitian(tol.max(ALGEBRAIC_TOL)) && self.hermitian_part().min_eigenvalue().is_ok_and(|l| l >= -tol)
    }

    /// f(M) for Hermitian M via its eigen-decomposition.
    pub fn hermitian_fn(&self, f: impl Fn(f64) -> f64) -> Result<CMatrix> {
        let (vals, vecs) = self.hermitian_part().hermitian_eigen()?;
        let n = self.rows;
        Ok(CMatrix::from_fn(n, n, |r, c| {
            (0..n).map(|k| vecs[(r, k)] * f(vals[k]) * vecs[(c, k)].conj()).sum()
        }))
    }

    /// Square root of a PSD matrix; small negative eigenvalues are clamped.
    pub fn psd_sqrt(&self) -> Result<CMatrix> {
        self.hermitian_fn(|x| x.max(0.0).sqrt())
    }

    /// Unit-trace rescaling used for density matrices.
    pub fn normalized_trace(&self) -> CMatrix {
        let t = self.trace().re;
        self.scale_real(1.0 / t)
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, rhs.rows, "matrix product dimension mismatch");
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, b) in orow.iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
        out
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "matrix sum dimension mismatch");
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "matrix difference dimension mismatch");
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac, br, bc) = (a.rows, a.cols, b.rows, b.cols);
    CMatrix::from_fn(ar * br, ac * bc, |r, c| a[(r / br, c / bc)] * b[(r % br, c % bc)])
}

/// Largest singular value.
pub fn operator_norm(m: &CMatrix) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::NotSquare(m.rows, m.cols));
    }
    let gram = &m.adjoint() * m;
    let vals = gram.hermitian_part().eigenvalues_hermitian()?;
    Ok(vals.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

pub fn frobenius_distance(a: &CMatrix, b: &CMatrix) -> Result<f64> {
    Ok(a.try_sub(b)?.frobenius_norm())
}

/// Number of real parameters of a `dim`-dimensional Cholesky factor.
pub fn cholesky_len(dim: usize) -> usize {
    dim * dim
}

/// Lower-triangular factor T from a parameter vector: the first `dim`
/// entries are the real diagonal, followed by (re, im) pairs of the strictly
/// lower entries in row-major order.
pub fn cholesky_factor_from_params(params: &[f64], dim: usize) -> Result<CMatrix> {
    if params.len() != cholesky_len(dim) {
        return Err(Error::DimensionMismatch(format!(
            "{} Cholesky parameters for dimension {dim} (expected {})",
            params.len(),
            cholesky_len(dim)
        )));
    }
    let mut t = CMatrix::zeros(dim, dim);
    for i in 0..dim {
        t[(i, i)] = C64::new(params[i], 0.0);
    }
    let mut p = dim;
    for i in 0..dim {
        for j in 0..i {
            t[(i, j)] = C64::new(params[p], params[p + 1]);
            p += 2;
        }
    }
    Ok(t)
}

/// T·T† for the lower-triangular factor encoded in `params`.
pub fn cholesky_build(params: &[f64], dim: usize) -> Result<CMatrix> {
    let t = cholesky_factor_from_params(params, dim)?;
    Ok(&t * &t.adjoint())
}

/// Inverse of [`cholesky_build`] for positive-definite input; PSD input is
/// regularized by `jitter` on the diagonal first.
pub fn cholesky_params(m: &CMatrix, jitter: f64) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(Error::NotSquare(m.rows, m.cols));
    }
    let n = m.rows;
    let mut a = m.hermitian_part();
    for i in 0..n {
        a[(i, i)] += jitter;
    }
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if d <= 0.0 {
            return Err(Error::NotPositive(format!("pivot {j} is {d:e}")));
        }
        let djj = d.sqrt();
        l[(j, j)] = C64::new(djj, 0.0);
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    let mut params = Vec::with_capacity(n * n);
    params.extend((0..n).map(|i| l[(i, i)].re));
    for i in 0..n {
        for j in 0..i {
            params.push(l[(i, j)].re);
            params.push(l[(i, j)].im);
        }
    }
    Ok(params)
}

/// Gradient of a real function of X = T·T† with respect to the Cholesky
/// parameters, given `g` such that df = Re Tr(g dX).
pub fn cholesky_pullback(params: &[f64], dim: usize, g: &CMatrix, out: &mut [f64]) {
    let t = cholesky_factor_from_params(params, dim).expect("parameter length checked by caller");
    let gm = g + &g.adjoint();
    // (T† Gm)_{ba}
    let tg = &t.adjoint() * &gm;
    for i in 0..dim {
        out[i] = tg[(i, i)].re;
    }
    let mut p = dim;
    for i in 0..dim {
        for j in 0..i {
            let z = tg[(j, i)];
            out[p] = z.re;
            out[p + 1] = -z.im;
            p += 2;
        }
    }
}

/// Partial trace over the first (left) factor of a `d1*d2` bipartite operator.
pub fn partial_trace_first(m: &CMatrix, d1: usize, d2: usize) -> CMatrix {
    CMatrix::from_fn(d2, d2, |i, j| (0..d1).map(|a| m[(a * d2 + i, a * d2 + j)]).sum())
}

/// Partial trace over the second (right) factor of a `d1*d2` bipartite operator.
pub fn partial_trace_second(m: &CMatrix, d1: usize, d2: usize) -> CMatrix {
    CMatrix::from_fn(d1, d1, |i, j| (0..d2).map(|a| m[(i * d2 + a, j * d2 + a)]).sum())
}

pub fn pauli_x() -> CMatrix {
    CMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
}

pub fn pauli_y() -> CMatrix {
    CMatrix::from_rows(&[&[ZERO, -I], &[I, ZERO]])
}

pub fn pauli_z() -> CMatrix {
    CMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]])
}

/// exp(-i θ/2 σ) for a Pauli matrix σ.
pub fn pauli_rotation(sigma: &CMatrix, theta: f64) -> CMatrix {
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let mut u = CMatrix::identity(2).scale_real(c);
    u.add_scaled(&sigma.scale(-I), s);
    u
}

/// Computational-basis projector |n><n| in dimension `dim`.
pub fn basis_projector(dim: usize, n: usize) -> CMatrix {
    CMatrix::unit(dim, n, n)
}

fn jacobi_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.rows;
    let mut a = m.hermitian_part();
    let mut v = CMatrix::identity(n);
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|r| (0..n).filter(move |c| *c != r).map(move |c| (r, c)))
            .map(|(r, c)| a[(r, c)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag <= 1e-300 {
                    continue;
                }
                let phase = apq / mag;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let tau = (aqq - app) / (2.0 * mag);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // G = diag(1, conj(phase)) · [[c, s], [-s, c]]
                let ph_c = phase.conj();
                let g_qp = -ph_c * s;
                let g_qq = ph_c * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * c + akq * g_qp;
                    a[(k, q)] = akp * s + akq * g_qq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = apk * c + aqk * g_qp.conj();
                    a[(q, k)] = apk * s + aqk * g_qq.conj();
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * c + vkq * g_qp;
                    v[(k, q)] = vkp * s + vkq * g_qq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let vals = order.iter().map(|&i| a[(i, i)].re).collect();
    let vecs = CMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (vals, vecs)
}
