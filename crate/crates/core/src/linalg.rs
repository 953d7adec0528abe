//! Dense complex linear-algebra helpers shared by the signal model and the optimizers.
//!
//! Everything here works on `nalgebra` dynamic matrices over `Complex<f64>`. Vectorization is
//! column-major throughout, so `vec{X}` stacks the columns of `X` and `vec{a bᴴ} = b* ⊗ a`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

pub const J: C64 = Complex { re: 0.0, im: 1.0 };

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

/// `diag{v}` as a dense square matrix.
pub fn diag(v: &CVec) -> CMat {
    CMat::from_diagonal(v)
}

/// Real embedding `[[Re X, −Im X], [Im X, Re X]]` of a complex matrix.
pub fn real_embedding(x: &CMat) -> RMat {
    let (r, c) = x.shape();
    let mut out = RMat::zeros(2 * r, 2 * c);
    for j in 0..c {
        for i in 0..r {
            let z = x[(i, j)];
            out[(i, j)] = z.re;
            out[(i, j + c)] = -z.im;
            out[(i + r, j)] = z.im;
            out[(i + r, j + c)] = z.re;
        }
    }
    out
}

/// `[Re v; Im v]`.
pub fn stack_real(v: &CVec) -> RVec {
    let n = v.len();
    RVec::from_fn(2 * n, |i, _| if i < n { v[i].re } else { v[i - n].im })
}

/// Inverse of [`stack_real`], i.e. `U x` with `U = [I  jI]`.
pub fn unstack_real(x: &RVec) -> CVec {
    let n = x.len() / 2;
    CVec::from_fn(n, |i, _| c(x[i], x[i + n]))
}

/// Column-major vectorization.
pub fn vectorize(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

/// Column-major reshape of a length `rows·cols` vector.
pub fn unvectorize(v: &CVec, rows: usize, cols: usize) -> CMat {
    CMat::from_column_slice(rows, cols, v.as_slice())
}

/// `xᴴ A y`.
pub fn bilinear(x: &CVec, a: &CMat, y: &CVec) -> C64 {
    x.dotc(&(a * y))
}

/// `xᴴ A x`.
pub fn quad(a: &CMat, x: &CVec) -> C64 {
    bilinear(x, a, x)
}

pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

pub fn fro_sq(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Largest deviation from Hermitian symmetry, relative to the matrix norm.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let scale = a.norm().max(f64::MIN_POSITIVE);
    (a - a.adjoint()).norm() / scale
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn hermitian_eigenvalues(a: &CMat) -> Vec<f64> {
    let mut ev: Vec<f64> = hermitian_part(a).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

pub fn min_eig_hermitian(a: &CMat) -> f64 {
    hermitian_eigenvalues(a).first().copied().unwrap_or(0.0)
}

pub fn max_eig_hermitian(a: &CMat) -> f64 {
    hermitian_eigenvalues(a).last().copied().unwrap_or(0.0)
}

/// Largest eigenvalue of the symmetric part of a real square matrix (dense path).
pub fn max_eig_symmetric(h: &RMat) -> f64 {
    let sym = (h + h.transpose()).scale(0.5);
    sym.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Largest algebraic eigenvalue of a symmetric operator by shifted power iteration.
///
/// A first power iteration estimates the spectral radius `ρ`; a second runs on `H + ρI`, which
/// is positive semidefinite, so its dominant eigenvalue is `λ_max + ρ`.
pub fn max_eig_symmetric_op<F>(apply: F, dim: usize, tol: f64, max_iter: usize) -> Option<f64>
where
    F: Fn(&RVec) -> RVec,
{
    if dim == 0 {
        return Some(0.0);
    }
    let start = RVec::from_fn(dim, |i, _| 1.0 + 0.37 * ((i * 7919 % 97) as f64) / 97.0);
    let radius = dominant(&apply, &start, tol, max_iter)?.abs();
    if radius == 0.0 {
        return Some(0.0);
    }
    let shifted = |x: &RVec| apply(x) + x.scale(radius);
    let top = dominant(&shifted, &start, tol, max_iter)?;
    Some(top - radius)
}

fn dominant<F>(apply: &F, start: &RVec, tol: f64, max_iter: usize) -> Option<f64>
where
    F: Fn(&RVec) -> RVec,
{
    let mut x = start.normalize();
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let y = apply(&x);
        let next = x.dot(&y);
        let norm = y.norm();
        if norm == 0.0 {
            return Some(0.0);
        }
        let converged = (next - lambda).abs() <= tol * next.abs().max(1e-300);
        lambda = next;
        // Rayleigh quotient for the signed value; the iterate follows |λ|max.
        x = y / norm;
        if converged {
            return Some(lambda);
        }
    }
    None
}

/// Hermitian square root `S = V diag(√max(λ,0)) Vᴴ`, so `S S = A` for `A ⪰ 0`.
pub fn hermitian_sqrt(a: &CMat) -> CMat {
    let eig = hermitian_part(a).symmetric_eigen();
    let n = a.nrows();
    let mut out = CMat::zeros(n, n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam <= 0.0 {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        out += (v * v.adjoint()).scale(lam.sqrt());
    }
    out
}

/// Solves `A X = B` for Hermitian positive definite `A`, falling back to LU.
pub fn solve_hpd(a: &CMat, b: &CMat) -> Option<CMat> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    a.clone().lu().solve(b)
}

pub fn conj_vec(v: &CVec) -> CVec {
    v.map(|z| z.conj())
}

pub fn conj_mat(m: &CMat) -> CMat {
    m.map(|z| z.conj())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_of_pauli_y() {
        let x = CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)]);
        let e = real_embedding(&x);
        let expected = RMat::from_row_slice(
            4,
            4,
            &[0., 0., 0., 1., 0., 0., -1., 0., 0., -1., 0., 0., 1., 0., 0., 0.],
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn vec_of_outer_product_is_kron() {
        let a = CVec::from_vec(vec![c(1.0, 2.0), c(-0.5, 0.3), c(0.0, 1.0)]);
        let outer = &a * a.adjoint();
        let v = vectorize(&outer);
        let k = conj_vec(&a).kronecker(&a);
        assert!((v - k).norm() < 1e-14);
    }

    #[test]
    fn power_iteration_matches_dense() {
        let h = RMat::from_fn(12, 12, |i, j| ((i * 3 + j * 5) % 7) as f64 - 3.0);
        let h = &h + h.transpose();
        let dense = max_eig_symmetric(&h);
        let op = max_eig_symmetric_op(|x| &h * x, 12, 1e-13, 100_000).unwrap();
        assert!((dense - op).abs() < 1e-6 * dense.abs().max(1.0), "{dense} vs {op}");
    }

    #[test]
    fn sqrt_squares_back() {
        let b = CMat::from_fn(3, 3, |i, j| c((i + j) as f64, i as f64 - j as f64));
        let a = &b * b.adjoint();
        let s = hermitian_sqrt(&a);
        assert!((&s * &s - &a).norm() < 1e-10 * a.norm());
    }
}
