//! Small complex dense-matrix helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// `(m + m^H) / 2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

pub fn trace_re(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// `Re Tr(a b)` without forming the product.
pub fn trace_prod_re(a: &CMat, b: &CMat) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}

pub fn fro2(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Eigen-decomposition of a Hermitian matrix (symmetrized first).
pub fn eigh(m: &CMat) -> (DVector<f64>, CMat) {
    let eig = hermitian_part(m).symmetric_eigen();
    (eig.eigenvalues, eig.eigenvectors)
}

/// `Q diag(f(lambda)) Q^H`.
pub fn spectral_map(m: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let (vals, vecs) = eigh(m);
    let mut scaled = vecs.clone();
    for (j, v) in vals.iter().enumerate() {
        let s = f(*v);
        for i in 0..scaled.nrows() {
            scaled[(i, j)] *= s;
        }
    }
    scaled * vecs.adjoint()
}

/// Hermitian square root with negative eigenvalues clamped to zero.
pub fn sqrtm_psd(m: &CMat) -> CMat {
    spectral_map(m, |v| v.max(0.0).sqrt())
}

/// Cholesky factor of the Hermitian part of `m`, or `None` unless it is
/// positive definite. nalgebra's complex Cholesky takes complex square roots
/// of nonpositive pivots instead of failing, hence the pivot check.
pub fn cholesky_hpd(m: &CMat) -> Option<Cholesky<C64, Dyn>> {
    let chol = hermitian_part(m).cholesky()?;
    let ok = chol.l_dirty().diagonal().iter().all(|z| z.re > 0.0 && z.im.abs() <= 1e-12 * z.re);
    ok.then_some(chol)
}

/// `log det` of a Hermitian positive definite matrix via Cholesky.
pub fn log_det_hpd(m: &CMat) -> Option<f64> {
    let chol = cholesky_hpd(m)?;
    Some(chol.l_dirty().diagonal().iter().map(|z| 2.0 * z.re.ln()).sum())
}

/// Inverse of a Hermitian matrix whose spectrum is first lifted by `floor`
/// when its smallest eigenvalue falls below `floor`.
pub fn inv_hpd_regularized(m: &CMat, floor: f64) -> CMat {
    let (vals, _) = eigh(m);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let shift = if min < floor { floor } else { 0.0 };
    spectral_map(m, |v| 1.0 / (v + shift).max(f64::MIN_POSITIVE))
}

/// Inverse of a Hermitian positive definite matrix via Cholesky.
pub fn inv_hpd(m: &CMat) -> Option<CMat> {
    let chol = cholesky_hpd(m)?;
    Some(hermitian_part(&chol.inverse()))
}

pub fn min_eigenvalue(m: &CMat) -> f64 {
    eigh(m).0.iter().cloned().fold(f64::INFINITY, f64::min)
}
