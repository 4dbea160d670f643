//! Dense complex linear-algebra helpers shared by the solvers.
//!
//! Everything works on `nalgebra` dynamic matrices of `Complex64`. Hermitian
//! positive-definite inputs go through Cholesky; eigen-based routines use the
//! Hermitian eigendecomposition.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const J: C64 = C64::new(0.0, 1.0);

/// Relative asymmetry tolerated before a matrix is refused as non-Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-8;

/// Relative ridge `eps * tr(M) / dim` used when a Gram-type matrix is singular.
pub const RIDGE_SCALE: f64 = 1e-12;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn real(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// `‖M − Mᴴ‖_F / max(‖M‖_F, tiny)`.
pub fn relative_asymmetry(m: &CMat) -> f64 {
    let scale = m.norm().max(f64::MIN_POSITIVE);
    (m - m.adjoint()).norm() / scale
}

/// `(M + Mᴴ)/2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Symmetrizes `m`, refusing inputs whose asymmetry exceeds [`HERMITIAN_TOL`].
pub fn symmetrized(m: &CMat) -> Result<CMat> {
    let asym = relative_asymmetry(m);
    if asym > HERMITIAN_TOL {
        return Err(Error::NotHermitian(asym));
    }
    Ok(hermitian_part(m))
}

pub fn real_trace(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// Cholesky factorization that rejects indefinite input.
///
/// nalgebra's complex Cholesky takes complex square roots of negative pivots
/// instead of failing, so every pivot is checked to be real and positive.
pub fn cholesky(h: CMat) -> Option<Cholesky<C64, Dyn>> {
    let chol = h.cholesky()?;
    let ok = chol
        .l_dirty()
        .diagonal()
        .iter()
        .all(|d| d.re > 0.0 && d.im.abs() <= 1e-8 * d.re);
    ok.then_some(chol)
}

/// Natural-log determinant of a Hermitian positive-definite matrix.
pub fn logdet_hpd(m: &CMat) -> Result<f64> {
    let h = symmetrized(m)?;
    let chol = cholesky(h).ok_or(Error::NotPositiveDefinite("log-determinant"))?;
    Ok(2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.re.ln())
            .sum::<f64>())
}

/// Inverse of a Hermitian positive-definite matrix.
///
/// When Cholesky fails a ridge `RIDGE_SCALE · tr(M)/dim` is added once and the
/// second return value is `true`.
pub fn inverse_hpd(m: &CMat) -> Result<(CMat, bool)> {
    let h = symmetrized(m)?;
    if let Some(chol) = cholesky(h.clone()) {
        return Ok((hermitian_part(&chol.inverse()), false));
    }
    let ridged = add_ridge(&h);
    let chol = cholesky(ridged).ok_or(Error::NotPositiveDefinite("inverse after ridge"))?;
    Ok((hermitian_part(&chol.inverse()), true))
}

/// Inverse and log-determinant from one factorization (ridge rule as in
/// [`inverse_hpd`]; the log-determinant is that of the ridged matrix).
pub fn inverse_logdet_hpd(m: &CMat) -> Result<(CMat, f64, bool)> {
    let h = symmetrized(m)?;
    let (chol, ridged) = match cholesky(h.clone()) {
        Some(c) => (c, false),
        None => (
            cholesky(add_ridge(&h)).ok_or(Error::NotPositiveDefinite("inverse after ridge"))?,
            true,
        ),
    };
    let logdet = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.re.ln())
            .sum::<f64>();
    Ok((hermitian_part(&chol.inverse()), logdet, ridged))
}

/// `tr(A B)` without forming the product.
pub fn trace_product(a: &CMat, b: &CMat) -> C64 {
    let mut t = C64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            t += a[(i, j)] * b[(j, i)];
        }
    }
    t
}

/// `M + ε I` with `ε = RIDGE_SCALE · tr(M)/dim` (or `RIDGE_SCALE` for a zero trace).
pub fn add_ridge(m: &CMat) -> CMat {
    let n = m.nrows();
    let tr = real_trace(m).abs();
    let eps = if tr > 0.0 {
        RIDGE_SCALE * tr / n as f64
    } else {
        RIDGE_SCALE
    };
    let mut out = m.clone();
    for i in 0..n {
        out[(i, i)] += real(eps);
    }
    out
}

/// Solves `M X = B` for Hermitian positive-definite `M` (ridge fallback as in
/// [`inverse_hpd`]).
pub fn solve_hpd(m: &CMat, b: &CMat) -> Result<(CMat, bool)> {
    let h = symmetrized(m)?;
    if let Some(chol) = cholesky(h.clone()) {
        return Ok((chol.solve(b), false));
    }
    let chol = cholesky(add_ridge(&h)).ok_or(Error::NotPositiveDefinite("solve after ridge"))?;
    Ok((chol.solve(b), true))
}

/// Hermitian eigendecomposition with eigenvalues in ascending order.
pub fn hermitian_eigen(m: &CMat) -> Result<(DVector<f64>, CMat)> {
    let h = symmetrized(m)?;
    let eig = h.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: alloc::vec::Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

pub fn min_eigenvalue(m: &CMat) -> Result<f64> {
    let (values, _) = hermitian_eigen(m)?;
    Ok(values.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Hermitian PSD square root.
///
/// Eigenvalues below `-neg_tol` are rejected; smaller negatives are clamped to 0.
pub fn hermitian_sqrt(m: &CMat, neg_tol: f64) -> Result<CMat> {
    let (values, vectors) = hermitian_eigen(m)?;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -neg_tol {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
        });
    }
    let n = values.len();
    let mut scaled = vectors.clone();
    for j in 0..n {
        let s = values[j].max(0.0).sqrt();
        for i in 0..n {
            scaled[(i, j)] *= s;
        }
    }
    Ok(hermitian_part(&(scaled * vectors.adjoint())))
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Hadamard product `A ⊙ B`.
pub fn hadamard(a: &CMat, b: &CMat) -> CMat {
    a.component_mul(b)
}

/// Squared Frobenius norm.
pub fn fro2(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}
