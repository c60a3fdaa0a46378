//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// First jitter tried when a Cholesky factorization fails, then ×10 up to [`JITTER_MAX`].
pub const JITTER_START: f64 = 1e-6;
pub const JITTER_MAX: f64 = 1e-2;

/// Cholesky factor of `m`, adding diagonal jitter on failure.
///
/// Returns the factor and the jitter that was needed (0 when none). The row
/// reported on failure is filled in by the caller.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok((c, 0.0));
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let mut shifted = m.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(shifted) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::SingularCovariance {
        row: 0,
        jitter: JITTER_MAX,
    })
}

pub fn log_det_from_cholesky(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Rescale a symmetric matrix with positive diagonal to unit diagonal.
pub fn normalize_to_correlation(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = m.nrows();
    let mut scale = Vec::with_capacity(p);
    for j in 0..p {
        let d = m[(j, j)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NonPositiveDiagonal { column: j, value: d });
        }
        scale.push(1.0 / d.sqrt());
    }
    let mut r = DMatrix::zeros(p, p);
    for i in 0..p {
        r[(i, i)] = 1.0;
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]) * scale[i] * scale[j];
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    Ok(r)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Clip eigenvalues at `floor`, rebuild, and rescale to unit diagonal.
pub fn project_to_correlation(m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let rebuilt = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    normalize_to_correlation(&rebuilt)
}

/// `||a - b||_F / ||b||_F`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Symmetric square root factor `A` with `A Aᵀ = m`, negative eigenvalues dropped.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return c.unpack();
    }
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}
