//! Dense complex/real linear algebra used across the crate: Hermitian
//! eigendecomposition, Cholesky with log-determinant, the PSD square root,
//! condition numbers, and the classical dense solve used as the oracle
//! against the quantum backend.

use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64;
use thiserror::Error;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;
pub type RMatrix = DMatrix<f64>;
pub type RVector = DVector<f64>;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("matrix is not Hermitian (max asymmetry {max_asym:.3e} exceeds tolerance)")]
    NonHermitian { max_asym: f64 },
    #[error("eigendecomposition did not converge")]
    NoConvergence,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is not positive semi-definite (min eigenvalue {min_eig:.3e})")]
    NotPsd { min_eig: f64 },
    #[error("matrix is zero")]
    ZeroMatrix,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Eigendecomposition of a Hermitian matrix: real eigenvalues in ascending
/// order with matching orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: RVector,
    pub eigenvectors: CMatrix,
}

impl EigenDecomposition {
    /// Rebuild `V diag(f(lambda)) V^dagger`.
    pub fn map_rebuild(&self, f: impl Fn(f64) -> Complex64) -> CMatrix {
        let n = self.eigenvalues.len();
        let v = &self.eigenvectors;
        let d = CMatrix::from_diagonal(&CVector::from_iterator(
            n,
            self.eigenvalues.iter().map(|&l| f(l)),
        ));
        v * d * v.adjoint()
    }
}

pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Relative Hermitian-symmetry check: |A_ij - conj(A_ji)| <= tol * max|A|.
pub fn check_hermitian(a: &CMatrix, rel_tol: f64) -> Result<(), NumericsError> {
    if a.nrows() != a.ncols() {
        return Err(NumericsError::DimensionMismatch(format!(
            "{}x{} is not square",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    let mut max_asym: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            max_asym = max_asym.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    if max_asym > rel_tol * scale {
        return Err(NumericsError::NonHermitian { max_asym });
    }
    Ok(())
}

/// Hermitian eigendecomposition with ascending eigenvalues.
pub fn eigh(a: &CMatrix) -> Result<EigenDecomposition, NumericsError> {
    check_hermitian(a, 1e-12)?;
    // symmetrize so tiny asymmetries cannot leak into the decomposition
    let h = (a + a.adjoint()).scale(0.5);
    let se = h
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or(NumericsError::NoConvergence)?;
    let n = se.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].total_cmp(&se.eigenvalues[j]));
    let eigenvalues = RVector::from_iterator(n, order.iter().map(|&i| se.eigenvalues[i]));
    let eigenvectors = CMatrix::from_columns(
        &order
            .iter()
            .map(|&i| se.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Eigendecomposition of a real symmetric matrix.
pub fn eigh_real(a: &RMatrix) -> Result<EigenDecomposition, NumericsError> {
    eigh(&to_complex(a))
}

pub fn to_complex(a: &RMatrix) -> CMatrix {
    a.map(|x| Complex64::new(x, 0.0))
}

/// Real part of a complex matrix; the imaginary content is the caller's
/// responsibility to have bounded.
pub fn to_real(a: &CMatrix) -> RMatrix {
    a.map(|z| z.re)
}

/// Cholesky factor and log-determinant of a symmetric positive definite
/// matrix. The factor is lower triangular with `L L^T = K`.
pub fn cholesky_logdet(k: &RMatrix) -> Result<(RMatrix, f64), NumericsError> {
    let chol = k
        .clone()
        .cholesky()
        .ok_or(NumericsError::NotPositiveDefinite)?;
    let l = chol.l();
    let logdet = 2.0 * l.diagonal().iter().map(|&d| d.ln()).sum::<f64>();
    Ok((l, logdet))
}

/// Hermitian PSD square root via eigendecomposition. Eigenvalues within
/// `1e-10 * lambda_max` of zero are clamped to zero before rooting.
pub fn psd_sqrt(k: &CMatrix) -> Result<CMatrix, NumericsError> {
    let ed = eigh(k)?;
    let lmax = ed.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = 1e-10 * lmax.max(f64::MIN_POSITIVE);
    let min_eig = ed.eigenvalues.min();
    if min_eig < -tol {
        return Err(NumericsError::NotPsd { min_eig });
    }
    Ok(ed.map_rebuild(|l| Complex64::new(l.max(0.0).sqrt(), 0.0)))
}

/// Real symmetric PSD square root.
pub fn psd_sqrt_real(k: &RMatrix) -> Result<RMatrix, NumericsError> {
    Ok(to_real(&psd_sqrt(&to_complex(k))?))
}

/// lambda_max / lambda_min over eigenvalues above `1e-14 * lambda_max`;
/// +infinity if no eigenvalue clears that threshold.
pub fn condition_number(a: &CMatrix) -> Result<f64, NumericsError> {
    let ed = eigh(a)?;
    let lmax = ed
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if lmax <= 0.0 {
        return Err(NumericsError::ZeroMatrix);
    }
    let lmin = ed
        .eigenvalues
        .iter()
        .cloned()
        .filter(|&l| l > 1e-14 * lmax)
        .fold(f64::INFINITY, f64::min);
    if lmin.is_finite() {
        Ok(lmax / lmin)
    } else {
        Ok(f64::INFINITY)
    }
}

pub fn condition_number_real(a: &RMatrix) -> Result<f64, NumericsError> {
    condition_number(&to_complex(a))
}

/// Dense SPD solve via Cholesky; the classical oracle for the HHL path.
pub fn solve_psd(k: &RMatrix, y: &RVector) -> Result<RVector, NumericsError> {
    let chol = k
        .clone()
        .cholesky()
        .ok_or(NumericsError::NotPositiveDefinite)?;
    Ok(chol.solve(y))
}
