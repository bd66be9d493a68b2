use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// Cholesky factor of a covariance matrix, with whatever diagonal jitter
/// was needed to obtain it.
#[derive(Debug, Clone)]
pub struct Factor {
    chol: Cholesky<f64, Dyn>,
    /// Absolute jitter added to the diagonal (0 when none was needed).
    pub jitter: f64,
}

impl Factor {
    /// Factorizes `sigma`. On failure adds `1e-10 · mean(diag)` to the
    /// diagonal and escalates by 10× up to `1e-4 · mean(diag)`.
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(Error::Dimension("covariance matrix must be square".into()));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite { jitter: 0.0 });
        }
        if let Some(chol) = Cholesky::new(sigma.clone()) {
            return Ok(Factor { chol, jitter: 0.0 });
        }
        let n = sigma.nrows();
        let mean_diag = sigma.diagonal().sum() / n as f64;
        let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
        let mut rel = JITTER_START;
        while rel <= JITTER_MAX * (1.0 + 1e-9) {
            let jitter = rel * scale;
            let mut m = sigma.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(m) {
                return Ok(Factor { chol, jitter });
            }
            rel *= 10.0;
        }
        Err(Error::NotPositiveDefinite {
            jitter: JITTER_MAX * scale,
        })
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(y)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// `log G(y | Σ)` for a zero-mean Gaussian.
    pub fn log_pdf(&self, y: &DVector<f64>) -> f64 {
        let alpha = self.solve(y);
        log_pdf_parts(y.dot(&alpha), self.log_det(), y.len())
    }
}

pub(crate) fn log_pdf_parts(quad: f64, log_det: f64, k: usize) -> f64 {
    -0.5 * quad - 0.5 * log_det - 0.5 * k as f64 * (2.0 * PI).ln()
}

/// Log density of a zero-mean multivariate Gaussian,
/// `-½ yᵀΣ⁻¹y - ½ log det Σ - (k/2) log 2π`, computed through a Cholesky
/// factor (with jitter escalation on failure).
pub fn log_gauss_pdf(y: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    if y.len() != sigma.nrows() {
        return Err(Error::Dimension(format!(
            "y has length {} but covariance is {}x{}",
            y.len(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    Ok(Factor::new(sigma)?.log_pdf(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn standard_normal_values() {
        let k = 4;
        let v = log_gauss_pdf(&DVector::zeros(k), &DMatrix::identity(k, k)).unwrap();
        assert_relative_eq!(v, -(k as f64) / 2.0 * (2.0 * PI).ln(), epsilon = 1e-14);

        let v = log_gauss_pdf(&DVector::from_element(1, 1.0), &DMatrix::identity(1, 1)).unwrap();
        assert_relative_eq!(v, -0.5 - 0.5 * (2.0 * PI).ln(), epsilon = 1e-14);
        assert_relative_eq!(v, -1.418_938_533_204_672_7, epsilon = 1e-12);

        let v = log_gauss_pdf(
            &DVector::zeros(2),
            &DMatrix::from_diagonal_element(2, 2, 2.0),
        )
        .unwrap();
        assert_relative_eq!(v, -(2.0 * PI).ln() - 2f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        // rank one: exactly singular
        let m = DMatrix::from_element(3, 3, 1.0);
        let f = Factor::new(&m).unwrap();
        assert!(f.jitter > 0.0);
        assert!(f.jitter <= 1e-4);
    }

    #[test]
    fn indefinite_is_an_error() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            log_gauss_pdf(&DVector::zeros(2), &m),
            Err(Error::NotPositiveDefinite { .. })
        ));
        assert!(log_gauss_pdf(&DVector::zeros(3), &DMatrix::identity(2, 2)).is_err());
    }
}
