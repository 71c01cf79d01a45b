use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Multivariate normal `N(v, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MvnSpec {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl MvnSpec {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let mvn = MvnSpec { mean, cov };
        mvn.validate()?;
        Ok(mvn)
    }

    pub fn zero_mean(cov: DMatrix<f64>) -> Result<Self> {
        let n = cov.nrows();
        Self::new(DVector::zeros(n), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mean.len();
        if self.cov.nrows() != n || self.cov.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: self.cov.nrows() });
        }
        let scale = self.cov.amax().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in 0..i {
                if (self.cov[(i, j)] - self.cov[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::NotPositiveDefinite { context: "covariance is not symmetric".into() });
                }
            }
        }
        let jitter = 1e-10 * (self.cov.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
        let shifted = &self.cov + DMatrix::identity(n, n) * jitter;
        if nalgebra::Cholesky::new(shifted).is_none() {
            return Err(Error::NotPositiveDefinite { context: "multivariate normal covariance".into() });
        }
        Ok(())
    }
}

/// `E[exp(−xᵀJx/2)]` for `x ~ N(v, K)`:
/// `exp(−½ vᵀAv) / √|I + KJ|` with `A = K⁻¹[I − (I+KJ)⁻¹] = J(I+KJ)⁻¹`.
/// The second form of `A` needs no inverse of `K`.
pub fn gauss_quadratic_expectation(mvn: &MvnSpec, j: &DMatrix<f64>) -> Result<f64> {
    let n = mvn.dim();
    if j.nrows() != n || j.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: j.nrows() });
    }
    let m = DMatrix::identity(n, n) + &mvn.cov * j;
    let det = m.determinant();
    if det.is_nan() || det <= 0.0 {
        return Err(Error::DivergentExpectation { determinant: det });
    }
    let quad = if mvn.mean.iter().all(|v| *v == 0.0) {
        0.0
    } else {
        let m_inv = m.try_inverse().ok_or(Error::DivergentExpectation { determinant: det })?;
        let a = j * m_inv;
        mvn.mean.dot(&(a * &mvn.mean))
    };
    Ok((-0.5 * quad).exp() / det.sqrt())
}

/// `E[exp(u·x)] = exp(u·v + ½uᵀKu)` for real `u`.
pub fn gauss_linear_expectation(mvn: &MvnSpec, u: &DVector<f64>) -> Result<f64> {
    if u.len() != mvn.dim() {
        return Err(Error::DimensionMismatch { expected: mvn.dim(), found: u.len() });
    }
    Ok((u.dot(&mvn.mean) + 0.5 * u.dot(&(&mvn.cov * u))).exp())
}

/// `E[cos((h₁ − h₂)/ℓ)]` for a bivariate normal: the real part of the linear
/// identity at the imaginary `u = (i/ℓ, −i/ℓ)`,
/// `cos((v₁ − v₂)/ℓ) · exp((2k₁₂ − k₁₁ − k₂₂)/2ℓ²)`.
pub fn sc_pair_expectation(mvn: &MvnSpec, length: f64) -> Result<f64> {
    if mvn.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: mvn.dim() });
    }
    crate::error::check_positive("length", length)?;
    let k = &mvn.cov;
    let phase = ((mvn.mean[0] - mvn.mean[1]) / length).cos();
    Ok(phase * ((2.0 * k[(0, 1)] - k[(0, 0)] - k[(1, 1)]) / (2.0 * length * length)).exp())
}
