//! Small dense linear-algebra helpers over `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A covariance matrix, either diagonal or dense symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(v) => v.len(),
            Covariance::Full(m) => m.nrows(),
        }
    }

    pub fn scaled_identity(dim: usize, value: f64) -> Self {
        Covariance::Diagonal(vec![value; dim])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        match self {
            Covariance::Diagonal(v) => v.clone(),
            Covariance::Full(m) => m.diagonal().iter().copied().collect(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            Covariance::Diagonal(v) => DMatrix::from_diagonal(&DVector::from_column_slice(v)),
            Covariance::Full(m) => m.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Covariance::Diagonal(v) => {
                if v.iter().all(|&s| s > 0.0 && s.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::NotPositiveDefinite("diagonal covariance entry not positive"))
                }
            }
            Covariance::Full(m) => cholesky(m).map(|_| ()),
        }
    }

    /// `log det`, through the triangular factor for dense matrices.
    pub fn log_det(&self) -> Result<f64> {
        self.validate()?;
        Ok(match self {
            Covariance::Diagonal(v) => v.iter().map(|s| s.ln()).sum(),
            Covariance::Full(m) => log_det_spd(m)?,
        })
    }

    /// Lower-triangular `L` with `L L^T = Sigma`.
    pub fn factor(&self) -> Result<DMatrix<f64>> {
        match self {
            Covariance::Diagonal(v) => {
                self.validate()?;
                Ok(DMatrix::from_diagonal(&DVector::from_iterator(
                    v.len(),
                    v.iter().map(|s| s.sqrt()),
                )))
            }
            Covariance::Full(m) => Ok(cholesky(m)?.l()),
        }
    }

    /// `mean + L z` for a standard normal vector `z`.
    pub fn transform(&self, mean: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        match self {
            Covariance::Diagonal(v) => Ok(mean
                .iter()
                .zip(v)
                .zip(z)
                .map(|((m, s), z)| m + s.sqrt() * z)
                .collect()),
            Covariance::Full(_) => {
                let l = self.factor()?;
                let shift = &l * DVector::from_column_slice(z);
                Ok(mean.iter().zip(shift.iter()).map(|(m, s)| m + s).collect())
            }
        }
    }

    /// `Tr(Sigma H)` for a symmetric `H`.
    pub fn trace_product(&self, h: &DMatrix<f64>) -> f64 {
        match self {
            Covariance::Diagonal(v) => v.iter().enumerate().map(|(i, s)| s * h[(i, i)]).sum(),
            Covariance::Full(m) => m.component_mul(&h.transpose()).sum(),
        }
    }
}

pub fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotPositiveDefinite("matrix is not square"));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NotPositiveDefinite("matrix has non-finite entries"));
    }
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite("Cholesky factorization failed"))
}

pub fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky(m)?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub fn inverse_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(cholesky(m)?.inverse())
}

/// `log sum exp` over the values, `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `log sum_i w_i exp(v_i)` for non-negative weights.
pub fn weighted_log_sum_exp(values: &[f64], weights: &[f64]) -> f64 {
    let max = values
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (v - max).exp())
        .sum::<f64>()
        .ln()
}
