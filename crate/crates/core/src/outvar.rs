//! Gaussian output model with per-component standard deviations, the
//! closed-form optimal variances, and the resulting log-error objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::LN_2PI;

/// Smallest standard deviation a refit may produce when both the mean square
/// error and the quantization level are zero.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    Fixed,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputModel {
    pub sigma: Vec<f64>,
    pub mode: SigmaMode,
    /// Quantization level of the data.
    pub epsilon: f64,
}

impl OutputModel {
    pub fn fixed(sigma: Vec<f64>) -> Result<Self> {
        let m = OutputModel {
            sigma,
            mode: SigmaMode::Fixed,
            epsilon: 0.0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn learned(dim: usize, initial: f64, epsilon: f64) -> Result<Self> {
        let m = OutputModel {
            sigma: vec![initial; dim],
            mode: SigmaMode::Learned,
            epsilon,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma.is_empty() || !self.sigma.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "output standard deviations must be positive: {:?}",
                self.sigma
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    /// `1 / sigma_k^2` per component.
    pub fn precisions(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| 1.0 / (s * s)).collect()
    }

    /// `-log g(x)` for a Gaussian centred on `mean`.
    pub fn neg_log_likelihood(&self, mean: &[f64], x: &[f64]) -> f64 {
        mean.iter()
            .zip(x)
            .zip(&self.sigma)
            .map(|((m, x), s)| (x - m).powi(2) / (2.0 * s * s) + s.ln() + 0.5 * LN_2PI)
            .sum()
    }

    /// Gradient of [`neg_log_likelihood`](Self::neg_log_likelihood) with
    /// respect to the mean.
    pub fn neg_log_likelihood_grad(&self, mean: &[f64], x: &[f64]) -> Vec<f64> {
        mean.iter()
            .zip(x)
            .zip(&self.sigma)
            .map(|((m, x), s)| (m - x) / (s * s))
            .collect()
    }

    /// Replaces `sigma` with the optimum for the given per-component mean
    /// square errors. No-op in fixed mode.
    pub fn refit(&mut self, mean_square_errors: &[f64]) -> Result<()> {
        if self.mode == SigmaMode::Fixed {
            return Ok(());
        }
        if mean_square_errors.len() != self.dim() {
            return Err(Error::dim("sigma refit", self.dim(), mean_square_errors.len()));
        }
        self.sigma = optimal_sigma_out(mean_square_errors, self.epsilon);
        Ok(())
    }
}

/// `sigma_i = sqrt(E_i + eps^2)`.
pub fn optimal_sigma_out(mean_square_errors: &[f64], epsilon: f64) -> Vec<f64> {
    mean_square_errors
        .iter()
        .map(|e| (e.max(0.0) + epsilon * epsilon).sqrt().max(SIGMA_FLOOR))
        .collect()
}

/// Per-component mean square error over a set of residual vectors.
pub fn mean_square_errors(residuals: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = residuals.first() else {
        return Vec::new();
    };
    let n = residuals.len() as f64;
    let mut e = vec![0.0; first.len()];
    for r in residuals {
        for (ei, ri) in e.iter_mut().zip(r) {
            *ei += ri * ri / n;
        }
    }
    e
}

/// `(n/2) sum_i log(E_i + eps^2)`; see [`log_error_constant`] for the
/// additive constant.
pub fn log_error_objective(mean_square_errors: &[f64], epsilon: f64, n_samples: usize) -> f64 {
    0.5 * n_samples as f64
        * mean_square_errors
            .iter()
            .map(|e| (e + epsilon * epsilon).ln())
            .sum::<f64>()
}

/// The constant `n * dim * (1 + log 2 pi) / 2` separating the optimal-sigma
/// reconstruction codelength from [`log_error_objective`].
pub fn log_error_constant(dim: usize, n_samples: usize) -> f64 {
    0.5 * (n_samples * dim) as f64 * (1.0 + LN_2PI)
}

/// Total Gaussian reconstruction codelength over a dataset of residuals
/// with per-component standard deviations.
pub fn gaussian_codelength(residuals: &[Vec<f64>], sigma: &[f64]) -> f64 {
    residuals
        .iter()
        .map(|r| {
            r.iter()
                .zip(sigma)
                .map(|(r, s)| r * r / (2.0 * s * s) + s.ln() + 0.5 * LN_2PI)
                .sum::<f64>()
        })
        .sum()
}
