//! Denoising bounds: Gaussian noise `N(f(x), Sigma)` on the features turns
//! a deterministic encoder into a code with finite `KL` to a Gaussian prior.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::codelength::{expected_reconstruction_error_with_stderr, reconstruction_error, Decoder, Estimate};
use crate::contractive::{decoder_jacobian, gaussian_variances};
use crate::error::{Error, Result};
use crate::hessian::{compute_hessian, optimal_noise, HessianResult, HessianSource, NoiseMode};
use crate::linalg::{Covariance, LN_2PI};
use crate::net::Network;
use crate::priors::{FeatureDistribution, Prior};

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    Fixed(Covariance),
    OptimalDiag(HessianSource),
    OptimalFull(HessianSource),
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::OptimalFull(HessianSource::GnFull)
    }
}

impl NoiseSpec {
    /// The covariance to use for the sample `x` with feature mean `y0`.
    pub fn resolve(&self, prior: &Prior, dec: &Decoder, y0: &[f64], x: &[f64]) -> Result<Covariance> {
        match self {
            NoiseSpec::Fixed(cov) => {
                if cov.dim() != y0.len() {
                    return Err(Error::dim("fixed noise covariance", y0.len(), cov.dim()));
                }
                cov.validate()?;
                Ok(cov.clone())
            }
            NoiseSpec::OptimalDiag(src) => {
                let h = compute_hessian(*src, prior, dec, y0, x)?;
                Ok(optimal_noise(&h, NoiseMode::Diagonal)?.cov)
            }
            NoiseSpec::OptimalFull(src) => {
                let h = compute_hessian(*src, prior, dec, y0, x)?;
                Ok(optimal_noise(&h, NoiseMode::Full)?.cov)
            }
        }
    }
}

/// `E_{y ~ N(m, Sigma)} [-log rho(y)]` for the Gaussian prior, in closed form.
fn expected_neg_log_prior(var: &[f64], mean: &[f64], cov: &Covariance) -> f64 {
    let diag = cov.diagonal();
    mean.iter()
        .zip(var)
        .zip(&diag)
        .map(|((m, l), s)| 0.5 * (LN_2PI + l.ln()) + (m * m + s) / (2.0 * l))
        .sum()
}

fn entropy_term(cov: &Covariance) -> Result<f64> {
    let d = cov.dim() as f64;
    Ok(0.5 * cov.log_det()? + 0.5 * d * (1.0 + LN_2PI))
}

fn check_inputs(dec: &Decoder, mean: &[f64], cov: &Covariance) -> Result<()> {
    let d = dec.feature_dim();
    if mean.len() != d {
        return Err(Error::dim("denoising feature mean", d, mean.len()));
    }
    if cov.dim() != d {
        return Err(Error::dim("denoising covariance", d, cov.dim()));
    }
    cov.validate()
}

/// `E L_rec(x) - E log rho(y) - 1/2 log det Sigma - d/2 (1 + log 2 pi)` with
/// `y ~ N(mean, Sigma)`. The reconstruction term is a Monte Carlo average;
/// the prior term is exact.
pub fn denoising_bound<R: Rng + ?Sized>(
    prior: &Prior,
    dec: &Decoder,
    mean: &[f64],
    cov: &Covariance,
    x: &[f64],
    mc_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    denoising_bound_with_stderr(prior, dec, mean, cov, x, mc_samples, rng).map(|e| e.value)
}

pub fn denoising_bound_with_stderr<R: Rng + ?Sized>(
    prior: &Prior,
    dec: &Decoder,
    mean: &[f64],
    cov: &Covariance,
    x: &[f64],
    mc_samples: usize,
    rng: &mut R,
) -> Result<Estimate> {
    check_inputs(dec, mean, cov)?;
    let var = gaussian_variances(prior, mean.len(), "denoising bound")?;
    let fd = FeatureDistribution::from_covariance(mean.to_vec(), cov);
    let rec = expected_reconstruction_error_with_stderr(dec, &fd, x, mc_samples, rng)?;
    Ok(Estimate {
        value: rec.value + expected_neg_log_prior(var, mean, cov) - entropy_term(cov)?,
        std_err: rec.std_err,
    })
}

/// Exact denoising bound for affine decoders, where
/// `E ||x - x_hat(y)||^2` has the closed form `||x - x_hat(m)||^2 + J Sigma J^T`.
pub fn denoising_bound_affine(prior: &Prior, dec: &Decoder, mean: &[f64], cov: &Covariance, x: &[f64]) -> Result<f64> {
    if !dec.net.is_affine() {
        return Err(Error::Unsupported("closed-form denoising bound needs an affine decoder".into()));
    }
    check_inputs(dec, mean, cov)?;
    let var = gaussian_variances(prior, mean.len(), "denoising bound")?;
    let xhat = dec.reconstruct(mean)?;
    let j = decoder_jacobian(dec, mean)?;
    let spread = &j * cov.to_matrix() * j.transpose();
    let rec: f64 = (0..dec.data_dim())
        .map(|k| {
            let s = dec.output.sigma[k];
            ((x[k] - xhat[k]).powi(2) + spread[(k, k)]) / (2.0 * s * s) + s.ln() + 0.5 * LN_2PI
        })
        .sum();
    Ok(rec + expected_neg_log_prior(var, mean, cov) - entropy_term(cov)?)
}

/// Second-order expansion of the denoising bound around `mean`:
/// `L_rec(x) - log rho(mean) - 1/2 log det Sigma + 1/2 Tr(Sigma H) - d/2 (1 + log 2 pi)`.
pub fn taylor_bound(
    prior: &Prior,
    dec: &Decoder,
    mean: &[f64],
    cov: &Covariance,
    x: &[f64],
    h: &HessianResult,
) -> Result<f64> {
    check_inputs(dec, mean, cov)?;
    if h.dim() != mean.len() {
        return Err(Error::dim("taylor_bound hessian", mean.len(), h.dim()));
    }
    Ok(reconstruction_error(dec, mean, x)? - prior.log_density(mean)? + 0.5 * cov.trace_product(&h.to_matrix())
        - entropy_term(cov)?)
}

/// Gradients of the Monte Carlo denoising bound.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoisingGrad {
    /// Bound estimate at the draws used.
    pub value: f64,
    pub encoder: Vec<f64>,
    pub decoder: Vec<f64>,
    /// Averaged gradient with respect to the feature mean, prior term included.
    pub feature: Vec<f64>,
}

/// Standard normal draws for [`denoising_grad_with_draws`].
pub fn standard_draws<R: Rng + ?Sized>(dim: usize, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

pub fn denoising_grad<R: Rng + ?Sized>(
    prior: &Prior,
    f_net: &Network,
    dec: &Decoder,
    x: &[f64],
    cov: &Covariance,
    mc_samples: usize,
    rng: &mut R,
) -> Result<DenoisingGrad> {
    if mc_samples == 0 {
        return Err(Error::InvalidParameter("mc_samples must be >= 1".into()));
    }
    let draws = standard_draws(dec.feature_dim(), mc_samples, rng);
    denoising_grad_with_draws(prior, f_net, dec, x, cov, &draws)
}

/// Decoder gradients are averaged over the draws `y_i = f(x) + L z_i`; the
/// feature-layer gradients are averaged too and backpropagated through the
/// encoder once, which equals averaging per-draw encoder gradients because
/// backpropagation is linear in its output seed. `Sigma` is held fixed.
pub fn denoising_grad_with_draws(
    prior: &Prior,
    f_net: &Network,
    dec: &Decoder,
    x: &[f64],
    cov: &Covariance,
    draws: &[Vec<f64>],
) -> Result<DenoisingGrad> {
    if f_net.output_dim() != dec.feature_dim() {
        return Err(Error::dim("encoder output", dec.feature_dim(), f_net.output_dim()));
    }
    if draws.is_empty() {
        return Err(Error::InvalidParameter("at least one noise draw is required".into()));
    }
    let f_rec = f_net.forward(x)?;
    let mean = f_rec.output.clone();
    check_inputs(dec, &mean, cov)?;
    let var = gaussian_variances(prior, mean.len(), "denoising gradient")?;
    let n = draws.len() as f64;
    let mut dec_grad = vec![0.0; dec.net.num_edges()];
    let mut feature = vec![0.0; mean.len()];
    let mut rec_total = 0.0;
    for z in draws {
        let y = cov.transform(&mean, z)?;
        let record = dec.net.forward(&y)?;
        rec_total += dec.output.neg_log_likelihood(&record.output, x);
        let seed = dec.output.neg_log_likelihood_grad(&record.output, x);
        let g = dec.net.backprop(&record, &seed)?;
        for (a, b) in dec_grad.iter_mut().zip(&g.weights) {
            *a += b / n;
        }
        for (a, b) in feature.iter_mut().zip(&g.inputs) {
            *a += b / n;
        }
    }
    for ((f, m), l) in feature.iter_mut().zip(&mean).zip(var) {
        *f += m / l;
    }
    let encoder = f_net.backprop(&f_rec, &feature)?.weights;
    Ok(DenoisingGrad {
        value: rec_total / n + expected_neg_log_prior(var, &mean, cov) - entropy_term(cov)?,
        encoder,
        decoder: dec_grad,
        feature,
    })
}
