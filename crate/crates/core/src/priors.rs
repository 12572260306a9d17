//! Elementary models on feature space and the feature distributions an
//! encoder can output, with densities, KL divergences, refits and sampling.
//!
//! All quantities are in nats.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Covariance, LN_2PI};

/// Floor on refitted Gaussian prior variances.
pub const LAMBDA_MIN: f64 = 1e-8;
/// Bernoulli parameters are clamped to `[P_CLAMP, 1 - P_CLAMP]` before logs.
pub const P_CLAMP: f64 = 1e-6;
/// Largest binary feature dimension enumerated exactly.
pub const ENUMERATION_CAP: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Prior {
    /// `N(0, diag(var))`.
    GaussianDiag { var: Vec<f64> },
    /// Independent bits with `P(y_i = 1) = q_i`.
    BernoulliVec { q: Vec<f64> },
    /// Uniform on `{0,1}^dim`.
    UniformBinary { dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorFamily {
    GaussianDiag,
    BernoulliVec,
    UniformBinary,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureDistribution {
    Dirac(Vec<f64>),
    GaussianDiag { mean: Vec<f64>, var: Vec<f64> },
    GaussianFull { mean: Vec<f64>, cov: DMatrix<f64> },
    BernoulliVec { p: Vec<f64> },
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(P_CLAMP, 1.0 - P_CLAMP)
}

/// `x ln(x / y)` with the `0 ln 0 = 0` convention.
fn xlog_ratio(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

fn check_binary(y: &[f64], what: &'static str) -> Result<()> {
    if y.iter().all(|&v| v == 0.0 || v == 1.0) {
        Ok(())
    } else {
        Err(Error::NonBinary(what))
    }
}

/// The point of `{0,1}^dim` whose bit `i` is bit `i` of `mask`.
pub fn binary_point(mask: usize, dim: usize) -> Vec<f64> {
    (0..dim).map(|i| ((mask >> i) & 1) as f64).collect()
}

pub fn binary_mask(y: &[f64]) -> usize {
    y.iter()
        .enumerate()
        .filter(|(_, &v)| v == 1.0)
        .fold(0, |m, (i, _)| m | (1 << i))
}

pub(crate) fn check_enumerable(dim: usize) -> Result<()> {
    if dim > ENUMERATION_CAP {
        Err(Error::EnumerationTooLarge {
            dim,
            cap: ENUMERATION_CAP,
        })
    } else {
        Ok(())
    }
}

/// Probability of the binary point `mask` under independent bits `p`
/// (unclamped, so degenerate parameters give exact zeros).
pub fn bernoulli_mass(p: &[f64], mask: usize) -> f64 {
    p.iter()
        .enumerate()
        .map(|(i, &pi)| if (mask >> i) & 1 == 1 { pi } else { 1.0 - pi })
        .product()
}

impl Prior {
    pub fn gaussian(var: Vec<f64>) -> Result<Self> {
        let p = Prior::GaussianDiag { var };
        p.validate()?;
        Ok(p)
    }

    pub fn bernoulli(q: Vec<f64>) -> Result<Self> {
        let p = Prior::BernoulliVec { q };
        p.validate()?;
        Ok(p)
    }

    pub fn uniform_binary(dim: usize) -> Result<Self> {
        let p = Prior::UniformBinary { dim };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match self {
            Prior::GaussianDiag { var } => {
                if var.is_empty() || !var.iter().all(|&l| l > 0.0 && l.is_finite()) {
                    return bad(format!("Gaussian prior variances must be positive: {var:?}"));
                }
            }
            Prior::BernoulliVec { q } => {
                if q.is_empty() || !q.iter().all(|&v| v > 0.0 && v < 1.0) {
                    return bad(format!("Bernoulli prior parameters must lie in (0,1): {q:?}"));
                }
            }
            Prior::UniformBinary { dim } => {
                if *dim == 0 {
                    return bad("uniform binary prior needs dim >= 1".into());
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Prior::GaussianDiag { var } => var.len(),
            Prior::BernoulliVec { q } => q.len(),
            Prior::UniformBinary { dim } => *dim,
        }
    }

    pub fn family(&self) -> PriorFamily {
        match self {
            Prior::GaussianDiag { .. } => PriorFamily::GaussianDiag,
            Prior::BernoulliVec { .. } => PriorFamily::BernoulliVec,
            Prior::UniformBinary { .. } => PriorFamily::UniformBinary,
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, Prior::GaussianDiag { .. })
    }

    /// Per-bit success probabilities of a discrete prior (clamped).
    pub fn bit_probabilities(&self) -> Option<Vec<f64>> {
        match self {
            Prior::GaussianDiag { .. } => None,
            Prior::BernoulliVec { q } => Some(q.iter().map(|&v| clamp_p(v)).collect()),
            Prior::UniformBinary { dim } => Some(vec![0.5; *dim]),
        }
    }

    /// Variances of a Gaussian prior.
    pub fn variances(&self) -> Option<&[f64]> {
        match self {
            Prior::GaussianDiag { var } => Some(var),
            _ => None,
        }
    }

    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.dim() {
            return Err(Error::dim("prior log density", self.dim(), y.len()));
        }
        match self {
            Prior::GaussianDiag { var } => Ok(y
                .iter()
                .zip(var)
                .map(|(v, l)| -0.5 * (LN_2PI + l.ln()) - v * v / (2.0 * l))
                .sum()),
            Prior::UniformBinary { dim } => {
                check_binary(y, "feature point")?;
                Ok(-(*dim as f64) * std::f64::consts::LN_2)
            }
            Prior::BernoulliVec { q } => {
                check_binary(y, "feature point")?;
                Ok(y.iter()
                    .zip(q)
                    .map(|(&v, &qi)| {
                        let qi = clamp_p(qi);
                        if v == 1.0 {
                            qi.ln()
                        } else {
                            (1.0 - qi).ln()
                        }
                    })
                    .sum())
            }
        }
    }

    /// Gradient of `-log rho(y)` for the Gaussian prior: `y_i / lambda_i`.
    pub fn neg_log_density_grad(&self, y: &[f64]) -> Result<Vec<f64>> {
        match self {
            Prior::GaussianDiag { var } => {
                if y.len() != var.len() {
                    return Err(Error::dim("prior gradient", var.len(), y.len()));
                }
                Ok(y.iter().zip(var).map(|(v, l)| v / l).collect())
            }
            _ => Err(Error::Unsupported(
                "gradient of -log rho is only defined for continuous priors".into(),
            )),
        }
    }

    /// Entropy of a discrete prior.
    pub fn entropy(&self) -> Option<f64> {
        self.bit_probabilities()
            .map(|q| q.iter().map(|&qi| -(xlog_ratio(qi, 1.0) + xlog_ratio(1.0 - qi, 1.0))).sum())
    }
}

impl FeatureDistribution {
    pub fn from_covariance(mean: Vec<f64>, cov: &Covariance) -> Self {
        match cov {
            Covariance::Diagonal(v) => FeatureDistribution::GaussianDiag {
                mean,
                var: v.clone(),
            },
            Covariance::Full(m) => FeatureDistribution::GaussianFull {
                mean,
                cov: m.clone(),
            },
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureDistribution::Dirac(y) => y.len(),
            FeatureDistribution::GaussianDiag { mean, .. } => mean.len(),
            FeatureDistribution::GaussianFull { mean, .. } => mean.len(),
            FeatureDistribution::BernoulliVec { p } => p.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FeatureDistribution::Dirac(_) => Ok(()),
            FeatureDistribution::GaussianDiag { mean, var } => {
                if mean.len() != var.len() {
                    return Err(Error::dim("Gaussian feature variance", mean.len(), var.len()));
                }
                Covariance::Diagonal(var.clone()).validate()
            }
            FeatureDistribution::GaussianFull { mean, cov } => {
                if cov.nrows() != mean.len() {
                    return Err(Error::dim("Gaussian feature covariance", mean.len(), cov.nrows()));
                }
                if (cov - cov.transpose()).abs().max() > 1e-12 * (1.0 + cov.abs().max()) {
                    return Err(Error::NotPositiveDefinite("covariance is not symmetric"));
                }
                linalg::cholesky(cov).map(|_| ())
            }
            FeatureDistribution::BernoulliVec { p } => {
                if p.iter().all(|&v| (0.0..=1.0).contains(&v)) {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("Bernoulli parameters outside [0,1]: {p:?}")))
                }
            }
        }
    }

    /// Mean of the distribution (the parameter vector for Bernoulli).
    pub fn mean(&self) -> &[f64] {
        match self {
            FeatureDistribution::Dirac(y) => y,
            FeatureDistribution::GaussianDiag { mean, .. } => mean,
            FeatureDistribution::GaussianFull { mean, .. } => mean,
            FeatureDistribution::BernoulliVec { p } => p,
        }
    }

    /// Per-component variance.
    pub fn marginal_variances(&self) -> Vec<f64> {
        match self {
            FeatureDistribution::Dirac(y) => vec![0.0; y.len()],
            FeatureDistribution::GaussianDiag { var, .. } => var.clone(),
            FeatureDistribution::GaussianFull { cov, .. } => cov.diagonal().iter().copied().collect(),
            FeatureDistribution::BernoulliVec { p } => p.iter().map(|v| v * (1.0 - v)).collect(),
        }
    }

    pub fn covariance(&self) -> Option<Covariance> {
        match self {
            FeatureDistribution::GaussianDiag { var, .. } => Some(Covariance::Diagonal(var.clone())),
            FeatureDistribution::GaussianFull { cov, .. } => Some(Covariance::Full(cov.clone())),
            _ => None,
        }
    }

    /// Bit probabilities when the distribution lives on `{0,1}^d`: the
    /// Bernoulli parameters, or a 0/1 Dirac point.
    pub fn bit_probabilities(&self) -> Option<Vec<f64>> {
        match self {
            FeatureDistribution::BernoulliVec { p } => Some(p.clone()),
            FeatureDistribution::Dirac(y) if y.iter().all(|&v| v == 0.0 || v == 1.0) => {
                Some(y.clone())
            }
            _ => None,
        }
    }

    /// Entropy (differential entropy for Gaussians, `-inf` for a Dirac on a
    /// continuous space is not represented: a 0/1 Dirac has entropy 0).
    pub fn entropy(&self) -> Result<f64> {
        match self {
            FeatureDistribution::Dirac(y) => {
                check_binary(y, "Dirac feature")?;
                Ok(0.0)
            }
            FeatureDistribution::BernoulliVec { p } => Ok(p
                .iter()
                .map(|&v| -(xlog_ratio(v, 1.0) + xlog_ratio(1.0 - v, 1.0)))
                .sum()),
            FeatureDistribution::GaussianDiag { var, .. } => {
                let d = var.len() as f64;
                Ok(0.5 * var.iter().map(|v| v.ln()).sum::<f64>() + 0.5 * d * (1.0 + LN_2PI))
            }
            FeatureDistribution::GaussianFull { cov, .. } => {
                let d = cov.nrows() as f64;
                Ok(0.5 * linalg::log_det_spd(cov)? + 0.5 * d * (1.0 + LN_2PI))
            }
        }
    }

    /// One draw. Gaussian draws go through the triangular factor of the
    /// covariance (diagonal fast path).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            FeatureDistribution::Dirac(y) => Ok(y.clone()),
            FeatureDistribution::GaussianDiag { mean, var } => Ok(mean
                .iter()
                .zip(var)
                .map(|(m, v)| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + v.sqrt() * z
                })
                .collect()),
            FeatureDistribution::GaussianFull { mean, cov } => {
                let l = linalg::cholesky(cov)?.l();
                let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let shift = l * z;
                Ok(mean.iter().zip(shift.iter()).map(|(m, s)| m + s).collect())
            }
            FeatureDistribution::BernoulliVec { p } => Ok(p
                .iter()
                .map(|&pi| if rng.random::<f64>() < pi { 1.0 } else { 0.0 })
                .collect()),
        }
    }
}

/// `KL(fd || prior)`.
///
/// Gaussian features against a Gaussian prior use the closed form; binary
/// features against a discrete prior sum the per-bit divergences, which is
/// exact because both sides factorize over bits. A Dirac feature against a
/// continuous prior returns `+inf`.
pub fn kl_to_prior(fd: &FeatureDistribution, prior: &Prior) -> Result<f64> {
    if fd.dim() != prior.dim() {
        return Err(Error::dim("kl_to_prior", prior.dim(), fd.dim()));
    }
    fd.validate()?;
    prior.validate()?;
    match (fd, prior) {
        (FeatureDistribution::Dirac(_), Prior::GaussianDiag { .. }) => Ok(f64::INFINITY),
        (FeatureDistribution::GaussianDiag { mean, var }, Prior::GaussianDiag { var: lam }) => Ok(
            0.5 * mean
                .iter()
                .zip(var)
                .zip(lam)
                .map(|((m, v), l)| (v + m * m) / l - 1.0 - (v / l).ln())
                .sum::<f64>(),
        ),
        (FeatureDistribution::GaussianFull { mean, cov }, Prior::GaussianDiag { var: lam }) => {
            let d = mean.len() as f64;
            let trace: f64 = (0..mean.len()).map(|i| cov[(i, i)] / lam[i]).sum();
            let quad: f64 = mean.iter().zip(lam).map(|(m, l)| m * m / l).sum();
            let log_det_prior: f64 = lam.iter().map(|l| l.ln()).sum();
            Ok(0.5 * (trace + quad - d + log_det_prior - linalg::log_det_spd(cov)?))
        }
        (_, Prior::BernoulliVec { .. } | Prior::UniformBinary { .. }) => {
            let p = fd.bit_probabilities().ok_or_else(|| {
                Error::Unsupported("discrete priors require binary feature distributions".into())
            })?;
            let q = prior.bit_probabilities().expect("discrete prior");
            Ok(p.iter()
                .zip(&q)
                .map(|(&pi, &qi)| xlog_ratio(pi, qi) + xlog_ratio(1.0 - pi, 1.0 - qi))
                .sum())
        }
        (FeatureDistribution::BernoulliVec { .. }, Prior::GaussianDiag { .. }) => Err(Error::Unsupported(
            "Bernoulli features against a Gaussian prior".into(),
        )),
    }
}

/// `KL(Bern(p) || table)` by enumerating `{0,1}^d`, where `log_table[mask]`
/// is the log-probability of each binary point under the second distribution.
pub fn kl_bernoulli_to_table(p: &[f64], log_table: &[f64]) -> Result<f64> {
    check_enumerable(p.len())?;
    if log_table.len() != 1 << p.len() {
        return Err(Error::dim("probability table", 1 << p.len(), log_table.len()));
    }
    let mut kl = 0.0;
    for (mask, &lt) in log_table.iter().enumerate() {
        let m = bernoulli_mass(p, mask);
        if m > 0.0 {
            kl += m * (m.ln() - lt);
        }
    }
    Ok(kl)
}

/// Refit of the elementary model to a set of feature distributions: the
/// maximum-likelihood member of `family` for the empirical feature law.
///
/// The Gaussian mean stays at 0, so `lambda_i` is the second moment of
/// component `i`, including the variance of the feature noise.
pub fn fit_prior(features: &[FeatureDistribution], family: PriorFamily) -> Result<Prior> {
    let first = features
        .first()
        .ok_or_else(|| Error::InvalidParameter("fit_prior needs at least one feature".into()))?;
    let d = first.dim();
    if let Some(bad) = features.iter().find(|f| f.dim() != d) {
        return Err(Error::dim("fit_prior feature", d, bad.dim()));
    }
    let n = features.len() as f64;
    match family {
        PriorFamily::GaussianDiag => {
            let mut lam = vec![0.0; d];
            for f in features {
                if matches!(f, FeatureDistribution::BernoulliVec { .. }) {
                    return Err(Error::Unsupported("Gaussian prior fitted to Bernoulli features".into()));
                }
                let vars = f.marginal_variances();
                for (i, (m, v)) in f.mean().iter().zip(&vars).enumerate() {
                    lam[i] += (m * m + v) / n;
                }
            }
            Prior::gaussian(lam.into_iter().map(|l| l.max(LAMBDA_MIN)).collect())
        }
        PriorFamily::BernoulliVec => {
            let mut q = vec![0.0; d];
            for f in features {
                let p = f.bit_probabilities().ok_or_else(|| {
                    Error::Unsupported("Bernoulli prior fitted to non-binary features".into())
                })?;
                for (qi, pi) in q.iter_mut().zip(p) {
                    *qi += pi / n;
                }
            }
            Prior::bernoulli(q.into_iter().map(clamp_p).collect())
        }
        PriorFamily::UniformBinary => Prior::uniform_binary(d),
    }
}
