//! Reconstruction error, two-part codelength, the variational bound
//! `L_f-gen = E L_rec + KL(f(x) || rho)`, and the exact generative
//! codelength `L_gen = -log int rho(y) g_y(x) dy` with its posterior.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, weighted_log_sum_exp};
use crate::net::Network;
use crate::outvar::OutputModel;
use crate::priors::{
    self, bernoulli_mass, binary_point, check_enumerable, kl_to_prior, FeatureDistribution, Prior,
};

/// Generative function: a network from feature space to reconstruction
/// means, with a Gaussian output model around them.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub net: Network,
    pub output: OutputModel,
}

impl Decoder {
    pub fn new(net: Network, output: OutputModel) -> Result<Self> {
        if net.output_dim() != output.dim() {
            return Err(Error::dim("decoder output model", net.output_dim(), output.dim()));
        }
        output.validate()?;
        Ok(Decoder { net, output })
    }

    pub fn feature_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn reconstruct(&self, y: &[f64]) -> Result<Vec<f64>> {
        let out = self.net.forward(y)?.output;
        if let Some((k, &v)) = out.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                location: format!("decoder output {k}"),
                value: v,
            });
        }
        Ok(out)
    }
}

/// `-log g_y(x)` with `g_y = N(dec(y), diag(sigma^2))`.
pub fn reconstruction_error(dec: &Decoder, y: &[f64], x: &[f64]) -> Result<f64> {
    if x.len() != dec.data_dim() {
        return Err(Error::dim("reconstruction target", dec.data_dim(), x.len()));
    }
    let xhat = dec.reconstruct(y)?;
    Ok(dec.output.neg_log_likelihood(&xhat, x))
}

/// A value with its Monte Carlo standard error (zero when exact).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

/// `E_{y ~ fd} [-log g_y(x)]`: exact for Dirac and Bernoulli features (the
/// latter by enumeration), Monte Carlo over `mc_samples` draws for Gaussians.
pub fn expected_reconstruction_error<R: Rng + ?Sized>(
    dec: &Decoder,
    fd: &FeatureDistribution,
    x: &[f64],
    mc_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    expected_reconstruction_error_with_stderr(dec, fd, x, mc_samples, rng).map(|e| e.value)
}

pub fn expected_reconstruction_error_with_stderr<R: Rng + ?Sized>(
    dec: &Decoder,
    fd: &FeatureDistribution,
    x: &[f64],
    mc_samples: usize,
    rng: &mut R,
) -> Result<Estimate> {
    if fd.dim() != dec.feature_dim() {
        return Err(Error::dim("feature distribution", dec.feature_dim(), fd.dim()));
    }
    fd.validate()?;
    match fd {
        FeatureDistribution::Dirac(y) => Ok(Estimate {
            value: reconstruction_error(dec, y, x)?,
            std_err: 0.0,
        }),
        FeatureDistribution::BernoulliVec { p } => {
            check_enumerable(p.len())?;
            let mut total = 0.0;
            for mask in 0..1usize << p.len() {
                let mass = bernoulli_mass(p, mask);
                if mass > 0.0 {
                    total += mass * reconstruction_error(dec, &binary_point(mask, p.len()), x)?;
                }
            }
            Ok(Estimate {
                value: total,
                std_err: 0.0,
            })
        }
        FeatureDistribution::GaussianDiag { .. } | FeatureDistribution::GaussianFull { .. } => {
            if mc_samples == 0 {
                return Err(Error::InvalidParameter("mc_samples must be >= 1".into()));
            }
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..mc_samples {
                let y = fd.sample(rng)?;
                let l = reconstruction_error(dec, &y, x)?;
                sum += l;
                sum_sq += l * l;
            }
            let n = mc_samples as f64;
            let mean = sum / n;
            let var = if mc_samples > 1 {
                ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            Ok(Estimate {
                value: mean,
                std_err: (var / n).sqrt(),
            })
        }
    }
}

fn discrete_parts(prior: &Prior, fd: &FeatureDistribution, dec: &Decoder) -> Result<Vec<f64>> {
    if !prior.is_discrete() {
        return Err(Error::Unsupported("two-part codes need a discrete feature space".into()));
    }
    let p = fd.bit_probabilities().ok_or_else(|| {
        Error::Unsupported("two-part codes need a binary feature distribution".into())
    })?;
    if p.len() != prior.dim() || p.len() != dec.feature_dim() {
        return Err(Error::dim("two-part feature dimension", prior.dim(), p.len()));
    }
    check_enumerable(p.len())?;
    Ok(p)
}

/// `E_{y ~ fd} [-log rho(y) - log g_y(x)]`, exact by enumeration.
pub fn two_part_codelength(prior: &Prior, dec: &Decoder, fd: &FeatureDistribution, x: &[f64]) -> Result<f64> {
    let p = discrete_parts(prior, fd, dec)?;
    let mut total = 0.0;
    for mask in 0..1usize << p.len() {
        let mass = bernoulli_mass(&p, mask);
        if mass > 0.0 {
            let y = binary_point(mask, p.len());
            total += mass * (reconstruction_error(dec, &y, x)? - prior.log_density(&y)?);
        }
    }
    Ok(total)
}

/// `L_f-gen(x) = E L_rec(x) + KL(fd || rho)`.
pub fn f_gen_bound<R: Rng + ?Sized>(
    prior: &Prior,
    dec: &Decoder,
    fd: &FeatureDistribution,
    x: &[f64],
    mc_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let kl = kl_to_prior(fd, prior)?;
    let value = expected_reconstruction_error(dec, fd, x, mc_samples, rng)? + kl;
    #[cfg(debug_assertions)]
    if prior.is_discrete() && value.is_finite() {
        let two_part = two_part_codelength(prior, dec, fd, x)?;
        let entropy = fd.entropy()?;
        debug_assert!(
            (value - (two_part - entropy)).abs() <= 1e-9 * (1.0 + value.abs()),
            "L_f-gen = E L_two-part - Ent f(x) violated: {value} vs {}",
            two_part - entropy
        );
    }
    Ok(value)
}

/// Grid used by the continuous `L_gen` oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    /// Half-width of each axis in prior standard deviations.
    pub half_width_sd: f64,
    pub points: usize,
    /// Largest accepted change of `l_gen` between this grid and one with
    /// half as many points per axis.
    pub tolerance: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            half_width_sd: 8.0,
            points: 2048,
            tolerance: 1e-8,
        }
    }
}

/// Largest continuous feature dimension handled by quadrature.
pub const QUADRATURE_MAX_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Posterior {
    /// `log p_g(y|x)` for every binary point, indexed by bit mask.
    Discrete { dim: usize, log_prob: Vec<f64> },
    /// Normalized quadrature weights on a tensor grid, row-major with the
    /// last axis fastest.
    Grid { axes: Vec<Vec<f64>>, weights: Vec<f64> },
}

impl Posterior {
    pub fn probability(&self, mask: usize) -> Option<f64> {
        match self {
            Posterior::Discrete { log_prob, .. } => log_prob.get(mask).map(|l| l.exp()),
            Posterior::Grid { .. } => None,
        }
    }

    /// Posterior mean.
    pub fn mean(&self) -> Vec<f64> {
        match self {
            Posterior::Discrete { dim, log_prob } => {
                let mut m = vec![0.0; *dim];
                for (mask, lp) in log_prob.iter().enumerate() {
                    let p = lp.exp();
                    for (i, mi) in m.iter_mut().enumerate() {
                        if (mask >> i) & 1 == 1 {
                            *mi += p;
                        }
                    }
                }
                m
            }
            Posterior::Grid { axes, weights } => {
                let mut m = vec![0.0; axes.len()];
                for (idx, w) in weights.iter().enumerate() {
                    for (i, c) in grid_point(axes, idx).iter().enumerate() {
                        m[i] += w * c;
                    }
                }
                m
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenOracle {
    pub l_gen: f64,
    pub posterior: Posterior,
}

fn grid_point(axes: &[Vec<f64>], mut idx: usize) -> Vec<f64> {
    let mut point = vec![0.0; axes.len()];
    for (a, axis) in axes.iter().enumerate().rev() {
        point[a] = axis[idx % axis.len()];
        idx /= axis.len();
    }
    point
}

/// Exact `L_gen(x)` and the posterior `p_g(y|x)`.
///
/// Discrete priors enumerate `{0,1}^d` (d <= 20). Gaussian priors with at
/// most two dimensions integrate with the trapezoidal rule on
/// `[-k sd, k sd]^d`, and the result is refused when the half-resolution grid
/// disagrees by more than the configured tolerance.
pub fn l_gen_exact(prior: &Prior, dec: &Decoder, x: &[f64], quad: &QuadratureSpec) -> Result<GenOracle> {
    if prior.dim() != dec.feature_dim() {
        return Err(Error::dim("l_gen_exact prior", dec.feature_dim(), prior.dim()));
    }
    prior.validate()?;
    match prior {
        Prior::BernoulliVec { .. } | Prior::UniformBinary { .. } => {
            let d = prior.dim();
            check_enumerable(d)?;
            let mut log_joint = Vec::with_capacity(1 << d);
            for mask in 0..1usize << d {
                let y = binary_point(mask, d);
                log_joint.push(prior.log_density(&y)? - reconstruction_error(dec, &y, x)?);
            }
            let log_marginal = log_sum_exp(&log_joint);
            Ok(GenOracle {
                l_gen: -log_marginal,
                posterior: Posterior::Discrete {
                    dim: d,
                    log_prob: log_joint.iter().map(|l| l - log_marginal).collect(),
                },
            })
        }
        Prior::GaussianDiag { var } => {
            if var.len() > QUADRATURE_MAX_DIM {
                return Err(Error::Unsupported(format!(
                    "quadrature oracle supports at most {QUADRATURE_MAX_DIM} feature dimensions, got {}",
                    var.len()
                )));
            }
            if quad.points < 4 || quad.half_width_sd <= 0.0 {
                return Err(Error::InvalidParameter(format!("bad quadrature spec {quad:?}")));
            }
            let (fine, axes, log_values, trap) = quadrature(prior, var, dec, x, quad.half_width_sd, quad.points)?;
            let (coarse, ..) = quadrature(prior, var, dec, x, quad.half_width_sd, quad.points / 2)?;
            let discrepancy = (fine - coarse).abs();
            if discrepancy.is_nan() || discrepancy > quad.tolerance {
                return Err(Error::UnderResolved {
                    discrepancy,
                    tolerance: quad.tolerance,
                });
            }
            let max = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut weights: Vec<f64> = log_values
                .iter()
                .zip(&trap)
                .map(|(v, w)| w * (v - max).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            Ok(GenOracle {
                l_gen: fine,
                posterior: Posterior::Grid { axes, weights },
            })
        }
    }
}

type QuadratureResult = (f64, Vec<Vec<f64>>, Vec<f64>, Vec<f64>);

fn quadrature(
    prior: &Prior,
    var: &[f64],
    dec: &Decoder,
    x: &[f64],
    half_width: f64,
    points: usize,
) -> Result<QuadratureResult> {
    let mut axes = Vec::with_capacity(var.len());
    let mut log_step = 0.0;
    for &l in var {
        let a = half_width * l.sqrt();
        let h = 2.0 * a / (points - 1) as f64;
        log_step += h.ln();
        axes.push((0..points).map(|k| -a + k as f64 * h).collect::<Vec<_>>());
    }
    let total = points.pow(var.len() as u32);
    let mut log_values = Vec::with_capacity(total);
    let mut trap = Vec::with_capacity(total);
    for idx in 0..total {
        let y = grid_point(&axes, idx);
        let mut w = 1.0;
        let mut rest = idx;
        for _ in 0..var.len() {
            let k = rest % points;
            rest /= points;
            if k == 0 || k == points - 1 {
                w *= 0.5;
            }
        }
        log_values.push(prior.log_density(&y)? - reconstruction_error(dec, &y, x)?);
        trap.push(w);
    }
    let l_gen = -(weighted_log_sum_exp(&log_values, &trap) + log_step);
    Ok((l_gen, axes, log_values, trap))
}

/// `KL(fd || p_g(.|x))` against a discrete posterior, by enumeration.
pub fn kl_to_posterior(fd: &FeatureDistribution, posterior: &Posterior) -> Result<f64> {
    match posterior {
        Posterior::Discrete { dim, log_prob } => {
            let p = fd.bit_probabilities().ok_or_else(|| {
                Error::Unsupported("discrete posterior needs a binary feature distribution".into())
            })?;
            if p.len() != *dim {
                return Err(Error::dim("kl_to_posterior", *dim, p.len()));
            }
            priors::kl_bernoulli_to_table(&p, log_prob)
        }
        Posterior::Grid { .. } => Err(Error::Unsupported(
            "KL to a quadrature posterior is not computed; compare bound gaps instead".into(),
        )),
    }
}

mod nats {
    //! Codelengths serialize as JSON numbers when finite and as the strings
    //! `"inf"`, `"-inf"` or `"nan"` otherwise.
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn to_repr(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Num(v)
        } else if v.is_nan() {
            Repr::Text("nan".into())
        } else if v > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("bad codelength `{other}`"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            v.map(to_repr).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<Repr>::deserialize(d)?.map(from_repr).transpose()
        }
    }
}

/// Codelengths for one sample, in nats. Optional entries are omitted from
/// the JSON when not computed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleCodelengths {
    #[serde(with = "nats")]
    pub l_rec: f64,
    #[serde(with = "nats")]
    pub e_l_rec: f64,
    #[serde(with = "nats")]
    pub kl_feat_prior: f64,
    #[serde(with = "nats")]
    pub l_f_gen: f64,
    #[serde(with = "nats::option", skip_serializing_if = "Option::is_none", default)]
    pub l_two_part: Option<f64>,
    #[serde(with = "nats::option", skip_serializing_if = "Option::is_none", default)]
    pub l_gen_oracle: Option<f64>,
    #[serde(with = "nats::option", skip_serializing_if = "Option::is_none", default)]
    pub bound_gap: Option<f64>,
    #[serde(with = "nats::option", skip_serializing_if = "Option::is_none", default)]
    pub taylor_bound: Option<f64>,
    #[serde(with = "nats::option", skip_serializing_if = "Option::is_none", default)]
    pub contractive_diag: Option<f64>,
    #[serde(with = "nats::option", skip_serializing_if = "Option::is_none", default)]
    pub contractive_full: Option<f64>,
}

impl SampleCodelengths {
    /// Sets the oracle value and the derived gap `l_f_gen - l_gen_oracle`.
    pub fn with_oracle(mut self, l_gen: f64) -> Self {
        self.l_gen_oracle = Some(l_gen);
        self.bound_gap = Some(self.l_f_gen - l_gen);
        self
    }
}

/// Per-sample codelengths plus their sums over the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodelengthReport {
    pub unit: String,
    pub samples: Vec<SampleCodelengths>,
    pub aggregate: SampleCodelengths,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn sum_optional<'a>(values: impl Iterator<Item = &'a Option<f64>>) -> Option<f64> {
    let mut total = 0.0;
    for v in values {
        total += (*v)?;
    }
    Some(total)
}

impl CodelengthReport {
    pub fn from_samples(samples: Vec<SampleCodelengths>) -> Self {
        let sum = |f: fn(&SampleCodelengths) -> f64| samples.iter().map(f).sum::<f64>();
        let any = !samples.is_empty();
        let opt = |f: fn(&SampleCodelengths) -> &Option<f64>| {
            if any {
                sum_optional(samples.iter().map(f))
            } else {
                None
            }
        };
        let aggregate = SampleCodelengths {
            l_rec: sum(|s| s.l_rec),
            e_l_rec: sum(|s| s.e_l_rec),
            kl_feat_prior: sum(|s| s.kl_feat_prior),
            l_f_gen: sum(|s| s.l_f_gen),
            l_two_part: opt(|s| &s.l_two_part),
            l_gen_oracle: opt(|s| &s.l_gen_oracle),
            bound_gap: opt(|s| &s.bound_gap),
            taylor_bound: opt(|s| &s.taylor_bound),
            contractive_diag: opt(|s| &s.contractive_diag),
            contractive_full: opt(|s| &s.contractive_full),
        };
        CodelengthReport {
            unit: "nats".into(),
            samples,
            aggregate,
            notes: Vec::new(),
        }
    }

    /// Mean `bound_gap` per sample, when every sample has an oracle value.
    pub fn mean_bound_gap(&self) -> Option<f64> {
        let n = self.samples.len();
        if n == 0 {
            return None;
        }
        self.aggregate.bound_gap.map(|g| g / n as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Nats to bits.
pub fn to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}
