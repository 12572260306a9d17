//! Objectives, their per-sample gradients, and the gradient-descent loop.
//!
//! Every objective is a per-sample codelength bound; a batch loss is the
//! sum over its samples. Randomness is drawn from named substreams of one
//! seed so that identical configurations give identical runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codelength::{
    expected_reconstruction_error, kl_to_posterior, l_gen_exact, reconstruction_error, two_part_codelength,
    CodelengthReport, Decoder, QuadratureSpec, SampleCodelengths,
};
use crate::contractive::{contractive_bound, contractive_penalty, gaussian_variances, ContractiveVariant};
use crate::error::{Error, Result};
use crate::hessian::{compute_hessian, HessianSource};
use crate::linalg::{Covariance, LN_2PI};
use crate::logdet_grad::layerwise_logdet_grad;
use crate::net::Network;
use crate::noise::{denoising_bound_affine, denoising_grad_with_draws, standard_draws, taylor_bound, NoiseSpec};
use crate::outvar::SigmaMode;
use crate::priors::{
    bernoulli_mass, binary_point, check_enumerable, fit_prior, kl_to_prior, FeatureDistribution, Prior, P_CLAMP,
};

pub const STREAM_INIT: u64 = 1;
pub const STREAM_SHUFFLE: u64 = 2;
pub const STREAM_NOISE: u64 = 3;
pub const STREAM_DATA: u64 = 4;
pub const STREAM_REPORT: u64 = 5;

/// Generator for one named substream of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Features are points of `R^d`.
    Continuous,
    /// Encoder outputs in `[0,1]` are parameters of independent bits.
    Bernoulli,
}

/// Encoder, decoder and prior trained together.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: Network,
    pub decoder: Decoder,
    pub prior: Prior,
    pub features: FeatureKind,
}

impl Model {
    pub fn new(encoder: Network, decoder: Decoder, prior: Prior, features: FeatureKind) -> Result<Self> {
        if encoder.output_dim() != decoder.feature_dim() {
            return Err(Error::dim("encoder output vs decoder input", decoder.feature_dim(), encoder.output_dim()));
        }
        if encoder.input_dim() != decoder.data_dim() {
            return Err(Error::dim("encoder input vs decoder output", decoder.data_dim(), encoder.input_dim()));
        }
        if prior.dim() != decoder.feature_dim() {
            return Err(Error::dim("prior dimension", decoder.feature_dim(), prior.dim()));
        }
        prior.validate()?;
        match (features, prior.is_discrete()) {
            (FeatureKind::Bernoulli, false) => {
                return Err(Error::Unsupported("Bernoulli features need a discrete prior".into()))
            }
            (FeatureKind::Continuous, true) => {
                return Err(Error::Unsupported("continuous features need a Gaussian prior".into()))
            }
            _ => {}
        }
        Ok(Model {
            encoder,
            decoder,
            prior,
            features,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.decoder.data_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.decoder.feature_dim()
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_edges() + self.decoder.net.num_edges()
    }

    /// Encoder weights followed by decoder weights.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.encoder.weights().to_vec();
        p.extend_from_slice(self.decoder.net.weights());
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::dim("model parameters", self.num_params(), params.len()));
        }
        let ne = self.encoder.num_edges();
        self.encoder.set_weights(&params[..ne])?;
        self.decoder.net.set_weights(&params[ne..])
    }

    /// `f(x)`: the feature point, or the bit probabilities.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.encoder.forward(x)?.output;
        self.check_features(&y)?;
        Ok(y)
    }

    fn check_features(&self, y: &[f64]) -> Result<()> {
        for (i, &v) in y.iter().enumerate() {
            let ok = match self.features {
                FeatureKind::Continuous => v.is_finite(),
                FeatureKind::Bernoulli => (0.0..=1.0).contains(&v),
            };
            if !ok {
                return Err(Error::NonFinite {
                    location: format!("feature {i}"),
                    value: v,
                });
            }
        }
        Ok(())
    }

    /// The feature distribution `f(x)`, with continuous features spread by
    /// the noise covariance resolved for `x`.
    pub fn feature_distribution(&self, x: &[f64], noise: &NoiseSpec) -> Result<FeatureDistribution> {
        let y = self.encode(x)?;
        Ok(match self.features {
            FeatureKind::Bernoulli => FeatureDistribution::BernoulliVec { p: y },
            FeatureKind::Continuous => {
                let cov = noise.resolve(&self.prior, &self.decoder, &y, x)?;
                FeatureDistribution::from_covariance(y, &cov)
            }
        })
    }
}

/// A training criterion.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// `L_rec` at the deterministic feature `f(x)`.
    Reconstruction,
    /// `E L_rec + KL(f(x) || rho)`. Bernoulli features are exact;
    /// continuous features use Gaussian noise with the given covariance.
    FGen(NoiseSpec),
    /// The denoising bound with the given noise.
    Denoising(NoiseSpec),
    /// `L_rec - log rho(f(x)) + 1/2 log det H_hat - d/2 log 2 pi` with the
    /// layer-wise diagonal Gauss-Newton `H_hat`.
    LogdetDirect,
    /// The contractive bound; single-layer decoders only.
    Contractive(ContractiveVariant),
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Reconstruction => "reconstruction",
            Objective::FGen(_) => "f_gen",
            Objective::Denoising(_) => "denoising",
            Objective::LogdetDirect => "logdet_direct",
            Objective::Contractive(ContractiveVariant::Diag) => "contractive_diag",
            Objective::Contractive(ContractiveVariant::Full) => "contractive_full",
        }
    }

    fn noise(&self, model: &Model) -> Option<&NoiseSpec> {
        match (self, model.features) {
            (Objective::Denoising(spec), _) => Some(spec),
            (Objective::FGen(spec), FeatureKind::Continuous) => Some(spec),
            _ => None,
        }
    }

    /// Rejects objective and model combinations the bounds do not cover.
    pub fn check(&self, model: &Model) -> Result<()> {
        let continuous = model.features == FeatureKind::Continuous;
        match self {
            Objective::Reconstruction | Objective::FGen(_) => Ok(()),
            Objective::Denoising(_) | Objective::LogdetDirect if !continuous => Err(Error::Unsupported(format!(
                "objective {} needs continuous features with a Gaussian prior",
                self.name()
            ))),
            Objective::Contractive(_) if !continuous => Err(Error::Unsupported(format!(
                "objective {} needs continuous features with a Gaussian prior",
                self.name()
            ))),
            Objective::Contractive(_) if !model.decoder.net.is_single_layer() => Err(Error::Unsupported(
                "contractive objectives train single-layer decoders only; use logdet_direct for deeper decoders".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Resolves the noise covariance and draws for `x`. They are held fixed
    /// while the gradient is taken.
    pub fn prepare<R: Rng + ?Sized>(
        &self,
        model: &Model,
        x: &[f64],
        mc_samples: usize,
        rng: &mut R,
    ) -> Result<Option<SampleNoise>> {
        let Some(spec) = self.noise(model) else {
            return Ok(None);
        };
        if mc_samples == 0 {
            return Err(Error::InvalidParameter("mc_samples must be >= 1".into()));
        }
        let y = model.encode(x)?;
        let cov = spec.resolve(&model.prior, &model.decoder, &y, x)?;
        let draws = standard_draws(y.len(), mc_samples, rng);
        Ok(Some(SampleNoise { cov, draws }))
    }

    /// Loss and its split for one sample.
    pub fn value(&self, model: &Model, x: &[f64], noise: Option<&SampleNoise>) -> Result<LossParts> {
        Ok(self.evaluate(model, x, noise, false)?.parts)
    }

    /// Loss with its gradient with respect to encoder and decoder weights.
    pub fn gradient(&self, model: &Model, x: &[f64], noise: Option<&SampleNoise>) -> Result<SampleGrad> {
        self.evaluate(model, x, noise, true)
    }

    fn evaluate(&self, model: &Model, x: &[f64], noise: Option<&SampleNoise>, want_grad: bool) -> Result<SampleGrad> {
        self.check(model)?;
        if x.len() != model.data_dim() {
            return Err(Error::dim("training sample", model.data_dim(), x.len()));
        }
        match self {
            Objective::Reconstruction => reconstruction_objective(model, x, want_grad),
            Objective::FGen(_) if model.features == FeatureKind::Bernoulli => bernoulli_f_gen(model, x, want_grad),
            Objective::FGen(_) | Objective::Denoising(_) => {
                let noise = noise.ok_or_else(|| {
                    Error::InvalidParameter(format!("objective {} needs prepared noise", self.name()))
                })?;
                denoising_objective(model, x, noise)
            }
            Objective::LogdetDirect => logdet_objective(model, x),
            Objective::Contractive(variant) => contractive_objective(model, x, *variant),
        }
    }
}

/// Noise covariance and standard normal draws for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleNoise {
    pub cov: Covariance,
    pub draws: Vec<Vec<f64>>,
}

/// A per-sample loss split as `loss = l_rec + kl_term + extra_term`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub loss: f64,
    pub l_rec: f64,
    pub kl_term: f64,
    pub extra_term: f64,
}

impl std::ops::AddAssign for LossParts {
    fn add_assign(&mut self, o: Self) {
        self.loss += o.loss;
        self.l_rec += o.l_rec;
        self.kl_term += o.kl_term;
        self.extra_term += o.extra_term;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrad {
    pub parts: LossParts,
    pub encoder: Vec<f64>,
    pub decoder: Vec<f64>,
}

impl SampleGrad {
    /// Encoder gradient followed by decoder gradient.
    pub fn flat(&self) -> Vec<f64> {
        let mut g = self.encoder.clone();
        g.extend_from_slice(&self.decoder);
        g
    }
}

fn parts(l_rec: f64, kl_term: f64, extra_term: f64) -> LossParts {
    LossParts {
        loss: l_rec + kl_term + extra_term,
        l_rec,
        kl_term,
        extra_term,
    }
}

fn reconstruction_objective(model: &Model, x: &[f64], want_grad: bool) -> Result<SampleGrad> {
    let f_rec = model.encoder.forward(x)?;
    model.check_features(&f_rec.output)?;
    let dec = &model.decoder;
    let rec = dec.net.forward(&f_rec.output)?;
    let l = dec.output.neg_log_likelihood(&rec.output, x);
    if !want_grad {
        return Ok(SampleGrad {
            parts: parts(l, 0.0, 0.0),
            encoder: Vec::new(),
            decoder: Vec::new(),
        });
    }
    let g = dec.net.backprop(&rec, &dec.output.neg_log_likelihood_grad(&rec.output, x))?;
    let encoder = model.encoder.backprop(&f_rec, &g.inputs)?.weights;
    Ok(SampleGrad {
        parts: parts(l, 0.0, 0.0),
        encoder,
        decoder: g.weights,
    })
}

const LOGIT_CLAMP: f64 = 1e-12;

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn bernoulli_f_gen(model: &Model, x: &[f64], want_grad: bool) -> Result<SampleGrad> {
    let f_rec = model.encoder.forward(x)?;
    let p = f_rec.output.clone();
    model.check_features(&p)?;
    let d = p.len();
    check_enumerable(d)?;
    let dec = &model.decoder;
    let fd = FeatureDistribution::BernoulliVec { p: p.clone() };
    let kl = kl_to_prior(&fd, &model.prior)?;
    let mut e_rec = 0.0;
    let mut dec_grad = vec![0.0; if want_grad { dec.net.num_edges() } else { 0 }];
    let mut feature = vec![0.0; d];
    for mask in 0..1usize << d {
        let mass = bernoulli_mass(&p, mask);
        // masks of zero mass still carry derivative with respect to p
        let y = binary_point(mask, d);
        let rec = dec.net.forward(&y)?;
        let l = dec.output.neg_log_likelihood(&rec.output, x);
        if mass > 0.0 {
            e_rec += mass * l;
        }
        if !want_grad {
            continue;
        }
        if mass > 0.0 {
            let g = dec.net.backprop(&rec, &dec.output.neg_log_likelihood_grad(&rec.output, x))?;
            for (a, b) in dec_grad.iter_mut().zip(&g.weights) {
                *a += mass * b;
            }
        }
        for (i, fi) in feature.iter_mut().enumerate() {
            let others: f64 = (0..d)
                .filter(|&j| j != i)
                .map(|j| if (mask >> j) & 1 == 1 { p[j] } else { 1.0 - p[j] })
                .product();
            let sign = if (mask >> i) & 1 == 1 { 1.0 } else { -1.0 };
            *fi += sign * others * l;
        }
    }
    if !want_grad {
        return Ok(SampleGrad {
            parts: parts(e_rec, kl, 0.0),
            encoder: Vec::new(),
            decoder: Vec::new(),
        });
    }
    let q = model.prior.bit_probabilities().expect("discrete prior");
    for ((fi, &pi), &qi) in feature.iter_mut().zip(&p).zip(&q) {
        let pc = pi.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
        let qc = qi.clamp(P_CLAMP, 1.0 - P_CLAMP);
        *fi += logit(pc) - logit(qc);
    }
    let encoder = model.encoder.backprop(&f_rec, &feature)?.weights;
    Ok(SampleGrad {
        parts: parts(e_rec, kl, 0.0),
        encoder,
        decoder: dec_grad,
    })
}

fn denoising_objective(model: &Model, x: &[f64], noise: &SampleNoise) -> Result<SampleGrad> {
    let g = denoising_grad_with_draws(&model.prior, &model.encoder, &model.decoder, x, &noise.cov, &noise.draws)?;
    let mean = model.encoder.forward(x)?.output;
    let kl = kl_to_prior(&FeatureDistribution::from_covariance(mean, &noise.cov), &model.prior)?;
    Ok(SampleGrad {
        parts: parts(g.value - kl, kl, 0.0),
        encoder: g.encoder,
        decoder: g.decoder,
    })
}

/// Feature-space gradient of `L_rec(y) - log rho(y)` and the decoder
/// weight gradient of `L_rec`, at `y = f(x)`.
fn point_terms(model: &Model, x: &[f64], y: &[f64]) -> Result<(f64, f64, Vec<f64>, Vec<f64>)> {
    let dec = &model.decoder;
    let rec = dec.net.forward(y)?;
    let l = dec.output.neg_log_likelihood(&rec.output, x);
    let g = dec.net.backprop(&rec, &dec.output.neg_log_likelihood_grad(&rec.output, x))?;
    let nlp = -model.prior.log_density(y)?;
    let mut feature = g.inputs;
    for (f, p) in feature.iter_mut().zip(model.prior.neg_log_density_grad(y)?) {
        *f += p;
    }
    Ok((l, nlp, feature, g.weights))
}

fn logdet_objective(model: &Model, x: &[f64]) -> Result<SampleGrad> {
    let f_rec = model.encoder.forward(x)?;
    let y = f_rec.output.clone();
    model.check_features(&y)?;
    let (l, nlp, mut feature, mut dec_grad) = point_terms(model, x, &y)?;
    let ld = layerwise_logdet_grad(&model.decoder, &model.prior, &y, x)?;
    for (a, b) in dec_grad.iter_mut().zip(&ld.weights) {
        *a += 0.5 * b;
    }
    for (a, b) in feature.iter_mut().zip(&ld.features) {
        *a += 0.5 * b;
    }
    let extra = 0.5 * ld.logdet - 0.5 * y.len() as f64 * LN_2PI;
    let encoder = model.encoder.backprop(&f_rec, &feature)?.weights;
    Ok(SampleGrad {
        parts: parts(l, nlp, extra),
        encoder,
        decoder: dec_grad,
    })
}

/// Step of the central differences used for the full contractive penalty.
const PENALTY_FD_STEP: f64 = 1e-6;

fn contractive_objective(model: &Model, x: &[f64], variant: ContractiveVariant) -> Result<SampleGrad> {
    let f_rec = model.encoder.forward(x)?;
    let y = f_rec.output.clone();
    model.check_features(&y)?;
    let (l, nlp, mut feature, mut dec_grad) = point_terms(model, x, &y)?;
    let penalty = contractive_penalty(&model.prior, &model.decoder, &y, variant)?;
    match variant {
        ContractiveVariant::Diag => {
            // single layer: the layer-wise curvature is the exact diagonal
            let ld = layerwise_logdet_grad(&model.decoder, &model.prior, &y, x)?;
            for (a, b) in dec_grad.iter_mut().zip(&ld.weights) {
                *a += 0.5 * b;
            }
            for (a, b) in feature.iter_mut().zip(&ld.features) {
                *a += 0.5 * b;
            }
        }
        ContractiveVariant::Full => {
            let h = PENALTY_FD_STEP;
            let mut probe = model.decoder.clone();
            for (e, g) in dec_grad.iter_mut().enumerate() {
                let w = model.decoder.net.weights()[e];
                probe.net.weights_mut()[e] = w + h;
                let plus = contractive_penalty(&model.prior, &probe, &y, variant)?;
                probe.net.weights_mut()[e] = w - h;
                let minus = contractive_penalty(&model.prior, &probe, &y, variant)?;
                probe.net.weights_mut()[e] = w;
                *g += (plus - minus) / (2.0 * h);
            }
            let mut yp = y.clone();
            for (i, g) in feature.iter_mut().enumerate() {
                yp[i] = y[i] + h;
                let plus = contractive_penalty(&model.prior, &model.decoder, &yp, variant)?;
                yp[i] = y[i] - h;
                let minus = contractive_penalty(&model.prior, &model.decoder, &yp, variant)?;
                yp[i] = y[i];
                *g += (plus - minus) / (2.0 * h);
            }
        }
    }
    let encoder = model.encoder.backprop(&f_rec, &feature)?.weights;
    Ok(SampleGrad {
        parts: parts(l, nlp, penalty),
        encoder,
        decoder: dec_grad,
    })
}

/// Value of the contractive bound, for reporting.
pub fn contractive_value(model: &Model, x: &[f64], variant: ContractiveVariant) -> Result<f64> {
    let y = model.encode(x)?;
    contractive_bound(&model.prior, &model.decoder, &y, x, variant)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cadence {
    Never,
    Epoch,
    Step,
}

impl std::str::FromStr for Cadence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "never" => Ok(Cadence::Never),
            "epoch" => Ok(Cadence::Epoch),
            "step" => Ok(Cadence::Step),
            other => Err(Error::Parse(format!("unknown cadence `{other}`"))),
        }
    }
}

/// When the final report computes the exact generative codelength.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    /// Discrete features, or one continuous feature.
    Auto,
    On,
    Off,
}

impl std::str::FromStr for OracleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(OracleMode::Auto),
            "on" => Ok(OracleMode::On),
            "off" => Ok(OracleMode::Off),
            other => Err(Error::Parse(format!("unknown oracle mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mc_samples: usize,
    pub report_mc_samples: usize,
    pub prior_refit: Cadence,
    pub sigma_refit: Cadence,
    /// Noise used to report continuous features.
    pub report_noise: NoiseSpec,
    pub oracle: OracleMode,
    pub quadrature: QuadratureSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.0,
            epochs: 10,
            batch_size: 10,
            seed: 0,
            mc_samples: 16,
            report_mc_samples: 1000,
            prior_refit: Cadence::Never,
            sigma_refit: Cadence::Epoch,
            report_noise: NoiseSpec::default(),
            oracle: OracleMode::Auto,
            quadrature: QuadratureSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::config(key, msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be a finite value >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if self.mc_samples == 0 {
            return bad("mc_samples", "must be >= 1");
        }
        if self.report_mc_samples == 0 {
            return bad("report_mc_samples", "must be >= 1");
        }
        Ok(())
    }
}

/// Sums of the per-sample loss parts over one epoch's steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub l_rec: f64,
    pub kl_term: f64,
    pub extra_term: f64,
}

/// Tab-separated log with a header line.
pub fn log_tsv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch\tloss\tl_rec\tkl_term\textra_term\n");
    for e in log {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.epoch, e.loss, e.l_rec, e.kl_term, e.extra_term
        ));
    }
    out
}

/// Gradient-descent state: the model and its momentum buffer.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub objective: Objective,
    pub config: TrainConfig,
    velocity: Vec<f64>,
    shuffle_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    steps: usize,
}

impl Trainer {
    pub fn new(model: Model, objective: Objective, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        objective.check(&model)?;
        Ok(Trainer {
            velocity: vec![0.0; model.num_params()],
            shuffle_rng: substream(config.seed, STREAM_SHUFFLE),
            noise_rng: substream(config.seed, STREAM_NOISE),
            model,
            objective,
            config,
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Summed loss and gradient over `batch`, with noise resolved per sample.
    pub fn batch_gradient(&mut self, batch: &[&[f64]]) -> Result<(LossParts, Vec<f64>, Vec<Option<SampleNoise>>)> {
        let mut total = LossParts::default();
        let mut grad = vec![0.0; self.model.num_params()];
        let mut noises = Vec::with_capacity(batch.len());
        for x in batch {
            let noise = self
                .objective
                .prepare(&self.model, x, self.config.mc_samples, &mut self.noise_rng)?;
            let g = self.objective.gradient(&self.model, x, noise.as_ref())?;
            total += g.parts;
            for (a, b) in grad.iter_mut().zip(g.encoder.iter().chain(&g.decoder)) {
                *a += b;
            }
            noises.push(noise);
        }
        Ok((total, grad, noises))
    }

    /// One update on `batch`; returns the loss before the update.
    pub fn step(&mut self, batch: &[&[f64]], epoch: usize) -> Result<LossParts> {
        let (loss, grad, noises) = self.batch_gradient(batch)?;
        if !loss.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                step: self.steps,
                loss: loss.loss,
            });
        }
        let mut params = self.model.params();
        let (lr, mu) = (self.config.learning_rate, self.config.momentum);
        for ((p, v), g) in params.iter_mut().zip(self.velocity.iter_mut()).zip(&grad) {
            *v = mu * *v - lr * g;
            *p += *v;
        }
        self.model.set_params(&params)?;
        self.steps += 1;
        if self.config.prior_refit == Cadence::Step {
            self.refit_prior(batch, Some(&noises))?;
        }
        if self.config.sigma_refit == Cadence::Step {
            self.refit_sigma(batch)?;
        }
        Ok(loss)
    }

    /// One pass over `data` in shuffled mini-batches, then the per-epoch
    /// refits.
    pub fn epoch(&mut self, data: &[Vec<f64>], epoch: usize) -> Result<EpochLog> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let mut total = LossParts::default();
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| data[i].as_slice()).collect();
            total += self.step(&batch, epoch)?;
        }
        let all: Vec<&[f64]> = data.iter().map(|x| x.as_slice()).collect();
        if self.config.prior_refit == Cadence::Epoch {
            self.refit_prior(&all, None)?;
        }
        if self.config.sigma_refit == Cadence::Epoch {
            self.refit_sigma(&all)?;
        }
        Ok(EpochLog {
            epoch,
            loss: total.loss,
            l_rec: total.l_rec,
            kl_term: total.kl_term,
            extra_term: total.extra_term,
        })
    }

    /// Refits the prior to the feature distributions of `xs`: second
    /// moments with mean 0 for Gaussians, mean bit probabilities for
    /// Bernoulli priors. Uniform priors are left alone.
    pub fn refit_prior(&mut self, xs: &[&[f64]], noises: Option<&[Option<SampleNoise>]>) -> Result<()> {
        if matches!(self.model.prior, Prior::UniformBinary { .. }) || xs.is_empty() {
            return Ok(());
        }
        let mut fds = Vec::with_capacity(xs.len());
        for (k, x) in xs.iter().enumerate() {
            let y = self.model.encode(x)?;
            let cov = match noises.and_then(|n| n[k].as_ref()) {
                Some(n) => Some(n.cov.clone()),
                None => match self.objective.noise(&self.model) {
                    Some(spec) => Some(spec.resolve(&self.model.prior, &self.model.decoder, &y, x)?),
                    None => None,
                },
            };
            fds.push(match (self.model.features, cov) {
                (FeatureKind::Bernoulli, _) => FeatureDistribution::BernoulliVec { p: y },
                (FeatureKind::Continuous, Some(cov)) => FeatureDistribution::from_covariance(y, &cov),
                (FeatureKind::Continuous, None) => FeatureDistribution::Dirac(y),
            });
        }
        self.model.prior = fit_prior(&fds, self.model.prior.family())?;
        Ok(())
    }

    /// Sets learned output deviations to `sqrt(E_k + eps^2)` where `E_k` is
    /// the mean square error of the reconstructions the objective scores:
    /// exact expectations over Bernoulli features, noisy reconstructions
    /// when feature noise is active.
    pub fn refit_sigma(&mut self, xs: &[&[f64]]) -> Result<()> {
        if self.model.decoder.output.mode != SigmaMode::Learned || xs.is_empty() {
            return Ok(());
        }
        let dx = self.model.data_dim();
        let mut e = vec![0.0; dx];
        let n = xs.len() as f64;
        for x in xs {
            let r = self.expected_square_residuals(x)?;
            for (a, b) in e.iter_mut().zip(r) {
                *a += b / n;
            }
        }
        self.model.decoder.output.refit(&e)
    }

    fn expected_square_residuals(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let model = &self.model;
        let dec = &model.decoder;
        let y = model.encode(x)?;
        let sq = |y: &[f64]| -> Result<Vec<f64>> {
            Ok(dec.reconstruct(y)?.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).collect())
        };
        let bernoulli_expectation = matches!(self.objective, Objective::FGen(_)) && model.features == FeatureKind::Bernoulli;
        if bernoulli_expectation {
            let mut out = vec![0.0; x.len()];
            for mask in 0..1usize << y.len() {
                let mass = bernoulli_mass(&y, mask);
                if mass > 0.0 {
                    for (a, b) in out.iter_mut().zip(sq(&binary_point(mask, y.len()))?) {
                        *a += mass * b;
                    }
                }
            }
            return Ok(out);
        }
        match self
            .objective
            .prepare(model, x, self.config.mc_samples, &mut self.noise_rng)?
        {
            Some(noise) => {
                let mut out = vec![0.0; x.len()];
                let k = noise.draws.len() as f64;
                for z in &noise.draws {
                    let yz = noise.cov.transform(&y, z)?;
                    for (a, b) in out.iter_mut().zip(sq(&yz)?) {
                        *a += b / k;
                    }
                }
                Ok(out)
            }
            None => sq(&y),
        }
    }
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub report: CodelengthReport,
}

/// Trains for the configured number of epochs and reports codelengths of
/// the final model on `data`.
pub fn run(model: Model, objective: Objective, config: TrainConfig, data: &[Vec<f64>]) -> Result<TrainOutcome> {
    for x in data {
        if x.len() != model.data_dim() {
            return Err(Error::dim("dataset row", model.data_dim(), x.len()));
        }
    }
    let mut trainer = Trainer::new(model, objective, config)?;
    let mut log = Vec::with_capacity(trainer.config.epochs);
    for epoch in 0..trainer.config.epochs {
        log.push(trainer.epoch(data, epoch)?);
    }
    let report = evaluate_report(&trainer.model, data, &trainer.config)?;
    Ok(TrainOutcome {
        model: trainer.model,
        log,
        report,
    })
}

fn oracle_enabled(model: &Model, mode: OracleMode) -> bool {
    match mode {
        OracleMode::Off => false,
        OracleMode::On => true,
        OracleMode::Auto => model.features == FeatureKind::Bernoulli || model.feature_dim() == 1,
    }
}

/// Per-sample codelengths of `model` on `data`.
///
/// Bernoulli features are scored exactly. Continuous features use
/// `N(f(x), Sigma)` with `Sigma` from `config.report_noise`; the expected
/// reconstruction error is exact for affine decoders and a Monte Carlo
/// average otherwise. The Taylor and contractive bounds are added for
/// continuous features, and the exact generative codelength when the
/// oracle is enabled.
pub fn evaluate_report(model: &Model, data: &[Vec<f64>], config: &TrainConfig) -> Result<CodelengthReport> {
    let mut rng = substream(config.seed, STREAM_REPORT);
    let mut samples = Vec::with_capacity(data.len());
    let mut notes = Vec::new();
    let use_oracle = oracle_enabled(model, config.oracle);
    for (idx, x) in data.iter().enumerate() {
        let y = model.encode(x)?;
        let l_rec = reconstruction_error(&model.decoder, &y, x)?;
        let mut s = match model.features {
            FeatureKind::Bernoulli => {
                let fd = FeatureDistribution::BernoulliVec { p: y.clone() };
                let e_l_rec = expected_reconstruction_error(&model.decoder, &fd, x, 1, &mut rng)?;
                let kl = kl_to_prior(&fd, &model.prior)?;
                SampleCodelengths {
                    l_rec,
                    e_l_rec,
                    kl_feat_prior: kl,
                    l_f_gen: e_l_rec + kl,
                    l_two_part: Some(two_part_codelength(&model.prior, &model.decoder, &fd, x)?),
                    ..Default::default()
                }
            }
            FeatureKind::Continuous => {
                let cov = config.report_noise.resolve(&model.prior, &model.decoder, &y, x)?;
                let fd = FeatureDistribution::from_covariance(y.clone(), &cov);
                let kl = kl_to_prior(&fd, &model.prior)?;
                let l_f_gen = if model.decoder.net.is_affine() {
                    denoising_bound_affine(&model.prior, &model.decoder, &y, &cov, x)?
                } else {
                    expected_reconstruction_error(&model.decoder, &fd, x, config.report_mc_samples, &mut rng)? + kl
                };
                let source = match config.report_noise {
                    NoiseSpec::OptimalDiag(src) | NoiseSpec::OptimalFull(src) => src,
                    NoiseSpec::Fixed(_) => HessianSource::GnFull,
                };
                let h = compute_hessian(source, &model.prior, &model.decoder, &y, x)?;
                gaussian_variances(&model.prior, y.len(), "report")?;
                SampleCodelengths {
                    l_rec,
                    e_l_rec: l_f_gen - kl,
                    kl_feat_prior: kl,
                    l_f_gen,
                    taylor_bound: Some(taylor_bound(&model.prior, &model.decoder, &y, &cov, x, &h)?),
                    contractive_diag: Some(contractive_value(model, x, ContractiveVariant::Diag)?),
                    contractive_full: Some(contractive_value(model, x, ContractiveVariant::Full)?),
                    ..Default::default()
                }
            }
        };
        if use_oracle {
            match l_gen_exact(&model.prior, &model.decoder, x, &config.quadrature) {
                Ok(o) => s = s.with_oracle(o.l_gen),
                Err(e @ Error::UnderResolved { .. }) if config.oracle == OracleMode::Auto => {
                    notes.push(format!("sample {idx}: oracle omitted: {e}"));
                }
                Err(e) => return Err(e),
            }
        }
        samples.push(s);
    }
    let mut report = CodelengthReport::from_samples(samples);
    report.notes = notes;
    Ok(report)
}

/// `KL(f(x) || p_g(.|x))` for Bernoulli features, by enumeration.
pub fn posterior_gap(model: &Model, x: &[f64]) -> Result<f64> {
    let p = model.encode(x)?;
    let oracle = l_gen_exact(&model.prior, &model.decoder, x, &QuadratureSpec::default())?;
    kl_to_posterior(&FeatureDistribution::BernoulliVec { p }, &oracle.posterior)
}
