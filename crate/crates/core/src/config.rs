//! Flat `key = value` experiment configuration.
//!
//! Blank lines and text after `#` are ignored. Unknown and repeated keys
//! are errors, and every error names the key it concerns.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::codelength::{Decoder, QuadratureSpec};
use crate::contractive::ContractiveVariant;
use crate::data::{generate, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::hessian::HessianSource;
use crate::linalg::Covariance;
use crate::net::{Activation, Network};
use crate::noise::NoiseSpec;
use crate::outvar::OutputModel;
use crate::priors::Prior;
use crate::train::{substream, Cadence, FeatureKind, Model, Objective, OracleMode, TrainConfig, STREAM_DATA, STREAM_INIT};

pub const KEYS: &[&str] = &[
    "data",
    "synth",
    "n_samples",
    "encoder",
    "decoder",
    "hidden_activation",
    "feature_activation",
    "output_activation",
    "features",
    "prior",
    "prior_refit",
    "sigma_refit",
    "objective",
    "noise",
    "hessian",
    "noise_cov",
    "output_sigma",
    "epsilon",
    "learning_rate",
    "momentum",
    "epochs",
    "batch_size",
    "seed",
    "mc_samples",
    "report_mc_samples",
    "init_scale",
    "oracle",
    "out",
];

const REQUIRED: &[&str] = &["encoder", "decoder", "prior", "objective", "seed"];

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synth { spec: SynthSpec, n_samples: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub encoder_sizes: Vec<usize>,
    pub decoder_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub feature_activation: Activation,
    pub output_activation: Activation,
    pub features: FeatureKind,
    pub prior: Prior,
    pub objective: Objective,
    pub output: OutputModel,
    pub init_scale: f64,
    pub train: TrainConfig,
    pub out: Option<PathBuf>,
}

/// Raw key/value pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::config(key, "unknown key"));
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::config(key, "key given twice"));
            }
        }
        Ok(RawConfig { entries })
    }

    /// Sets `key`, replacing any value from the file.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::config(key, "unknown key"));
        }
        self.entries.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::config(key, "required key is missing"))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => parse_value(key, v),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| Error::config(key, format!("`{v}`: {e}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|s| parse_value::<f64>(key, s.trim())).collect()
}

/// A scalar is broadcast to `dim` components.
fn parse_vector(key: &str, v: &str, dim: usize) -> Result<Vec<f64>> {
    let values = parse_list(key, v)?;
    match values.len() {
        1 => Ok(vec![values[0]; dim]),
        n if n == dim => Ok(values),
        n => Err(Error::config(key, format!("expected 1 or {dim} values, got {n}"))),
    }
}

fn parse_shape(key: &str, v: &str) -> Result<Vec<usize>> {
    let sizes: Vec<usize> = v
        .split('-')
        .map(|s| parse_value::<usize>(key, s.trim()))
        .collect::<Result<_>>()?;
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::config(key, format!("`{v}` needs at least two positive layer sizes")));
    }
    Ok(sizes)
}

fn parse_prior(v: &str, dim: usize) -> Result<Prior> {
    let (family, args) = match v.split_once(':') {
        Some((f, a)) => (f.trim(), Some(a.trim())),
        None => (v.trim(), None),
    };
    let wrap = |r: Result<Prior>| r.map_err(|e| Error::config("prior", e.to_string()));
    match (family, args) {
        ("gaussian", Some(a)) => wrap(Prior::gaussian(parse_vector("prior", a, dim)?)),
        ("gaussian", None) => wrap(Prior::gaussian(vec![1.0; dim])),
        ("bernoulli", Some(a)) => wrap(Prior::bernoulli(parse_vector("prior", a, dim)?)),
        ("bernoulli", None) => wrap(Prior::bernoulli(vec![0.5; dim])),
        ("uniform", None) => wrap(Prior::uniform_binary(dim)),
        _ => Err(Error::config(
            "prior",
            format!("`{v}`: expected gaussian[:var], bernoulli[:q] or uniform"),
        )),
    }
}

fn parse_output(v: Option<&str>, eps: f64, dim: usize) -> Result<OutputModel> {
    let v = v.unwrap_or("fixed:1");
    let wrap = |r: Result<OutputModel>| r.map_err(|e| Error::config("output_sigma", e.to_string()));
    let mut model = match v.split_once(':') {
        Some(("fixed", a)) => wrap(OutputModel::fixed(parse_vector("output_sigma", a, dim)?))?,
        Some(("learned", a)) => wrap(OutputModel::learned(dim, parse_value("output_sigma", a.trim())?, eps))?,
        None if v == "learned" => wrap(OutputModel::learned(dim, 1.0, eps))?,
        _ => {
            return Err(Error::config(
                "output_sigma",
                format!("`{v}`: expected fixed:<sigma> or learned[:<initial>]"),
            ))
        }
    };
    model.epsilon = eps;
    Ok(model)
}

fn parse_noise(raw: &RawConfig, objective: &str, dim: usize) -> Result<NoiseSpec> {
    let logdet = objective == "logdet_direct";
    let source: HessianSource = raw.parsed(
        "hessian",
        if logdet { HessianSource::GnDiag } else { HessianSource::GnFull },
    )?;
    if logdet && source != HessianSource::GnDiag {
        return Err(Error::config("hessian", "logdet_direct needs the gn_diag Hessian source"));
    }
    let kind = raw.get("noise").unwrap_or(if logdet { "optimal_diag" } else { "optimal_full" });
    let cov = raw.get("noise_cov");
    match (kind, cov) {
        ("fixed", Some(c)) => {
            let var = parse_vector("noise_cov", c, dim)?;
            let cov = Covariance::Diagonal(var);
            cov.validate().map_err(|e| Error::config("noise_cov", e.to_string()))?;
            Ok(NoiseSpec::Fixed(cov))
        }
        ("fixed", None) => Err(Error::config("noise_cov", "required when noise = fixed")),
        (_, Some(_)) => Err(Error::config("noise_cov", "only valid with noise = fixed")),
        ("optimal_diag", None) => Ok(NoiseSpec::OptimalDiag(source)),
        ("optimal_full", None) => Ok(NoiseSpec::OptimalFull(source)),
        (other, None) => Err(Error::config(
            "noise",
            format!("`{other}`: expected fixed, optimal_diag or optimal_full"),
        )),
    }
}

fn parse_objective(v: &str, noise: NoiseSpec) -> Result<Objective> {
    Ok(match v {
        "reconstruction" => Objective::Reconstruction,
        "f_gen" => Objective::FGen(noise),
        "denoising" => Objective::Denoising(noise),
        "logdet_direct" => Objective::LogdetDirect,
        "contractive_diag" => Objective::Contractive(ContractiveVariant::Diag),
        "contractive_full" => Objective::Contractive(ContractiveVariant::Full),
        other => {
            return Err(Error::config(
                "objective",
                format!(
                    "`{other}`: expected reconstruction, f_gen, denoising, logdet_direct, \
                     contractive_diag or contractive_full"
                ),
            ))
        }
    })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_raw(&RawConfig::parse(text)?, None)
    }

    /// Reads `path`, applies `overrides`, and resolves a relative `data`
    /// path against the directory of `path`.
    pub fn load(path: &Path, overrides: &[(&str, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut raw = RawConfig::parse(&text)?;
        for (k, v) in overrides {
            raw.set(k, v.clone())?;
        }
        Self::from_raw(&raw, path.parent())
    }

    pub fn from_raw(raw: &RawConfig, base: Option<&Path>) -> Result<Self> {
        for key in REQUIRED {
            raw.required(key)?;
        }
        let data = match (raw.get("data"), raw.get("synth")) {
            (Some(_), Some(_)) => return Err(Error::config("synth", "give either `data` or `synth`, not both")),
            (Some(p), None) => {
                if raw.get("n_samples").is_some() {
                    return Err(Error::config("n_samples", "only valid with `synth`"));
                }
                let p = PathBuf::from(p);
                DataSource::Csv(match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p,
                })
            }
            (None, Some(s)) => DataSource::Synth {
                spec: parse_value("synth", s)?,
                n_samples: raw.parsed("n_samples", 1000)?,
            },
            (None, None) => return Err(Error::config("data", "one of `data` or `synth` is required")),
        };
        let encoder_sizes = parse_shape("encoder", raw.required("encoder")?)?;
        let decoder_sizes = parse_shape("decoder", raw.required("decoder")?)?;
        let dy = decoder_sizes[0];
        let dx = *decoder_sizes.last().unwrap();
        if *encoder_sizes.last().unwrap() != dy {
            return Err(Error::config(
                "encoder",
                format!("output size {} differs from decoder input size {dy}", encoder_sizes.last().unwrap()),
            ));
        }
        if encoder_sizes[0] != dx {
            return Err(Error::config(
                "encoder",
                format!("input size {} differs from decoder output size {dx}", encoder_sizes[0]),
            ));
        }
        if let DataSource::Synth { spec, .. } = &data {
            if spec.data_dim() != dx {
                return Err(Error::config(
                    "synth",
                    format!("generates dimension {}, networks expect {dx}", spec.data_dim()),
                ));
            }
        }
        let prior = parse_prior(raw.required("prior")?, dy)?;
        let default_features = if prior.is_discrete() { "bernoulli" } else { "continuous" };
        let features = match raw.get("features").unwrap_or(default_features) {
            "continuous" => FeatureKind::Continuous,
            "bernoulli" => FeatureKind::Bernoulli,
            other => return Err(Error::config("features", format!("`{other}`: expected continuous or bernoulli"))),
        };
        if prior.is_discrete() != (features == FeatureKind::Bernoulli) {
            return Err(Error::config("features", "bernoulli features need a discrete prior and vice versa"));
        }
        let default_feature_act = match features {
            FeatureKind::Bernoulli => Activation::Sigmoid,
            FeatureKind::Continuous => Activation::Identity,
        };
        let feature_activation = raw.parsed("feature_activation", default_feature_act)?;
        if features == FeatureKind::Bernoulli && feature_activation != Activation::Sigmoid {
            return Err(Error::config("feature_activation", "bernoulli features need sigmoid"));
        }
        let objective_name = raw.required("objective")?;
        let noise = parse_noise(raw, objective_name, dy)?;
        let objective = parse_objective(objective_name, noise.clone())?;
        let epsilon: f64 = raw.parsed("epsilon", 0.0)?;
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::config("epsilon", "must be finite and >= 0"));
        }
        let output = parse_output(raw.get("output_sigma"), epsilon, dx)?;
        let init_scale: f64 = raw.parsed("init_scale", 1.0)?;
        if !(init_scale >= 0.0 && init_scale.is_finite()) {
            return Err(Error::config("init_scale", "must be finite and >= 0"));
        }
        let train = TrainConfig {
            learning_rate: raw.parsed("learning_rate", 0.01)?,
            momentum: raw.parsed("momentum", 0.0)?,
            epochs: raw.parsed("epochs", 10)?,
            batch_size: raw.parsed("batch_size", 10)?,
            seed: parse_value("seed", raw.required("seed")?)?,
            mc_samples: raw.parsed("mc_samples", 16)?,
            report_mc_samples: raw.parsed("report_mc_samples", 1000)?,
            prior_refit: raw.parsed("prior_refit", Cadence::Never)?,
            sigma_refit: raw.parsed("sigma_refit", Cadence::Epoch)?,
            report_noise: noise,
            oracle: raw.parsed("oracle", OracleMode::Auto)?,
            quadrature: QuadratureSpec::default(),
        };
        train.validate()?;
        Ok(ExperimentConfig {
            data,
            encoder_sizes,
            decoder_sizes,
            hidden_activation: raw.parsed("hidden_activation", Activation::Tanh)?,
            feature_activation,
            output_activation: raw.parsed("output_activation", Activation::Identity)?,
            features,
            prior,
            objective,
            output,
            init_scale,
            train,
            out: raw.get("out").map(PathBuf::from),
        })
    }

    /// Layered networks with weights drawn from the init substream.
    pub fn build_model(&self) -> Result<Model> {
        let mut rng = substream(self.train.seed, STREAM_INIT);
        let mut encoder = Network::layered(&self.encoder_sizes, self.hidden_activation, self.feature_activation)?;
        encoder.init_weights(self.init_scale, &mut rng);
        let mut decoder = Network::layered(&self.decoder_sizes, self.hidden_activation, self.output_activation)?;
        decoder.init_weights(self.init_scale, &mut rng);
        let model = Model::new(
            encoder,
            Decoder::new(decoder, self.output.clone())?,
            self.prior.clone(),
            self.features,
        )?;
        self.objective
            .check(&model)
            .map_err(|e| Error::config("objective", e.to_string()))?;
        Ok(model)
    }

    /// The CSV, or samples from the data substream.
    pub fn load_data(&self) -> Result<Dataset> {
        let data = match &self.data {
            DataSource::Csv(path) => Dataset::load_csv(path)?,
            DataSource::Synth { spec, n_samples } => {
                generate(spec, *n_samples, &mut substream(self.train.seed, STREAM_DATA))?.data
            }
        };
        let dx = *self.decoder_sizes.last().unwrap();
        if !data.is_empty() && data.dim() != dx {
            return Err(Error::config("data", format!("rows have {} values, networks expect {dx}", data.dim())));
        }
        Ok(data)
    }
}
