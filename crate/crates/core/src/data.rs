//! Headerless CSV datasets and synthetic generators whose generative
//! parameters are known, so exact codelengths can be checked against them.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::binary_point;

/// Rows of equal length, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(first) = rows.first() {
            let d = first.len();
            if d == 0 {
                return Err(Error::InvalidParameter("dataset rows must be non-empty".into()));
            }
            for (i, r) in rows.iter().enumerate() {
                if r.len() != d {
                    return Err(Error::dim("dataset row", d, r.len()));
                }
                if let Some(v) = r.iter().find(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        location: format!("dataset row {i}"),
                        value: *v,
                    });
                }
            }
        }
        Ok(Dataset { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row length; 0 for an empty dataset.
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("{}: row {}: `{f}`: {e}", path.display(), i + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Dataset::new(rows)
    }

    /// Shortest round-trip decimal for every value.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        for row in &self.rows {
            writer.write_record(row.iter().map(|v| format!("{v:?}")))?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Variance of the fine components of the two-scale generator.
pub const TWO_SCALE_SMALL_VAR: f64 = 1e-4;

/// Default isotropic noise of the discrete mixture.
pub const DEFAULT_MIXTURE_NOISE: f64 = 0.1;

/// Largest feature dimension of the discrete mixture.
pub const MAX_MIXTURE_FEATURES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthSpec {
    /// `x = W y + noise * e`, `y ~ N(0, I)`, `e ~ N(0, I)`.
    LinearGaussian { d_y: usize, d_x: usize, noise: f64 },
    /// `x = W b + c + noise * e` with `b` a uniform random bit vector.
    DiscreteMixture { d_y: usize, d_x: usize, noise: f64 },
    /// Independent centred Gaussians with variances alternating between 1
    /// and [`TWO_SCALE_SMALL_VAR`].
    TwoScale { d_x: usize },
}

impl fmt::Display for SynthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SynthSpec::LinearGaussian { d_y, d_x, noise } => write!(f, "linear-gaussian({d_y},{d_x},{noise})"),
            SynthSpec::DiscreteMixture { d_y, d_x, noise } => write!(f, "discrete-mixture({d_y},{d_x},{noise})"),
            SynthSpec::TwoScale { d_x } => write!(f, "two-scale({d_x})"),
        }
    }
}

impl FromStr for SynthSpec {
    type Err = Error;

    /// `linear-gaussian(d_y,d_x,noise)`, `discrete-mixture(d_y,d_x[,noise])`,
    /// `two-scale` or `two-scale(d_x)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) => {
                let inner = s[open + 1..]
                    .strip_suffix(')')
                    .ok_or_else(|| Error::Parse(format!("synth spec `{s}`: missing `)`")))?;
                let args: Vec<&str> = inner.split(',').map(str::trim).filter(|a| !a.is_empty()).collect();
                (s[..open].trim(), args)
            }
            None => (s, Vec::new()),
        };
        let usize_arg = |i: usize| -> Result<usize> {
            args[i]
                .parse()
                .map_err(|_| Error::Parse(format!("synth spec `{s}`: argument {} is not a count", i + 1)))
        };
        let f64_arg = |i: usize| -> Result<f64> {
            args[i]
                .parse()
                .map_err(|_| Error::Parse(format!("synth spec `{s}`: argument {} is not a number", i + 1)))
        };
        let arity = |ok: bool| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Parse(format!("synth spec `{s}`: wrong number of arguments")))
            }
        };
        let spec = match name {
            "linear-gaussian" => {
                arity(args.len() == 3)?;
                SynthSpec::LinearGaussian {
                    d_y: usize_arg(0)?,
                    d_x: usize_arg(1)?,
                    noise: f64_arg(2)?,
                }
            }
            "discrete-mixture" => {
                arity(args.len() == 2 || args.len() == 3)?;
                SynthSpec::DiscreteMixture {
                    d_y: usize_arg(0)?,
                    d_x: usize_arg(1)?,
                    noise: if args.len() == 3 { f64_arg(2)? } else { DEFAULT_MIXTURE_NOISE },
                }
            }
            "two-scale" => {
                arity(args.len() <= 1)?;
                SynthSpec::TwoScale {
                    d_x: if args.len() == 1 { usize_arg(0)? } else { 2 },
                }
            }
            other => return Err(Error::Parse(format!("unknown synth generator `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (d_y, d_x, noise) = match *self {
            SynthSpec::LinearGaussian { d_y, d_x, noise } => (d_y, d_x, noise),
            SynthSpec::DiscreteMixture { d_y, d_x, noise } => {
                if d_y > MAX_MIXTURE_FEATURES {
                    return Err(Error::InvalidParameter(format!(
                        "discrete-mixture needs d_y <= {MAX_MIXTURE_FEATURES}, got {d_y}"
                    )));
                }
                (d_y, d_x, noise)
            }
            SynthSpec::TwoScale { d_x } => (1, d_x, 0.0),
        };
        if d_y == 0 || d_x == 0 {
            return Err(Error::InvalidParameter("synth dimensions must be >= 1".into()));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::InvalidParameter(format!("synth noise must be finite and >= 0, got {noise}")));
        }
        Ok(())
    }

    pub fn data_dim(&self) -> usize {
        match *self {
            SynthSpec::LinearGaussian { d_x, .. }
            | SynthSpec::DiscreteMixture { d_x, .. }
            | SynthSpec::TwoScale { d_x } => d_x,
        }
    }
}

/// Generative parameters of a synthetic dataset. Matrices are row-major
/// with one row per data component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum Truth {
    LinearGaussian {
        weights: Vec<Vec<f64>>,
        latent_variance: f64,
        noise: f64,
    },
    DiscreteMixture {
        weights: Vec<Vec<f64>>,
        offset: Vec<f64>,
        bit_probability: f64,
        noise: f64,
        centers: Vec<Vec<f64>>,
        labels: Vec<usize>,
    },
    TwoScale {
        variances: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub data: Dataset,
    pub truth: Truth,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| normal(rng)).collect()).collect()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Draws `n` samples from `spec`.
pub fn generate<R: Rng + ?Sized>(spec: &SynthSpec, n: usize, rng: &mut R) -> Result<Synthetic> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(n);
    let truth = match *spec {
        SynthSpec::LinearGaussian { d_y, d_x, noise } => {
            let weights = gaussian_matrix(d_x, d_y, rng);
            for _ in 0..n {
                let y: Vec<f64> = (0..d_y).map(|_| normal(rng)).collect();
                let mut x = mat_vec(&weights, &y);
                for v in &mut x {
                    *v += noise * normal(rng);
                }
                rows.push(x);
            }
            Truth::LinearGaussian {
                weights,
                latent_variance: 1.0,
                noise,
            }
        }
        SynthSpec::DiscreteMixture { d_y, d_x, noise } => {
            let weights = gaussian_matrix(d_x, d_y, rng);
            let offset: Vec<f64> = (0..d_x).map(|_| 0.5 * normal(rng)).collect();
            let centers: Vec<Vec<f64>> = (0..1usize << d_y)
                .map(|mask| {
                    mat_vec(&weights, &binary_point(mask, d_y))
                        .iter()
                        .zip(&offset)
                        .map(|(a, b)| a + b)
                        .collect()
                })
                .collect();
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let label = rng.random_range(0..centers.len());
                labels.push(label);
                rows.push(centers[label].iter().map(|c| c + noise * normal(rng)).collect());
            }
            Truth::DiscreteMixture {
                weights,
                offset,
                bit_probability: 0.5,
                noise,
                centers,
                labels,
            }
        }
        SynthSpec::TwoScale { d_x } => {
            let variances: Vec<f64> = (0..d_x)
                .map(|k| if k % 2 == 0 { 1.0 } else { TWO_SCALE_SMALL_VAR })
                .collect();
            for _ in 0..n {
                rows.push(variances.iter().map(|v| v.sqrt() * normal(rng)).collect());
            }
            Truth::TwoScale { variances }
        }
    };
    Ok(Synthetic {
        data: Dataset::new(rows)?,
        truth,
    })
}

/// `data.csv` -> `data.truth.json`.
pub fn truth_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("truth.json")
}

impl Synthetic {
    /// Writes the CSV and its truth sidecar; returns the sidecar path.
    pub fn save(&self, csv_path: &Path) -> Result<PathBuf> {
        self.data.save_csv(csv_path)?;
        let sidecar = truth_path(csv_path);
        std::fs::write(&sidecar, serde_json::to_string_pretty(&self.truth)? + "\n")?;
        Ok(sidecar)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn specs_parse_and_print() {
        for s in ["linear-gaussian(2,4,0.1)", "discrete-mixture(2,4,0)", "two-scale(3)"] {
            let spec: SynthSpec = s.parse().unwrap();
            assert_eq!(spec.to_string().parse::<SynthSpec>().unwrap(), spec);
        }
        assert_eq!(
            "discrete-mixture(2, 4)".parse::<SynthSpec>().unwrap(),
            SynthSpec::DiscreteMixture {
                d_y: 2,
                d_x: 4,
                noise: DEFAULT_MIXTURE_NOISE
            }
        );
        assert_eq!("two-scale".parse::<SynthSpec>().unwrap(), SynthSpec::TwoScale { d_x: 2 });
        assert!("discrete-mixture(7,4)".parse::<SynthSpec>().is_err());
        assert!("linear-gaussian(2,4)".parse::<SynthSpec>().is_err());
        assert!("spiral(2)".parse::<SynthSpec>().is_err());
    }

    #[test]
    fn noiseless_linear_gaussian_lies_on_a_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec: SynthSpec = "linear-gaussian(1,2,0)".parse().unwrap();
        let s = generate(&spec, 50, &mut rng).unwrap();
        let Truth::LinearGaussian { weights, .. } = &s.truth else { panic!() };
        for r in s.data.rows() {
            let t = r[0] / weights[0][0];
            assert!((r[1] - t * weights[1][0]).abs() < 1e-12);
        }
        let one = generate(&"linear-gaussian(1,1,0)".parse().unwrap(), 20, &mut rng).unwrap();
        assert_eq!(one.data.dim(), 1);
    }

    #[test]
    fn noiseless_mixture_has_exactly_its_centers() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec: SynthSpec = "discrete-mixture(2,4,0)".parse().unwrap();
        let s = generate(&spec, 400, &mut rng).unwrap();
        let mut distinct: Vec<&Vec<f64>> = Vec::new();
        for r in s.data.rows() {
            if !distinct.contains(&r) {
                distinct.push(r);
            }
        }
        assert_eq!(distinct.len(), 4);
        let Truth::DiscreteMixture { centers, labels, .. } = &s.truth else { panic!() };
        for (r, &l) in s.data.rows().iter().zip(labels) {
            assert_eq!(r, &centers[l]);
        }
    }

    #[test]
    fn two_scale_variances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = generate(&SynthSpec::TwoScale { d_x: 2 }, 10_000, &mut rng).unwrap();
        let n = s.data.len() as f64;
        for (k, target) in [1.0, TWO_SCALE_SMALL_VAR].iter().enumerate() {
            let mean: f64 = s.data.rows().iter().map(|r| r[k]).sum::<f64>() / n;
            let var: f64 = s.data.rows().iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!((var / target - 1.0).abs() < 0.1, "component {k}: {var}");
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = generate(&"linear-gaussian(2,3,0.3)".parse().unwrap(), 25, &mut rng).unwrap();
        let sidecar = s.save(&path).unwrap();
        assert_eq!(Dataset::load_csv(&path).unwrap(), s.data);
        let truth: Truth = serde_json::from_str(&std::fs::read_to_string(sidecar).unwrap()).unwrap();
        assert_eq!(truth, s.truth);
    }

    #[test]
    fn ragged_or_bad_rows_are_rejected() {
        assert!(Dataset::new(vec![vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(Dataset::new(vec![vec![f64::NAN]]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1.0,abc\n").unwrap();
        assert!(matches!(Dataset::load_csv(&path), Err(Error::Parse(_))));
    }
}
