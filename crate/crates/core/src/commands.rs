//! The operations behind the command-line subcommands. Each writes its
//! files into an output directory and returns what it wrote or measured.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::codelength::{CodelengthReport, SampleCodelengths};
use crate::config::ExperimentConfig;
use crate::contractive::ContractiveVariant;
use crate::data::{generate, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::logdet_grad::layerwise_logdet_grad;
use crate::train::{run, substream, FeatureKind, Model, Objective, OracleMode, TrainOutcome, STREAM_DATA, STREAM_NOISE};

/// Writes `<out>` as CSV plus its truth sidecar.
pub fn synth(spec: &SynthSpec, n: usize, seed: u64, out: &Path) -> Result<PathBuf> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    generate(spec, n, &mut substream(seed, STREAM_DATA))?.save(out)
}

/// Trains per `config` and writes `report.json`, `log.tsv`,
/// `encoder.net` and `decoder.net` into `out`.
pub fn train(config: &ExperimentConfig, out: &Path) -> Result<TrainOutcome> {
    let model = config.build_model()?;
    let data = config.load_data()?;
    let outcome = run(model, config.objective.clone(), config.train.clone(), data.rows())?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("report.json"), outcome.report.to_json()? + "\n")?;
    std::fs::write(out.join("log.tsv"), crate::train::log_tsv(&outcome.log))?;
    std::fs::write(out.join("encoder.net"), outcome.model.encoder.to_text())?;
    std::fs::write(out.join("decoder.net"), outcome.model.decoder.net.to_text())?;
    Ok(outcome)
}

/// Slack allowed when checking that a bound is above the exact value.
pub const ORDERING_TOLERANCE: f64 = 1e-9;

/// One row of the bound comparison; `sample` is `None` for the totals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub sample: Option<usize>,
    pub l_gen_oracle: f64,
    pub l_f_gen: f64,
    pub l_two_part: Option<f64>,
    pub taylor: Option<f64>,
    pub contractive_diag: Option<f64>,
    pub contractive_full: Option<f64>,
    pub ordering: bool,
}

impl BoundRow {
    fn from_sample(sample: Option<usize>, s: &SampleCodelengths) -> Result<Self> {
        let oracle = s
            .l_gen_oracle
            .ok_or_else(|| Error::Unsupported("the exact generative codelength is unavailable".into()))?;
        let above = |b: f64| b >= oracle - ORDERING_TOLERANCE * (1.0 + oracle.abs());
        let mut ordering = above(s.l_f_gen);
        if let Some(tp) = s.l_two_part {
            ordering &= tp >= s.l_f_gen - ORDERING_TOLERANCE * (1.0 + s.l_f_gen.abs());
        }
        for b in [s.taylor_bound, s.contractive_diag, s.contractive_full].into_iter().flatten() {
            ordering &= above(b);
        }
        Ok(BoundRow {
            sample,
            l_gen_oracle: oracle,
            l_f_gen: s.l_f_gen,
            l_two_part: s.l_two_part,
            taylor: s.taylor_bound,
            contractive_diag: s.contractive_diag,
            contractive_full: s.contractive_full,
            ordering,
        })
    }

    fn cells(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        let gap = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.3e}", v - self.l_gen_oracle));
        vec![
            self.sample.map_or_else(|| "total".to_string(), |i| i.to_string()),
            format!("{:.6}", self.l_gen_oracle),
            format!("{:.6}", self.l_f_gen),
            gap(Some(self.l_f_gen)),
            opt(self.l_two_part),
            opt(self.taylor),
            gap(self.taylor),
            opt(self.contractive_diag),
            opt(self.contractive_full),
            if self.ordering { "OK" } else { "VIOLATED" }.to_string(),
        ]
    }
}

const BOUND_HEADER: [&str; 10] = [
    "sample",
    "l_gen_oracle",
    "l_f_gen",
    "f_gen_gap",
    "l_two_part",
    "taylor",
    "taylor_gap",
    "contractive_diag",
    "contractive_full",
    "ordering",
];

#[derive(Debug, Clone, PartialEq)]
pub struct BoundTable {
    pub rows: Vec<BoundRow>,
    pub report: CodelengthReport,
}

impl BoundTable {
    pub fn from_report(report: CodelengthReport) -> Result<Self> {
        let mut rows = report
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| BoundRow::from_sample(Some(i), s))
            .collect::<Result<Vec<_>>>()?;
        rows.push(BoundRow::from_sample(None, &report.aggregate)?);
        Ok(BoundTable { rows, report })
    }

    /// True when every row, totals included, is correctly ordered.
    pub fn all_ordered(&self) -> bool {
        self.rows.iter().all(|r| r.ordering)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(BOUND_HEADER)?;
        for row in &self.rows {
            let full = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:?}"));
            w.write_record([
                row.sample.map_or_else(|| "total".to_string(), |i| i.to_string()),
                format!("{:?}", row.l_gen_oracle),
                format!("{:?}", row.l_f_gen),
                format!("{:?}", row.l_f_gen - row.l_gen_oracle),
                full(row.l_two_part),
                full(row.taylor),
                full(row.taylor.map(|t| t - row.l_gen_oracle)),
                full(row.contractive_diag),
                full(row.contractive_full),
                if row.ordering { "OK" } else { "VIOLATED" }.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Right-aligned text table.
    pub fn render(&self) -> String {
        let cells: Vec<Vec<String>> = std::iter::once(BOUND_HEADER.iter().map(|s| s.to_string()).collect())
            .chain(self.rows.iter().map(BoundRow::cells))
            .collect();
        let widths: Vec<usize> = (0..BOUND_HEADER.len())
            .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            let _ = writeln!(out, "{}", line.join("  "));
        }
        out
    }
}

/// Trains per `config` (possibly for zero epochs), then compares every
/// bound against the exact generative codelength and writes `bounds.csv`.
/// An instance too large for the exact computation is an error.
pub fn compare_bounds(config: &ExperimentConfig, out: &Path) -> Result<BoundTable> {
    let mut config = config.clone();
    config.train.oracle = OracleMode::On;
    let model = config.build_model()?;
    let data = config.load_data()?;
    let outcome = run(model, config.objective.clone(), config.train.clone(), data.rows())?;
    let table = BoundTable::from_report(outcome.report)?;
    std::fs::create_dir_all(out)?;
    table.write_csv(&out.join("bounds.csv"))?;
    Ok(table)
}

/// Largest accepted relative error of an analytic gradient.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;
/// Samples used by the gradient check.
pub const GRAD_CHECK_SAMPLES: usize = 3;
const GRAD_CHECK_STEP: f64 = 1e-6;
const GRAD_CHECK_MC: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckRow {
    pub objective: String,
    /// `None` when the objective does not apply to the model.
    pub worst_relative_error: Option<f64>,
    pub note: Option<String>,
}

impl GradCheckRow {
    pub fn passed(&self) -> bool {
        self.worst_relative_error.is_none_or(|e| e <= GRAD_CHECK_TOLERANCE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub rows: Vec<GradCheckRow>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(GradCheckRow::passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.rows.iter().filter(|r| !r.passed()).map(|r| r.objective.as_str()).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let status = match (r.worst_relative_error, r.passed()) {
                (None, _) => "SKIP",
                (Some(_), true) => "PASS",
                (Some(_), false) => "FAIL",
            };
            let err = r.worst_relative_error.map_or_else(|| "-".to_string(), |e| format!("{e:.3e}"));
            let note = r.note.as_deref().map(|n| format!("  ({n})")).unwrap_or_default();
            let _ = writeln!(out, "{:<18} {:>10}  {status}{note}", r.objective, err);
        }
        out
    }
}

/// Worst `|a - f| / max(|a|, |f|, 1e-2 max|f|, 1e-8)` over components.
pub fn worst_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(1e-2 * scale).max(1e-8))
        .fold(0.0, f64::max)
}

fn central_difference(params: &[f64], mut value: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut p = params.to_vec();
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let w = p[i];
        p[i] = w + GRAD_CHECK_STEP;
        let plus = value(&p)?;
        p[i] = w - GRAD_CHECK_STEP;
        let minus = value(&p)?;
        p[i] = w;
        out.push((plus - minus) / (2.0 * GRAD_CHECK_STEP));
    }
    Ok(out)
}

/// Objectives that apply to `model`, with the noise of `config`.
fn candidate_objectives(config: &ExperimentConfig) -> Vec<Objective> {
    let noise = config.train.report_noise.clone();
    let mut v = vec![Objective::Reconstruction, Objective::FGen(noise.clone())];
    if config.features == FeatureKind::Continuous {
        v.extend([
            Objective::Denoising(noise),
            Objective::LogdetDirect,
            Objective::Contractive(ContractiveVariant::Diag),
            Objective::Contractive(ContractiveVariant::Full),
        ]);
    }
    v
}

fn check_objective(
    model: &Model,
    objective: &Objective,
    data: &[Vec<f64>],
    seed: u64,
    corrupt: bool,
) -> Result<f64> {
    let mut rng = substream(seed, STREAM_NOISE);
    let mut worst = 0.0f64;
    for x in data {
        let noise = objective.prepare(model, x, GRAD_CHECK_MC, &mut rng)?;
        let mut analytic = objective.gradient(model, x, noise.as_ref())?.flat();
        if corrupt {
            analytic[0] += 1e-2 * (1.0 + analytic[0].abs());
        }
        let mut probe = model.clone();
        let numeric = central_difference(&model.params(), |p| {
            probe.set_params(p)?;
            Ok(objective.value(&probe, x, noise.as_ref())?.loss)
        })?;
        worst = worst.max(worst_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

fn check_logdet(model: &Model, data: &[Vec<f64>], corrupt: bool) -> Result<f64> {
    let dec = &model.decoder;
    let mut worst = 0.0f64;
    for x in data {
        let y = model.encode(x)?;
        let g = layerwise_logdet_grad(dec, &model.prior, &y, x)?;
        let mut analytic = g.weights.clone();
        analytic.extend_from_slice(&g.features);
        if corrupt {
            analytic[0] += 1e-2 * (1.0 + analytic[0].abs());
        }
        let mut params = dec.net.weights().to_vec();
        params.extend_from_slice(&y);
        let ne = dec.net.num_edges();
        let mut probe = dec.clone();
        let numeric = central_difference(&params, |p| {
            probe.net.set_weights(&p[..ne])?;
            Ok(layerwise_logdet_grad(&probe, &model.prior, &p[ne..], x)?.logdet)
        })?;
        worst = worst.max(worst_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Name of the log-determinant gradient row.
pub const LOGDET_ROW: &str = "logdet_gradient";

/// Compares every applicable analytic gradient with central differences
/// on the first samples of the configured data. `corrupt` names a row
/// whose analytic gradient is perturbed on purpose, to exercise failure
/// reporting.
pub fn grad_check_model(
    config: &ExperimentConfig,
    model: &Model,
    data: &Dataset,
    corrupt: Option<&str>,
) -> Result<GradCheckReport> {
    let samples: Vec<Vec<f64>> = data.rows().iter().take(GRAD_CHECK_SAMPLES).cloned().collect();
    if samples.is_empty() {
        return Err(Error::InvalidParameter("gradient check needs at least one sample".into()));
    }
    let mut rows = Vec::new();
    for objective in candidate_objectives(config) {
        let name = objective.name();
        let row = match objective.check(model) {
            Err(e) => GradCheckRow {
                objective: name.to_string(),
                worst_relative_error: None,
                note: Some(e.to_string()),
            },
            Ok(()) => GradCheckRow {
                objective: name.to_string(),
                worst_relative_error: Some(check_objective(
                    model,
                    &objective,
                    &samples,
                    config.train.seed,
                    corrupt == Some(name),
                )?),
                note: None,
            },
        };
        rows.push(row);
    }
    if config.features == FeatureKind::Continuous {
        rows.push(GradCheckRow {
            objective: LOGDET_ROW.to_string(),
            worst_relative_error: Some(check_logdet(model, &samples, corrupt == Some(LOGDET_ROW))?),
            note: None,
        });
    }
    Ok(GradCheckReport { rows })
}

/// [`grad_check_model`] on the model and data built from `config`.
pub fn grad_check(config: &ExperimentConfig, corrupt: Option<&str>) -> Result<GradCheckReport> {
    let model = config.build_model()?;
    let data = config.load_data()?;
    grad_check_model(config, &model, &data, corrupt)
}
