//! Curvature of `L_rec^y(x) - log rho(y)` in the feature variable `y`, and
//! the optimal denoising covariance `Sigma = H^-1` it determines.
//!
//! Three sources are available: central finite differences (an oracle),
//! the full Gauss-Newton matrix, and the layer-wise diagonal Gauss-Newton
//! approximation, which costs one backward pass with squared weights.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::codelength::{reconstruction_error, Decoder};
use crate::contractive::{decoder_jacobian, gauss_newton_matrix, gaussian_variances};
use crate::error::{Error, Result};
use crate::linalg::{inverse_spd, log_det_spd, Covariance, LN_2PI};
use crate::net::{ActivationRecord, BIAS};
use crate::priors::Prior;

/// Eigenvalues (or diagonal entries) below this are raised to it before
/// inversion.
pub const H_MIN: f64 = 1e-8;
pub const DEFAULT_FD_STEP: f64 = 1e-4;
pub const CROSS_CHECK_FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianSource {
    ExactFd,
    GnFull,
    GnDiag,
}

impl HessianSource {
    pub fn name(self) -> &'static str {
        match self {
            HessianSource::ExactFd => "exact_fd",
            HessianSource::GnFull => "gn_full",
            HessianSource::GnDiag => "gn_diag",
        }
    }
}

impl std::str::FromStr for HessianSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_fd" => Ok(HessianSource::ExactFd),
            "gn_full" => Ok(HessianSource::GnFull),
            "gn_diag" | "gn_layerwise_diag" => Ok(HessianSource::GnDiag),
            other => Err(Error::Parse(format!("unknown hessian source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HessianKind {
    Full(DMatrix<f64>),
    Diagonal(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianResult {
    pub kind: HessianKind,
    pub source: HessianSource,
}

impl HessianResult {
    pub fn dim(&self) -> usize {
        match &self.kind {
            HessianKind::Full(m) => m.nrows(),
            HessianKind::Diagonal(v) => v.len(),
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        match &self.kind {
            HessianKind::Full(m) => m.diagonal().iter().copied().collect(),
            HessianKind::Diagonal(v) => v.clone(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match &self.kind {
            HessianKind::Full(m) => m.clone(),
            HessianKind::Diagonal(v) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v)),
        }
    }
}

/// Curvature contributed by the prior: `diag(1/lambda)`.
fn prior_precisions(prior: &Prior, dim: usize) -> Result<Vec<f64>> {
    Ok(gaussian_variances(prior, dim, "feature-space Hessian")?
        .iter()
        .map(|l| 1.0 / l)
        .collect())
}

/// Central second differences of `L_rec^y(x)` at `y0`, symmetrized, plus
/// the prior curvature added analytically.
pub fn hessian_fd(prior: &Prior, dec: &Decoder, y0: &[f64], x: &[f64], step: f64) -> Result<HessianResult> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter(format!("finite-difference step must be positive, got {step}")));
    }
    let d = dec.feature_dim();
    if y0.len() != d {
        return Err(Error::dim("hessian_fd feature point", d, y0.len()));
    }
    let inv_var = prior_precisions(prior, d)?;
    let f = |y: &[f64]| reconstruction_error(dec, y, x);
    let mut y = y0.to_vec();
    let f0 = f(&y)?;
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        y[i] = y0[i] + step;
        let fp = f(&y)?;
        y[i] = y0[i] - step;
        let fm = f(&y)?;
        y[i] = y0[i];
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (step * step);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                y[i] = y0[i] + si * step;
                y[j] = y0[j] + sj * step;
                let v = f(&y);
                y[i] = y0[i];
                y[j] = y0[j];
                v
            };
            let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?)
                / (4.0 * step * step);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    for i in 0..d {
        h[(i, i)] += inv_var[i];
    }
    if let Some((idx, v)) = h.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            location: format!("hessian entry ({}, {})", idx % d, idx / d),
            value: *v,
        });
    }
    let h = (&h + h.transpose()) * 0.5;
    Ok(HessianResult {
        kind: HessianKind::Full(h),
        source: HessianSource::ExactFd,
    })
}

/// [`hessian_fd`] at the default step, with the largest entrywise
/// difference from the estimate at the coarser cross-check step.
pub fn hessian_fd_cross_checked(prior: &Prior, dec: &Decoder, y0: &[f64], x: &[f64]) -> Result<(HessianResult, f64)> {
    let fine = hessian_fd(prior, dec, y0, x, DEFAULT_FD_STEP)?;
    let coarse = hessian_fd(prior, dec, y0, x, CROSS_CHECK_FD_STEP)?;
    let diff = (fine.to_matrix() - coarse.to_matrix()).abs().max();
    Ok((fine, diff))
}

/// `diag(1/lambda) + J^T diag(1/sigma^2) J` at `y0`: the exact Hessian with
/// the second-derivative-of-the-decoder term dropped.
pub fn gauss_newton_full(prior: &Prior, dec: &Decoder, y0: &[f64], x: &[f64]) -> Result<HessianResult> {
    if x.len() != dec.data_dim() {
        return Err(Error::dim("gauss_newton_full target", dec.data_dim(), x.len()));
    }
    let var = gaussian_variances(prior, dec.feature_dim(), "Gauss-Newton Hessian")?;
    let j = decoder_jacobian(dec, y0)?;
    Ok(HessianResult {
        kind: HessianKind::Full(gauss_newton_matrix(var, &dec.output.precisions(), &j)),
        source: HessianSource::GnFull,
    })
}

/// Per-unit layer-wise curvature: `1/sigma_k^2` on output units, then
/// `h_i = sum_j w_ij^2 s'(V_j)^2 h_j` backwards. Bias entry is 0.
pub fn layerwise_curvature(dec: &Decoder, record: &ActivationRecord) -> Result<Vec<f64>> {
    let net = &dec.net;
    if record.pre.len() != net.num_units() {
        return Err(Error::dim("layerwise curvature record", net.num_units(), record.pre.len()));
    }
    let mut h = vec![0.0; net.num_units()];
    for (k, &u) in net.outputs().iter().enumerate() {
        h[u] = 1.0 / (dec.output.sigma[k] * dec.output.sigma[k]);
    }
    for &u in net.order().iter().rev() {
        if u == BIAS || net.is_input(u) {
            continue;
        }
        let s = net.activation(u).derivative(record.pre[u]);
        let g = s * s * h[u];
        for e in net.incoming(u) {
            let src = net.edges()[e].src;
            if src != BIAS {
                let w = net.weights()[e];
                h[src] += w * w * g;
            }
        }
    }
    Ok(h)
}

/// `diag(1/lambda_i + h_i)` on the feature units.
pub fn gn_layerwise_diag(dec: &Decoder, prior: &Prior, y0: &[f64], x: &[f64]) -> Result<HessianResult> {
    if x.len() != dec.data_dim() {
        return Err(Error::dim("gn_layerwise_diag target", dec.data_dim(), x.len()));
    }
    let inv_var = prior_precisions(prior, dec.feature_dim())?;
    let record = dec.net.forward(y0)?;
    let h = layerwise_curvature(dec, &record)?;
    Ok(HessianResult {
        kind: HessianKind::Diagonal(
            dec.net
                .inputs()
                .iter()
                .zip(&inv_var)
                .map(|(&u, iv)| iv + h[u])
                .collect(),
        ),
        source: HessianSource::GnDiag,
    })
}

/// Computes the chosen Hessian at `y0`.
pub fn compute_hessian(
    source: HessianSource,
    prior: &Prior,
    dec: &Decoder,
    y0: &[f64],
    x: &[f64],
) -> Result<HessianResult> {
    match source {
        HessianSource::ExactFd => hessian_fd(prior, dec, y0, x, DEFAULT_FD_STEP),
        HessianSource::GnFull => gauss_newton_full(prior, dec, y0, x),
        HessianSource::GnDiag => gn_layerwise_diag(dec, prior, y0, x),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Full,
    Diagonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalNoise {
    pub cov: Covariance,
    /// `1/2 log det H` of the (clamped) curvature actually inverted.
    pub half_log_det_h: f64,
    /// Number of eigenvalues or entries raised to [`H_MIN`].
    pub clamped: usize,
}

fn check_finite(values: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    for (i, v) in values.enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                location: format!("{what} {i}"),
                value: v,
            });
        }
    }
    Ok(())
}

/// `Sigma = H^-1` (full) or `(diag H)^-1` (diagonal), after raising
/// eigenvalues or entries below [`H_MIN`] to it.
pub fn optimal_noise(h: &HessianResult, mode: NoiseMode) -> Result<OptimalNoise> {
    let diagonal_only = mode == NoiseMode::Diagonal || matches!(h.kind, HessianKind::Diagonal(_));
    if diagonal_only {
        let diag = h.diagonal();
        check_finite(diag.iter().copied(), "hessian diagonal entry")?;
        let clamped = diag.iter().filter(|&&v| v < H_MIN).count();
        let diag: Vec<f64> = diag.iter().map(|v| v.max(H_MIN)).collect();
        return Ok(OptimalNoise {
            half_log_det_h: 0.5 * diag.iter().map(|v| v.ln()).sum::<f64>(),
            cov: Covariance::Diagonal(diag.iter().map(|v| 1.0 / v).collect()),
            clamped,
        });
    }
    let m = h.to_matrix();
    check_finite(m.iter().copied(), "hessian entry")?;
    let eig = SymmetricEigen::new(m.clone());
    check_finite(eig.eigenvalues.iter().copied(), "hessian eigenvalue")?;
    let clamped = eig.eigenvalues.iter().filter(|&&v| v < H_MIN).count();
    if clamped == 0 {
        if let (Ok(inv), Ok(ld)) = (inverse_spd(&m), log_det_spd(&m)) {
            let inv = (&inv + inv.transpose()) * 0.5;
            return Ok(OptimalNoise {
                cov: Covariance::Full(inv),
                half_log_det_h: 0.5 * ld,
                clamped,
            });
        }
    }
    let values = eig.eigenvalues.map(|v| v.max(H_MIN));
    let inv = &eig.eigenvectors * nalgebra::DMatrix::from_diagonal(&values.map(|v| 1.0 / v)) * eig.eigenvectors.transpose();
    let inv = (&inv + inv.transpose()) * 0.5;
    let cov = Covariance::Full(inv);
    cov.validate().map_err(|_| {
        let (i, v) = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, v)| (i, *v))
            .unwrap_or((0, f64::NAN));
        Error::InvalidParameter(format!("hessian not positive after clamping: eigenvalue {i} = {v:e}"))
    })?;
    Ok(OptimalNoise {
        cov,
        half_log_det_h: 0.5 * values.iter().map(|v| v.ln()).sum::<f64>(),
        clamped,
    })
}

/// `L_rec(x) - log rho(y0) + 1/2 log det H - d/2 log 2 pi`: the denoising
/// bound's second-order value at `Sigma = H^-1`.
pub fn optimal_noise_bound(
    prior: &Prior,
    dec: &Decoder,
    y0: &[f64],
    x: &[f64],
    h: &HessianResult,
    mode: NoiseMode,
) -> Result<(OptimalNoise, f64)> {
    let noise = optimal_noise(h, mode)?;
    let d = y0.len() as f64;
    let bound = reconstruction_error(dec, y0, x)? - prior.log_density(y0)? + noise.half_log_det_h - 0.5 * d * LN_2PI;
    Ok((noise, bound))
}

/// `-log det Sigma + Tr(Sigma H)`, minimized over SPD `Sigma` at `H^-1`
/// where it equals `log det H + d`.
pub fn noise_objective(cov: &Covariance, h: &DMatrix<f64>) -> Result<f64> {
    Ok(-cov.log_det()? + cov.trace_product(h))
}
