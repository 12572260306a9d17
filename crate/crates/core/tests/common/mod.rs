//! Helpers shared by the integration and acceptance tests. The oracles here
//! are written independently of the library's own numerics.
#![allow(dead_code)]

use mdlae::codelength::Decoder;
use mdlae::logdet_grad::{EdgeFactor, InputPotential};
use mdlae::net::{Activation, Network};
use mdlae::outvar::OutputModel;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Layered network with `N(0, scale^2)` weights on every edge, biases
/// included.
pub fn random_layered(rng: &mut ChaCha8Rng, sizes: &[usize], hidden: Activation, output: Activation, scale: f64) -> Network {
    let mut net = Network::layered(sizes, hidden, output).unwrap();
    for w in net.weights_mut() {
        *w = scale * normal(rng);
    }
    net
}

pub fn random_decoder(rng: &mut ChaCha8Rng, sizes: &[usize], hidden: Activation, output: Activation) -> Decoder {
    let net = random_layered(rng, sizes, hidden, output, 1.0);
    let dx = *sizes.last().unwrap();
    let sigma = random_vec(rng, dx, 0.4, 1.5);
    Decoder::new(net, OutputModel::fixed(sigma).unwrap()).unwrap()
}

/// `A A^T / d + c I` with Gaussian `A`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| normal(rng));
    &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * ridge
}

/// Weight matrix `W[k][i]` and bias `b[k]` of a single-layer identity
/// network built by `Network::layered`.
pub fn affine_parts(net: &Network) -> (DMatrix<f64>, DVector<f64>) {
    let (dy, dx) = (net.input_dim(), net.output_dim());
    let mut w = DMatrix::zeros(dx, dy);
    let mut b = DVector::zeros(dx);
    for (k, &o) in net.outputs().iter().enumerate() {
        b[k] = net.edge_index(0, o).map_or(0.0, |e| net.weights()[e]);
        for (i, &u) in net.inputs().iter().enumerate() {
            w[(k, i)] = net.edge_index(u, o).map_or(0.0, |e| net.weights()[e]);
        }
    }
    (w, b)
}

/// Closed-form Gaussian posterior of a linear-Gaussian model: precision
/// `diag(1/lambda) + W^T D W`, mean `H^-1 W^T D (x - b)`, and the exact
/// marginal codelength `-log N(x; b, W Lambda W^T + S)`.
pub struct LinearGaussianPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub l_gen: f64,
}

pub fn linear_gaussian_posterior(w: &DMatrix<f64>, b: &DVector<f64>, lambda: &[f64], sigma: &[f64], x: &[f64]) -> LinearGaussianPosterior {
    let dy = lambda.len();
    let dx = sigma.len();
    let d = DMatrix::from_diagonal(&DVector::from_iterator(dx, sigma.iter().map(|s| 1.0 / (s * s))));
    let h = DMatrix::from_diagonal(&DVector::from_iterator(dy, lambda.iter().map(|l| 1.0 / l))) + w.transpose() * &d * w;
    let cov = h.clone().try_inverse().unwrap();
    let r = DVector::from_column_slice(x) - b;
    let mean = &cov * w.transpose() * &d * &r;
    let marginal = w * DMatrix::from_diagonal(&DVector::from_column_slice(lambda)) * w.transpose()
        + DMatrix::from_diagonal(&DVector::from_iterator(dx, sigma.iter().map(|s| s * s)));
    let chol = marginal.clone().cholesky().unwrap();
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let quad = (r.transpose() * chol.inverse() * &r)[(0, 0)];
    let l_gen = 0.5 * (quad + logdet + dx as f64 * (2.0 * std::f64::consts::PI).ln());
    LinearGaussianPosterior { mean, cov, l_gen }
}

/// `KL(N(m0, S0) || N(m1, S1))`.
pub fn gaussian_kl(m0: &DVector<f64>, s0: &DMatrix<f64>, m1: &DVector<f64>, s1: &DMatrix<f64>) -> f64 {
    let d = m0.len() as f64;
    let s1_inv = s1.clone().try_inverse().unwrap();
    let diff = m1 - m0;
    let tr = (&s1_inv * s0).trace();
    let quad = (diff.transpose() * &s1_inv * &diff)[(0, 0)];
    0.5 * (tr + quad - d + s1.determinant().ln() - s0.determinant().ln())
}

/// `phi = a w^2 (1 + b tanh V) + c w` with per-edge constants.
pub struct SmoothFactor {
    pub coef: Vec<(f64, f64, f64)>,
}

impl SmoothFactor {
    pub fn random(rng: &mut ChaCha8Rng, edges: usize) -> Self {
        SmoothFactor {
            coef: (0..edges)
                .map(|_| (rng.random_range(0.2..1.0), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
                .collect(),
        }
    }
}

impl EdgeFactor for SmoothFactor {
    fn value(&self, e: usize, _: usize, w: f64, v: f64) -> f64 {
        let (a, b, c) = self.coef[e];
        a * w * w * (1.0 + b * v.tanh()) + c * w
    }
    fn d_weight(&self, e: usize, _: usize, w: f64, v: f64) -> f64 {
        let (a, b, c) = self.coef[e];
        2.0 * a * w * (1.0 + b * v.tanh()) + c
    }
    fn d_pre(&self, e: usize, _: usize, w: f64, v: f64) -> f64 {
        let (a, b, _) = self.coef[e];
        let t = v.tanh();
        a * w * w * b * (1.0 - t * t)
    }
}

/// `psi(b) = sin(k b) + 0.1 b^2`.
pub struct WavyPotential(pub Vec<f64>);

impl InputPotential for WavyPotential {
    fn value(&self, i: usize, b: f64) -> f64 {
        (self.0[i] * b).sin() + 0.1 * b * b
    }
    fn derivative(&self, i: usize, b: f64) -> f64 {
        self.0[i] * (self.0[i] * b).cos() + 0.2 * b
    }
}

/// `S = sum_i psi_i(B_i)` recomputed from scratch: a backward sweep of
/// `B_i = sum_j phi_ij B_j` from the output seeds.
pub fn s_by_definition<F: EdgeFactor, P: InputPotential>(net: &Network, y: &[f64], phi: &F, psi: &P, b_out: &[f64]) -> f64 {
    let rec = net.forward(y).unwrap();
    let n = net.num_units();
    let mut b = vec![0.0; n];
    for (k, &o) in net.outputs().iter().enumerate() {
        b[o] = b_out[k];
    }
    for &u in net.order().iter().rev() {
        for e in net.incoming(u) {
            let src = net.edges()[e].src;
            if src != 0 {
                b[src] += phi.value(e, u, net.weights()[e], rec.pre[u]) * b[u];
            }
        }
    }
    net.inputs().iter().enumerate().map(|(k, &i)| psi.value(k, b[i])).sum()
}

/// Worst `|a - f| / max(|f|, floor * max|f|, 1e-12)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, f)| (a - f).abs() / f.abs().max(floor * scale).max(1e-12))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `p`.
pub fn central_diff(p: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut q = p.to_vec();
    (0..p.len())
        .map(|i| {
            let w = q[i];
            q[i] = w + h;
            let plus = f(&q);
            q[i] = w - h;
            let minus = f(&q);
            q[i] = w;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}
