//! Exact weight gradients of quantities obtained by backpropagating
//! edge-local factors through a network, computed in three linear passes.
//!
//! A value `B_k` is fixed on each output unit and propagated backwards as
//! `B_i = sum_{i->j} phi_j(w_ij, V_j) B_j`. The objective is
//! `S = sum_{i in inputs} psi_i(B_i)`. Its gradient uses a forward quantity
//! `C_j = sum_{i->j} C_i phi_j(w_ij, V_j)` seeded with `C_i = psi_i'(B_i)` on
//! the inputs, and a second backward quantity
//! `D_i = sum_{k->i} C_k B_i dphi_i/dV + sum_{i->j} s'(V_i) w_ij D_j`, giving
//! `dS/dw_ij = C_i B_j dphi_j/dw + a_i D_j`.
//!
//! With `phi = w^2 s'(V)^2`, `B_k = 1/sigma_k^2` and
//! `psi_i(b) = log(1/lambda_i + b)`, `S` is the log-determinant of the
//! layer-wise diagonal Gauss-Newton curvature of a decoder.

use nalgebra::DMatrix;

use crate::codelength::Decoder;
use crate::contractive::gaussian_variances;
use crate::error::{Error, Result};
use crate::net::{ActivationRecord, Network, BIAS};
use crate::priors::Prior;

/// Edge-local factor `phi_j(w, V)` of an edge into unit `j`, with partials.
pub trait EdgeFactor {
    fn value(&self, edge: usize, dst: usize, w: f64, v: f64) -> f64;
    fn d_weight(&self, edge: usize, dst: usize, w: f64, v: f64) -> f64;
    fn d_pre(&self, edge: usize, dst: usize, w: f64, v: f64) -> f64;
}

/// Function `psi_k` applied to `B` on input `k` (input order), with its
/// derivative.
pub trait InputPotential {
    fn value(&self, input: usize, b: f64) -> f64;
    fn derivative(&self, input: usize, b: f64) -> f64;
}

/// Per-unit scratch of the three passes. Bias entries are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationState {
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThreePassResult {
    pub s: f64,
    /// `dS/dw` in canonical edge order.
    pub weights: Vec<f64>,
    /// `dS/dy` on the input units, in input order.
    pub inputs: Vec<f64>,
    pub state: PropagationState,
}

fn finite_or_err(value: f64, what: &str, unit: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            location: format!("{what} at unit {unit}"),
            value,
        })
    }
}

/// `S` and its exact gradient with respect to every weight and every input.
pub fn three_pass_grad<F: EdgeFactor, P: InputPotential>(
    net: &Network,
    record: &ActivationRecord,
    phi: &F,
    psi: &P,
    b_out: &[f64],
) -> Result<ThreePassResult> {
    let n = net.num_units();
    if b_out.len() != net.output_dim() {
        return Err(Error::dim("output B values", net.output_dim(), b_out.len()));
    }
    if record.pre.len() != n || record.act.len() != n {
        return Err(Error::dim("activation record", n, record.pre.len()));
    }
    let edges = net.edges();
    let weights = net.weights();
    let order = net.order();

    let mut b = vec![0.0; n];
    for (k, &u) in net.outputs().iter().enumerate() {
        b[u] = b_out[k];
    }
    for &j in order.iter().rev() {
        if j == BIAS || net.is_input(j) {
            continue;
        }
        let bj = finite_or_err(b[j], "B", j)?;
        let vj = record.pre[j];
        for e in net.incoming(j) {
            b[edges[e].src] += phi.value(e, j, weights[e], vj) * bj;
        }
    }
    b[BIAS] = 0.0;

    let mut s = 0.0;
    let mut c = vec![0.0; n];
    for (k, &u) in net.inputs().iter().enumerate() {
        let bu = finite_or_err(b[u], "B", u)?;
        s += psi.value(k, bu);
        c[u] = finite_or_err(psi.derivative(k, bu), "C", u)?;
    }
    finite_or_err(s, "S", BIAS)?;

    // direct V-sensitivity of S through the factors on incoming edges
    let mut g = vec![0.0; n];
    for &j in order {
        if j == BIAS || net.is_input(j) {
            continue;
        }
        let vj = record.pre[j];
        let (mut cj, mut gj) = (0.0, 0.0);
        for e in net.incoming(j) {
            let ci = c[edges[e].src];
            let w = weights[e];
            cj += ci * phi.value(e, j, w, vj);
            gj += ci * phi.d_pre(e, j, w, vj);
        }
        c[j] = finite_or_err(cj, "C", j)?;
        g[j] = gj * b[j];
    }

    let mut grad = vec![0.0; edges.len()];
    let mut acc = vec![0.0; n];
    let mut d = vec![0.0; n];
    for &j in order.iter().rev() {
        if j == BIAS {
            continue;
        }
        let dj = g[j] + net.activation(j).derivative(record.pre[j]) * acc[j];
        d[j] = finite_or_err(dj, "D", j)?;
        if net.is_input(j) {
            continue;
        }
        let (bj, vj) = (b[j], record.pre[j]);
        for e in net.incoming(j) {
            let i = edges[e].src;
            let w = weights[e];
            grad[e] = c[i] * bj * phi.d_weight(e, j, w, vj) + record.act[i] * dj;
            acc[i] += w * dj;
        }
    }
    let inputs = net.inputs().iter().map(|&u| d[u]).collect();
    Ok(ThreePassResult {
        s,
        weights: grad,
        inputs,
        state: PropagationState { b, c, d },
    })
}

/// `phi_j(w, V) = w^2 s_j'(V)^2`, with `s'` and `s''` cached per unit.
#[derive(Debug, Clone)]
pub struct GaussNewtonFactor {
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl GaussNewtonFactor {
    pub fn new(net: &Network, record: &ActivationRecord) -> Self {
        let s1 = (0..net.num_units())
            .map(|u| net.activation(u).derivative(record.pre[u]))
            .collect();
        let s2 = (0..net.num_units())
            .map(|u| net.activation(u).second_derivative(record.pre[u]))
            .collect();
        GaussNewtonFactor { s1, s2 }
    }
}

impl EdgeFactor for GaussNewtonFactor {
    #[inline]
    fn value(&self, _: usize, dst: usize, w: f64, _: f64) -> f64 {
        let s = w * self.s1[dst];
        s * s
    }

    #[inline]
    fn d_weight(&self, _: usize, dst: usize, w: f64, _: f64) -> f64 {
        2.0 * w * self.s1[dst] * self.s1[dst]
    }

    #[inline]
    fn d_pre(&self, _: usize, dst: usize, w: f64, _: f64) -> f64 {
        2.0 * w * w * self.s1[dst] * self.s2[dst]
    }
}

/// `psi_i(b) = log(1/lambda_i + b)`.
#[derive(Debug, Clone)]
pub struct LogPrecision {
    pub inv_var: Vec<f64>,
}

impl InputPotential for LogPrecision {
    #[inline]
    fn value(&self, input: usize, b: f64) -> f64 {
        (self.inv_var[input] + b).ln()
    }

    #[inline]
    fn derivative(&self, input: usize, b: f64) -> f64 {
        1.0 / (self.inv_var[input] + b)
    }
}

/// `log det` of the layer-wise diagonal Gauss-Newton curvature with its
/// gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDetGrad {
    pub logdet: f64,
    pub weights: Vec<f64>,
    pub features: Vec<f64>,
}

/// `log det diag(1/lambda_i + h_i)` at `y0` and its exact gradient with
/// respect to the decoder weights and to `y0`. The prior variances are
/// constants here.
pub fn layerwise_logdet_grad(dec: &Decoder, prior: &Prior, y0: &[f64], x: &[f64]) -> Result<LogDetGrad> {
    if x.len() != dec.data_dim() {
        return Err(Error::dim("log-det gradient target", dec.data_dim(), x.len()));
    }
    let var = gaussian_variances(prior, dec.feature_dim(), "log-det gradient")?;
    let record = dec.net.forward(y0)?;
    let phi = GaussNewtonFactor::new(&dec.net, &record);
    let psi = LogPrecision {
        inv_var: var.iter().map(|l| 1.0 / l).collect(),
    };
    let b_out = dec.output.precisions();
    let r = three_pass_grad(&dec.net, &record, &phi, &psi, &b_out)?;
    Ok(LogDetGrad {
        logdet: r.s,
        weights: r.weights,
        features: r.inputs,
    })
}

/// Largest number of paths the enumeration oracles will visit.
pub const PATH_CAP: usize = 1_000_000;

/// `sum over directed paths from -> to of prod factor(edge)`, with the empty
/// path contributing 1 when `from == to`.
pub fn path_sum<F: Fn(usize) -> f64>(net: &Network, from: usize, to: usize, factor: F) -> Result<f64> {
    fn walk<F: Fn(usize) -> f64>(
        net: &Network,
        unit: usize,
        to: usize,
        product: f64,
        factor: &F,
        visited: &mut usize,
    ) -> Result<f64> {
        *visited += 1;
        if *visited > PATH_CAP {
            return Err(Error::PathExplosion(PATH_CAP));
        }
        if unit == to {
            return Ok(product);
        }
        let mut total = 0.0;
        for &e in net.outgoing(unit) {
            total += walk(net, net.edges()[e].dst, to, product * factor(e), factor, visited)?;
        }
        Ok(total)
    }
    let mut visited = 0;
    walk(net, from, to, 1.0, &factor, &mut visited)
}

/// Transfer rates `tau[l][m]`: the path sum of `phi` over all paths from
/// `l` to `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferRateTable {
    pub tau: DMatrix<f64>,
}

impl TransferRateTable {
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.tau[(from, to)]
    }
}

/// Brute-force transfer rates by explicit path enumeration.
pub fn transfer_rates_oracle<F: EdgeFactor>(net: &Network, phi: &F, record: &ActivationRecord) -> Result<TransferRateTable> {
    let n = net.num_units();
    let factor = |e: usize| {
        let dst = net.edges()[e].dst;
        phi.value(e, dst, net.weights()[e], record.pre[dst])
    };
    let mut tau = DMatrix::zeros(n, n);
    for l in 0..n {
        for m in 0..n {
            tau[(l, m)] = path_sum(net, l, m, factor)?;
        }
    }
    Ok(TransferRateTable { tau })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hessian::gn_layerwise_diag;
    use crate::net::{random_dag, Activation};
    use crate::outvar::OutputModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `phi = a w^2 (1 + b tanh V) + c w` with per-edge constants.
    struct Smooth {
        coef: Vec<(f64, f64, f64)>,
    }

    impl Smooth {
        fn random(rng: &mut ChaCha8Rng, edges: usize) -> Self {
            Smooth {
                coef: (0..edges)
                    .map(|_| (rng.random_range(0.2..1.0), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
                    .collect(),
            }
        }
    }

    impl EdgeFactor for Smooth {
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
    struct Wavy(Vec<f64>);

    impl InputPotential for Wavy {
        fn value(&self, i: usize, b: f64) -> f64 {
            (self.0[i] * b).sin() + 0.1 * b * b
        }
        fn derivative(&self, i: usize, b: f64) -> f64 {
            self.0[i] * (self.0[i] * b).cos() + 0.2 * b
        }
    }

    struct Identity;

    impl InputPotential for Identity {
        fn value(&self, _: usize, b: f64) -> f64 {
            b
        }
        fn derivative(&self, _: usize, _: f64) -> f64 {
            1.0
        }
    }

    /// `phi = k_e w`, independent of `V`.
    struct Linear(Vec<f64>);

    impl EdgeFactor for Linear {
        fn value(&self, e: usize, _: usize, w: f64, _: f64) -> f64 {
            self.0[e] * w
        }
        fn d_weight(&self, e: usize, _: usize, _: f64, _: f64) -> f64 {
            self.0[e]
        }
        fn d_pre(&self, _: usize, _: usize, _: f64, _: f64) -> f64 {
            0.0
        }
    }

    fn s_value<F: EdgeFactor, P: InputPotential>(net: &Network, y: &[f64], phi: &F, psi: &P, b_out: &[f64]) -> f64 {
        let rec = net.forward(y).unwrap();
        three_pass_grad(net, &rec, phi, psi, b_out).unwrap().s
    }

    fn check_against_fd<F: EdgeFactor, P: InputPotential>(net: &Network, y: &[f64], phi: &F, psi: &P, b_out: &[f64], tol: f64) {
        let rec = net.forward(y).unwrap();
        let r = three_pass_grad(net, &rec, phi, psi, b_out).unwrap();
        let h = 1e-6;
        let mut probe = net.clone();
        let mut fd = Vec::new();
        for e in 0..net.num_edges() {
            let w = net.weights()[e];
            probe.weights_mut()[e] = w + h;
            let p = s_value(&probe, y, phi, psi, b_out);
            probe.weights_mut()[e] = w - h;
            let m = s_value(&probe, y, phi, psi, b_out);
            probe.weights_mut()[e] = w;
            fd.push((p - m) / (2.0 * h));
        }
        let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-8);
        for (e, (a, b)) in r.weights.iter().zip(&fd).enumerate() {
            assert!((a - b).abs() <= tol * b.abs().max(1e-2 * scale), "edge {e}: {a} vs {b}");
        }
        for k in 0..y.len() {
            let mut yp = y.to_vec();
            let mut ym = y.to_vec();
            yp[k] += h;
            ym[k] -= h;
            let v = (s_value(net, &yp, phi, psi, b_out) - s_value(net, &ym, phi, psi, b_out)) / (2.0 * h);
            assert!((r.inputs[k] - v).abs() <= tol * v.abs().max(1e-2 * scale), "input {k}");
        }
    }

    #[test]
    fn v_independent_factors_have_no_d_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = random_dag(&mut rng, 2, 2, 9, 18).unwrap();
        let phi = Linear((0..net.num_edges()).map(|_| rng.random_range(-1.0..1.0)).collect());
        let rec = net.forward(&[0.3, -0.8]).unwrap();
        let r = three_pass_grad(&net, &rec, &phi, &Identity, &[1.0, 2.0]).unwrap();
        assert!(r.state.d.iter().all(|&d| d == 0.0));
        for (e, g) in r.weights.iter().enumerate() {
            let edge = net.edges()[e];
            assert_eq!(*g, r.state.c[edge.src] * r.state.b[edge.dst] * phi.0[e]);
        }
    }

    #[test]
    fn chain_gauss_newton_matches_fd() {
        let net = Network::new(
            vec![Activation::Identity, Activation::Identity, Activation::Sigmoid, Activation::Tanh],
            vec![(0, 2, 0.1), (1, 2, 0.8), (0, 3, -0.2), (2, 3, 1.3)],
            vec![1],
            vec![3],
        )
        .unwrap();
        let y = [0.4];
        let rec = net.forward(&y).unwrap();
        let phi = GaussNewtonFactor::new(&net, &rec);
        let psi = LogPrecision { inv_var: vec![0.5] };
        // phi's cached derivatives belong to one record; rebuild per probe
        let r = three_pass_grad(&net, &rec, &phi, &psi, &[2.0]).unwrap();
        let s_at = |n: &Network, y: &[f64]| {
            let rec = n.forward(y).unwrap();
            three_pass_grad(n, &rec, &GaussNewtonFactor::new(n, &rec), &psi, &[2.0]).unwrap().s
        };
        let h = 1e-6;
        let mut probe = net.clone();
        for e in 0..net.num_edges() {
            let w = net.weights()[e];
            probe.weights_mut()[e] = w + h;
            let p = s_at(&probe, &y);
            probe.weights_mut()[e] = w - h;
            let m = s_at(&probe, &y);
            probe.weights_mut()[e] = w;
            let fd = (p - m) / (2.0 * h);
            assert!((r.weights[e] - fd).abs() <= 1e-6 * fd.abs().max(1e-6), "edge {e}");
        }
    }

    #[test]
    fn random_dags_with_random_factors_match_fd() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let units = rng.random_range(6..=12);
            let inputs = rng.random_range(1..=3);
            let outputs = rng.random_range(1..=2);
            let net = random_dag(&mut rng, inputs, outputs, units, 25).unwrap();
            let phi = Smooth::random(&mut rng, net.num_edges());
            let psi = Wavy((0..inputs).map(|_| rng.random_range(0.3..1.5)).collect());
            let y: Vec<f64> = (0..inputs).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b_out: Vec<f64> = (0..outputs).map(|_| rng.random_range(0.5..2.0)).collect();
            check_against_fd(&net, &y, &phi, &psi, &b_out, 1e-5);
        }
    }

    fn decoder(seed: u64, sizes: &[usize], act: Activation) -> Decoder {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network::layered(sizes, act, act).unwrap();
        net.init_weights(1.3, &mut rng);
        let dx = *sizes.last().unwrap();
        Decoder::new(net, OutputModel::fixed(vec![0.5; dx]).unwrap()).unwrap()
    }

    #[test]
    fn logdet_equals_layerwise_diagonal() {
        let dec = decoder(2, &[2, 4, 3], Activation::Sigmoid);
        let prior = Prior::gaussian(vec![0.7, 1.9]).unwrap();
        let y = [0.2, -0.5];
        let x = [0.0; 3];
        let r = layerwise_logdet_grad(&dec, &prior, &y, &x).unwrap();
        let h = gn_layerwise_diag(&dec, &prior, &y, &x).unwrap().diagonal();
        assert_eq!(r.logdet, h.iter().map(|v| v.ln()).sum::<f64>());
    }

    #[test]
    fn single_edge_symbolic_derivative() {
        let (w, sigma, lambda) = (0.7_f64, 0.4_f64, 2.5_f64);
        let net = Network::new(
            vec![Activation::Identity; 3],
            vec![(0, 2, 0.3), (1, 2, w)],
            vec![1],
            vec![2],
        )
        .unwrap();
        let dec = Decoder::new(net, OutputModel::fixed(vec![sigma]).unwrap()).unwrap();
        let prior = Prior::gaussian(vec![lambda]).unwrap();
        let r = layerwise_logdet_grad(&dec, &prior, &[0.1], &[0.0]).unwrap();
        let expected = 2.0 * w / (sigma * sigma / lambda + w * w);
        assert!((r.weights[1] - expected).abs() < 1e-8);
        assert_eq!(r.weights[0], 0.0);
    }

    #[test]
    fn multilayer_logdet_gradient_matches_fd() {
        for (seed, act) in [(3, Activation::Sigmoid), (4, Activation::Tanh), (5, Activation::Identity)] {
            let dec = decoder(seed, &[2, 3, 3, 4], act);
            let prior = Prior::gaussian(vec![1.2, 0.6]).unwrap();
            let y = [0.3, -0.1];
            let x = [0.0; 4];
            let r = layerwise_logdet_grad(&dec, &prior, &y, &x).unwrap();
            let h = 1e-6;
            let mut probe = dec.clone();
            let scale = r.weights.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for e in 0..dec.net.num_edges() {
                let w = dec.net.weights()[e];
                probe.net.weights_mut()[e] = w + h;
                let p = layerwise_logdet_grad(&probe, &prior, &y, &x).unwrap().logdet;
                probe.net.weights_mut()[e] = w - h;
                let m = layerwise_logdet_grad(&probe, &prior, &y, &x).unwrap().logdet;
                probe.net.weights_mut()[e] = w;
                let fd = (p - m) / (2.0 * h);
                assert!((r.weights[e] - fd).abs() <= 1e-5 * fd.abs().max(1e-2 * scale), "{act:?} edge {e}: {} vs {fd} scale {scale}", r.weights[e]);
            }
        }
    }

    #[test]
    fn transfer_rate_identities() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
            let inputs = rng.random_range(1..=3);
            let outputs = rng.random_range(1..=3);
            let units = rng.random_range(1 + inputs + outputs..=12);
            let net = random_dag(&mut rng, inputs, outputs, units, 25).unwrap();
            let y: Vec<f64> = (0..inputs).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rec = net.forward(&y).unwrap();
            let phi = Smooth::random(&mut rng, net.num_edges());
            let psi = Wavy((0..inputs).map(|_| rng.random_range(0.3..1.5)).collect());
            let b_out: Vec<f64> = (0..outputs).map(|_| rng.random_range(0.5..2.0)).collect();
            let r = three_pass_grad(&net, &rec, &phi, &psi, &b_out).unwrap();
            let t = transfer_rates_oracle(&net, &phi, &rec).unwrap();
            let st = &r.state;
            let tol = |v: f64| 1e-12 * (1.0 + v.abs());
            for m in 0..units {
                assert_eq!(t.get(m, m), 1.0);
            }
            // B_i = sum_k tau_i^k B_k
            for i in 1..units {
                let v: f64 = net.outputs().iter().zip(&b_out).map(|(&k, bk)| t.get(i, k) * bk).sum();
                assert!((st.b[i] - v).abs() <= tol(v), "B at {i}");
            }
            // C_m = sum_i psi_i'(B_i) tau_i^m
            for m in 1..units {
                let v: f64 = net
                    .inputs()
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| psi.derivative(k, st.b[i]) * t.get(i, m))
                    .sum();
                assert!((st.c[m] - v).abs() <= tol(v), "C at {m}");
            }
            // D_n = sum_i psi_i' sum_k B_k dtau_i^k/dV_n, where V_n moves
            // V_m by the path sum of s'(V_p) w_pq, and tau_i^k responds to
            // V_m through the factors of edges entering m
            let dv = |n: usize, m: usize| {
                path_sum(&net, n, m, |e| {
                    let p = net.edges()[e].src;
                    net.activation(p).derivative(rec.pre[p]) * net.weights()[e]
                })
                .unwrap()
            };
            for n in 1..units {
                let mut total = 0.0;
                for (k_in, &i) in net.inputs().iter().enumerate() {
                    let dpsi = psi.derivative(k_in, st.b[i]);
                    for (&k, bk) in net.outputs().iter().zip(&b_out) {
                        let mut dtau = 0.0;
                        for m in 1..units {
                            let rate = dv(n, m);
                            if rate == 0.0 {
                                continue;
                            }
                            let partial: f64 = net
                                .incoming(m)
                                .map(|e| {
                                    let p = net.edges()[e].src;
                                    t.get(i, p) * phi.d_pre(e, m, net.weights()[e], rec.pre[m]) * t.get(m, k)
                                })
                                .sum();
                            dtau += partial * rate;
                        }
                        total += dpsi * bk * dtau;
                    }
                }
                assert!((st.d[n] - total).abs() <= 1e-10 * (1.0 + total.abs()), "D at {n}: {} vs {total}", st.d[n]);
            }
        }
    }

    #[test]
    fn no_path_gives_zero_rate() {
        let net = Network::new(
            vec![Activation::Identity; 4],
            vec![(0, 2, 1.0), (0, 3, 1.0), (1, 3, 1.0)],
            vec![1],
            vec![2, 3],
        )
        .unwrap();
        let rec = net.forward(&[0.0]).unwrap();
        let t = transfer_rates_oracle(&net, &Linear(vec![1.0; 3]), &rec).unwrap();
        assert_eq!(t.get(1, 2), 0.0);
        assert_eq!(t.get(1, 3), 1.0);
    }

    #[test]
    fn reports_non_finite_unit() {
        let net = Network::new(
            vec![Activation::Identity; 3],
            vec![(0, 2, 0.0), (1, 2, 1.0)],
            vec![1],
            vec![2],
        )
        .unwrap();
        let rec = net.forward(&[0.0]).unwrap();
        let psi = LogPrecision { inv_var: vec![-1.0] };
        let phi = GaussNewtonFactor::new(&net, &rec);
        match three_pass_grad(&net, &rec, &phi, &psi, &[1.0]) {
            Err(Error::NonFinite { location, .. }) => assert!(location.contains("unit")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn descent_on_penalized_objective() {
        // L_rec - log rho(y) + 1/2 log det H_hat, decoder weights only
        let mut dec = decoder(7, &[2, 3, 2], Activation::Tanh);
        let prior = Prior::gaussian(vec![1.0, 1.0]).unwrap();
        let y = [0.4, -0.3];
        let x = [0.5, -0.2];
        let objective = |d: &Decoder| {
            crate::codelength::reconstruction_error(d, &y, &x).unwrap()
                + 0.5 * layerwise_logdet_grad(d, &prior, &y, &x).unwrap().logdet
        };
        let mut last = objective(&dec);
        for _ in 0..20 {
            let rec = dec.net.forward(&y).unwrap();
            let seed = dec.output.neg_log_likelihood_grad(&rec.output, &x);
            let g_rec = dec.net.backprop(&rec, &seed).unwrap().weights;
            let g_ld = layerwise_logdet_grad(&dec, &prior, &y, &x).unwrap().weights;
            let step: Vec<f64> = g_rec.iter().zip(&g_ld).map(|(a, b)| 0.01 * (a + 0.5 * b)).collect();
            for (w, s) in dec.net.weights_mut().iter_mut().zip(step) {
                *w -= s;
            }
            let now = objective(&dec);
            assert!(now < last);
            last = now;
        }
    }
}
