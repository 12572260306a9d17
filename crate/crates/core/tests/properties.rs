//! Randomized invariants over networks, priors, codelengths and bounds.

mod common;

use common::*;
use mdlae::codelength::{expected_reconstruction_error, l_gen_exact, reconstruction_error, two_part_codelength, QuadratureSpec};
use mdlae::contractive::{contractive_bound, ContractiveVariant};
use mdlae::hessian::{
    gauss_newton_full, gn_layerwise_diag, hessian_fd, noise_objective, optimal_noise_bound, HessianKind,
    HessianResult, HessianSource, NoiseMode, DEFAULT_FD_STEP,
};
use mdlae::linalg::Covariance;
use mdlae::net::{finite_diff_grad, random_dag, Activation, Network};
use mdlae::noise::{denoising_bound_affine, taylor_bound};
use mdlae::outvar::{gaussian_codelength, log_error_objective, mean_square_errors, optimal_sigma_out};
use mdlae::priors::{binary_point, kl_to_prior, FeatureDistribution, Prior};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_is_bitwise_deterministic(seed in any::<u64>()) {
        let mut r = rng(seed);
        let net = random_dag(&mut r, 3, 2, 20, 60).unwrap();
        let y = random_vec(&mut r, 3, -2.0, 2.0);
        prop_assert_eq!(net.forward(&y).unwrap(), net.forward(&y).unwrap());
    }

    #[test]
    fn backprop_matches_finite_differences(seed in any::<u64>(), units in 8usize..=50) {
        let mut r = rng(seed);
        let inputs = r.random_range(1..=4);
        let outputs = r.random_range(1..=3);
        let net = random_dag(&mut r, inputs, outputs, units.max(1 + inputs + outputs), 3 * units).unwrap();
        let y = random_vec(&mut r, inputs, -1.0, 1.0);
        let target = random_vec(&mut r, outputs, -1.0, 1.0);
        let loss = |out: &[f64]| out.iter().zip(&target).map(|(o, t)| 0.5 * (o - t) * (o - t)).sum::<f64>();
        let rec = net.forward(&y).unwrap();
        let seed_grad: Vec<f64> = rec.output.iter().zip(&target).map(|(o, t)| o - t).collect();
        let analytic = net.backprop(&rec, &seed_grad).unwrap().weights;
        let numeric = finite_diff_grad(&net, &y, loss, 1e-6).unwrap();
        let err = max_relative_error(&analytic, &numeric, 1e-2);
        prop_assert!(err < 1e-5, "relative error {}", err);
    }

    #[test]
    fn relabeling_units_preserves_activities(seed in any::<u64>()) {
        let mut r = rng(seed);
        let net = random_dag(&mut r, 2, 2, 14, 40).unwrap();
        let n = net.num_units();
        let mut perm: Vec<usize> = (1..n).collect();
        perm.shuffle(&mut r);
        let map: Vec<usize> = std::iter::once(0).chain(perm).collect();
        let mut acts = vec![Activation::Identity; n];
        for u in 0..n {
            acts[map[u]] = net.activation(u);
        }
        let edges = net
            .edges()
            .iter()
            .zip(net.weights())
            .map(|(e, &w)| (map[e.src], map[e.dst], w))
            .collect();
        let relabeled = Network::new(
            acts,
            edges,
            net.inputs().iter().map(|&u| map[u]).collect(),
            net.outputs().iter().map(|&u| map[u]).collect(),
        )
        .unwrap();
        let y = random_vec(&mut r, 2, -1.0, 1.0);
        let a = net.forward(&y).unwrap();
        let b = relabeled.forward(&y).unwrap();
        for (u, &m) in map.iter().enumerate() {
            prop_assert!((a.act[u] - b.act[m]).abs() <= 1e-12 * (1.0 + a.act[u].abs()));
        }
    }

    #[test]
    fn discrete_kl_is_nonnegative_and_zero_on_equality(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = r.random_range(1..=5);
        let q = random_vec(&mut r, d, 0.05, 0.95);
        let p = random_vec(&mut r, d, 0.0, 1.0);
        let prior = Prior::bernoulli(q.clone()).unwrap();
        let kl = kl_to_prior(&FeatureDistribution::BernoulliVec { p }, &prior).unwrap();
        prop_assert!(kl >= 0.0);
        let same = kl_to_prior(&FeatureDistribution::BernoulliVec { p: q }, &prior).unwrap();
        prop_assert!(same.abs() < 1e-12);
    }

    #[test]
    fn discrete_prior_mass_sums_to_one(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = r.random_range(1..=8);
        let prior = Prior::bernoulli(random_vec(&mut r, d, 0.01, 0.99)).unwrap();
        let total: f64 = (0..1usize << d).map(|m| prior.log_density(&binary_point(m, d)).unwrap().exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bounds_dominate_the_generative_codelength(seed in any::<u64>()) {
        let mut r = rng(seed);
        let dy = r.random_range(1..=4);
        let dx = r.random_range(1..=4);
        let dec = random_decoder(&mut r, &[dy, 3, dx], Activation::Sigmoid, Activation::Identity);
        let prior = Prior::bernoulli(random_vec(&mut r, dy, 0.1, 0.9)).unwrap();
        let fd = FeatureDistribution::BernoulliVec { p: random_vec(&mut r, dy, 0.0, 1.0) };
        let x = random_vec(&mut r, dx, -2.0, 2.0);
        let l_gen = l_gen_exact(&prior, &dec, &x, &QuadratureSpec::default()).unwrap().l_gen;
        let e_rec = expected_reconstruction_error(&dec, &fd, &x, 1, &mut r).unwrap();
        let f_gen = e_rec + kl_to_prior(&fd, &prior).unwrap();
        let two_part = two_part_codelength(&prior, &dec, &fd, &x).unwrap();
        prop_assert!(f_gen >= l_gen - 1e-10);
        prop_assert!(two_part >= l_gen - 1e-10);
        prop_assert!((two_part - fd.entropy().unwrap() - f_gen).abs() < 1e-10);
    }

    /// Summed two-part codelengths split into reconstruction, the KL of
    /// the averaged feature distribution to the prior, and its entropy.
    #[test]
    fn two_part_decomposes_over_a_dataset(seed in any::<u64>()) {
        let mut r = rng(seed);
        let dy = r.random_range(1..=3);
        let dx = r.random_range(1..=3);
        let n = r.random_range(1..=6);
        let dec = random_decoder(&mut r, &[dy, dx], Activation::Tanh, Activation::Identity);
        let q = random_vec(&mut r, dy, 0.1, 0.9);
        let prior = Prior::bernoulli(q.clone()).unwrap();
        let mut two_part = 0.0;
        let mut e_rec = 0.0;
        let mut mixture = vec![0.0; 1 << dy];
        for _ in 0..n {
            let p = random_vec(&mut r, dy, 0.0, 1.0);
            let x = random_vec(&mut r, dx, -1.0, 1.0);
            let fd = FeatureDistribution::BernoulliVec { p: p.clone() };
            two_part += two_part_codelength(&prior, &dec, &fd, &x).unwrap();
            e_rec += expected_reconstruction_error(&dec, &fd, &x, 1, &mut r).unwrap();
            for (mask, m) in mixture.iter_mut().enumerate() {
                let mass: f64 = (0..dy).map(|i| if (mask >> i) & 1 == 1 { p[i] } else { 1.0 - p[i] }).product();
                *m += mass / n as f64;
            }
        }
        let mut kl = 0.0;
        let mut ent = 0.0;
        for (mask, &m) in mixture.iter().enumerate() {
            if m > 0.0 {
                let rho = prior.log_density(&binary_point(mask, dy)).unwrap();
                kl += m * (m.ln() - rho);
                ent -= m * m.ln();
            }
        }
        let expected = e_rec + n as f64 * (kl + ent);
        prop_assert!((two_part - expected).abs() < 1e-10 * (1.0 + expected.abs()));
    }

    #[test]
    fn noise_objective_is_bounded_by_its_minimum(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = r.random_range(1..=5);
        let h = random_spd(&mut r, d, 0.1);
        let sigma = Covariance::Full(random_spd(&mut r, d, 0.01) * r.random_range(0.05..5.0));
        let value = noise_objective(&sigma, &h).unwrap();
        prop_assert!(value >= h.determinant().ln() + d as f64 - 1e-10);
    }

    #[test]
    fn linear_decoders_make_every_second_order_bound_exact(seed in any::<u64>()) {
        let mut r = rng(seed);
        let dy = r.random_range(1..=4);
        let dx = r.random_range(1..=4);
        let dec = random_decoder(&mut r, &[dy, dx], Activation::Identity, Activation::Identity);
        let prior = Prior::gaussian(random_vec(&mut r, dy, 0.3, 2.0)).unwrap();
        let y0 = random_vec(&mut r, dy, -1.0, 1.0);
        let x = random_vec(&mut r, dx, -2.0, 2.0);
        let gn = gauss_newton_full(&prior, &dec, &y0, &x).unwrap();
        let m = gn.to_matrix();
        prop_assert!((&m - m.transpose()).abs().max() < 1e-8);
        let fd = hessian_fd(&prior, &dec, &y0, &x, DEFAULT_FD_STEP).unwrap().to_matrix();
        prop_assert!((&fd - fd.transpose()).abs().max() < 1e-8);
        let layerwise = gn_layerwise_diag(&dec, &prior, &y0, &x).unwrap().diagonal();
        for i in 0..dy {
            prop_assert!((layerwise[i] - m[(i, i)]).abs() < 1e-12 * (1.0 + m[(i, i)]));
        }
        let (_, full) = optimal_noise_bound(&prior, &dec, &y0, &x, &gn, NoiseMode::Full).unwrap();
        let diag_h = HessianResult { kind: HessianKind::Diagonal(m.diagonal().iter().copied().collect()), source: HessianSource::GnFull };
        let (_, diag) = optimal_noise_bound(&prior, &dec, &y0, &x, &diag_h, NoiseMode::Diagonal).unwrap();
        let c_full = contractive_bound(&prior, &dec, &y0, &x, ContractiveVariant::Full).unwrap();
        let c_diag = contractive_bound(&prior, &dec, &y0, &x, ContractiveVariant::Diag).unwrap();
        prop_assert!((c_full - full).abs() < 1e-12 * (1.0 + full.abs()));
        prop_assert!((c_diag - diag).abs() < 1e-12 * (1.0 + diag.abs()));
        let cov = Covariance::Full(random_spd(&mut r, dy, 0.05));
        let taylor = taylor_bound(&prior, &dec, &y0, &cov, &x, &gn).unwrap();
        let exact = denoising_bound_affine(&prior, &dec, &y0, &cov, &x).unwrap();
        prop_assert!((taylor - exact).abs() < 1e-10);
    }

    #[test]
    fn one_dimensional_denoising_bound_dominates_the_oracle(seed in any::<u64>()) {
        let mut r = rng(seed);
        let dx = r.random_range(1..=3);
        let dec = random_decoder(&mut r, &[1, dx], Activation::Identity, Activation::Identity);
        let prior = Prior::gaussian(vec![r.random_range(0.3..2.0)]).unwrap();
        let x = random_vec(&mut r, dx, -1.5, 1.5);
        let mean = random_vec(&mut r, 1, -1.0, 1.0);
        let cov = Covariance::Diagonal(vec![r.random_range(0.01..1.0)]);
        let bound = denoising_bound_affine(&prior, &dec, &mean, &cov, &x).unwrap();
        let l_gen = l_gen_exact(&prior, &dec, &x, &QuadratureSpec::default()).unwrap().l_gen;
        prop_assert!(bound >= l_gen - 1e-8);
    }

    #[test]
    fn optimal_sigma_minimizes_the_gaussian_codelength(seed in any::<u64>(), factor in 0.2f64..5.0) {
        let mut r = rng(seed);
        let d = r.random_range(1..=4);
        let n = r.random_range(2..=20);
        let residuals: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, d, -2.0, 2.0)).collect();
        let best = optimal_sigma_out(&mean_square_errors(&residuals), 0.0);
        let other: Vec<f64> = best.iter().map(|s| s * factor).collect();
        prop_assert!(gaussian_codelength(&residuals, &other) >= gaussian_codelength(&residuals, &best) - 1e-12);
    }

    #[test]
    fn log_error_objective_ignores_component_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut e = random_vec(&mut r, 5, 0.01, 3.0);
        let eps = r.random_range(0.0..0.1);
        let before = log_error_objective(&e, eps, 17);
        e.shuffle(&mut r);
        prop_assert!((log_error_objective(&e, eps, 17) - before).abs() < 1e-12);
    }
}

#[test]
fn reconstruction_error_of_exact_match_is_the_normalizer() {
    let mut r = rng(1);
    let dec = random_decoder(&mut r, &[2, 3], Activation::Tanh, Activation::Identity);
    let y = [0.3, -0.4];
    let x = dec.reconstruct(&y).unwrap();
    let expected: f64 = dec
        .output
        .sigma
        .iter()
        .map(|s| s.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln())
        .sum();
    assert!((reconstruction_error(&dec, &y, &x).unwrap() - expected).abs() < 1e-14);
}
