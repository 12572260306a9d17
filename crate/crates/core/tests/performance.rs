//! Cost of the three-pass gradient relative to ordinary backpropagation.

mod common;

use std::time::{Duration, Instant};

use common::*;
use mdlae::logdet_grad::{three_pass_grad, GaussNewtonFactor, LogPrecision};
use mdlae::net::Activation;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const REPEATS: usize = 9;
const MAX_RATIO: f64 = 4.0;

fn fastest(mut f: impl FnMut()) -> Duration {
    f();
    (0..REPEATS)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed()
        })
        .min()
        .unwrap()
}

#[test]
fn three_pass_gradient_costs_a_few_backprops() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let net = random_layered(&mut rng, &[300, 300, 30], Activation::Tanh, Activation::Identity, 0.1);
    assert!(net.num_edges() > 99_000);
    let y = random_vec(&mut rng, 300, -1.0, 1.0);
    let seed = random_vec(&mut rng, 30, -1.0, 1.0);
    let psi = LogPrecision { inv_var: vec![1.0; 300] };
    let b_out = vec![1.0; 30];

    let plain = fastest(|| {
        let rec = net.forward(&y).unwrap();
        std::hint::black_box(net.backprop(&rec, &seed).unwrap());
    });
    let rec = net.forward(&y).unwrap();
    let three = fastest(|| {
        let phi = GaussNewtonFactor::new(&net, &rec);
        std::hint::black_box(three_pass_grad(&net, &rec, &phi, &psi, &b_out).unwrap());
    });
    let ratio = three.as_secs_f64() / plain.as_secs_f64();
    println!("forward+backprop {plain:?}, three-pass {three:?}, ratio {ratio:.2}");
    assert!(ratio <= MAX_RATIO, "ratio {ratio:.2}");
}
