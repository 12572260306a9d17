// Gradient of the log-determinant of the layer-wise Gauss-Newton
// curvature with respect to every decoder weight, checked by central
// differences.

use mdlae::codelength::Decoder;
use mdlae::logdet_grad::layerwise_logdet_grad;
use mdlae::net::{Activation, Network};
use mdlae::outvar::OutputModel;
use mdlae::priors::Prior;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> mdlae::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut net = Network::layered(&[2, 5, 3], Activation::Tanh, Activation::Identity)?;
    net.init_weights(1.0, &mut rng);
    let mut decoder = Decoder::new(net, OutputModel::fixed(vec![0.5; 3])?)?;
    let prior = Prior::gaussian(vec![1.0, 0.5])?;
    let y0 = [0.3, -0.8];
    let x = [0.1, 0.4, -0.2];

    let g = layerwise_logdet_grad(&decoder, &prior, &y0, &x)?;
    println!("log det {:.6} over {} weights", g.logdet, g.weights.len());
    let base = decoder.net.weights().to_vec();
    let step = 1e-6;
    let mut worst = 0.0f64;
    for e in 0..base.len() {
        let mut w = base.clone();
        w[e] += step;
        decoder.net.set_weights(&w)?;
        let plus = layerwise_logdet_grad(&decoder, &prior, &y0, &x)?.logdet;
        w[e] -= 2.0 * step;
        decoder.net.set_weights(&w)?;
        let minus = layerwise_logdet_grad(&decoder, &prior, &y0, &x)?.logdet;
        worst = worst.max((g.weights[e] - (plus - minus) / (2.0 * step)).abs());
    }
    decoder.net.set_weights(&base)?;
    println!("feature gradient {:?}", g.features);
    println!("largest weight-gradient difference from central differences {worst:.2e}");
    assert!(worst < 1e-6);
    Ok(())
}

fn main() -> mdlae::Result<()> {
    run_example()
}
