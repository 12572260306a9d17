// Evaluates the denoising bound of a linear decoder with one Gaussian
// feature four ways: Monte Carlo, closed form, second-order expansion and
// the quadrature oracle.

use mdlae::codelength::{l_gen_exact, Decoder, QuadratureSpec};
use mdlae::hessian::gauss_newton_full;
use mdlae::linalg::Covariance;
use mdlae::net::{Activation, Network};
use mdlae::noise::{denoising_bound_affine, denoising_bound_with_stderr, taylor_bound};
use mdlae::outvar::OutputModel;
use mdlae::priors::Prior;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> mdlae::Result<()> {
    let mut net = Network::layered(&[1, 3], Activation::Identity, Activation::Identity)?;
    net.set_weights(&[0.2, 1.0, -0.1, -0.7, 0.0, 0.4])?;
    let decoder = Decoder::new(net, OutputModel::fixed(vec![0.3, 0.4, 0.5])?)?;
    let prior = Prior::gaussian(vec![1.0])?;
    let x = [1.1, -0.6, 0.3];
    let mean = [0.9];
    let exact = l_gen_exact(&prior, &decoder, &x, &QuadratureSpec::default())?.l_gen;
    let h = gauss_newton_full(&prior, &decoder, &mean, &x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    println!("exact codelength {exact:.6}");
    println!("{:>8} {:>12} {:>12} {:>12} {:>10}", "var", "closed form", "taylor", "monte carlo", "stderr");
    for var in [0.01, 0.05, 0.2, 1.0] {
        let cov = Covariance::Diagonal(vec![var]);
        let closed = denoising_bound_affine(&prior, &decoder, &mean, &cov, &x)?;
        let taylor = taylor_bound(&prior, &decoder, &mean, &cov, &x, &h)?;
        let mc = denoising_bound_with_stderr(&prior, &decoder, &mean, &cov, &x, 20_000, &mut rng)?;
        println!("{var:>8} {closed:>12.6} {taylor:>12.6} {:>12.6} {:>10.1e}", mc.value, mc.std_err);
        assert!(closed >= exact && (closed - taylor).abs() < 1e-10);
    }
    Ok(())
}

fn main() -> mdlae::Result<()> {
    run_example()
}
