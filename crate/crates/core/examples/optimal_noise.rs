// The best Gaussian feature noise is the inverse curvature of the loss.
// Scaling it up or down, or dropping its correlations, costs nats.

use mdlae::codelength::Decoder;
use mdlae::hessian::{gauss_newton_full, noise_objective, optimal_noise, NoiseMode};
use mdlae::linalg::Covariance;
use mdlae::net::{Activation, Network};
use mdlae::noise::denoising_bound_affine;
use mdlae::outvar::OutputModel;
use mdlae::priors::Prior;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> mdlae::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut net = Network::layered(&[3, 6], Activation::Identity, Activation::Identity)?;
    net.init_weights(1.0, &mut rng);
    let decoder = Decoder::new(net, OutputModel::fixed(vec![0.4; 6])?)?;
    let prior = Prior::gaussian(vec![1.0, 2.0, 0.5])?;
    let x = [0.5, -1.0, 0.2, 0.9, -0.3, 0.1];
    let y0 = [0.3, -0.2, 0.6];
    let h = gauss_newton_full(&prior, &decoder, &y0, &x)?;
    let hm = h.to_matrix();
    let full = optimal_noise(&h, NoiseMode::Full)?;
    let diag = optimal_noise(&h, NoiseMode::Diagonal)?;

    println!("log det H + d = {:.6}", hm.determinant().ln() + 3.0);
    let scaled = |c: f64| Covariance::Full(full.cov.to_matrix() * c);
    let rows = [
        ("H^-1", full.cov.clone()),
        ("diag(1/H_ii)", diag.cov.clone()),
        ("0.5 H^-1", scaled(0.5)),
        ("2 H^-1", scaled(2.0)),
        ("0.1 I", Covariance::scaled_identity(3, 0.1)),
    ];
    println!("{:>14} {:>16} {:>16}", "noise", "-logdet+Tr(SH)", "denoising bound");
    for (name, cov) in rows {
        let objective = noise_objective(&cov, &hm)?;
        let bound = denoising_bound_affine(&prior, &decoder, &y0, &cov, &x)?;
        println!("{name:>14} {objective:>16.6} {bound:>16.6}");
    }
    Ok(())
}

fn main() -> mdlae::Result<()> {
    run_example()
}
