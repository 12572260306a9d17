// Contractive penalties of a sigmoid decoder: the diagonal and full
// Gauss-Newton versions next to the optimal-noise bounds they equal.

use mdlae::codelength::Decoder;
use mdlae::contractive::{contractive_bound, contractive_penalty, ContractiveVariant};
use mdlae::hessian::{gauss_newton_full, optimal_noise_bound, HessianKind, HessianResult, HessianSource, NoiseMode};
use mdlae::net::{Activation, Network};
use mdlae::outvar::OutputModel;
use mdlae::priors::Prior;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> mdlae::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut net = Network::layered(&[2, 4], Activation::Sigmoid, Activation::Sigmoid)?;
    net.init_weights(2.0, &mut rng);
    let decoder = Decoder::new(net, OutputModel::fixed(vec![0.2; 4])?)?;
    let prior = Prior::gaussian(vec![1.0, 1.0])?;
    let x = [0.7, 0.2, 0.9, 0.4];
    let y0 = [0.5, -0.4];

    let h = gauss_newton_full(&prior, &decoder, &y0, &x)?;
    let diag_h = HessianResult {
        kind: HessianKind::Diagonal(h.diagonal()),
        source: HessianSource::GnFull,
    };
    for (variant, hess, mode) in [
        (ContractiveVariant::Diag, &diag_h, NoiseMode::Diagonal),
        (ContractiveVariant::Full, &h, NoiseMode::Full),
    ] {
        let penalty = contractive_penalty(&prior, &decoder, &y0, variant)?;
        let bound = contractive_bound(&prior, &decoder, &y0, &x, variant)?;
        let (_, noise_bound) = optimal_noise_bound(&prior, &decoder, &y0, &x, hess, mode)?;
        println!("{variant:?}: penalty {penalty:.6}, bound {bound:.6}, optimal-noise bound {noise_bound:.6}");
    }
    Ok(())
}

fn main() -> mdlae::Result<()> {
    run_example()
}
