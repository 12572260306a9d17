// Compares the codelengths of one sample under binary features: the exact
// generative codelength, the variational bound and the two-part code.

use mdlae::codelength::{
    expected_reconstruction_error, kl_to_posterior, l_gen_exact, two_part_codelength, Decoder, QuadratureSpec,
};
use mdlae::net::{Activation, Network};
use mdlae::outvar::OutputModel;
use mdlae::priors::{kl_to_prior, FeatureDistribution, Prior};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> mdlae::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut net = Network::layered(&[3, 5, 4], Activation::Tanh, Activation::Identity)?;
    net.init_weights(1.5, &mut rng);
    let decoder = Decoder::new(net, OutputModel::fixed(vec![0.5; 4])?)?;
    let prior = Prior::bernoulli(vec![0.3, 0.5, 0.6])?;
    let x = [0.8, -0.3, 0.4, 1.1];

    let oracle = l_gen_exact(&prior, &decoder, &x, &QuadratureSpec::default())?;
    println!("exact codelength     {:.6} nats", oracle.l_gen);
    println!("{:>16} {:>10} {:>10} {:>10} {:>10}", "features", "f_gen", "two_part", "KL(post)", "f_gen-l");
    let candidates = [vec![0.5, 0.5, 0.5], vec![0.9, 0.1, 0.7], oracle.posterior.mean()];
    for p in candidates {
        let fd = FeatureDistribution::BernoulliVec { p: p.clone() };
        let f_gen = expected_reconstruction_error(&decoder, &fd, &x, 1, &mut rng)? + kl_to_prior(&fd, &prior)?;
        let two_part = two_part_codelength(&prior, &decoder, &fd, &x)?;
        let gap = kl_to_posterior(&fd, &oracle.posterior)?;
        let label = p.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(",");
        println!("{label:>16} {f_gen:>10.4} {two_part:>10.4} {gap:>10.4} {:>10.4}", f_gen - oracle.l_gen);
        assert!(f_gen >= oracle.l_gen - 1e-10 && two_part >= f_gen);
        assert!((f_gen - oracle.l_gen - gap).abs() < 1e-10);
    }
    Ok(())
}

fn main() -> mdlae::Result<()> {
    run_example()
}
