// Trains a binary-feature auto-encoder on the variational bound and
// reports how close the bound gets to the exact codelength.

use mdlae::codelength::Decoder;
use mdlae::data::{generate, SynthSpec};
use mdlae::net::{Activation, Network};
use mdlae::noise::NoiseSpec;
use mdlae::outvar::OutputModel;
use mdlae::priors::Prior;
use mdlae::train::{log_tsv, run, substream, Cadence, FeatureKind, Model, Objective, TrainConfig, STREAM_DATA, STREAM_INIT};

pub fn run_example() -> mdlae::Result<()> {
    let seed = 1;
    let spec: SynthSpec = "discrete-mixture(2,4,0.1)".parse()?;
    let data = generate(&spec, 200, &mut substream(seed, STREAM_DATA))?.data.into_rows();

    let mut rng = substream(seed, STREAM_INIT);
    let mut encoder = Network::layered(&[4, 2], Activation::Sigmoid, Activation::Sigmoid)?;
    encoder.init_weights(1.0, &mut rng);
    let mut decoder = Network::layered(&[2, 4], Activation::Identity, Activation::Identity)?;
    decoder.init_weights(1.0, &mut rng);
    let model = Model::new(
        encoder,
        Decoder::new(decoder, OutputModel::learned(4, 1.0, 0.0)?)?,
        Prior::bernoulli(vec![0.5, 0.5])?,
        FeatureKind::Bernoulli,
    )?;
    let config = TrainConfig {
        learning_rate: 0.002,
        momentum: 0.9,
        epochs: 200,
        batch_size: 20,
        seed,
        prior_refit: Cadence::Epoch,
        ..TrainConfig::default()
    };
    let outcome = run(model, Objective::FGen(NoiseSpec::default()), config, &data)?;

    for line in log_tsv(&outcome.log).lines().step_by(40) {
        println!("{line}");
    }
    let n = data.len() as f64;
    let agg = &outcome.report.aggregate;
    println!("per sample: f_gen {:.4}, exact {:.4}, gap {:.4} nats", agg.l_f_gen / n, agg.l_gen_oracle.unwrap_or(f64::NAN) / n, agg.bound_gap.unwrap_or(f64::NAN) / n);
    println!("fitted prior {:?}", outcome.model.prior.bit_probabilities());
    Ok(())
}

fn main() -> mdlae::Result<()> {
    run_example()
}
