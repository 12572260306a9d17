// Drives the command layer from an in-memory configuration: trains, writes
// the report files, compares bounds and checks gradients.

use mdlae::commands::{compare_bounds, grad_check, train};
use mdlae::config::ExperimentConfig;

const CONFIG: &str = "
synth = linear-gaussian(1, 3, 0.3)
n_samples = 50
encoder = 3-1
decoder = 1-3
prior = gaussian:1
output_sigma = learned:1
objective = denoising
noise = optimal_diag
hessian = gn_diag
learning_rate = 0.002
epochs = 20
batch_size = 10
seed = 11
";

pub fn run_example() -> mdlae::Result<()> {
    let config = ExperimentConfig::parse(CONFIG)?;
    let out = std::env::temp_dir().join(format!("mdlae-example-{}", std::process::id()));
    let outcome = train(&config, &out)?;
    let n = outcome.report.samples.len() as f64;
    println!("trained: l_f_gen {:.4} nats/sample, files in {}", outcome.report.aggregate.l_f_gen / n, out.display());
    let table = compare_bounds(&config, &out)?;
    print!("{}", table.render());
    let report = grad_check(&config, None)?;
    print!("{}", report.render());
    std::fs::remove_dir_all(&out)?;
    assert!(table.all_ordered() && report.passed());
    Ok(())
}

fn main() -> mdlae::Result<()> {
    run_example()
}
