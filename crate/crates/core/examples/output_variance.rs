// Fitting the per-dimension output variance: the optimum is the root mean
// square error, and at the optimum the Gaussian codelength reduces to a sum
// of log errors.

use mdlae::outvar::{gaussian_codelength, log_error_constant, log_error_objective, mean_square_errors, optimal_sigma_out};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn run_example() -> mdlae::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scales = [0.05, 0.5, 2.0];
    let n = 500;
    let residuals: Vec<Vec<f64>> = (0..n)
        .map(|_| scales.iter().map(|&s| Normal::new(0.0, s).unwrap().sample(&mut rng)).collect())
        .collect();
    let e = mean_square_errors(&residuals);
    let sigma = optimal_sigma_out(&e, 0.0);
    println!("true scales {scales:?}");
    println!("fitted sigma {:?}", sigma.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>());
    let at_optimum = gaussian_codelength(&residuals, &sigma);
    let log_form = log_error_objective(&e, 0.0, n) + log_error_constant(e.len(), n);
    println!("codelength at optimum {at_optimum:.6}, log-error form {log_form:.6}");
    for c in [0.5, 0.9, 1.1, 2.0] {
        let other: Vec<f64> = sigma.iter().map(|s| s * c).collect();
        println!("sigma x {c}: {:.6}", gaussian_codelength(&residuals, &other));
    }
    Ok(())
}

fn main() -> mdlae::Result<()> {
    run_example()
}
