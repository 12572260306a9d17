// Builds a small skip-connected network from its text form, runs it
// forward and checks backpropagation against central differences.

use mdlae::net::{finite_diff_grad, Network};

const NET: &str = "
unit 0 identity
unit 1 identity
unit 2 identity
unit 3 tanh
unit 4 sigmoid
unit 5 identity
inputs 1 2
outputs 5
edge 0 3 0.1
edge 1 3 0.8
edge 2 3 -0.5
edge 3 4 1.2
edge 1 4 0.3
edge 0 5 -0.2
edge 3 5 0.7
edge 4 5 1.5
";

pub fn run_example() -> mdlae::Result<()> {
    let net: Network = NET.parse()?;
    let y = [0.4, -0.9];
    let target = 0.25;
    let record = net.forward(&y)?;
    let residual = record.output[0] - target;
    let analytic = net.backprop(&record, &[residual])?;
    let numeric = finite_diff_grad(&net, &y, |out| 0.5 * (out[0] - target).powi(2), 1e-6)?;

    println!("output {:.6}, loss {:.6}", record.output[0], 0.5 * residual * residual);
    println!("{:>6} {:>6} {:>14} {:>14}", "src", "dst", "backprop", "central diff");
    let mut worst = 0.0f64;
    for (e, edge) in net.edges().iter().enumerate() {
        println!("{:>6} {:>6} {:>14.8} {:>14.8}", edge.src, edge.dst, analytic.weights[e], numeric[e]);
        worst = worst.max((analytic.weights[e] - numeric[e]).abs());
    }
    println!("largest absolute difference {worst:.2e}");
    assert!(worst < 1e-8);
    Ok(())
}

fn main() -> mdlae::Result<()> {
    run_example()
}
