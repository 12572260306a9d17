use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mdlae::commands;
use mdlae::config::ExperimentConfig;
use mdlae::data::SynthSpec;

#[derive(Parser)]
#[command(name = "mdlae", version, about = "Train auto-encoders on codelength bounds and audit them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the `out` key.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> mdlae::Result<(ExperimentConfig, PathBuf)> {
        let overrides: Vec<(&str, String)> = self.seed.iter().map(|s| ("seed", s.to_string())).collect();
        let config = ExperimentConfig::load(&self.config, &overrides)?;
        let out = self
            .out
            .clone()
            .or_else(|| config.out.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((config, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its ground-truth sidecar.
    Synth {
        /// linear-gaussian(d_y,d_x,noise), discrete-mixture(d_y,d_x[,noise]) or two-scale[(d_x)].
        #[arg(long)]
        spec: SynthSpec,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV path to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and write report.json, log.tsv and the two networks.
    Train(Common),
    /// Compare every bound with the exact codelength and write bounds.csv.
    CompareBounds(Common),
    /// Check analytic gradients against central differences.
    GradCheck(Common),
}

fn execute(command: Command) -> mdlae::Result<bool> {
    match command {
        Command::Synth { spec, n, seed, out } => {
            let sidecar = commands::synth(&spec, n, seed, &out)?;
            println!("wrote {} and {}", out.display(), sidecar.display());
            Ok(true)
        }
        Command::Train(common) => {
            let (config, out) = common.load()?;
            let outcome = commands::train(&config, &out)?;
            let agg = &outcome.report.aggregate;
            let n = outcome.report.samples.len().max(1) as f64;
            println!("l_f_gen  {:.6} nats/sample", agg.l_f_gen / n);
            if let Some(gap) = outcome.report.mean_bound_gap() {
                println!("bound_gap {gap:.6} nats/sample");
            }
            for note in &outcome.report.notes {
                println!("note: {note}");
            }
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::CompareBounds(common) => {
            let (config, out) = common.load()?;
            let table = commands::compare_bounds(&config, &out)?;
            print!("{}", table.render());
            Ok(table.all_ordered())
        }
        Command::GradCheck(common) => {
            let (config, _) = common.load()?;
            let report = commands::grad_check(&config, None)?;
            print!("{}", report.render());
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
