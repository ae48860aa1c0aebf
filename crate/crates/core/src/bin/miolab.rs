use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use miolab_core::runner::{run, ExperimentConfig, Suite};

#[derive(Parser)]
#[command(name = "miolab", version, about = "Preference-optimization experiments: toy dynamics, Gaussian MI, starvation checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// DPO vs MIO likelihood trajectories on the 4×10 toy.
    Toy(Common),
    /// MINE vs JSD critics on bivariate Gaussians.
    Gauss(Common),
    /// Directional-derivative checks of the DV objective.
    Starvation(Common),
    /// Analytic and tape gradients against finite differences.
    Gradcheck(Common),
    /// SVG charts for the CSVs in the output directory.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

fn execute(suite: Suite, args: &Common) -> anyhow::Result<bool> {
    let config = match &args.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = args.jobs {
        anyhow::ensure!(jobs > 0, "--jobs must be positive");
        pool = pool.num_threads(jobs);
    }
    let manifest = pool.build()?.install(|| run(suite, &config, args.seed, &args.out))?;
    print!("{}", manifest.summary());
    let failed: Vec<_> = manifest.failed().map(|c| c.name.as_str()).collect();
    if !failed.is_empty() {
        eprintln!("failed invariants: {}", failed.join(", "));
    }
    Ok(failed.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (suite, args) = match &cli.command {
        Command::Toy(a) => (Suite::Toy, a),
        Command::Gauss(a) => (Suite::Gauss, a),
        Command::Starvation(a) => (Suite::Starvation, a),
        Command::Gradcheck(a) => (Suite::Gradcheck, a),
        Command::Report(a) => (Suite::Report, a),
    };
    match execute(suite, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
