use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use liegg::experiments::{
    cmd_extract, cmd_layerwise, cmd_sample_complexity, cmd_sweep, ExperimentConfig, Overrides,
};
use liegg::Error;

#[derive(Parser)]
#[command(
    name = "liegg",
    version,
    about = "Extract learned symmetries from trained networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train (or load) a model and extract its generators.
    Extract(Common),
    /// Train and score a grid of parameter budgets, depths and seeds.
    Sweep(Common),
    /// Compare per-layer symmetry across training regimes.
    Layerwise(Common),
    /// Score row subsamples of the polarization matrix.
    SampleComplexity(Common),
}

#[derive(Args)]
struct Common {
    /// TOML or JSON experiment file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        e if e.is_numerical() => 3,
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::Shape { .. }
        | Error::Idx { .. }
        | Error::Parse(_) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> liegg::Result<()> {
    let (Command::Extract(c)
    | Command::Sweep(c)
    | Command::Layerwise(c)
    | Command::SampleComplexity(c)) = &cli.command;
    let overrides = Overrides {
        seed: c.seed,
        output_dir: c.out.clone(),
    };
    let cfg = ExperimentConfig::load(&c.config, &overrides)?;
    match cli.command {
        Command::Extract(_) => {
            let o = cmd_extract(&cfg)?;
            println!(
                "variance {:e}  mean bias {:.4}  min bias {:.4}  null dim {}",
                o.report.variance, o.report.mean_bias, o.report.min_bias, o.report.null_dim
            );
        }
        Command::Sweep(_) => {
            let r = cmd_sweep(&cfg)?;
            println!(
                "{} cells, {} failed",
                r.rows.len() + r.failures.len(),
                r.failures.len()
            );
        }
        Command::Layerwise(_) => {
            let o = cmd_layerwise(&cfg)?;
            println!("{} layer rows", o.rows.len());
        }
        Command::SampleComplexity(_) => {
            let o = cmd_sample_complexity(&cfg)?;
            for s in &o.summary {
                println!(
                    "fraction {:<8} samples {:<6} mean bias {:.4} (reference {:.4})",
                    s.fraction, s.samples, s.mean_bias_mean, s.reference_mean_bias
                );
            }
        }
    }
    println!("wrote {}", cfg.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
