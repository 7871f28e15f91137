use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ecoc::cli::{self, RunConfig};
use ecoc::Error;

#[derive(Parser)]
#[command(name = "ecoc", about = "ECOC sequence-prediction toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Decode {
    Greedy,
    Temperature,
}

#[derive(Subcommand)]
enum Command {
    /// Build a codebook and write a separation report.
    BuildCodebook {
        #[arg(long)]
        config: PathBuf,
        /// key=value config overrides.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Train a model, emitting per-epoch metrics and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on a corpus split.
    Eval {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, default_value = "best.ckpt")]
        checkpoint: String,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Generate tokens autoregressively from a checkpoint.
    Sample {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, default_value = "best.ckpt")]
        checkpoint: String,
        #[arg(long, default_value = "")]
        prefix: String,
        #[arg(long, default_value_t = 20)]
        length: usize,
        #[arg(long, value_enum, default_value_t = Decode::Greedy)]
        decode: Decode,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render metrics curves to SVG.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &PathBuf, overrides: &[String]) -> ecoc::Result<RunConfig> {
    let mut cfg = RunConfig::from_file(path)?;
    cfg.apply_overrides(overrides.iter().map(|s| s.as_str()))?;
    Ok(cfg)
}

fn run(cli: Cli) -> ecoc::Result<()> {
    match cli.command {
        Command::BuildCodebook { config, overrides } => {
            cli::run_build_codebook(&load_config(&config, &overrides)?)?;
        }
        Command::Train { config, overrides } => {
            cli::run_train(&load_config(&config, &overrides)?)?;
        }
        Command::Eval {
            run_dir,
            checkpoint,
            split,
        } => {
            cli::run_eval(&run_dir, &checkpoint, &split)?;
        }
        Command::Sample {
            run_dir,
            checkpoint,
            prefix,
            length,
            decode,
            temperature,
            seed,
        } => {
            let mode = match decode {
                Decode::Greedy => cli::DecodeMode::Greedy,
                Decode::Temperature => cli::DecodeMode::Temperature,
            };
            let tokens =
                cli::run_sample(&run_dir, &checkpoint, &prefix, length, mode, temperature, seed)?;
            println!("{}", tokens.join(" "));
        }
        Command::Plot { metrics, out } => {
            cli::plot::render_metrics_svg(&metrics, &out)?;
        }
    }
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NanLoss(_)
        | Error::NanGradient(_)
        | Error::NonFiniteWeight(_)
        | Error::NonDeterministicClosure(_, _) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
