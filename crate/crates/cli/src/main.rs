use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deeptwist_cli::config::ExperimentConfig;
use deeptwist_cli::report;
use deeptwist_cli::CliError;
use deeptwist_core::deeptwist::verify_compressed_form;
use deeptwist_core::nn::load_checkpoint;

#[derive(Parser)]
#[command(name = "deeptwist", version, about = "Compress MLPs by occasional weight distortion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment (or every point of its sweep) from a TOML config.
    Run { config: PathBuf },
    /// Singular values of one layer as `index,sigma` CSV.
    Spectrum {
        checkpoint: PathBuf,
        #[arg(long)]
        layer: String,
        /// Rank whose tail mass is reported on stderr.
        #[arg(long)]
        rank: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Histogram of one layer's nonzero weights as `bin_center,count` CSV.
    Histogram {
        checkpoint: PathBuf,
        #[arg(long)]
        layer: String,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check that a checkpoint is in the compressed form its config demands.
    Verify {
        checkpoint: PathBuf,
        config: PathBuf,
        /// Select the sweep point whose assignments apply.
        #[arg(long)]
        sweep_value: Option<f64>,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).map_err(|e| CliError::io(p, e))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn load(path: &Path) -> Result<deeptwist_core::MlpModel, CliError> {
    load_checkpoint(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn verify(checkpoint: &Path, config: &Path, sweep_value: Option<f64>) -> Result<(), CliError> {
    let model = load(checkpoint)?;
    let mut cfg = ExperimentConfig::from_path(config)?;
    if let (Some(sweep), Some(v)) = (&mut cfg.sweep, sweep_value) {
        sweep.values = vec![v];
    } else if cfg.sweep.is_some() {
        return Err(CliError::Config("config has a sweep; pass --sweep-value".into()));
    }
    let point = cfg.expand()?.remove(0);
    let dt = point
        .deeptwist
        .ok_or_else(|| CliError::Config("config has no [deeptwist] section".into()))?;
    let report = verify_compressed_form(&model, &dt).map_err(|e| CliError::Config(e.to_string()))?;
    for c in &report.checks {
        println!("{} {} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.layer, c.method, c.detail);
    }
    report.into_result().map_err(|e| CliError::Verify(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config } => {
            for s in deeptwist_cli::run_experiment(&config)? {
                let acc = s.final_accuracy.map_or("-".to_string(), |a| format!("{:.4}", a));
                let point = s.sweep.map_or(String::new(), |p| format!(" [{}={}]", p.axis.name(), p.value));
                println!("{}{point}: accuracy {acc}, verified {:?}", s.name, s.verified);
            }
            Ok(())
        }
        Command::Spectrum { checkpoint, layer, rank, out } => {
            let s = report::spectrum(&load(&checkpoint)?, &layer, rank)?;
            report::write_spectrum(&s.rows, output(out.as_deref())?)?;
            eprintln!("tail mass beyond rank {rank}: {:.6e}", s.tail_mass);
            Ok(())
        }
        Command::Histogram { checkpoint, layer, bins, out } => {
            let h = report::histogram(&load(&checkpoint)?, &layer, bins)?;
            report::write_histogram(&h, output(out.as_deref())?)
        }
        Command::Verify { checkpoint, config, sweep_value } => verify(&checkpoint, &config, sweep_value),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("deeptwist: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
