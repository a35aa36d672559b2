use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use odegrad_cli::{experiments, CliError, Config, Experiment};

/// Runs one experiment. Extra `--key value` pairs override the config file.
#[derive(Parser, Debug)]
#[command(name = "odegrad", version, about)]
struct Cli {
    experiment: Experiment,

    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// `--key value` or `--key=value` overrides.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

/// Pulls a `--config` that appeared after the first override.
fn split_config(cli: &mut Cli) -> Result<(), CliError> {
    let mut rest = Vec::with_capacity(cli.overrides.len());
    let mut it = std::mem::take(&mut cli.overrides).into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            let p = it.next().ok_or_else(|| CliError::Usage("missing value for --config".into()))?;
            cli.config = Some(p.into());
        } else if let Some(p) = a.strip_prefix("--config=") {
            cli.config = Some(p.into());
        } else {
            rest.push(a);
        }
    }
    cli.overrides = rest;
    Ok(())
}

fn run(mut cli: Cli) -> Result<(), CliError> {
    split_config(&mut cli)?;
    let cfg = Config::load(cli.experiment, cli.config.as_deref(), &cli.overrides)?;
    for line in experiments::run(&cfg)? {
        println!("{line}");
    }
    println!("outputs in {}", cfg.out_dir().display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
