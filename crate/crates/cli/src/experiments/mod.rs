//! One module per subcommand. Every experiment writes `config.txt` and
//! `metrics.csv` into its output directory, plus its own tables and plots.

pub mod cnf;
pub mod gradcheck;
pub mod odenet2d;
pub mod poisson;
pub mod spirals;

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{Config, Experiment};
use crate::error::{CliError, Result};
use crate::metrics::Metrics;

/// Creates the output directory and records the resolved configuration.
pub fn prepare_out_dir(cfg: &Config) -> Result<PathBuf> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    Ok(dir)
}

pub fn write_metrics(dir: &Path, metrics: &Metrics) -> Result<()> {
    metrics.write(&dir.join("metrics.csv"))
}

/// Writes a CSV table from a header and pre-formatted rows.
pub fn write_table(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut s = String::with_capacity(rows.len() * 32);
    s.push_str(header);
    s.push('\n');
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Runs the configured experiment and returns human-readable summary lines.
/// Failed checks become errors after all artifacts are written.
pub fn run(cfg: &Config) -> Result<Vec<String>> {
    match cfg.experiment() {
        Experiment::Gradcheck => {
            let r = gradcheck::run(cfg)?;
            if r.failing.is_empty() {
                Ok(r.summary())
            } else {
                Err(CliError::CheckFailed(format!("gradient components out of tolerance: {}", r.failing.join(", "))))
            }
        }
        Experiment::Odenet2d => Ok(odenet2d::run(cfg)?.summary()),
        Experiment::Cnf => {
            let r = cnf::run(cfg)?;
            match r.round_trip.iter().find(|(_, err)| *err > cnf::ROUND_TRIP_TOL) {
                Some((stage, err)) => Err(CliError::CheckFailed(format!(
                    "round trip error {err:e} on the {stage} model exceeds {:e}",
                    cnf::ROUND_TRIP_TOL
                ))),
                None => Ok(r.summary()),
            }
        }
        Experiment::Spirals => Ok(spirals::run(cfg)?.summary()),
        Experiment::Poisson => Ok(poisson::run(cfg)?.summary()),
    }
}
