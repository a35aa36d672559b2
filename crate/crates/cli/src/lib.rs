//! Experiment harness for the `odegrad` library: configuration, metrics,
//! plots and one runner per experiment.

pub mod config;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod svg;

pub use config::{Config, Experiment};
pub use error::{CliError, Result};
