//! Flat `key = value` experiment configuration with command-line overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::ValueEnum;
use odegrad::solve::{Method, SolveConfig};

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "ODEGRAD_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    Gradcheck,
    Odenet2d,
    Cnf,
    Spirals,
    Poisson,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Gradcheck => "gradcheck",
            Experiment::Odenet2d => "odenet2d",
            Experiment::Cnf => "cnf",
            Experiment::Spirals => "spirals",
            Experiment::Poisson => "poisson",
        }
    }

    /// Keys this experiment accepts, beyond the common ones, with defaults.
    fn defaults(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Experiment::Gradcheck => &[
                ("rtol", "1e-10"),
                ("atol", "1e-10"),
                ("configs", "20"),
                ("fd_eps", "1e-5"),
                ("rk4_configs", "3"),
                ("max_params", "300"),
                ("fault", "none"),
            ],
            Experiment::Odenet2d => &[
                ("rtol", "1e-3"),
                ("atol", "1e-3"),
                ("iters", "300"),
                ("batch", "64"),
                ("lr", "1e-2"),
                ("hidden", "16"),
                ("augment", "2"),
                ("n_train", "1000"),
                ("n_test", "500"),
                ("sweep_rtols", "1e-1,1e-2,1e-3,1e-4,1e-5,1e-6,1e-7"),
            ],
            Experiment::Cnf => &[
                ("rtol", "1e-5"),
                ("atol", "1e-5"),
                ("task", "density"),
                ("dataset", "gaussian_mixture"),
                ("widths", "2,8,32"),
                ("iters", "2000"),
                ("batch", "32"),
                ("lr", "1e-2"),
                ("n_data", "2000"),
                ("eval_samples", "500"),
                ("baseline_layers", "8"),
                ("baseline_lr", "1e-3"),
                ("grid", "40"),
            ],
            Experiment::Spirals => &[
                ("rtol", "1.5e-8"),
                ("atol", "1.5e-8"),
                ("n_obs", "30,50,100"),
                ("n_train", "100"),
                ("n_test", "40"),
                ("n_time", "200"),
                ("noise", "0.1"),
                ("epochs", "1000"),
                ("batch", "20"),
                ("lr", "5e-3"),
            ],
            Experiment::Poisson => &[
                ("rtol", "1.5e-8"),
                ("atol", "1.5e-8"),
                ("events", "sinusoidal"),
                ("rate", "5"),
                ("t_end", "20"),
                ("iters", "300"),
                ("lr", "2e-2"),
                ("latent_dim", "2"),
                ("hidden", "16"),
            ],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const COMMON: &[(&str, &str)] = &[("seed", "0"), ("method", "dopri5"), ("step_size", "none"), ("out_dir", ""), ("timing", "false")];

/// Resolved configuration: every known key has a value.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    experiment: Experiment,
    values: BTreeMap<String, String>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`, got `{raw}`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses `--key value` and `--key=value` pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let body = a
            .strip_prefix("--")
            .ok_or_else(|| CliError::Usage(format!("expected `--key value`, got `{a}`")))?;
        match body.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = it.next().ok_or_else(|| CliError::Usage(format!("missing value for --{body}")))?;
                out.push((body.to_string(), v.clone()));
            }
        }
    }
    Ok(out)
}

impl Config {
    /// Defaults, then the seed from the environment, then the file, then
    /// command-line overrides. Unknown keys are rejected.
    pub fn resolve(
        experiment: Experiment,
        file_entries: &[(String, String)],
        overrides: &[(String, String)],
        env_seed: Option<&str>,
    ) -> Result<Config> {
        let mut values: BTreeMap<String, String> = COMMON
            .iter()
            .chain(experiment.defaults())
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        values.insert("out_dir".into(), format!("runs/{}", experiment.name()));
        if let Some(s) = env_seed {
            values.insert("seed".into(), s.trim().to_string());
        }
        for (k, v) in file_entries.iter().chain(overrides) {
            let k = k.replace('-', "_");
            if !values.contains_key(&k) {
                return Err(CliError::Usage(format!("unknown key `{k}` for {experiment}")));
            }
            values.insert(k, v.clone());
        }
        let cfg = Config { experiment, values };
        cfg.seed()?;
        cfg.solver()?;
        Ok(cfg)
    }

    /// Reads the optional config file and the seed environment variable.
    pub fn load(experiment: Experiment, file: Option<&Path>, overrides: &[String]) -> Result<Config> {
        let entries = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                parse_config_text(&text)?
            }
            None => Vec::new(),
        };
        let env_seed = std::env::var(SEED_ENV).ok();
        Config::resolve(experiment, &entries, &parse_overrides(overrides)?, env_seed.as_deref())
    }

    pub fn defaults(experiment: Experiment) -> Config {
        Config::resolve(experiment, &[], &[], None).expect("built-in defaults are valid")
    }

    pub fn experiment(&self) -> Experiment {
        self.experiment
    }

    /// Sets a key, as an override would.
    pub fn with(mut self, key: &str, value: impl ToString) -> Result<Config> {
        if !self.values.contains_key(key) {
            return Err(CliError::Usage(format!("unknown key `{key}` for {}", self.experiment)));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(self)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("config key `{key}` is not declared"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| CliError::Usage(format!("invalid value `{raw}` for `{key}`")))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.raw(key);
        let items: Vec<T> = raw
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| CliError::Usage(format!("invalid list `{raw}` for `{key}`")))?;
        if items.is_empty() {
            return Err(CliError::Usage(format!("`{key}` must not be empty")));
        }
        Ok(items)
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn timing(&self) -> Result<bool> {
        self.get("timing")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out_dir"))
    }

    pub fn solver(&self) -> Result<SolveConfig> {
        let method: Method = self.get("method").map_err(|_| CliError::Usage(format!("unknown method `{}`", self.raw("method"))))?;
        let mut cfg = match self.raw("step_size") {
            "none" => {
                if method != Method::Dopri5 {
                    return Err(CliError::Usage(format!("{method:?} needs a step_size")));
                }
                SolveConfig::dopri5(self.get("rtol")?, self.get("atol")?)
            }
            _ => SolveConfig::fixed(method, self.get("step_size")?),
        };
        cfg.max_steps = 100_000;
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    /// `key = value` lines for every key, sorted.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn precedence_env_file_override() {
        let cfg = Config::resolve(Experiment::Cnf, &pairs(&[("seed", "3"), ("iters", "5")]), &pairs(&[("iters", "7")]), Some("9")).unwrap();
        assert_eq!(cfg.seed().unwrap(), 3);
        assert_eq!(cfg.get::<usize>("iters").unwrap(), 7);
        let cfg = Config::resolve(Experiment::Cnf, &[], &[], Some("9")).unwrap();
        assert_eq!(cfg.seed().unwrap(), 9);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        let e = Config::resolve(Experiment::Poisson, &pairs(&[("widths", "2")]), &[], None).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = Config::resolve(Experiment::Poisson, &[], &pairs(&[("seed", "x")]), None).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = Config::resolve(Experiment::Poisson, &[], &pairs(&[("method", "rk4")]), None).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn text_and_override_parsing() {
        let p = parse_config_text("# comment\nseed = 4  # trailing\n\niters=10\n").unwrap();
        assert_eq!(p, pairs(&[("seed", "4"), ("iters", "10")]));
        assert!(parse_config_text("seed 4").is_err());
        let o = parse_overrides(&["--seed".into(), "5".into(), "--n-obs=50".into()]).unwrap();
        assert_eq!(o, pairs(&[("seed", "5"), ("n-obs", "50")]));
        assert!(parse_overrides(&["--seed".into()]).is_err());
        let cfg = Config::resolve(Experiment::Spirals, &[], &o, None).unwrap();
        assert_eq!(cfg.list::<usize>("n_obs").unwrap(), vec![50]);
    }

    #[test]
    fn solver_settings() {
        assert_eq!(Config::defaults(Experiment::Odenet2d).solver().unwrap().rtol, 1e-3);
        assert_eq!(Config::defaults(Experiment::Cnf).solver().unwrap().rtol, 1e-5);
        assert_eq!(Config::defaults(Experiment::Spirals).solver().unwrap().rtol, 1.5e-8);
        let rk4 = Config::defaults(Experiment::Poisson).with("method", "rk4").unwrap().with("step_size", "0.01").unwrap();
        assert_eq!(rk4.solver().unwrap().step_size, Some(0.01));
    }
}
