//! Latent ODE intensity fitted to synthetic event times by maximum
//! likelihood.

use std::f64::consts::PI;

use odegrad::dynamics::build_mlp_dynamics;
use odegrad::latent_ode::{sample_poisson_process, train_poisson, PoissonFit, PoissonRateModel};
use odegrad::optim::AdamConfig;
use odegrad::{Error, RngState};

use super::{prepare_out_dir, write_metrics, write_table};
use crate::config::Config;
use crate::error::{CliError, Result};
use crate::metrics::{Metrics, MetricsRow};
use crate::svg::{emit_svg, Labels, PlotKind, Series};

const CURVE_POINTS: usize = 201;
const SINE_BASE: f64 = 3.0;
const SINE_AMPLITUDE: f64 = 2.0;
const SINE_PERIOD: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventSource {
    /// `3 + 2 sin(2 pi t / 5)`.
    Sinusoidal,
    Homogeneous(f64),
    Empty,
}

impl EventSource {
    pub fn rate(self, t: f64) -> f64 {
        match self {
            EventSource::Sinusoidal => SINE_BASE + SINE_AMPLITUDE * (2.0 * PI * t / SINE_PERIOD).sin(),
            EventSource::Homogeneous(r) => r,
            EventSource::Empty => 0.0,
        }
    }

    fn sample(self, rng: &mut RngState, t_end: f64) -> Result<Vec<f64>> {
        let max = match self {
            EventSource::Sinusoidal => SINE_BASE + SINE_AMPLITUDE,
            EventSource::Homogeneous(r) => r,
            EventSource::Empty => return Ok(Vec::new()),
        };
        Ok(sample_poisson_process(rng, |t| self.rate(t), 0.0, t_end, max)?)
    }
}

#[derive(Debug, Clone)]
pub struct PoissonReport {
    pub events: usize,
    pub t_end: f64,
    pub final_nll: f64,
    /// Time average of the fitted intensity over the window.
    pub mean_rate: f64,
}

impl PoissonReport {
    pub fn summary(&self) -> Vec<String> {
        vec![
            format!("{} events on [0, {}]", self.events, self.t_end),
            format!("final negative log-likelihood {:.4}", self.final_nll),
            format!("mean fitted rate {:.4} (empirical {:.4})", self.mean_rate, self.events as f64 / self.t_end),
        ]
    }
}

/// Trapezoid average of `ys` on a uniform grid.
fn mean_on_grid(ys: &[f64]) -> f64 {
    let n = ys.len() - 1;
    (ys.iter().sum::<f64>() - 0.5 * (ys[0] + ys[n])) / n as f64
}

pub fn run(cfg: &Config) -> Result<PoissonReport> {
    let source = match cfg.raw("events") {
        "sinusoidal" => EventSource::Sinusoidal,
        "homogeneous" => {
            let r: f64 = cfg.get("rate")?;
            if !(r > 0.0) {
                return Err(CliError::Usage(format!("rate must be positive, got {r}")));
            }
            EventSource::Homogeneous(r)
        }
        "empty" => EventSource::Empty,
        other => return Err(CliError::Usage(format!("unknown event source `{other}` (sinusoidal, homogeneous, empty)"))),
    };
    let t_end: f64 = cfg.get("t_end")?;
    if !(t_end > 0.0) {
        return Err(Error::Argument(format!("t_end must be positive, got {t_end}")).into());
    }
    let dir = prepare_out_dir(cfg)?;
    let solver = cfg.solver()?;
    let latent_dim: usize = cfg.get("latent_dim")?;
    let hidden: usize = cfg.get("hidden")?;
    let iters: usize = cfg.get("iters")?;
    let mut rng = RngState::new(cfg.seed()?);
    let events = source.sample(&mut rng, t_end)?;

    let mut fit = PoissonFit {
        dynamics: build_mlp_dynamics(latent_dim, &[hidden], false, &mut rng)?,
        rate: PoissonRateModel::new(latent_dim, hidden, &mut rng),
        z0: rng.normals(latent_dim).iter().map(|x| 0.1 * x).collect(),
    };
    let adam = AdamConfig {
        lr: cfg.get("lr")?,
        ..AdamConfig::default()
    };
    let nll = train_poisson(&mut fit, &events, 0.0, t_end, iters, adam, &solver)?;
    let mut metrics = Metrics::new("poisson", cfg.timing()?);
    for (i, l) in nll.iter().enumerate() {
        metrics.push(MetricsRow::new(i).loss(*l));
    }
    let final_nll = -fit.loglik(&events, 0.0, t_end, &solver)?;
    metrics.push(MetricsRow::new(iters).loss(final_nll));

    let times: Vec<f64> = (0..CURVE_POINTS).map(|i| t_end * i as f64 / (CURVE_POINTS - 1) as f64).collect();
    let lambda = fit.rate_path(&times, &solver)?;
    let rows: Vec<String> = times
        .iter()
        .zip(&lambda)
        .map(|(t, l)| format!("{t:e},{l:e},{:e}", source.rate(*t)))
        .collect();
    write_table(&dir.join("rate.csv"), "t,lambda,true_lambda", &rows)?;
    let rows: Vec<String> = events.iter().map(|t| format!("{t:e}")).collect();
    write_table(&dir.join("events.csv"), "t", &rows)?;
    write_metrics(&dir, &metrics)?;

    let mut series = vec![
        Series::new("fitted", times.iter().cloned().zip(lambda.iter().cloned()).collect()),
        Series::new("true", times.iter().map(|&t| (t, source.rate(t))).collect()),
    ];
    if !events.is_empty() {
        series.push(Series::markers("events", events.iter().map(|&t| (t, 0.0)).collect()));
    }
    emit_svg(&series, PlotKind::Line, &dir.join("rate.svg"), &Labels::new("Fitted intensity", "t", "rate"))?;

    Ok(PoissonReport {
        events: events.len(),
        t_end,
        final_nll,
        mean_rate: mean_on_grid(&lambda),
    })
}
