//! Irregularly sampled spirals: latent ODE against two GRU baselines on
//! extrapolation beyond the observation window.

use odegrad::latent_ode::{
    generate_spirals, predictive_rmse, subsample, train_latent_ode, train_rnn, Direction, LatentOdeConfig,
    LatentOdeModel, RnnBaseline, Sequence, SpiralDataset, TrainConfig,
};
use odegrad::optim::AdamConfig;
use odegrad::solve::SolveConfig;
use odegrad::{Error, RngState};

use super::{prepare_out_dir, write_metrics, write_table};
use crate::config::Config;
use crate::error::Result;
use crate::metrics::{Metrics, MetricsRow};
use crate::svg::{emit_svg, Labels, PlotKind, Series};

const RNN_HIDDEN: usize = 25;
/// Test trajectories written out in full.
const SHOWN: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct RmseRow {
    pub n_obs: usize,
    pub latent_ode: f64,
    pub rnn: f64,
    pub rnn_time_gaps: f64,
}

#[derive(Debug, Clone)]
pub struct SpiralsReport {
    pub rows: Vec<RmseRow>,
}

impl SpiralsReport {
    /// Latent ODE beats both recurrent baselines at every `n_obs`.
    pub fn latent_beats_rnns(&self) -> bool {
        self.rows.iter().all(|r| r.latent_ode < r.rnn.min(r.rnn_time_gaps))
    }

    /// Latent ODE error never grows with more observations.
    pub fn latent_non_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].latent_ode <= w[0].latent_ode)
    }

    pub fn table(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| format!("{},{:e},{:e},{:e}", r.n_obs, r.latent_ode, r.rnn, r.rnn_time_gaps))
            .collect()
    }

    pub fn summary(&self) -> Vec<String> {
        let mut out = vec![format!("{:>6} {:>10} {:>10} {:>10}", "n_obs", "latent", "rnn", "rnn+gaps")];
        for r in &self.rows {
            out.push(format!("{:>6} {:>10.4} {:>10.4} {:>10.4}", r.n_obs, r.latent_ode, r.rnn, r.rnn_time_gaps));
        }
        out
    }
}

struct Split {
    data: SpiralDataset,
    train: Vec<Sequence>,
    test: Vec<Sequence>,
    horizon: Vec<f64>,
    truth: Vec<Vec<Vec<f64>>>,
}

/// Same trajectories for every `n_obs`; only the subsampling differs. The
/// first half of each grid is observed, the second half is predicted.
fn split(cfg: &Config, rng: &mut RngState, n_obs: usize) -> Result<Split> {
    let n_train: usize = cfg.get("n_train")?;
    let n_test: usize = cfg.get("n_test")?;
    let n_time: usize = cfg.get("n_time")?;
    if n_train == 0 || n_test == 0 || n_time < 4 {
        return Err(Error::Argument("need n_train, n_test >= 1 and n_time >= 4".into()).into());
    }
    let data = generate_spirals(rng, n_train + n_test, n_time, cfg.get("noise")?)?;
    let (train, test) = data.split_at(n_train);
    let half = n_time / 2;
    let train_seqs = subsample(&train.window(0..half)?, rng, n_obs)?;
    let test_seqs = subsample(&test.window(0..half)?, rng, n_obs)?;
    Ok(Split {
        horizon: data.times[half..].to_vec(),
        truth: test.truth.iter().map(|t| t[half..].to_vec()).collect(),
        data: test,
        train: train_seqs,
        test: test_seqs,
    })
}

fn write_examples(dir: &std::path::Path, s: &Split, model: &LatentOdeModel, solver: &SolveConfig) -> Result<()> {
    let shown = SHOWN.min(s.test.len());
    let mut rows = Vec::new();
    let mut plot = Vec::new();
    for k in 0..shown {
        let pred = model.predict(&s.test[k], &s.data.times, solver)?;
        let half = s.data.times.len() / 2;
        for (i, t) in s.data.times.iter().enumerate() {
            let kind = if i < half { "reconstruction" } else { "extrapolation" };
            rows.push(format!("{k},{t:e},truth,{:e},{:e}", s.data.truth[k][i][0], s.data.truth[k][i][1]));
            rows.push(format!("{k},{t:e},{kind},{:e},{:e}", pred[i][0], pred[i][1]));
        }
        for (t, x) in s.test[k].times.iter().zip(&s.test[k].obs) {
            rows.push(format!("{k},{t:e},observed,{:e},{:e}", x[0], x[1]));
        }
        if k == 0 {
            plot.push(Series::new("truth", s.data.truth[0].iter().map(|p| (p[0], p[1])).collect()));
            plot.push(Series::new("reconstruction", pred[..half].iter().map(|p| (p[0], p[1])).collect()));
            plot.push(Series::new("extrapolation", pred[half - 1..].iter().map(|p| (p[0], p[1])).collect()));
            plot.push(Series::markers("observed", s.test[0].obs.iter().map(|p| (p[0], p[1])).collect()));
        }
    }
    write_table(&dir.join("trajectories.csv"), "trajectory,t,kind,x,y", &rows)?;
    emit_svg(&plot, PlotKind::Line, &dir.join("extrapolation.svg"), &Labels::new("Spiral reconstruction and extrapolation", "x", "y"))?;

    let mut rows = Vec::new();
    let mut cw = Vec::new();
    let mut ccw = Vec::new();
    for (k, seq) in s.test.iter().enumerate() {
        let (mu, _) = model.encode(seq)?;
        let cols: Vec<String> = mu.iter().map(|v| format!("{v:e}")).collect();
        let dir_label = s.data.directions[k];
        rows.push(format!("{k},{},{}", dir_label.label(), cols.join(",")));
        let p = (mu[0], mu.get(1).copied().unwrap_or(0.0));
        match dir_label {
            Direction::Clockwise => cw.push(p),
            Direction::CounterClockwise => ccw.push(p),
        }
    }
    let header = format!(
        "trajectory,direction,{}",
        (0..model.latent_dim).map(|i| format!("z{i}")).collect::<Vec<_>>().join(",")
    );
    write_table(&dir.join("latent.csv"), &header, &rows)?;
    emit_svg(
        &[Series::new("clockwise", cw), Series::new("counter-clockwise", ccw)],
        PlotKind::Scatter,
        &dir.join("latent.svg"),
        &Labels::new("Posterior means of the initial latent state", "z0", "z1"),
    )
}

pub fn run(cfg: &Config) -> Result<SpiralsReport> {
    let dir = prepare_out_dir(cfg)?;
    let solver = cfg.solver()?;
    let seed = cfg.seed()?;
    let n_obs_list: Vec<usize> = cfg.list("n_obs")?;
    let train_cfg = TrainConfig {
        epochs: cfg.get("epochs")?,
        batch_size: cfg.get("batch")?,
        adam: AdamConfig {
            lr: cfg.get("lr")?,
            ..AdamConfig::default()
        },
    };
    let mut metrics = Metrics::new("spirals", cfg.timing()?);
    let mut report = SpiralsReport { rows: Vec::new() };
    for (j, &n_obs) in n_obs_list.iter().enumerate() {
        let mut rng = RngState::new(seed);
        let s = split(cfg, &mut rng, n_obs)?;

        let mut model = LatentOdeModel::new(LatentOdeConfig::default(), &mut rng)?;
        let tag = format!("latent_n={n_obs}");
        let log = train_latent_ode(&mut model, &s.train, &train_cfg, &solver, &mut rng, |_, _, _| {})?;
        for (e, l) in log.epoch_loss.iter().enumerate() {
            metrics.push_tagged(&tag, MetricsRow::new(e).loss(*l));
        }
        let pred = s.test.iter().map(|q| model.predict(q, &s.horizon, &solver)).collect::<odegrad::Result<Vec<_>>>()?;
        let latent = predictive_rmse(&pred, &s.truth)?;
        metrics.push_tagged(&tag, MetricsRow::new(train_cfg.epochs).rmse(latent));

        let mut rnn_rmse = [0.0; 2];
        for (slot, gaps) in [false, true].into_iter().enumerate() {
            let mut rnn = RnnBaseline::new(2, RNN_HIDDEN, gaps, &mut rng)?;
            let tag = format!("{}_n={n_obs}", if gaps { "rnn_gaps" } else { "rnn" });
            let losses = train_rnn(&mut rnn, &s.train, &train_cfg, &mut rng)?;
            for (e, l) in losses.iter().enumerate() {
                metrics.push_tagged(&tag, MetricsRow::new(e).loss(*l));
            }
            let pred = s.test.iter().map(|q| rnn.predict(q, &s.horizon)).collect::<odegrad::Result<Vec<_>>>()?;
            rnn_rmse[slot] = predictive_rmse(&pred, &s.truth)?;
            metrics.push_tagged(&tag, MetricsRow::new(train_cfg.epochs).rmse(rnn_rmse[slot]));
        }
        report.rows.push(RmseRow {
            n_obs,
            latent_ode: latent,
            rnn: rnn_rmse[0],
            rnn_time_gaps: rnn_rmse[1],
        });
        if j + 1 == n_obs_list.len() {
            write_examples(&dir, &s, &model, &solver)?;
        }
    }
    write_table(&dir.join("rmse.csv"), "n_obs,latent_ode,rnn,rnn_time_gaps", &report.table())?;
    write_metrics(&dir, &metrics)?;
    Ok(report)
}
