//! Continuous normalizing flows on 2-D toy densities: width sweep for density
//! matching, maximum likelihood on samples, planar-flow baseline.

use odegrad::cnf::{
    dataset_by_name, density_grid, forward_sample, kl_loss_grad, log_density, mle_loss, train_cnf, train_planar_nf,
    CnfModel, PlanarFlow, Task, TrainingLog,
};
use odegrad::dynamics::build_gated_planar;
use odegrad::optim::AdamConfig;
use odegrad::{Error, RngState, Tensor};

use super::{prepare_out_dir, write_metrics, write_table};
use crate::config::Config;
use crate::error::{CliError, Result};
use crate::metrics::{Metrics, MetricsRow};
use crate::svg::{emit_svg, Labels, PlotKind, Series};

pub const ROUND_TRIP_TOL: f64 = 1e-4;
const ROUND_TRIP_SAMPLES: usize = 20;
const GRID_EXTENT: f64 = 4.0;
/// Offsets the evaluation stream from the training stream of the same seed.
const EVAL_STREAM: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CnfTask {
    Density,
    Mle,
}

#[derive(Debug, Clone)]
pub struct CnfReport {
    pub task: CnfTask,
    /// `(M, final loss)` per CNF width, in config order.
    pub final_losses: Vec<(usize, f64)>,
    /// `(K, final loss)` of the planar flow baseline.
    pub baseline: Option<(usize, f64)>,
    /// Largest `|log q|` disagreement between sampling and density
    /// evaluation, before and after training.
    pub round_trip: Vec<(&'static str, f64)>,
}

impl CnfReport {
    /// Final loss never increases with width (in the order widths were given).
    pub fn losses_non_increasing(&self) -> bool {
        self.final_losses.windows(2).all(|w| w[1].1 <= w[0].1)
    }

    pub fn summary(&self) -> Vec<String> {
        let mut out: Vec<String> = self.final_losses.iter().map(|(m, l)| format!("CNF M={m}: final loss {l:.4}")).collect();
        if let Some((k, l)) = self.baseline {
            out.push(format!("planar NF K={k}: final loss {l:.4}"));
        }
        if self.task == CnfTask::Density {
            out.push(format!("loss non-increasing in M: {}", self.losses_non_increasing()));
        }
        for (stage, e) in &self.round_trip {
            out.push(format!("round trip ({stage}): max |delta log q| {e:.2e}"));
        }
        out
    }
}

/// Max disagreement between the log density reported at sampling time and
/// the one recovered by pulling the samples back.
pub fn round_trip_error(model: &CnfModel, rng: &mut RngState, n: usize) -> Result<f64> {
    let (x, logq) = forward_sample(model, rng, n)?;
    let back = log_density(model, &x)?;
    Ok(logq.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

fn grid_axis(n: usize) -> Vec<f64> {
    (0..n).map(|i| -GRID_EXTENT + 2.0 * GRID_EXTENT * i as f64 / (n - 1) as f64).collect()
}

fn push_log(metrics: &mut Metrics, tag: &str, log: &TrainingLog) {
    for r in &log.records {
        metrics.push_tagged(tag, MetricsRow::new(r.iter).loss(r.loss).nfe(r.nfe_forward, r.nfe_backward));
    }
}

fn rows_of(t: &Tensor) -> Vec<(f64, f64)> {
    (0..t.rows()).map(|i| (t.get(i, 0), t.get(i, 1))).collect()
}

pub fn run(cfg: &Config) -> Result<CnfReport> {
    let task = match cfg.raw("task") {
        "density" => CnfTask::Density,
        "mle" => CnfTask::Mle,
        other => return Err(CliError::Usage(format!("unknown task `{other}` (density, mle)"))),
    };
    let dataset = dataset_by_name(cfg.raw("dataset"))?;
    if task == CnfTask::Density && !dataset.has_density() {
        return Err(Error::Argument(format!("dataset `{}` has no closed-form density for density matching", dataset.name())).into());
    }
    let dir = prepare_out_dir(cfg)?;
    let solver = cfg.solver()?;
    let seed = cfg.seed()?;
    let widths: Vec<usize> = cfg.list("widths")?;
    let iters: usize = cfg.get("iters")?;
    let batch: usize = cfg.get("batch")?;
    let eval_samples: usize = cfg.get("eval_samples")?;
    let grid: usize = cfg.get("grid")?;
    if grid < 2 {
        return Err(CliError::Usage("grid must be at least 2".into()));
    }
    let adam = AdamConfig {
        lr: cfg.get("lr")?,
        ..AdamConfig::default()
    };
    let mut metrics = Metrics::new("cnf", cfg.timing()?);
    let mut eval_rng = RngState::new(seed ^ EVAL_STREAM);
    let eval_base = Tensor::matrix(eval_samples, 2, eval_rng.normals(eval_samples * 2))?;
    let mut data_rng = RngState::new(seed);
    let data = dataset.sample(&mut data_rng, cfg.get("n_data")?);

    let mut report = CnfReport {
        task,
        final_losses: Vec::new(),
        baseline: None,
        round_trip: Vec::new(),
    };
    let mut curves = Vec::new();
    let mut widest: Option<CnfModel> = None;
    for (k, &m) in widths.iter().enumerate() {
        // Every width starts from the same stream so only M differs.
        let mut rng = RngState::new(seed);
        let mut model = CnfModel::new(build_gated_planar(2, m, &mut rng)?);
        model.solver = solver.clone();
        let last = k + 1 == widths.len();
        if last {
            report.round_trip.push(("untrained", round_trip_error(&model, &mut eval_rng, ROUND_TRIP_SAMPLES)?));
        }
        let log = match task {
            CnfTask::Density => train_cnf(&mut model, &Task::DensityMatching { target: &dataset, batch }, iters, adam, &mut rng)?,
            CnfTask::Mle => train_cnf(&mut model, &Task::Mle { data: &data, batch }, iters, adam, &mut rng)?,
        };
        let tag = format!("M={m}");
        push_log(&mut metrics, &tag, &log);
        let final_loss = match task {
            CnfTask::Density => kl_loss_grad(&model, &dataset, &eval_base)?.loss,
            CnfTask::Mle => mle_loss(&model, &data)?,
        };
        metrics.push_tagged(&tag, MetricsRow::new(iters).loss(final_loss));
        report.final_losses.push((m, final_loss));
        curves.push(Series::new(&tag, log.records.iter().map(|r| (r.iter as f64, r.loss)).collect()));
        if last {
            report.round_trip.push(("trained", round_trip_error(&model, &mut eval_rng, ROUND_TRIP_SAMPLES)?));
            widest = Some(model);
        }
    }

    let layers: usize = cfg.get("baseline_layers")?;
    if layers > 0 {
        let mut rng = RngState::new(seed);
        let mut flow = PlanarFlow::new(2, layers, &mut rng)?;
        let lr: f64 = cfg.get("baseline_lr")?;
        let log = match task {
            CnfTask::Density => train_planar_nf(&mut flow, &Task::DensityMatching { target: &dataset, batch }, iters, lr, &mut rng)?,
            CnfTask::Mle => train_planar_nf(&mut flow, &Task::Mle { data: &data, batch }, iters, lr, &mut rng)?,
        };
        let tag = format!("planar_nf_K={layers}");
        push_log(&mut metrics, &tag, &log);
        let final_loss = match task {
            CnfTask::Density => flow.kl_loss_grad(&dataset, &eval_base)?.loss,
            CnfTask::Mle => flow.mle_loss_grad(&data)?.loss,
        };
        metrics.push_tagged(&tag, MetricsRow::new(iters).loss(final_loss));
        report.baseline = Some((layers, final_loss));
        curves.push(Series::new(&tag, log.records.iter().map(|r| (r.iter as f64, r.loss)).collect()));
    }

    let mut table: Vec<String> = report.final_losses.iter().map(|(m, l)| format!("cnf,{m},{l:e}")).collect();
    if let Some((k, l)) = report.baseline {
        table.push(format!("planar_nf,{k},{l:e}"));
    }
    write_table(&dir.join("comparison.csv"), "model,size,final_loss", &table)?;
    write_metrics(&dir, &metrics)?;
    if iters > 0 {
        emit_svg(&curves, PlotKind::Line, &dir.join("loss.svg"), &Labels::new("Training loss", "iteration", "loss"))?;
    }

    if let Some(model) = widest {
        let axis = grid_axis(grid);
        let dens = density_grid(&model, &axis, &axis)?;
        let rows: Vec<String> = dens.iter().map(|(x, y, l)| format!("{x:e},{y:e},{l:e}")).collect();
        write_table(&dir.join("density.csv"), "x,y,logq", &rows)?;
        emit_svg(
            &[Series::cells("", dens.iter().map(|(x, y, _)| (*x, *y)).collect(), dens.iter().map(|(_, _, l)| l.exp()).collect())],
            PlotKind::Heatmap,
            &dir.join("density.svg"),
            &Labels::new("Learned density", "x", "y"),
        )?;
        if dataset.has_density() {
            let pts: Vec<(f64, f64)> = axis.iter().flat_map(|&y| axis.iter().map(move |&x| (x, y))).collect();
            let vals = pts.iter().map(|(x, y)| dataset.log_density(&[*x, *y]).map(f64::exp)).collect::<odegrad::Result<Vec<_>>>()?;
            emit_svg(&[Series::cells("", pts, vals)], PlotKind::Heatmap, &dir.join("target.svg"), &Labels::new("Target density", "x", "y"))?;
        }
        let (samples, _) = forward_sample(&model, &mut eval_rng, eval_samples)?;
        let rows: Vec<String> = rows_of(&samples).iter().map(|(x, y)| format!("{x:e},{y:e}")).collect();
        write_table(&dir.join("samples.csv"), "x,y", &rows)?;
        let mut series = vec![Series::new("flow samples", rows_of(&samples))];
        if task == CnfTask::Mle {
            series.insert(0, Series::new("data", rows_of(&data)));
        }
        emit_svg(&series, PlotKind::Scatter, &dir.join("samples.svg"), &Labels::new("Samples", "x", "y"))?;
    }
    Ok(report)
}

