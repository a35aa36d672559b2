//! Concentric-rings classifier: zero-augmented 2-D input, one ODE block,
//! linear softmax head. Trained with adjoint gradients; records NFE per
//! iteration and a solver-tolerance sweep on the trained block.

use odegrad::adjoint::backward_gradients;
use odegrad::cnf::{Dataset, CIRCLE_RADII};
use odegrad::dynamics::build_mlp_dynamics;
use odegrad::optim::{AdamConfig, AdamState};
use odegrad::solve::{solve, SolveConfig};
use odegrad::{BatchedDynamics, DynamicsFunc, Error, RngState};

use super::{prepare_out_dir, write_metrics, write_table};
use crate::config::Config;
use crate::error::Result;
use crate::metrics::{Metrics, MetricsRow};
use crate::svg::{emit_svg, Labels, PlotKind, Series};

const CLASSES: usize = 2;
pub const REFERENCE_RTOL: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct Rings {
    /// Points augmented with zeros, row-major `n x dim`.
    pub x: Vec<f64>,
    pub labels: Vec<usize>,
    pub dim: usize,
}

impl Rings {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Rings {
        let mut x = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            x.extend_from_slice(&self.x[i * self.dim..(i + 1) * self.dim]);
        }
        Rings {
            x,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
        }
    }
}

/// Samples both rings; the label is the ring a point came from.
pub fn make_rings(rng: &mut RngState, n: usize, augment: usize) -> Result<Rings> {
    let pts = Dataset::TwoCircles.sample(rng, n);
    let mid = 0.5 * (CIRCLE_RADII[0] + CIRCLE_RADII[1]);
    let dim = 2 + augment;
    let mut x = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let p = pts.row(i);
        x.extend_from_slice(p);
        x.extend(std::iter::repeat(0.0).take(augment));
        labels.push(usize::from(p[0].hypot(p[1]) > mid));
    }
    Ok(Rings { x, labels, dim })
}

#[derive(Debug, Clone)]
pub struct OdeClassifier {
    pub block: DynamicsFunc,
    /// Row-major `CLASSES x dim` weights followed by `CLASSES` biases.
    pub head: Vec<f64>,
}

pub struct BatchEval {
    pub loss: f64,
    pub correct: usize,
    pub grad: Vec<f64>,
    pub nfe_forward: usize,
    pub nfe_backward: usize,
}

impl OdeClassifier {
    pub fn new(dim: usize, hidden: usize, rng: &mut RngState) -> Result<Self> {
        let block = build_mlp_dynamics(dim, &[hidden], false, rng)?;
        let mut head: Vec<f64> = rng.normals(CLASSES * dim).iter().map(|x| 0.1 * x).collect();
        head.extend([0.0; CLASSES]);
        Ok(OdeClassifier { block, head })
    }

    fn dim(&self) -> usize {
        self.block.dim()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.block.theta().to_vec();
        p.extend_from_slice(&self.head);
        p
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let n = self.block.theta().len();
        self.block.theta_mut().copy_from_slice(&p[..n]);
        self.head.copy_from_slice(&p[n..]);
    }

    fn logits(&self, z: &[f64]) -> [f64; CLASSES] {
        let d = self.dim();
        let mut out = [0.0; CLASSES];
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.head[CLASSES * d + c] + z.iter().zip(&self.head[c * d..(c + 1) * d]).map(|(a, b)| a * b).sum::<f64>();
        }
        out
    }

    /// Final ODE states of every row, solved as one batched state.
    pub fn features(&self, data: &Rings, cfg: &SolveConfig) -> Result<(Vec<f64>, usize)> {
        let batched = BatchedDynamics::new(&self.block, data.len());
        let traj = solve(&batched, &data.x, 0.0, 1.0, cfg)?;
        Ok((traj.final_state().to_vec(), traj.nfe))
    }

    /// Mean cross-entropy and, if `with_grad`, its gradient through the adjoint.
    pub fn evaluate(&self, data: &Rings, cfg: &SolveConfig, with_grad: bool) -> Result<BatchEval> {
        let d = self.dim();
        let n = data.len();
        let (z1, nfe_forward) = self.features(data, cfg)?;
        let mut loss = 0.0;
        let mut correct = 0;
        let mut d_head = vec![0.0; self.head.len()];
        let mut d_z1 = vec![0.0; z1.len()];
        for (i, &label) in data.labels.iter().enumerate() {
            let z = &z1[i * d..(i + 1) * d];
            let l = self.logits(z);
            let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + l.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += (lse - l[label]) / n as f64;
            if l[label] >= l[1 - label] {
                correct += 1;
            }
            for c in 0..CLASSES {
                let g = ((l[c] - lse).exp() - f64::from(u8::from(c == label))) / n as f64;
                d_head[CLASSES * d + c] += g;
                for j in 0..d {
                    d_head[c * d + j] += g * z[j];
                    d_z1[i * d + j] += g * self.head[c * d + j];
                }
            }
        }
        if !with_grad {
            return Ok(BatchEval {
                loss,
                correct,
                grad: Vec::new(),
                nfe_forward,
                nfe_backward: 0,
            });
        }
        let batched = BatchedDynamics::new(&self.block, n);
        let g = backward_gradients(&batched, &z1, 0.0, 1.0, &d_z1, cfg)?;
        let mut grad = g.d_theta;
        grad.extend(d_head);
        Ok(BatchEval {
            loss,
            correct,
            grad,
            nfe_forward,
            nfe_backward: g.nfe,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub rtol: f64,
    pub rel_error: f64,
    pub nfe: usize,
}

/// Relative max-norm error of the ODE block output at each tolerance against
/// a tight reference solve.
pub fn tolerance_sweep(model: &OdeClassifier, data: &Rings, rtols: &[f64]) -> Result<Vec<SweepPoint>> {
    let (reference, _) = model.features(data, &SolveConfig::dopri5(REFERENCE_RTOL, REFERENCE_RTOL))?;
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    rtols
        .iter()
        .map(|&rtol| {
            let (z, nfe) = model.features(data, &SolveConfig::dopri5(rtol, rtol))?;
            let err = z.iter().zip(&reference).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            Ok(SweepPoint {
                rtol,
                rel_error: err / scale,
                nfe,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Odenet2dReport {
    pub test_accuracy: f64,
    pub final_loss: f64,
    pub sweep: Vec<SweepPoint>,
    pub nfe_forward: Vec<usize>,
    pub nfe_backward: Vec<usize>,
}

impl Odenet2dReport {
    pub fn mean_nfe_ratio(&self) -> f64 {
        let r: f64 = self.nfe_forward.iter().zip(&self.nfe_backward).map(|(f, b)| *b as f64 / *f as f64).sum();
        r / self.nfe_forward.len().max(1) as f64
    }

    pub fn summary(&self) -> Vec<String> {
        let mut out = vec![
            format!("held-out accuracy {:.4}", self.test_accuracy),
            format!("final training loss {:.4}", self.final_loss),
            format!("mean backward/forward NFE ratio {:.3}", self.mean_nfe_ratio()),
        ];
        for p in &self.sweep {
            out.push(format!("rtol {:.0e}: rel error {:.3e}, nfe {}", p.rtol, p.rel_error, p.nfe));
        }
        out
    }
}

pub fn run(cfg: &Config) -> Result<Odenet2dReport> {
    let dir = prepare_out_dir(cfg)?;
    let solver = cfg.solver()?;
    let iters: usize = cfg.get("iters")?;
    let batch: usize = cfg.get("batch")?;
    let augment: usize = cfg.get("augment")?;
    let rtols: Vec<f64> = cfg.list("sweep_rtols")?;
    let mut rng = RngState::new(cfg.seed()?);
    let train = make_rings(&mut rng, cfg.get("n_train")?, augment)?;
    let test = make_rings(&mut rng, cfg.get("n_test")?, augment)?;
    if train.is_empty() || test.is_empty() || batch == 0 {
        return Err(Error::Argument("n_train, n_test and batch must be positive".into()).into());
    }

    let mut model = OdeClassifier::new(train.dim, cfg.get("hidden")?, &mut rng)?;
    let mut params = model.flat_params();
    let mut opt = AdamState::new(
        params.len(),
        AdamConfig {
            lr: cfg.get("lr")?,
            ..AdamConfig::default()
        },
    );
    let mut metrics = Metrics::new("odenet2d", cfg.timing()?);
    let mut report = Odenet2dReport {
        test_accuracy: 0.0,
        final_loss: f64::NAN,
        sweep: Vec::new(),
        nfe_forward: Vec::with_capacity(iters),
        nfe_backward: Vec::with_capacity(iters),
    };
    for iter in 0..iters {
        let idx: Vec<usize> = (0..batch).map(|_| rng.below(train.len())).collect();
        let ev = model.evaluate(&train.subset(&idx), &solver, true)?;
        if !ev.loss.is_finite() || ev.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDivergence { iter, loss: ev.loss }.into());
        }
        opt.step(&mut params, &ev.grad)?;
        model.set_flat_params(&params);
        metrics.push(MetricsRow::new(iter).loss(ev.loss).nfe(ev.nfe_forward, ev.nfe_backward));
        report.nfe_forward.push(ev.nfe_forward);
        report.nfe_backward.push(ev.nfe_backward);
        report.final_loss = ev.loss;
    }

    let ev = model.evaluate(&test, &solver, false)?;
    report.test_accuracy = ev.correct as f64 / test.len() as f64;
    report.sweep = tolerance_sweep(&model, &test, &rtols)?;

    let sweep_rows: Vec<String> = report.sweep.iter().map(|p| format!("{:e},{:e},{}", p.rtol, p.rel_error, p.nfe)).collect();
    write_table(&dir.join("sweep.csv"), "rtol,rel_error,nfe", &sweep_rows)?;
    write_table(&dir.join("accuracy.csv"), "split,accuracy", &[format!("test,{}", report.test_accuracy)])?;
    write_metrics(&dir, &metrics)?;

    let log_rtol = |f: &dyn Fn(&SweepPoint) -> f64| report.sweep.iter().map(|p| (p.rtol.log10(), f(p))).collect::<Vec<_>>();
    emit_svg(
        &[Series::markers("", log_rtol(&|p| p.rel_error.max(1e-300).log10()))],
        PlotKind::Line,
        &dir.join("error_vs_tolerance.svg"),
        &Labels::new("Solution error against tolerance", "log10 rtol", "log10 relative error"),
    )?;
    emit_svg(
        &[Series::markers("", log_rtol(&|p| p.nfe as f64))],
        PlotKind::Line,
        &dir.join("nfe_vs_tolerance.svg"),
        &Labels::new("Forward evaluations against tolerance", "log10 rtol", "NFE"),
    )?;
    if iters > 0 {
        let pairs: Vec<(f64, f64)> = report.nfe_forward.iter().zip(&report.nfe_backward).map(|(f, b)| (*f as f64, *b as f64)).collect();
        emit_svg(
            &[Series::new("", pairs)],
            PlotKind::Scatter,
            &dir.join("backward_vs_forward_nfe.svg"),
            &Labels::new("Backward against forward evaluations", "forward NFE", "backward NFE"),
        )?;
        let trend: Vec<(f64, f64)> = report.nfe_forward.iter().enumerate().map(|(i, f)| (i as f64, *f as f64)).collect();
        emit_svg(
            &[Series::new("", trend)],
            PlotKind::Line,
            &dir.join("nfe_over_training.svg"),
            &Labels::new("Forward evaluations during training", "iteration", "forward NFE"),
        )?;
    }
    Ok(report)
}
