//! Continuous normalizing flows.
//!
//! A flow carries `[z, delta]` where `d delta/dt = -tr(df/dz)`. Samples start
//! from a standard normal at `t0` and are pushed to `t1`; densities of data
//! points are evaluated by integrating the same system from `t1` back to
//! `t0`. Parameter gradients come from the adjoint of the combined system.

mod data;
mod planar_nf;

pub use data::{dataset_by_name, make_dataset, Component, Dataset, CIRCLE_RADII, SHAPE_NOISE};
pub use planar_nf::{train_planar_nf, PlanarFlow};

use std::io::Write;

use crate::adjoint::backward_gradients;
use crate::dynamics::{Dynamics, DynamicsFunc};
use crate::error::{check_len, Error, Result};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::RngState;
use crate::solve::{integrate, SolveConfig};
use crate::tensor::Tensor;

/// `ln(2 pi)`.
pub const LOG_2PI: f64 = 1.837_877_066_409_345_5;

pub fn std_normal_logpdf(z: &[f64]) -> f64 {
    -0.5 * z.len() as f64 * LOG_2PI - 0.5 * z.iter().map(|x| x * x).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub z: Vec<f64>,
    pub delta_logp: f64,
}

/// The combined `[z, delta]` system of a field, as a [`Dynamics`] of
/// dimension `D + 1` sharing the field's parameters.
#[derive(Debug, Clone, Copy)]
pub struct FlowDynamics<'a> {
    f: &'a DynamicsFunc,
}

impl<'a> FlowDynamics<'a> {
    pub fn new(f: &'a DynamicsFunc) -> Self {
        FlowDynamics { f }
    }
}

impl Dynamics for FlowDynamics<'_> {
    fn state_dim(&self) -> usize {
        self.f.dim() + 1
    }

    fn params(&self) -> &[f64] {
        self.f.theta()
    }

    fn eval_into(&self, s: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let d = self.f.dim();
        check_len("flow state", d + 1, s.len())?;
        self.f.eval_into(&s[..d], t, &mut out[..d])?;
        out[d] = -self.f.jacobian_trace(&s[..d], t)?;
        Ok(())
    }

    fn vjp_into(&self, s: &[f64], t: f64, a: &[f64], vjp_z: &mut [f64], vjp_theta: &mut [f64]) -> Result<f64> {
        let d = self.f.dim();
        check_len("flow state", d + 1, s.len())?;
        check_len("flow cotangent", d + 1, a.len())?;
        let mut vt = self.f.vjp_into(&s[..d], t, &a[..d], &mut vjp_z[..d], vjp_theta)?;
        vjp_z[d] = 0.0;
        if a[d] != 0.0 {
            vt += self.f.trace_vjp_acc(&s[..d], t, -a[d], &mut vjp_z[..d], vjp_theta)?;
        }
        Ok(vt)
    }
}

/// Time derivative of a flow state: `[f(z, t), -tr(df/dz)]`.
pub fn flow_dynamics(f: &DynamicsFunc, s: &FlowState, t: f64) -> Result<FlowState> {
    let mut flat = s.z.clone();
    flat.push(s.delta_logp);
    let mut out = vec![0.0; flat.len()];
    FlowDynamics::new(f).eval_into(&flat, t, &mut out)?;
    let delta_logp = out.pop().unwrap();
    Ok(FlowState { z: out, delta_logp })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnfModel {
    pub dynamics: DynamicsFunc,
    pub t0: f64,
    pub t1: f64,
    pub solver: SolveConfig,
}

impl CnfModel {
    /// Flow over `[0, 1]` solved by DOPRI5 at `rtol = atol = 1e-5`.
    pub fn new(dynamics: DynamicsFunc) -> Self {
        CnfModel {
            dynamics,
            t0: 0.0,
            t1: 1.0,
            solver: SolveConfig::dopri5(1e-5, 1e-5),
        }
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    fn run(&self, z: &[f64], from: f64, to: f64) -> Result<(Vec<f64>, f64, usize)> {
        check_len("flow input", self.dim(), z.len())?;
        let mut s = z.to_vec();
        s.push(0.0);
        let flow = FlowDynamics::new(&self.dynamics);
        let stats = integrate(|t, y, dy| flow.eval_into(y, t, dy), &mut s, from, to, &self.solver, None)?;
        let delta = s.pop().unwrap();
        Ok((s, delta, stats.nfe))
    }

    /// Pushes a base point to time `t`; returns the point, `delta` and NFE.
    pub fn push_forward_to(&self, z0: &[f64], t: f64) -> Result<(Vec<f64>, f64, usize)> {
        self.run(z0, self.t0, t)
    }

    /// Maps a data point back to the base; returns `z(t0)`, the reverse
    /// `delta` and NFE. `log q(x) = log N(z(t0)) - delta`.
    pub fn pull_back(&self, x: &[f64]) -> Result<(Vec<f64>, f64, usize)> {
        self.run(x, self.t1, self.t0)
    }

    pub fn log_density_point(&self, x: &[f64]) -> Result<f64> {
        let (z0, delta, _) = self.pull_back(x)?;
        Ok(std_normal_logpdf(&z0) - delta)
    }
}

/// Draws `n` base samples and pushes them through the flow. Returns the
/// samples (`n x D`) and their log densities.
pub fn forward_sample(model: &CnfModel, rng: &mut RngState, n: usize) -> Result<(Tensor, Vec<f64>)> {
    if n == 0 {
        return Err(Error::Argument("need at least one sample".into()));
    }
    let d = model.dim();
    let base = Tensor::matrix(n, d, rng.normals(n * d))?;
    push_samples(model, &base)
}

/// Pushes given base points through the flow.
pub fn push_samples(model: &CnfModel, base: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let d = model.dim();
    check_len("base sample width", d, base.cols())?;
    let mut out = Vec::with_capacity(base.len());
    let mut logq = Vec::with_capacity(base.rows());
    for i in 0..base.rows() {
        let z0 = base.row(i);
        let (x, delta, _) = model.push_forward_to(z0, model.t1)?;
        out.extend_from_slice(&x);
        logq.push(std_normal_logpdf(z0) + delta);
    }
    Ok((Tensor::matrix(base.rows(), d, out)?, logq))
}

/// Log density of each row of `x` under the flow.
pub fn log_density(model: &CnfModel, x: &Tensor) -> Result<Vec<f64>> {
    check_len("log_density width", model.dim(), x.cols())?;
    (0..x.rows()).map(|i| model.log_density_point(x.row(i))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub nfe_forward: usize,
    pub nfe_backward: usize,
}

/// Reparameterized Monte-Carlo `KL(q || p)` without the entropy of the base:
/// `mean_i [log q(x_i) - log p(x_i)]` for `x_i` pushed from the rows of
/// `base`, with its parameter gradient.
pub fn kl_loss_grad(model: &CnfModel, target: &Dataset, base: &Tensor) -> Result<LossGrad> {
    let d = model.dim();
    check_len("target dimension", d, target.dim())?;
    let n = base.rows() as f64;
    let flow = FlowDynamics::new(&model.dynamics);
    let mut out = LossGrad {
        loss: 0.0,
        grad: vec![0.0; model.dynamics.theta().len()],
        nfe_forward: 0,
        nfe_backward: 0,
    };
    for i in 0..base.rows() {
        let z0 = base.row(i);
        let (x, delta, nfe) = model.push_forward_to(z0, model.t1)?;
        out.nfe_forward += nfe;
        let (logp, glogp) = target.log_density_grad(&x)?;
        out.loss += (std_normal_logpdf(z0) + delta - logp) / n;
        let mut end = x;
        end.push(delta);
        let mut seed: Vec<f64> = glogp.iter().map(|g| -g / n).collect();
        seed.push(1.0 / n);
        let g = backward_gradients(&flow, &end, model.t0, model.t1, &seed, &model.solver)?;
        out.nfe_backward += g.nfe;
        for (a, b) in out.grad.iter_mut().zip(&g.d_theta) {
            *a += b;
        }
    }
    Ok(out)
}

pub fn kl_density_matching_loss(model: &CnfModel, target: &Dataset, rng: &mut RngState, n: usize) -> Result<f64> {
    let base = Tensor::matrix(n, model.dim(), rng.normals(n * model.dim()))?;
    Ok(kl_loss_grad(model, target, &base)?.loss)
}

/// Negative mean log likelihood of the rows of `batch` and its gradient.
pub fn mle_loss_grad(model: &CnfModel, batch: &Tensor) -> Result<LossGrad> {
    check_len("batch width", model.dim(), batch.cols())?;
    let n = batch.rows() as f64;
    let flow = FlowDynamics::new(&model.dynamics);
    let mut out = LossGrad {
        loss: 0.0,
        grad: vec![0.0; model.dynamics.theta().len()],
        nfe_forward: 0,
        nfe_backward: 0,
    };
    for i in 0..batch.rows() {
        let (z0, delta, nfe) = model.pull_back(batch.row(i))?;
        out.nfe_forward += nfe;
        out.loss -= (std_normal_logpdf(&z0) - delta) / n;
        // The density solve runs t1 -> t0, so its adjoint runs t0 -> t1.
        let mut seed: Vec<f64> = z0.iter().map(|z| z / n).collect();
        seed.push(1.0 / n);
        let mut end = z0;
        end.push(delta);
        let g = backward_gradients(&flow, &end, model.t1, model.t0, &seed, &model.solver)?;
        out.nfe_backward += g.nfe;
        for (a, b) in out.grad.iter_mut().zip(&g.d_theta) {
            *a += b;
        }
    }
    Ok(out)
}

pub fn mle_loss(model: &CnfModel, batch: &Tensor) -> Result<f64> {
    Ok(-log_density(model, batch)?.iter().sum::<f64>() / batch.rows() as f64)
}

pub enum Task<'a> {
    /// Fit the flow to a closed-form density by reverse KL on `batch` fresh
    /// base samples per iteration.
    DensityMatching { target: &'a Dataset, batch: usize },
    /// Maximum likelihood on random minibatches of `data`.
    Mle { data: &'a Tensor, batch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub iter: usize,
    pub loss: f64,
    pub nfe_forward: usize,
    pub nfe_backward: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<TrainRecord>,
}

impl TrainingLog {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Writes `iter,loss,nfe_forward,nfe_backward`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "iter,loss,nfe_forward,nfe_backward")?;
        for r in &self.records {
            writeln!(w, "{},{:.10e},{},{}", r.iter, r.loss, r.nfe_forward, r.nfe_backward)?;
        }
        Ok(())
    }
}

pub(crate) fn minibatch(data: &Tensor, batch: usize, rng: &mut RngState) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = (0..batch).map(|_| data.row(rng.below(data.rows())).to_vec()).collect();
    Tensor::from_rows(&rows)
}

/// Adam training of the flow parameters. The loss recorded at iteration `i`
/// is the one whose gradient produced update `i`.
pub fn train_cnf(model: &mut CnfModel, task: &Task, iters: usize, adam: AdamConfig, rng: &mut RngState) -> Result<TrainingLog> {
    let mut opt = AdamState::new(model.dynamics.theta().len(), adam);
    let mut log = TrainingLog::default();
    for iter in 0..iters {
        let lg = match task {
            Task::DensityMatching { target, batch } => {
                let base = Tensor::matrix(*batch, model.dim(), rng.normals(batch * model.dim()))?;
                kl_loss_grad(model, target, &base)?
            }
            Task::Mle { data, batch } => mle_loss_grad(model, &minibatch(data, *batch, rng)?)?,
        };
        if !lg.loss.is_finite() || lg.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDivergence { iter, loss: lg.loss });
        }
        opt.step(model.dynamics.theta_mut(), &lg.grad)?;
        log.records.push(TrainRecord {
            iter,
            loss: lg.loss,
            nfe_forward: lg.nfe_forward,
            nfe_backward: lg.nfe_backward,
        });
    }
    Ok(log)
}

/// `log q` on the grid `xs x ys` (row-major in `ys`, then `xs`).
pub fn density_grid(model: &CnfModel, xs: &[f64], ys: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    if model.dim() != 2 {
        return Err(Error::Argument("density grid needs a 2-D model".into()));
    }
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &y in ys {
        for &x in xs {
            out.push((x, y, model.log_density_point(&[x, y])?));
        }
    }
    Ok(out)
}

/// Writes `x,y,logq`.
pub fn write_density_grid_csv<W: Write>(w: &mut W, grid: &[(f64, f64, f64)]) -> Result<()> {
    writeln!(w, "x,y,logq")?;
    for (x, y, l) in grid {
        writeln!(w, "{x:.10e},{y:.10e},{l:.10e}")?;
    }
    Ok(())
}
