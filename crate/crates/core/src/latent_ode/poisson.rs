//! Inhomogeneous Poisson process driven by a latent trajectory. The
//! compensator `Lambda(t) = int lambda(z(s)) ds` is carried as an extra state
//! so one solve gives both the event intensities and the integral term.

use crate::adjoint::backward_gradients_multi;
use crate::dynamics::{Dynamics, DynamicsFunc};
use crate::error::{check_len, Error, Result};
use crate::nn::Mlp;
use crate::optim::{AdamConfig, AdamState};
use crate::rng::RngState;
use crate::solve::{solve_at_times, SolveConfig};
use crate::tensor::{sigmoid, softplus, Activation};

/// `lambda(z) = softplus(mlp(z))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonRateModel {
    net: Mlp,
    pub params: Vec<f64>,
}

impl PoissonRateModel {
    pub fn new(latent_dim: usize, hidden: usize, rng: &mut RngState) -> Self {
        let net = Mlp::new(vec![latent_dim, hidden, 1], Activation::Tanh, Activation::Identity);
        let params = net.init(rng);
        PoissonRateModel { net, params }
    }

    /// A rate model that ignores `z` and returns `lambda` everywhere.
    pub fn constant(latent_dim: usize, hidden: usize, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::Argument(format!("rate must be positive, got {lambda}")));
        }
        let net = Mlp::new(vec![latent_dim, hidden, 1], Activation::Tanh, Activation::Identity);
        let mut params = vec![0.0; net.num_params()];
        *params.last_mut().unwrap() = lambda.exp_m1().ln();
        Ok(PoissonRateModel { net, params })
    }

    pub fn latent_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn rate(&self, z: &[f64]) -> f64 {
        softplus(self.net.forward(&self.params, z)[0])
    }

    /// Rate plus its gradients, accumulated into `dz` and `dtheta` with weight `w`.
    fn rate_grad_acc(&self, z: &[f64], w: f64, dz: &mut [f64], dtheta: &mut [f64]) -> f64 {
        let cache = self.net.forward_cached(&self.params, z);
        let u = cache.output()[0];
        self.net.backward(&self.params, &cache, &[w * sigmoid(u)], Some(dz), dtheta);
        softplus(u)
    }
}

/// Latent dynamics augmented with the compensator: state `[z, Lambda]`,
/// parameters `[theta_f, theta_rate]`.
pub struct PoissonSystem<'a> {
    f: &'a DynamicsFunc,
    rate: &'a PoissonRateModel,
    params: Vec<f64>,
}

impl<'a> PoissonSystem<'a> {
    pub fn new(f: &'a DynamicsFunc, rate: &'a PoissonRateModel) -> Result<Self> {
        check_len("rate model input", f.dim(), rate.latent_dim())?;
        let mut params = f.theta().to_vec();
        params.extend_from_slice(&rate.params);
        Ok(PoissonSystem { f, rate, params })
    }
}

impl Dynamics for PoissonSystem<'_> {
    fn state_dim(&self) -> usize {
        self.f.dim() + 1
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn eval_into(&self, z: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let l = self.f.dim();
        self.f.eval_into(&z[..l], t, &mut out[..l])?;
        out[l] = self.rate.rate(&z[..l]);
        Ok(())
    }

    fn vjp_into(&self, z: &[f64], t: f64, a: &[f64], vjp_z: &mut [f64], vjp_theta: &mut [f64]) -> Result<f64> {
        let l = self.f.dim();
        let nf = self.f.theta().len();
        let (th_f, th_r) = vjp_theta.split_at_mut(nf);
        let vjp_t = self.f.vjp_into(&z[..l], t, &a[..l], &mut vjp_z[..l], th_f)?;
        th_r.iter_mut().for_each(|x| *x = 0.0);
        self.rate.rate_grad_acc(&z[..l], a[l], &mut vjp_z[..l], th_r);
        vjp_z[l] = 0.0;
        Ok(vjp_t)
    }
}

/// Gradients of the log-likelihood (ascent direction).
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonGrad {
    pub d_z0: Vec<f64>,
    pub d_theta_f: Vec<f64>,
    pub d_theta_rate: Vec<f64>,
    pub nfe: usize,
}

/// Solve grid `[t_start, events.., t_end]` and the index of each event on it.
fn event_grid(events: &[f64], t_start: f64, t_end: f64) -> Result<(Vec<f64>, Vec<usize>)> {
    if !(t_end > t_start) {
        return Err(Error::Argument(format!("observation window [{t_start}, {t_end}] is empty")));
    }
    if events.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument("event times must be strictly increasing".into()));
    }
    if events.iter().any(|&t| t < t_start || t > t_end) {
        return Err(Error::Argument(format!("event outside [{t_start}, {t_end}]")));
    }
    let mut grid = vec![t_start];
    let mut idx = Vec::with_capacity(events.len());
    for &t in events {
        if t > *grid.last().unwrap() {
            grid.push(t);
        }
        idx.push(grid.len() - 1);
    }
    if t_end > *grid.last().unwrap() {
        grid.push(t_end);
    }
    Ok((grid, idx))
}

fn augmented_start(z0: &[f64]) -> Vec<f64> {
    let mut s = z0.to_vec();
    s.push(0.0);
    s
}

/// `sum_i log lambda(z(t_i)) - int_{t_start}^{t_end} lambda(z(t)) dt`.
pub fn poisson_loglik(
    f: &DynamicsFunc,
    rate: &PoissonRateModel,
    z0: &[f64],
    events: &[f64],
    t_start: f64,
    t_end: f64,
    cfg: &SolveConfig,
) -> Result<f64> {
    check_len("latent initial state", f.dim(), z0.len())?;
    let sys = PoissonSystem::new(f, rate)?;
    let (grid, idx) = event_grid(events, t_start, t_end)?;
    let l = f.dim();
    let states = solve_at_times(&sys, &augmented_start(z0), &grid, cfg)?.states;
    let intensity: f64 = idx.iter().map(|&i| rate.rate(&states[i][..l]).ln()).sum();
    Ok(intensity - states.last().unwrap()[l])
}

/// Log-likelihood and its gradient. The adjoint carries the path terms; the
/// event intensities also contribute directly through the rate parameters.
pub fn poisson_loglik_grad(
    f: &DynamicsFunc,
    rate: &PoissonRateModel,
    z0: &[f64],
    events: &[f64],
    t_start: f64,
    t_end: f64,
    cfg: &SolveConfig,
) -> Result<(f64, PoissonGrad)> {
    check_len("latent initial state", f.dim(), z0.len())?;
    let sys = PoissonSystem::new(f, rate)?;
    let (grid, idx) = event_grid(events, t_start, t_end)?;
    let l = f.dim();
    let traj = solve_at_times(&sys, &augmented_start(z0), &grid, cfg)?;
    let states = traj.states;

    let nf = f.theta().len();
    let mut direct_rate = vec![0.0; rate.params.len()];
    let mut seeds = vec![vec![0.0; l + 1]; grid.len()];
    let mut loglik = 0.0;
    for &i in &idx {
        let mut dz = vec![0.0; l];
        let mut dth = vec![0.0; rate.params.len()];
        let lam = rate.rate_grad_acc(&states[i][..l], 1.0, &mut dz, &mut dth);
        loglik += lam.ln();
        for k in 0..l {
            seeds[i][k] += dz[k] / lam;
        }
        for (d, g) in direct_rate.iter_mut().zip(&dth) {
            *d += g / lam;
        }
    }
    let last = grid.len() - 1;
    loglik -= states[last][l];
    seeds[last][l] -= 1.0;

    let b = backward_gradients_multi(&sys, &grid, &states, &seeds, cfg)?;
    let d_theta_rate = b.d_theta[nf..].iter().zip(&direct_rate).map(|(a, d)| a + d).collect();
    Ok((
        loglik,
        PoissonGrad {
            d_z0: b.d_z0[..l].to_vec(),
            d_theta_f: b.d_theta[..nf].to_vec(),
            d_theta_rate,
            nfe: traj.nfe + b.nfe,
        },
    ))
}

/// Event times on `[t_start, t_end]` by thinning a homogeneous process of
/// rate `rate_max`.
pub fn sample_poisson_process(
    rng: &mut RngState,
    rate: impl Fn(f64) -> f64,
    t_start: f64,
    t_end: f64,
    rate_max: f64,
) -> Result<Vec<f64>> {
    if !(rate_max > 0.0) || !(t_end > t_start) {
        return Err(Error::Argument("need rate_max > 0 and t_end > t_start".into()));
    }
    let mut events = Vec::new();
    let mut t = t_start;
    loop {
        t -= (1.0 - rng.uniform(0.0, 1.0)).ln() / rate_max;
        if t > t_end {
            return Ok(events);
        }
        let lam = rate(t);
        if !(0.0..=rate_max).contains(&lam) {
            return Err(Error::Domain(format!("rate {lam} at t = {t} outside [0, {rate_max}]")));
        }
        if rng.uniform(0.0, 1.0) * rate_max < lam {
            events.push(t);
        }
    }
}

/// Trainable latent point process: field, rate network and learned `z0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonFit {
    pub dynamics: DynamicsFunc,
    pub rate: PoissonRateModel,
    pub z0: Vec<f64>,
}

impl PoissonFit {
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.z0.clone();
        v.extend_from_slice(self.dynamics.theta());
        v.extend_from_slice(&self.rate.params);
        v
    }

    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<()> {
        let l = self.z0.len();
        let nf = self.dynamics.theta().len();
        check_len("poisson model parameters", l + nf + self.rate.params.len(), p.len())?;
        self.z0.copy_from_slice(&p[..l]);
        self.dynamics.theta_mut().copy_from_slice(&p[l..l + nf]);
        self.rate.params.copy_from_slice(&p[l + nf..]);
        Ok(())
    }

    pub fn loglik(&self, events: &[f64], t_start: f64, t_end: f64, cfg: &SolveConfig) -> Result<f64> {
        poisson_loglik(&self.dynamics, &self.rate, &self.z0, events, t_start, t_end, cfg)
    }

    /// Rate along the latent path at `times` (ascending, first one is where `z0` sits).
    pub fn rate_path(&self, times: &[f64], cfg: &SolveConfig) -> Result<Vec<f64>> {
        let traj = solve_at_times(&self.dynamics, &self.z0, times, cfg)?;
        Ok(traj.states.iter().map(|z| self.rate.rate(z)).collect())
    }
}

/// Maximizes the log-likelihood with Adam; returns the negative
/// log-likelihood before each update.
pub fn train_poisson(
    fit: &mut PoissonFit,
    events: &[f64],
    t_start: f64,
    t_end: f64,
    iters: usize,
    adam: AdamConfig,
    cfg: &SolveConfig,
) -> Result<Vec<f64>> {
    let mut params = fit.flat_params();
    let mut opt = AdamState::new(params.len(), adam);
    let mut losses = Vec::with_capacity(iters);
    for iter in 0..iters {
        let (ll, g) = poisson_loglik_grad(&fit.dynamics, &fit.rate, &fit.z0, events, t_start, t_end, cfg)?;
        let grad: Vec<f64> = g
            .d_z0
            .iter()
            .chain(&g.d_theta_f)
            .chain(&g.d_theta_rate)
            .map(|x| -x)
            .collect();
        if !ll.is_finite() || grad.iter().any(|x| !x.is_finite()) {
            return Err(Error::TrainingDivergence { iter, loss: -ll });
        }
        losses.push(-ll);
        opt.step(&mut params, &grad)?;
        fit.set_flat_params(&params)?;
    }
    Ok(losses)
}
