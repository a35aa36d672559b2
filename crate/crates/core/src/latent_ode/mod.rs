//! Latent ODE sequence model: a GRU reads an irregular sequence backwards
//! in time and proposes a Gaussian posterior over the initial latent state,
//! which is integrated by a time-invariant field and decoded pointwise.
//! Trained as a VAE with adjoint gradients through the latent solve.

mod poisson;
mod rnn;
mod spirals;

pub use poisson::{
    poisson_loglik, poisson_loglik_grad, sample_poisson_process, train_poisson, PoissonFit, PoissonGrad, PoissonRateModel,
    PoissonSystem,
};
pub use rnn::{train_rnn, RnnBaseline};
pub use spirals::{
    generate_spirals, predictive_rmse, subsample, Direction, Sequence, SpiralDataset, CENTER_JITTER, SPIRAL_GROWTH,
    SPIRAL_R0, SPIRAL_START_MAX, SPIRAL_SWEEP,
};

use std::io::{Read, Write};

use crate::adjoint::backward_gradients_multi;
use crate::cnf::LOG_2PI;
use crate::dynamics::checkpoint::{read_f64s, read_u32, write_f64s, write_u32};
use crate::dynamics::{build_mlp_dynamics, read_dynamics, write_dynamics, Architecture, DynamicsFunc};
use crate::error::{check_len, Error, Result};
use crate::nn::{Gru, GruStep, Mlp};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::RngState;
use crate::solve::{solve_at_times, SolveConfig};
use crate::tensor::Activation;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentOdeConfig {
    pub obs_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: usize,
    pub dynamics_hidden: usize,
    pub decoder_hidden: usize,
    pub obs_std: f64,
}

impl Default for LatentOdeConfig {
    fn default() -> Self {
        LatentOdeConfig {
            obs_dim: 2,
            latent_dim: 4,
            encoder_hidden: 25,
            dynamics_hidden: 20,
            decoder_hidden: 20,
            obs_std: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentOdeModel {
    pub obs_dim: usize,
    pub latent_dim: usize,
    gru: Gru,
    pub gru_params: Vec<f64>,
    /// Linear map from the final GRU state to `[mu, log sigma]`.
    pub head_params: Vec<f64>,
    pub dynamics: DynamicsFunc,
    decoder: Mlp,
    pub decoder_params: Vec<f64>,
    pub log_obs_std: f64,
}

/// The three terms of a single-sample ELBO for one sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub elbo: f64,
    pub loglik: f64,
    pub kl: f64,
}

/// Closed-form `KL(N(mu, sigma^2) || N(0, 1))` summed over dimensions.
pub fn gaussian_kl(mu: &[f64], log_sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(log_sigma)
        .map(|(m, ls)| 0.5 * (m * m + (2.0 * ls).exp() - 1.0) - ls)
        .sum()
}

/// Prepends `t = 0` (where the latent initial state lives) unless the first
/// time already is 0. Returns the times and the index of `times[0]`.
fn with_origin(times: &[f64]) -> Result<(Vec<f64>, usize)> {
    match times.first() {
        None => Err(Error::Argument("empty time list".into())),
        Some(&t) if t < 0.0 => Err(Error::Argument(format!("times must be >= 0, got {t}"))),
        Some(&t) if t == 0.0 => Ok((times.to_vec(), 0)),
        Some(_) => {
            let mut v = Vec::with_capacity(times.len() + 1);
            v.push(0.0);
            v.extend_from_slice(times);
            Ok((v, 1))
        }
    }
}

impl LatentOdeModel {
    pub fn new(cfg: LatentOdeConfig, rng: &mut RngState) -> Result<Self> {
        let LatentOdeConfig {
            obs_dim,
            latent_dim,
            encoder_hidden,
            dynamics_hidden,
            decoder_hidden,
            obs_std,
        } = cfg;
        if obs_dim == 0 || latent_dim == 0 || encoder_hidden == 0 || decoder_hidden == 0 || !(obs_std > 0.0) {
            return Err(Error::Argument(format!("invalid latent ODE configuration {cfg:?}")));
        }
        let gru = Gru::new(obs_dim + 1, encoder_hidden);
        let gru_params = gru.init(rng);
        let head = Mlp::new(vec![encoder_hidden, 2 * latent_dim], Activation::Identity, Activation::Identity);
        let mut head_params = head.init(rng);
        // Start near the prior: small means and log sigmas.
        for p in head_params.iter_mut() {
            *p *= 0.1;
        }
        let dynamics = build_mlp_dynamics(latent_dim, &[dynamics_hidden], false, rng)?;
        let decoder = Mlp::new(vec![latent_dim, decoder_hidden, obs_dim], Activation::Tanh, Activation::Identity);
        let decoder_params = decoder.init(rng);
        Ok(LatentOdeModel {
            obs_dim,
            latent_dim,
            gru,
            gru_params,
            head_params,
            dynamics,
            decoder,
            decoder_params,
            log_obs_std: obs_std.ln(),
        })
    }

    pub fn encoder_hidden(&self) -> usize {
        self.gru.hidden_dim()
    }

    pub fn decoder_hidden(&self) -> usize {
        self.decoder.sizes()[1]
    }

    pub fn num_params(&self) -> usize {
        self.gru_params.len() + self.head_params.len() + self.dynamics.theta().len() + self.decoder_params.len() + 1
    }

    /// All parameters as `[gru, head, dynamics, decoder, log_obs_std]`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(&self.gru_params);
        v.extend_from_slice(&self.head_params);
        v.extend_from_slice(self.dynamics.theta());
        v.extend_from_slice(&self.decoder_params);
        v.push(self.log_obs_std);
        v
    }

    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<()> {
        check_len("latent ODE parameters", self.num_params(), p.len())?;
        let mut rest = p;
        let mut take = |n: usize| {
            let (a, b) = rest.split_at(n);
            rest = b;
            a.to_vec()
        };
        self.gru_params = take(self.gru_params.len());
        self.head_params = take(self.head_params.len());
        let th = take(self.dynamics.theta().len());
        self.dynamics.theta_mut().copy_from_slice(&th);
        self.decoder_params = take(self.decoder_params.len());
        self.log_obs_std = take(1)[0];
        Ok(())
    }

    /// Encoder inputs `[x_i, t_{i+1} - t_i]` in time order (gap 0 for the last).
    pub fn encoder_inputs(&self, seq: &Sequence) -> Result<Vec<Vec<f64>>> {
        if seq.is_empty() {
            return Err(Error::Argument("cannot encode an empty sequence".into()));
        }
        check_len("sequence observations", seq.times.len(), seq.obs.len())?;
        let n = seq.len();
        (0..n)
            .map(|i| {
                check_len("observation", self.obs_dim, seq.obs[i].len())?;
                let gap = if i + 1 < n { seq.times[i + 1] - seq.times[i] } else { 0.0 };
                let mut v = seq.obs[i].clone();
                v.push(gap);
                Ok(v)
            })
            .collect()
    }

    fn head(&self, h: &[f64]) -> Vec<f64> {
        let nh = h.len();
        let l2 = 2 * self.latent_dim;
        (0..l2)
            .map(|j| {
                self.head_params[l2 * nh + j]
                    + self.head_params[j * nh..(j + 1) * nh].iter().zip(h).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    fn run_encoder(&self, steps_in: &[Vec<f64>], backwards: bool) -> Result<(Vec<GruStep>, Vec<f64>)> {
        if steps_in.is_empty() {
            return Err(Error::Argument("cannot encode an empty sequence".into()));
        }
        let ordered: Vec<Vec<f64>> = if backwards {
            steps_in.iter().rev().cloned().collect()
        } else {
            steps_in.to_vec()
        };
        for x in &ordered {
            check_len("encoder input", self.gru.input_dim(), x.len())?;
        }
        let steps = self.gru.run(&self.gru_params, &ordered);
        let out = self.head(steps.last().unwrap().hidden());
        Ok((steps, out))
    }

    /// Posterior `(mu, sigma)` from encoder inputs. With `backwards` set the
    /// inputs are consumed last to first.
    pub fn encode_steps(&self, inputs: &[Vec<f64>], backwards: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        let (_, out) = self.run_encoder(inputs, backwards)?;
        let l = self.latent_dim;
        Ok((out[..l].to_vec(), out[l..].iter().map(|s| s.exp()).collect()))
    }

    /// Posterior over the initial latent state, reading the sequence backwards.
    pub fn encode(&self, seq: &Sequence) -> Result<(Vec<f64>, Vec<f64>)> {
        self.encode_steps(&self.encoder_inputs(seq)?, true)
    }

    pub fn decode_point(&self, z: &[f64]) -> Vec<f64> {
        self.decoder.forward(&self.decoder_params, z)
    }

    /// Decoded means at `times`, with `z0` taken to sit at `times[0]`.
    pub fn decode_trajectory(&self, z0: &[f64], times: &[f64], cfg: &SolveConfig) -> Result<Vec<Vec<f64>>> {
        check_len("latent state", self.latent_dim, z0.len())?;
        if times.len() == 1 {
            return Ok(vec![self.decode_point(z0)]);
        }
        let traj = solve_at_times(&self.dynamics, z0, times, cfg)?;
        Ok(traj.states.iter().map(|z| self.decode_point(z)).collect())
    }

    /// Decoded means at `times` for an initial state sitting at `t = 0`.
    pub fn decode_from_origin(&self, z0: &[f64], times: &[f64], cfg: &SolveConfig) -> Result<Vec<Vec<f64>>> {
        let (full, offset) = with_origin(times)?;
        let mut out = self.decode_trajectory(z0, &full, cfg)?;
        Ok(out.split_off(offset))
    }

    /// Posterior-mean prediction at `times` given observed `seq`.
    pub fn predict(&self, seq: &Sequence, times: &[f64], cfg: &SolveConfig) -> Result<Vec<Vec<f64>>> {
        let (mu, _) = self.encode(seq)?;
        self.decode_from_origin(&mu, times, cfg)
    }

    /// Single-sample ELBO with noise `eps`, and the gradient of `-ELBO` with
    /// respect to [`flat_params`](Self::flat_params).
    pub fn elbo_grad(&self, seq: &Sequence, eps: &[f64], cfg: &SolveConfig) -> Result<(ElboTerms, Vec<f64>)> {
        let l = self.latent_dim;
        check_len("reparameterization noise", l, eps.len())?;
        let inputs = self.encoder_inputs(seq)?;
        let (steps, out) = self.run_encoder(&inputs, true)?;
        let mu = &out[..l];
        let log_sigma = &out[l..];
        let sigma: Vec<f64> = log_sigma.iter().map(|s| s.exp()).collect();
        let z0: Vec<f64> = (0..l).map(|i| mu[i] + sigma[i] * eps[i]).collect();
        let kl = gaussian_kl(mu, log_sigma);

        let (times, offset) = with_origin(&seq.times)?;
        let states = if times.len() == 1 {
            vec![z0.clone()]
        } else {
            solve_at_times(&self.dynamics, &z0, &times, cfg)?.states
        };

        let n_gru = self.gru_params.len();
        let n_head = self.head_params.len();
        let n_dyn = self.dynamics.theta().len();
        let n_dec = self.decoder_params.len();
        let mut grad = vec![0.0; self.num_params()];
        let s2 = (2.0 * self.log_obs_std).exp();
        let mut loglik = 0.0;
        let mut dl_dz = vec![vec![0.0; l]; times.len()];
        {
            let g_dec = &mut grad[n_gru + n_head + n_dyn..n_gru + n_head + n_dyn + n_dec];
            let mut g_logstd = 0.0;
            for (i, x) in seq.obs.iter().enumerate() {
                let cache = self.decoder.forward_cached(&self.decoder_params, &states[offset + i]);
                let xhat = cache.output();
                let mut dxhat = vec![0.0; self.obs_dim];
                for d in 0..self.obs_dim {
                    let r = x[d] - xhat[d];
                    loglik += -0.5 * LOG_2PI - self.log_obs_std - 0.5 * r * r / s2;
                    dxhat[d] = -r / s2;
                    g_logstd += 1.0 - r * r / s2;
                }
                self.decoder
                    .backward(&self.decoder_params, &cache, &dxhat, Some(&mut dl_dz[offset + i]), g_dec);
            }
            grad[n_gru + n_head + n_dyn + n_dec] = g_logstd;
        }

        let d_z0 = if times.len() == 1 {
            dl_dz[0].clone()
        } else {
            let b = backward_gradients_multi(&self.dynamics, &times, &states, &dl_dz, cfg)?;
            grad[n_gru + n_head..n_gru + n_head + n_dyn].copy_from_slice(&b.d_theta);
            b.d_z0
        };

        // Through the reparameterization and the closed-form KL.
        let mut dout = vec![0.0; 2 * l];
        for i in 0..l {
            dout[i] = d_z0[i] + mu[i];
            dout[l + i] = d_z0[i] * sigma[i] * eps[i] + sigma[i] * sigma[i] - 1.0;
        }
        let h = steps.last().unwrap().hidden();
        let nh = h.len();
        let mut dh = vec![0.0; nh];
        {
            let g_head = &mut grad[n_gru..n_gru + n_head];
            for j in 0..2 * l {
                for k in 0..nh {
                    g_head[j * nh + k] += dout[j] * h[k];
                    dh[k] += dout[j] * self.head_params[j * nh + k];
                }
                g_head[2 * l * nh + j] += dout[j];
            }
        }
        let mut dhs = vec![vec![0.0; nh]; steps.len()];
        *dhs.last_mut().unwrap() = dh;
        self.gru.backward(&self.gru_params, &steps, &dhs, &mut grad[..n_gru]);

        Ok((ElboTerms { elbo: loglik - kl, loglik, kl }, grad))
    }

    pub fn elbo(&self, seq: &Sequence, rng: &mut RngState, cfg: &SolveConfig) -> Result<ElboTerms> {
        let eps = rng.normals(self.latent_dim);
        Ok(self.elbo_grad(seq, &eps, cfg)?.0)
    }

    /// Serializes the dynamics in the checkpoint format, then the encoder,
    /// head, decoder and observation noise as length-prefixed blocks.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        write_dynamics(w, &self.dynamics)?;
        write_u32(w, 3)?;
        for d in [self.obs_dim, self.encoder_hidden(), self.decoder_hidden()] {
            write_u32(w, d as u32)?;
        }
        for block in [&self.gru_params, &self.head_params, &self.decoder_params, &vec![self.log_obs_std]] {
            write_u32(w, block.len() as u32)?;
            write_f64s(w, block)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Self> {
        let dynamics = read_dynamics(r)?;
        let (latent_dim, dynamics_hidden) = match dynamics.architecture() {
            Architecture::Mlp {
                dim,
                hidden,
                time_dependent: false,
            } if hidden.len() == 1 => (*dim, hidden[0]),
            other => return Err(Error::Format(format!("latent dynamics must be a one-hidden-layer autonomous MLP, found {other:?}"))),
        };
        if read_u32(r)? != 3 {
            return Err(Error::Format("expected three model dimensions".into()));
        }
        let obs_dim = read_u32(r)? as usize;
        let encoder_hidden = read_u32(r)? as usize;
        let decoder_hidden = read_u32(r)? as usize;
        let cfg = LatentOdeConfig {
            obs_dim,
            latent_dim,
            encoder_hidden,
            dynamics_hidden,
            decoder_hidden,
            obs_std: 1.0,
        };
        let mut model = LatentOdeModel::new(cfg, &mut RngState::new(0)).map_err(|e| Error::Format(e.to_string()))?;
        model.dynamics = dynamics;
        let mut block = |want: usize| -> Result<Vec<f64>> {
            let n = read_u32(r)? as usize;
            if n != want {
                return Err(Error::Format(format!("parameter block of {n} values, expected {want}")));
            }
            read_f64s(r, n)
        };
        model.gru_params = block(model.gru_params.len())?;
        model.head_params = block(model.head_params.len())?;
        model.decoder_params = block(model.decoder_params.len())?;
        model.log_obs_std = block(1)?[0];
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

/// Mean `-ELBO` per epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatentTrainLog {
    pub epoch_loss: Vec<f64>,
}

/// Adam on minibatches of sequences, reshuffled every epoch.
pub fn train_latent_ode(
    model: &mut LatentOdeModel,
    data: &[Sequence],
    train: &TrainConfig,
    cfg: &SolveConfig,
    rng: &mut RngState,
    mut on_epoch: impl FnMut(usize, f64, &LatentOdeModel),
) -> Result<LatentTrainLog> {
    if data.is_empty() || train.batch_size == 0 {
        return Err(Error::Argument("need data and a positive batch size".into()));
    }
    let mut opt = AdamState::new(model.num_params(), train.adam);
    let mut params = model.flat_params();
    let mut log = LatentTrainLog::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..train.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i + 1));
        }
        let mut total = 0.0;
        for chunk in order.chunks(train.batch_size) {
            let mut g = vec![0.0; params.len()];
            for &k in chunk {
                let eps = rng.normals(model.latent_dim);
                let (terms, gk) = model.elbo_grad(&data[k], &eps, cfg)?;
                total -= terms.elbo;
                for (a, b) in g.iter_mut().zip(&gk) {
                    *a += b / chunk.len() as f64;
                }
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::TrainingDivergence { iter: epoch, loss: f64::NAN });
            }
            opt.step(&mut params, &g)?;
            model.set_flat_params(&params)?;
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::TrainingDivergence { iter: epoch, loss: mean });
        }
        log.epoch_loss.push(mean);
        on_epoch(epoch, mean, model);
    }
    Ok(log)
}

/// RMSE of posterior-mean reconstructions at the observed times.
pub fn reconstruction_rmse(model: &LatentOdeModel, data: &[Sequence], cfg: &SolveConfig) -> Result<f64> {
    let pred = data
        .iter()
        .map(|s| model.predict(s, &s.times, cfg))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<Vec<Vec<f64>>> = data.iter().map(|s| s.obs.clone()).collect();
    predictive_rmse(&pred, &truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(seed: u64) -> LatentOdeModel {
        let cfg = LatentOdeConfig {
            latent_dim: 3,
            encoder_hidden: 5,
            dynamics_hidden: 4,
            decoder_hidden: 4,
            ..LatentOdeConfig::default()
        };
        LatentOdeModel::new(cfg, &mut RngState::new(seed)).unwrap()
    }

    fn seq() -> Sequence {
        Sequence {
            times: vec![0.3, 0.7, 1.1, 1.6],
            obs: vec![vec![0.5, -0.1], vec![0.2, 0.4], vec![-0.3, 0.6], vec![-0.5, 0.1]],
        }
    }

    #[test]
    fn kl_closed_form() {
        assert_eq!(gaussian_kl(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((gaussian_kl(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_encoder_outputs_bias() {
        let mut m = small_model(1);
        m.gru_params.iter_mut().for_each(|p| *p = 0.0);
        let nh = m.encoder_hidden();
        let l = m.latent_dim;
        for j in 0..2 * l * nh {
            m.head_params[j] = 0.0;
        }
        let bias: Vec<f64> = (0..2 * l).map(|j| 0.1 * j as f64 - 0.2).collect();
        m.head_params[2 * l * nh..].copy_from_slice(&bias);
        let (mu, sigma) = m.encode(&seq()).unwrap();
        assert_eq!(mu, bias[..l].to_vec());
        for i in 0..l {
            assert!((sigma[i] - bias[l + i].exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn encoder_sensitivity_and_reversal_contract() {
        let m = small_model(2);
        let s = seq();
        let mut other = s.clone();
        other.obs.reverse();
        assert_ne!(m.encode(&s).unwrap(), m.encode(&other).unwrap());
        let inputs = m.encoder_inputs(&s).unwrap();
        let reversed: Vec<Vec<f64>> = inputs.iter().rev().cloned().collect();
        assert_eq!(m.encode_steps(&reversed, false).unwrap(), m.encode(&s).unwrap());
        assert!(m.encode_steps(&[], true).is_err());
        assert!(m.encode(&s).unwrap().1.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn decode_contracts() {
        let mut m = small_model(3);
        let cfg = SolveConfig::dopri5(1e-8, 1e-8);
        let z0 = [0.2, -0.1, 0.4];
        assert_eq!(m.decode_trajectory(&z0, &[0.5], &cfg).unwrap(), vec![m.decode_point(&z0)]);
        let far = m.decode_from_origin(&z0, &[1.0, 5.0, 20.0], &cfg).unwrap();
        assert!(far.iter().flatten().all(|x| x.is_finite()));
        m.dynamics = DynamicsFunc::zeros(m.dynamics.architecture().clone()).unwrap();
        let flat = m.decode_from_origin(&z0, &[1.0, 2.0, 3.0], &cfg).unwrap();
        assert!(flat.iter().all(|x| x == &flat[0]));
    }

    #[test]
    fn time_shift_invariance() {
        let m = small_model(4);
        let cfg = SolveConfig::dopri5(1e-10, 1e-10);
        let z0 = [0.3, 0.1, -0.2];
        let a = m.decode_trajectory(&z0, &[0.0, 0.5, 1.5], &cfg).unwrap();
        let b = m.decode_trajectory(&z0, &[7.0, 7.5, 8.5], &cfg).unwrap();
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn elbo_gradient_matches_fd() {
        let m = small_model(5);
        let cfg = SolveConfig::dopri5(1e-10, 1e-10);
        let s = seq();
        let eps = [0.3, -1.1, 0.6];
        let (_, g) = m.elbo_grad(&s, &eps, &cfg).unwrap();
        let p0 = m.flat_params();
        let h = 1e-6;
        let loss = |p: &[f64]| {
            let mut mm = m.clone();
            mm.set_flat_params(p).unwrap();
            -mm.elbo_grad(&s, &eps, &cfg).unwrap().0.elbo
        };
        for k in (0..p0.len()).step_by(7).chain([p0.len() - 1]) {
            let mut pp = p0.clone();
            pp[k] += h;
            let mut pm = p0.clone();
            pm[k] -= h;
            let fd = (loss(&pp) - loss(&pm)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-3 * fd.abs().max(1e-3), "param {k}: fd {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn elbo_bounded_by_marginal_for_constant_decoder() {
        // With a decoder that ignores z the marginal likelihood is a product of
        // Gaussians around the decoder bias.
        let mut m = small_model(8);
        let nh = m.decoder_hidden();
        let n_dec = m.decoder_params.len();
        for p in &mut m.decoder_params[..n_dec - 2 - 2 * nh] {
            *p = 0.3;
        }
        for p in &mut m.decoder_params[n_dec - 2 - 2 * nh..n_dec - 2] {
            *p = 0.0;
        }
        let bias = [0.1, -0.2];
        m.decoder_params[n_dec - 2..].copy_from_slice(&bias);
        let s = seq();
        let var = (2.0 * m.log_obs_std).exp();
        let marginal: f64 = s
            .obs
            .iter()
            .flat_map(|x| x.iter().zip(&bias))
            .map(|(x, b)| -0.5 * LOG_2PI - m.log_obs_std - 0.5 * (x - b).powi(2) / var)
            .sum();
        let mut rng = RngState::new(1);
        let cfg = SolveConfig::default();
        for _ in 0..5 {
            let t = m.elbo(&s, &mut rng, &cfg).unwrap();
            assert!((t.loglik - marginal).abs() < 1e-9);
            assert!(t.elbo <= marginal);
        }
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let mut m = small_model(6);
        let before = m.clone();
        let train = TrainConfig {
            epochs: 0,
            batch_size: 2,
            adam: AdamConfig::default(),
        };
        let log = train_latent_ode(&mut m, &[seq()], &train, &SolveConfig::default(), &mut RngState::new(0), |_, _, _| {}).unwrap();
        assert!(log.epoch_loss.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = small_model(7);
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        let back = LatentOdeModel::read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        buf.truncate(buf.len() - 3);
        assert!(LatentOdeModel::read_checkpoint(&mut buf.as_slice()).is_err());
    }
}
