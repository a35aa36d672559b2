//! Autoregressive GRU baseline: predicts a Gaussian over the next observation,
//! optionally fed the gap to the next time so it can handle irregular grids.

use super::{Sequence, TrainConfig};
use crate::cnf::LOG_2PI;
use crate::error::{check_len, Error, Result};
use crate::nn::{Gru, GruStep};
use crate::optim::AdamState;
use crate::rng::RngState;

#[derive(Debug, Clone, PartialEq)]
pub struct RnnBaseline {
    obs_dim: usize,
    time_gaps: bool,
    gru: Gru,
    pub gru_params: Vec<f64>,
    /// Linear map from the hidden state to `[mean, log std]`.
    pub head_params: Vec<f64>,
}

impl RnnBaseline {
    pub fn new(obs_dim: usize, hidden: usize, time_gaps: bool, rng: &mut RngState) -> Result<Self> {
        if obs_dim == 0 || hidden == 0 {
            return Err(Error::Argument("RNN needs obs_dim >= 1 and hidden >= 1".into()));
        }
        let gru = Gru::new(obs_dim + usize::from(time_gaps), hidden);
        let gru_params = gru.init(rng);
        let bound = 1.0 / (hidden as f64).sqrt();
        let head_params = (0..2 * obs_dim * (hidden + 1)).map(|_| rng.uniform(-bound, bound)).collect();
        Ok(RnnBaseline {
            obs_dim,
            time_gaps,
            gru,
            gru_params,
            head_params,
        })
    }

    pub fn uses_time_gaps(&self) -> bool {
        self.time_gaps
    }

    pub fn num_params(&self) -> usize {
        self.gru_params.len() + self.head_params.len()
    }

    fn input(&self, x: &[f64], gap: f64) -> Vec<f64> {
        let mut v = x.to_vec();
        if self.time_gaps {
            v.push(gap);
        }
        v
    }

    fn head(&self, h: &[f64]) -> Vec<f64> {
        let nh = h.len();
        let m = 2 * self.obs_dim;
        (0..m)
            .map(|j| self.head_params[m * nh + j] + self.head_params[j * nh..(j + 1) * nh].iter().zip(h).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    fn check(&self, seq: &Sequence) -> Result<()> {
        check_len("sequence observations", seq.times.len(), seq.obs.len())?;
        for x in &seq.obs {
            check_len("observation", self.obs_dim, x.len())?;
        }
        Ok(())
    }

    /// Mean next-step Gaussian negative log-likelihood over the sequence and
    /// its gradient with respect to `[gru_params, head_params]`.
    pub fn loss_grad(&self, seq: &Sequence) -> Result<(f64, Vec<f64>)> {
        self.check(seq)?;
        let n = seq.len();
        if n < 2 {
            return Err(Error::Argument("next-step training needs at least two observations".into()));
        }
        let inputs: Vec<Vec<f64>> = (0..n - 1).map(|i| self.input(&seq.obs[i], seq.times[i + 1] - seq.times[i])).collect();
        let steps: Vec<GruStep> = self.gru.run(&self.gru_params, &inputs);
        let nh = self.gru.hidden_dim();
        let d = self.obs_dim;
        let scale = 1.0 / (n - 1) as f64;
        let n_gru = self.gru_params.len();
        let mut grad = vec![0.0; self.num_params()];
        let mut dhs = Vec::with_capacity(n - 1);
        let mut loss = 0.0;
        for (i, step) in steps.iter().enumerate() {
            let h = step.hidden();
            let out = self.head(h);
            let target = &seq.obs[i + 1];
            let mut dout = vec![0.0; 2 * d];
            for k in 0..d {
                let s = out[d + k];
                let inv_var = (-2.0 * s).exp();
                let r = target[k] - out[k];
                loss += scale * (0.5 * LOG_2PI + s + 0.5 * r * r * inv_var);
                dout[k] = -scale * r * inv_var;
                dout[d + k] = scale * (1.0 - r * r * inv_var);
            }
            let mut dh = vec![0.0; nh];
            let g_head = &mut grad[n_gru..];
            for j in 0..2 * d {
                for k in 0..nh {
                    g_head[j * nh + k] += dout[j] * h[k];
                    dh[k] += dout[j] * self.head_params[j * nh + k];
                }
                g_head[2 * d * nh + j] += dout[j];
            }
            dhs.push(dh);
        }
        self.gru.backward(&self.gru_params, &steps, &dhs, &mut grad[..n_gru]);
        Ok((loss, grad))
    }

    /// Reads `seq`, then rolls out predicted means at `times` (after the last
    /// observation), feeding each prediction back in.
    pub fn predict(&self, seq: &Sequence, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check(seq)?;
        if seq.is_empty() {
            return Err(Error::Argument("cannot condition on an empty sequence".into()));
        }
        let n = seq.len();
        let mut h = vec![0.0; self.gru.hidden_dim()];
        let mut out = Vec::with_capacity(times.len());
        let mut t_prev = seq.times[n - 1];
        let mut x_prev = seq.obs[n - 1].clone();
        for i in 0..n - 1 {
            h = self.gru.step(&self.gru_params, &self.input(&seq.obs[i], seq.times[i + 1] - seq.times[i]), &h).hidden().to_vec();
        }
        for &t in times {
            h = self.gru.step(&self.gru_params, &self.input(&x_prev, t - t_prev), &h).hidden().to_vec();
            let mean = self.head(&h)[..self.obs_dim].to_vec();
            x_prev = mean.clone();
            t_prev = t;
            out.push(mean);
        }
        Ok(out)
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut v = self.gru_params.clone();
        v.extend_from_slice(&self.head_params);
        v
    }

    fn set_flat_params(&mut self, p: &[f64]) {
        let n = self.gru_params.len();
        self.gru_params.copy_from_slice(&p[..n]);
        self.head_params.copy_from_slice(&p[n..]);
    }
}

/// Adam on minibatches of sequences; returns the mean loss per epoch.
pub fn train_rnn(model: &mut RnnBaseline, data: &[Sequence], train: &TrainConfig, rng: &mut RngState) -> Result<Vec<f64>> {
    if data.is_empty() || train.batch_size == 0 {
        return Err(Error::Argument("need data and a positive batch size".into()));
    }
    let mut params = model.flat_params();
    let mut opt = AdamState::new(params.len(), train.adam);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(train.epochs);
    for epoch in 0..train.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i + 1));
        }
        let mut total = 0.0;
        for chunk in order.chunks(train.batch_size) {
            let mut g = vec![0.0; params.len()];
            for &k in chunk {
                let (l, gk) = model.loss_grad(&data[k])?;
                total += l;
                for (a, b) in g.iter_mut().zip(&gk) {
                    *a += b / chunk.len() as f64;
                }
            }
            if !total.is_finite() || g.iter().any(|x| !x.is_finite()) {
                return Err(Error::TrainingDivergence { iter: epoch, loss: total });
            }
            opt.step(&mut params, &g)?;
            model.set_flat_params(&params);
        }
        losses.push(total / data.len() as f64);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq() -> Sequence {
        Sequence {
            times: vec![0.0, 0.2, 0.5, 0.9, 1.0],
            obs: vec![vec![1.0, 0.0], vec![0.8, 0.3], vec![0.4, 0.7], vec![-0.2, 0.9], vec![-0.4, 0.8]],
        }
    }

    #[test]
    fn gradient_matches_fd() {
        for gaps in [false, true] {
            let m = RnnBaseline::new(2, 4, gaps, &mut RngState::new(1)).unwrap();
            let s = seq();
            let (_, g) = m.loss_grad(&s).unwrap();
            let p0 = m.flat_params();
            let h = 1e-6;
            for k in 0..p0.len() {
                let eval = |d: f64| {
                    let mut mm = m.clone();
                    let mut p = p0.clone();
                    p[k] += d;
                    mm.set_flat_params(&p);
                    mm.loss_grad(&s).unwrap().0
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6 * fd.abs().max(1.0), "gaps {gaps} param {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn gaps_change_predictions_only_when_used() {
        let s = seq();
        let mut shifted = s.clone();
        shifted.times = vec![0.0, 0.1, 0.6, 0.7, 1.0];
        let plain = RnnBaseline::new(2, 6, false, &mut RngState::new(2)).unwrap();
        assert_eq!(plain.predict(&s, &[1.1, 1.3]).unwrap(), plain.predict(&shifted, &[1.1, 1.3]).unwrap());
        let timed = RnnBaseline::new(2, 6, true, &mut RngState::new(2)).unwrap();
        assert_ne!(timed.predict(&s, &[1.1, 1.3]).unwrap(), timed.predict(&shifted, &[1.1, 1.3]).unwrap());
    }

    #[test]
    fn training_reduces_loss() {
        let mut m = RnnBaseline::new(2, 8, true, &mut RngState::new(3)).unwrap();
        let train = TrainConfig {
            epochs: 60,
            batch_size: 1,
            adam: crate::optim::AdamConfig {
                lr: 1e-2,
                ..Default::default()
            },
        };
        let losses = train_rnn(&mut m, &[seq()], &train, &mut RngState::new(0)).unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
    }
}
