//! Discrete planar normalizing flow, `z' = z + u_hat tanh(w^T z + b)`, used
//! as a baseline for the continuous flow. `u_hat` is reparameterized so that
//! `w^T u_hat = -1 + softplus(w^T u) > -1`, which keeps every layer invertible.

use super::{minibatch, std_normal_logpdf, LossGrad, Task, TrainRecord, TrainingLog};
use crate::error::{check_len, Error, Result};
use crate::optim::RmsPropState;
use crate::rng::RngState;
use crate::tensor::{dot, sigmoid, softplus, Tensor};

use super::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarFlow {
    dim: usize,
    layers: usize,
    pub params: Vec<f64>,
}

struct Layer<'a> {
    u: &'a [f64],
    w: &'a [f64],
    b: f64,
}

struct Derived {
    uhat: Vec<f64>,
    m: f64,
    wu: f64,
    ww: f64,
}

impl Layer<'_> {
    fn derived(&self) -> Derived {
        let wu = dot(self.w, self.u);
        let ww = dot(self.w, self.w).max(1e-12);
        let m = -1.0 + softplus(wu);
        let c = (m - wu) / ww;
        let uhat = self.u.iter().zip(self.w).map(|(u, w)| u + c * w).collect();
        Derived { uhat, m, wu, ww }
    }
}

impl PlanarFlow {
    pub fn new(dim: usize, layers: usize, rng: &mut RngState) -> Result<Self> {
        if dim == 0 || layers == 0 {
            return Err(Error::Argument("planar flow needs dim >= 1 and layers >= 1".into()));
        }
        let mut params = Vec::with_capacity(layers * (2 * dim + 1));
        for _ in 0..layers {
            for _ in 0..2 * dim {
                params.push(0.1 * rng.normal());
            }
            params.push(0.0);
        }
        Ok(PlanarFlow { dim, layers, params })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    fn layer(&self, k: usize) -> Layer<'_> {
        let s = 2 * self.dim + 1;
        let p = &self.params[k * s..(k + 1) * s];
        Layer {
            u: &p[..self.dim],
            w: &p[self.dim..2 * self.dim],
            b: p[2 * self.dim],
        }
    }

    /// Applies every layer; returns the input of each layer followed by the
    /// output, and the summed `log |det|`.
    pub fn forward(&self, z0: &[f64]) -> Result<(Vec<Vec<f64>>, f64)> {
        check_len("planar flow input", self.dim, z0.len())?;
        let mut zs = Vec::with_capacity(self.layers + 1);
        zs.push(z0.to_vec());
        let mut logdet = 0.0;
        for k in 0..self.layers {
            let l = self.layer(k);
            let dv = l.derived();
            let z = zs.last().unwrap();
            let h = (dot(l.w, z) + l.b).tanh();
            logdet += (1.0 + (1.0 - h * h) * dv.m).ln();
            let next = z.iter().zip(&dv.uhat).map(|(z, u)| z + u * h).collect();
            zs.push(next);
        }
        Ok((zs, logdet))
    }

    /// Backpropagates `zbar` (gradient at the output) and a weight on the
    /// summed log-determinant; accumulates into `grad` and returns the
    /// gradient at the input.
    fn backward(&self, zs: &[Vec<f64>], mut zbar: Vec<f64>, ldbar: f64, grad: &mut [f64]) -> Vec<f64> {
        let d = self.dim;
        let stride = 2 * d + 1;
        for k in (0..self.layers).rev() {
            let l = self.layer(k);
            let dv = l.derived();
            let z = &zs[k];
            let h = (dot(l.w, z) + l.b).tanh();
            let hp = 1.0 - h * h;
            let hpp = -2.0 * h * hp;
            let det = 1.0 + hp * dv.m;
            let sbar = dot(&zbar, &dv.uhat) * hp + ldbar * hpp * dv.m / det;
            let c = (dv.m - dv.wu) / dv.ww;
            let g = &mut grad[k * stride..(k + 1) * stride];
            let (gu, rest) = g.split_at_mut(d);
            let (gw, gb) = rest.split_at_mut(d);
            let uhat_bar: Vec<f64> = zbar.iter().map(|x| x * h).collect();
            let cbar = dot(&uhat_bar, l.w);
            let mut mbar = ldbar * hp / det + cbar / dv.ww;
            let mut wubar = -cbar / dv.ww;
            mbar *= sigmoid(dv.wu);
            wubar += mbar;
            for i in 0..d {
                gu[i] += uhat_bar[i] + wubar * l.w[i];
                gw[i] += c * uhat_bar[i] - 2.0 * cbar * (dv.m - dv.wu) * l.w[i] / (dv.ww * dv.ww)
                    + wubar * l.u[i]
                    + sbar * z[i];
            }
            gb[0] += sbar;
            for i in 0..d {
                zbar[i] += sbar * l.w[i];
            }
        }
        zbar
    }

    /// Pushes base points through the flow: samples and `log q`.
    pub fn sample_logq(&self, z0: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (mut zs, logdet) = self.forward(z0)?;
        Ok((zs.pop().unwrap(), std_normal_logpdf(z0) - logdet))
    }

    /// Density of `x` when the flow is read in the data-to-noise direction.
    pub fn log_density_point(&self, x: &[f64]) -> Result<f64> {
        let (zs, logdet) = self.forward(x)?;
        Ok(std_normal_logpdf(zs.last().unwrap()) + logdet)
    }

    pub fn kl_loss_grad(&self, target: &Dataset, base: &Tensor) -> Result<LossGrad> {
        let n = base.rows() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        for i in 0..base.rows() {
            let z0 = base.row(i);
            let (zs, logdet) = self.forward(z0)?;
            let (logp, glogp) = target.log_density_grad(zs.last().unwrap())?;
            loss += (std_normal_logpdf(z0) - logdet - logp) / n;
            let zbar = glogp.iter().map(|g| -g / n).collect();
            self.backward(&zs, zbar, -1.0 / n, &mut grad);
        }
        Ok(LossGrad {
            loss,
            grad,
            nfe_forward: 0,
            nfe_backward: 0,
        })
    }

    pub fn mle_loss_grad(&self, batch: &Tensor) -> Result<LossGrad> {
        let n = batch.rows() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        for i in 0..batch.rows() {
            let (zs, logdet) = self.forward(batch.row(i))?;
            let z = zs.last().unwrap();
            loss -= (std_normal_logpdf(z) + logdet) / n;
            let zbar = z.iter().map(|v| v / n).collect();
            self.backward(&zs, zbar, -1.0 / n, &mut grad);
        }
        Ok(LossGrad {
            loss,
            grad,
            nfe_forward: 0,
            nfe_backward: 0,
        })
    }
}

/// RMSprop training of the planar baseline on the same tasks as the
/// continuous flow. For MLE the flow maps data to noise.
pub fn train_planar_nf(flow: &mut PlanarFlow, task: &Task, iters: usize, lr: f64, rng: &mut RngState) -> Result<TrainingLog> {
    let mut opt = RmsPropState::with_lr(flow.params.len(), lr);
    let mut log = TrainingLog::default();
    for iter in 0..iters {
        let lg = match task {
            Task::DensityMatching { target, batch } => {
                let base = Tensor::matrix(*batch, flow.dim, rng.normals(batch * flow.dim))?;
                flow.kl_loss_grad(target, &base)?
            }
            Task::Mle { data, batch } => flow.mle_loss_grad(&minibatch(data, *batch, rng)?)?,
        };
        if !lg.loss.is_finite() || lg.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDivergence { iter, loss: lg.loss });
        }
        opt.step(&mut flow.params, &lg.grad)?;
        log.records.push(TrainRecord {
            iter,
            loss: lg.loss,
            nfe_forward: 0,
            nfe_backward: 0,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flow() -> PlanarFlow {
        let mut rng = RngState::new(21);
        let mut f = PlanarFlow::new(2, 3, &mut rng).unwrap();
        for p in f.params.iter_mut() {
            *p += 0.5 * rng.normal();
        }
        f
    }

    #[test]
    fn reparameterized_layers_are_invertible() {
        let f = flow();
        for k in 0..f.layers() {
            let dv = f.layer(k).derived();
            assert!((dot(&dv.uhat, f.layer(k).w) - dv.m).abs() < 1e-12);
            assert!(dv.m > -1.0);
        }
    }

    #[test]
    fn logdet_matches_fd_jacobian() {
        let f = flow();
        let z = [0.3, -0.4];
        let (_, logdet) = f.forward(&z).unwrap();
        let eps = 1e-6;
        let mut j = [[0.0; 2]; 2];
        for c in 0..2 {
            let mut p = z;
            p[c] += eps;
            let mut m = z;
            m[c] -= eps;
            let fp = f.forward(&p).unwrap().0.pop().unwrap();
            let fm = f.forward(&m).unwrap().0.pop().unwrap();
            for r in 0..2 {
                j[r][c] = (fp[r] - fm[r]) / (2.0 * eps);
            }
        }
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        assert!((det.ln() - logdet).abs() < 1e-7);
    }

    #[test]
    fn gradients_match_fd() {
        let f = flow();
        let mut rng = RngState::new(2);
        let base = Tensor::matrix(3, 2, rng.normals(6)).unwrap();
        let target = Dataset::three_gaussians();
        let data = Dataset::TwoMoons.sample(&mut rng, 3);
        let kl = f.kl_loss_grad(&target, &base).unwrap();
        let mle = f.mle_loss_grad(&data).unwrap();
        let eps = 1e-6;
        for k in 0..f.params.len() {
            let mut p = f.clone();
            p.params[k] += eps;
            let mut m = f.clone();
            m.params[k] -= eps;
            let fd = (p.kl_loss_grad(&target, &base).unwrap().loss - m.kl_loss_grad(&target, &base).unwrap().loss) / (2.0 * eps);
            assert!((fd - kl.grad[k]).abs() < 1e-6 * fd.abs().max(1.0), "kl {k}: {fd} vs {}", kl.grad[k]);
            let fd = (p.mle_loss_grad(&data).unwrap().loss - m.mle_loss_grad(&data).unwrap().loss) / (2.0 * eps);
            assert!((fd - mle.grad[k]).abs() < 1e-6 * fd.abs().max(1.0), "mle {k}: {fd} vs {}", mle.grad[k]);
        }
    }
}
