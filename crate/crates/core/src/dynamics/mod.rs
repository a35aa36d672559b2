//! Parameterized vector fields `f(z, t, theta)` with exact vector-Jacobian
//! products and Jacobian traces.
//!
//! Every architecture stores its parameters as one flat vector. The reverse
//! passes are written out per layer type; there is no tape.

pub(crate) mod checkpoint;

pub use checkpoint::{read_dynamics, write_dynamics, ArchTag};

use crate::error::{check_finite, check_len, Error, Result};
use crate::nn::Mlp;
use crate::rng::RngState;
use crate::tensor::{dot, sigmoid, Activation, Tensor};

/// A differentiable vector field. Anything the adjoint can integrate
/// backwards implements this.
pub trait Dynamics {
    fn state_dim(&self) -> usize;

    fn params(&self) -> &[f64];

    fn num_params(&self) -> usize {
        self.params().len()
    }

    fn eval_into(&self, z: &[f64], t: f64, out: &mut [f64]) -> Result<()>;

    /// Writes `a^T df/dz` and `a^T df/dtheta` (overwriting both buffers) and
    /// returns `a^T df/dt`.
    fn vjp_into(&self, z: &[f64], t: f64, a: &[f64], vjp_z: &mut [f64], vjp_theta: &mut [f64]) -> Result<f64>;
}

impl<T: Dynamics + ?Sized> Dynamics for &T {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn params(&self) -> &[f64] {
        (**self).params()
    }
    fn eval_into(&self, z: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        (**self).eval_into(z, t, out)
    }
    fn vjp_into(&self, z: &[f64], t: f64, a: &[f64], vjp_z: &mut [f64], vjp_theta: &mut [f64]) -> Result<f64> {
        (**self).vjp_into(z, t, a, vjp_z, vjp_theta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    /// `f(z) = A z`.
    Linear { dim: usize },
    /// Tanh MLP with a linear output layer; `t` is appended to the input when
    /// `time_dependent`.
    Mlp {
        dim: usize,
        hidden: Vec<usize>,
        time_dependent: bool,
    },
    /// Single planar unit `u tanh(w^T z + b)`.
    Planar { dim: usize },
    /// `sum_n sigmoid(c_n t + d_n) u_n tanh(w_n^T z + b_n)`.
    GatedPlanarSum { dim: usize, units: usize },
    /// `[dz_1/dt, dz_2/dt] = [F(z_2), G(z_1)]` with one-hidden-layer tanh
    /// nets `F` and `G`; volume preserving.
    HamiltonianSplit { dim: usize, hidden: usize },
}

impl Architecture {
    pub fn dim(&self) -> usize {
        match *self {
            Architecture::Linear { dim }
            | Architecture::Mlp { dim, .. }
            | Architecture::Planar { dim }
            | Architecture::GatedPlanarSum { dim, .. }
            | Architecture::HamiltonianSplit { dim, .. } => dim,
        }
    }

    pub fn time_dependent(&self) -> bool {
        match self {
            Architecture::Mlp { time_dependent, .. } => *time_dependent,
            Architecture::GatedPlanarSum { .. } => true,
            _ => false,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Linear { .. } => "linear",
            Architecture::Mlp { .. } => "mlp",
            Architecture::Planar { .. } => "planar",
            Architecture::GatedPlanarSum { .. } => "gated_planar_sum",
            Architecture::HamiltonianSplit { .. } => "hamiltonian_split",
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Architecture::Linear { dim } => dim * dim,
            Architecture::Mlp { .. } => self.mlp().unwrap().num_params(),
            Architecture::Planar { dim } => 2 * dim + 1,
            Architecture::GatedPlanarSum { dim, units } => units * (2 * dim + 3),
            Architecture::HamiltonianSplit { .. } => 2 * self.half_mlp().unwrap().num_params(),
        }
    }

    fn mlp(&self) -> Option<Mlp> {
        match self {
            Architecture::Mlp { dim, hidden, time_dependent } => {
                let mut sizes = vec![dim + usize::from(*time_dependent)];
                sizes.extend_from_slice(hidden);
                sizes.push(*dim);
                Some(Mlp::new(sizes, Activation::Tanh, Activation::Identity))
            }
            _ => None,
        }
    }

    fn half_mlp(&self) -> Option<Mlp> {
        match *self {
            Architecture::HamiltonianSplit { dim, hidden } => {
                Some(Mlp::new(vec![dim / 2, hidden, dim / 2], Activation::Tanh, Activation::Identity))
            }
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Argument(msg));
        match self {
            a if a.dim() == 0 => bad("state dimension must be >= 1".into()),
            Architecture::Mlp { hidden, .. } if hidden.iter().any(|&h| h == 0) => {
                bad("hidden layer widths must be >= 1".into())
            }
            Architecture::GatedPlanarSum { units: 0, .. } => bad("gated planar sum needs at least one unit".into()),
            Architecture::HamiltonianSplit { dim, hidden } if dim % 2 != 0 || *hidden == 0 => {
                bad(format!("hamiltonian split needs an even dimension and hidden >= 1, got dim {dim}"))
            }
            _ => Ok(()),
        }
    }
}

/// Results of one vector-Jacobian product.
#[derive(Debug, Clone, PartialEq)]
pub struct VjpResult {
    pub vjp_z: Vec<f64>,
    pub vjp_theta: Vec<f64>,
    pub vjp_t: f64,
}

/// An architecture together with its parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsFunc {
    arch: Architecture,
    theta: Vec<f64>,
    mlp: Option<Mlp>,
}

impl DynamicsFunc {
    pub fn new(arch: Architecture, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        check_len("DynamicsFunc parameters", arch.num_params(), theta.len())?;
        let mlp = arch.mlp().or_else(|| arch.half_mlp());
        Ok(DynamicsFunc { arch, theta, mlp })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        let n = arch.num_params();
        DynamicsFunc::new(arch, vec![0.0; n])
    }

    pub fn linear(a: &Tensor) -> Result<Self> {
        let dim = a.rows();
        if a.shape() != [dim, dim] {
            return Err(Error::dim("linear dynamics", "square matrix", format!("{:?}", a.shape())));
        }
        DynamicsFunc::new(Architecture::Linear { dim }, a.as_slice().to_vec())
    }

    /// Single planar unit with explicit `u`, `w`, `b`.
    pub fn planar(u: &[f64], w: &[f64], b: f64) -> Result<Self> {
        check_len("planar w", u.len(), w.len())?;
        let mut theta = u.to_vec();
        theta.extend_from_slice(w);
        theta.push(b);
        DynamicsFunc::new(Architecture::Planar { dim: u.len() }, theta)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn dim(&self) -> usize {
        self.arch.dim()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn with_params(&self, theta: Vec<f64>) -> Result<Self> {
        check_len("DynamicsFunc parameters", self.theta.len(), theta.len())?;
        Ok(DynamicsFunc {
            arch: self.arch.clone(),
            theta,
            mlp: self.mlp.clone(),
        })
    }

    pub fn eval(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(z, t, &mut out)?;
        Ok(out)
    }

    pub fn vjp(&self, z: &[f64], t: f64, a: &[f64]) -> Result<VjpResult> {
        let mut vjp_z = vec![0.0; self.dim()];
        let mut vjp_theta = vec![0.0; self.theta.len()];
        let vjp_t = self.vjp_into(z, t, a, &mut vjp_z, &mut vjp_theta)?;
        Ok(VjpResult { vjp_z, vjp_theta, vjp_t })
    }

    fn planar_units(&self) -> impl Iterator<Item = PlanarUnit<'_>> {
        let d = self.dim();
        let (stride, gated) = match self.arch {
            Architecture::Planar { .. } => (2 * d + 1, false),
            Architecture::GatedPlanarSum { .. } => (2 * d + 3, true),
            _ => (usize::MAX, false),
        };
        let n = if stride == usize::MAX { 0 } else { self.theta.len() / stride };
        (0..n).map(move |k| PlanarUnit {
            p: &self.theta[k * stride..(k + 1) * stride],
            dim: d,
            gated,
            offset: k * stride,
        })
    }

    /// `tr(df/dz)`. Planar units use the closed form `sigma h'(s) u.w`;
    /// other architectures sum `e_i^T (df/dz) e_i` over basis-vector VJPs.
    pub fn jacobian_trace(&self, z: &[f64], t: f64) -> Result<f64> {
        check_len("jacobian_trace z", self.dim(), z.len())?;
        match self.arch {
            Architecture::Planar { .. } | Architecture::GatedPlanarSum { .. } => {
                Ok(self.planar_units().map(|u| u.trace(z, t)).sum())
            }
            _ => self.basis_vjp_trace(z, t),
        }
    }

    pub fn basis_vjp_trace(&self, z: &[f64], t: f64) -> Result<f64> {
        let d = self.dim();
        let mut e = vec![0.0; d];
        let mut vz = vec![0.0; d];
        let mut vth = vec![0.0; self.theta.len()];
        let mut tr = 0.0;
        for i in 0..d {
            e[i] = 1.0;
            self.vjp_into(z, t, &e, &mut vz, &mut vth)?;
            tr += vz[i];
            e[i] = 0.0;
        }
        Ok(tr)
    }

    /// Per-unit traces of a planar or gated planar sum, in unit order.
    pub fn unit_traces(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        match self.arch {
            Architecture::Planar { .. } | Architecture::GatedPlanarSum { .. } => {
                Ok(self.planar_units().map(|u| u.trace(z, t)).collect())
            }
            _ => Err(Error::Unsupported(format!("{} has no planar units", self.arch.name()))),
        }
    }

    /// Accumulates `weight * d tr(df/dz) / d(z, theta)` into the buffers and
    /// returns `weight * d tr / dt`. Needed to differentiate the log-density
    /// ODE of a continuous flow.
    pub fn trace_vjp_acc(&self, z: &[f64], t: f64, weight: f64, grad_z: &mut [f64], grad_theta: &mut [f64]) -> Result<f64> {
        match self.arch {
            Architecture::Linear { dim } => {
                for i in 0..dim {
                    grad_theta[i * dim + i] += weight;
                }
                Ok(0.0)
            }
            Architecture::HamiltonianSplit { .. } => Ok(0.0),
            Architecture::Planar { .. } | Architecture::GatedPlanarSum { .. } => {
                let mut gt = 0.0;
                for unit in self.planar_units() {
                    gt += unit.trace_vjp_acc(z, t, weight, grad_z, grad_theta);
                }
                Ok(gt)
            }
            Architecture::Mlp { .. } => Err(Error::Unsupported(
                "trace gradients need second derivatives, which the MLP field does not provide".into(),
            )),
        }
    }

    /// Central-difference Jacobian; column `i` is `(f(z + eps e_i) - f(z - eps e_i)) / 2 eps`.
    pub fn fd_jacobian(&self, z: &[f64], t: f64, eps: f64) -> Result<Tensor> {
        fd_jacobian(self, z, t, eps)
    }
}

/// Central-difference Jacobian of any field, row-major `D x D`.
pub fn fd_jacobian<F: Dynamics + ?Sized>(f: &F, z: &[f64], t: f64, eps: f64) -> Result<Tensor> {
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("finite-difference step must be positive, got {eps}")));
    }
    let d = f.state_dim();
    check_len("fd_jacobian z", d, z.len())?;
    let mut jac = vec![0.0; d * d];
    let mut zp = z.to_vec();
    let mut fp = vec![0.0; d];
    let mut fm = vec![0.0; d];
    for i in 0..d {
        zp[i] = z[i] + eps;
        f.eval_into(&zp, t, &mut fp)?;
        zp[i] = z[i] - eps;
        f.eval_into(&zp, t, &mut fm)?;
        zp[i] = z[i];
        for r in 0..d {
            jac[r * d + i] = (fp[r] - fm[r]) / (2.0 * eps);
        }
    }
    Tensor::matrix(d, d, jac)
}

struct PlanarUnit<'a> {
    // [u, w, b] or [u, w, b, gate_w, gate_b]
    p: &'a [f64],
    dim: usize,
    gated: bool,
    offset: usize,
}

impl PlanarUnit<'_> {
    fn u(&self) -> &[f64] {
        &self.p[..self.dim]
    }
    fn w(&self) -> &[f64] {
        &self.p[self.dim..2 * self.dim]
    }
    fn b(&self) -> f64 {
        self.p[2 * self.dim]
    }
    fn gate(&self, t: f64) -> f64 {
        if self.gated {
            sigmoid(self.p[2 * self.dim + 1] * t + self.p[2 * self.dim + 2])
        } else {
            1.0
        }
    }

    fn eval_acc(&self, z: &[f64], t: f64, out: &mut [f64]) {
        let h = (dot(self.w(), z) + self.b()).tanh();
        let scale = self.gate(t) * h;
        for (o, u) in out.iter_mut().zip(self.u()) {
            *o += scale * u;
        }
    }

    fn trace(&self, z: &[f64], t: f64) -> f64 {
        let h = (dot(self.w(), z) + self.b()).tanh();
        self.gate(t) * (1.0 - h * h) * dot(self.u(), self.w())
    }

    fn vjp_acc(&self, z: &[f64], t: f64, a: &[f64], vjp_z: &mut [f64], vjp_theta: &mut [f64]) -> f64 {
        let d = self.dim;
        let h = (dot(self.w(), z) + self.b()).tanh();
        let dh = 1.0 - h * h;
        let sig = self.gate(t);
        let au = dot(a, self.u());
        let g = &mut vjp_theta[self.offset..self.offset + self.p.len()];
        for i in 0..d {
            vjp_z[i] += sig * au * dh * self.w()[i];
            g[i] += sig * h * a[i];
            g[d + i] += sig * au * dh * z[i];
        }
        g[2 * d] += sig * au * dh;
        if self.gated {
            let ds = sig * (1.0 - sig) * au * h;
            g[2 * d + 1] += ds * t;
            g[2 * d + 2] += ds;
            ds * self.p[2 * d + 1]
        } else {
            0.0
        }
    }

    fn trace_vjp_acc(&self, z: &[f64], t: f64, weight: f64, grad_z: &mut [f64], grad_theta: &mut [f64]) -> f64 {
        let d = self.dim;
        let h = (dot(self.w(), z) + self.b()).tanh();
        let dh = 1.0 - h * h;
        let ddh = -2.0 * h * dh;
        let uw = dot(self.u(), self.w());
        let sig = self.gate(t);
        let s = weight * sig;
        let g = &mut grad_theta[self.offset..self.offset + self.p.len()];
        for i in 0..d {
            grad_z[i] += s * ddh * uw * self.w()[i];
            g[i] += s * dh * self.w()[i];
            g[d + i] += s * (ddh * uw * z[i] + dh * self.u()[i]);
        }
        g[2 * d] += s * ddh * uw;
        if self.gated {
            let ds = weight * sig * (1.0 - sig) * dh * uw;
            g[2 * d + 1] += ds * t;
            g[2 * d + 2] += ds;
            ds * self.p[2 * d + 1]
        } else {
            0.0
        }
    }
}

impl Dynamics for DynamicsFunc {
    fn state_dim(&self) -> usize {
        self.dim()
    }

    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn eval_into(&self, z: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        check_len("dynamics eval z", d, z.len())?;
        check_len("dynamics eval output", d, out.len())?;
        match &self.arch {
            Architecture::Linear { .. } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = dot(&self.theta[i * d..(i + 1) * d], z);
                }
            }
            Architecture::Mlp { time_dependent, .. } => {
                let mlp = self.mlp.as_ref().unwrap();
                let y = if *time_dependent {
                    let mut x = z.to_vec();
                    x.push(t);
                    mlp.forward(&self.theta, &x)
                } else {
                    mlp.forward(&self.theta, z)
                };
                out.copy_from_slice(&y);
            }
            Architecture::Planar { .. } | Architecture::GatedPlanarSum { .. } => {
                out.fill(0.0);
                for unit in self.planar_units() {
                    unit.eval_acc(z, t, out);
                }
            }
            Architecture::HamiltonianSplit { .. } => {
                let mlp = self.mlp.as_ref().unwrap();
                let h = d / 2;
                let np = mlp.num_params();
                let (fp, gp) = self.theta.split_at(np);
                out[..h].copy_from_slice(&mlp.forward(fp, &z[h..]));
                out[h..].copy_from_slice(&mlp.forward(gp, &z[..h]));
            }
        }
        check_finite("dynamics eval", out)
    }

    fn vjp_into(&self, z: &[f64], t: f64, a: &[f64], vjp_z: &mut [f64], vjp_theta: &mut [f64]) -> Result<f64> {
        let d = self.dim();
        check_len("vjp z", d, z.len())?;
        check_len("vjp cotangent", d, a.len())?;
        check_len("vjp_z buffer", d, vjp_z.len())?;
        check_len("vjp_theta buffer", self.theta.len(), vjp_theta.len())?;
        vjp_z.fill(0.0);
        vjp_theta.fill(0.0);
        let vjp_t = match &self.arch {
            Architecture::Linear { .. } => {
                for i in 0..d {
                    for j in 0..d {
                        vjp_z[j] += a[i] * self.theta[i * d + j];
                        vjp_theta[i * d + j] = a[i] * z[j];
                    }
                }
                0.0
            }
            Architecture::Mlp { time_dependent, .. } => {
                let mlp = self.mlp.as_ref().unwrap();
                if *time_dependent {
                    let mut x = z.to_vec();
                    x.push(t);
                    let cache = mlp.forward_cached(&self.theta, &x);
                    let mut gx = vec![0.0; d + 1];
                    mlp.backward(&self.theta, &cache, a, Some(&mut gx), vjp_theta);
                    vjp_z.copy_from_slice(&gx[..d]);
                    gx[d]
                } else {
                    let cache = mlp.forward_cached(&self.theta, z);
                    mlp.backward(&self.theta, &cache, a, Some(vjp_z), vjp_theta);
                    0.0
                }
            }
            Architecture::Planar { .. } | Architecture::GatedPlanarSum { .. } => {
                let mut vt = 0.0;
                for unit in self.planar_units() {
                    vt += unit.vjp_acc(z, t, a, vjp_z, vjp_theta);
                }
                vt
            }
            Architecture::HamiltonianSplit { .. } => {
                let mlp = self.mlp.as_ref().unwrap();
                let h = d / 2;
                let np = mlp.num_params();
                let (fp, gp) = self.theta.split_at(np);
                let (gfp, ggp) = vjp_theta.split_at_mut(np);
                let (vz1, vz2) = vjp_z.split_at_mut(h);
                // F reads z_2 and feeds dz_1; G reads z_1 and feeds dz_2.
                let cf = mlp.forward_cached(fp, &z[h..]);
                mlp.backward(fp, &cf, &a[..h], Some(vz2), gfp);
                let cg = mlp.forward_cached(gp, &z[..h]);
                mlp.backward(gp, &cg, &a[h..], Some(vz1), ggp);
                0.0
            }
        };
        check_finite("vjp", vjp_z)?;
        check_finite("vjp", vjp_theta)?;
        Ok(vjp_t)
    }
}

/// Tanh MLP dynamics with weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn build_mlp_dynamics(dim: usize, hidden: &[usize], time_dependent: bool, rng: &mut RngState) -> Result<DynamicsFunc> {
    let arch = Architecture::Mlp {
        dim,
        hidden: hidden.to_vec(),
        time_dependent,
    };
    arch.validate()?;
    let theta = arch.mlp().unwrap().init(rng);
    DynamicsFunc::new(arch, theta)
}

pub fn build_planar(dim: usize, rng: &mut RngState) -> Result<DynamicsFunc> {
    let arch = Architecture::Planar { dim };
    arch.validate()?;
    let bound = 1.0 / (dim as f64).sqrt();
    let theta = (0..arch.num_params()).map(|_| rng.uniform(-bound, bound)).collect();
    DynamicsFunc::new(arch, theta)
}

/// `units` planar units, each gated by `sigmoid(c t + d)`.
pub fn build_gated_planar(dim: usize, units: usize, rng: &mut RngState) -> Result<DynamicsFunc> {
    let arch = Architecture::GatedPlanarSum { dim, units };
    arch.validate()?;
    let bound = 1.0 / (dim as f64).sqrt();
    let mut theta = Vec::with_capacity(arch.num_params());
    for _ in 0..units {
        for _ in 0..2 * dim {
            theta.push(rng.uniform(-bound, bound));
        }
        theta.push(rng.uniform(-1.0, 1.0));
        theta.push(rng.uniform(-1.0, 1.0));
        theta.push(rng.uniform(-1.0, 1.0));
    }
    DynamicsFunc::new(arch, theta)
}

pub fn build_hamiltonian(dim: usize, hidden: usize, rng: &mut RngState) -> Result<DynamicsFunc> {
    let arch = Architecture::HamiltonianSplit { dim, hidden };
    arch.validate()?;
    let mlp = arch.half_mlp().unwrap();
    let mut theta = mlp.init(rng);
    theta.extend(mlp.init(rng));
    DynamicsFunc::new(arch, theta)
}

/// Concatenates `batch` independent copies of a state and evolves each with
/// the same field; parameter gradients are summed over the batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchedDynamics<'a, F: ?Sized> {
    inner: &'a F,
    batch: usize,
}

impl<'a, F: Dynamics + ?Sized> BatchedDynamics<'a, F> {
    pub fn new(inner: &'a F, batch: usize) -> Self {
        BatchedDynamics { inner, batch }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl<F: Dynamics + ?Sized> Dynamics for BatchedDynamics<'_, F> {
    fn state_dim(&self) -> usize {
        self.batch * self.inner.state_dim()
    }

    fn params(&self) -> &[f64] {
        self.inner.params()
    }

    fn eval_into(&self, z: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let d = self.inner.state_dim();
        check_len("batched eval", self.batch * d, z.len())?;
        for (zc, oc) in z.chunks(d).zip(out.chunks_mut(d)) {
            self.inner.eval_into(zc, t, oc)?;
        }
        Ok(())
    }

    fn vjp_into(&self, z: &[f64], t: f64, a: &[f64], vjp_z: &mut [f64], vjp_theta: &mut [f64]) -> Result<f64> {
        let d = self.inner.state_dim();
        check_len("batched vjp", self.batch * d, z.len())?;
        vjp_theta.fill(0.0);
        let mut scratch = vec![0.0; vjp_theta.len()];
        let mut vt = 0.0;
        for ((zc, ac), vc) in z.chunks(d).zip(a.chunks(d)).zip(vjp_z.chunks_mut(d)) {
            vt += self.inner.vjp_into(zc, t, ac, vc, &mut scratch)?;
            for (g, s) in vjp_theta.iter_mut().zip(&scratch) {
                *g += s;
            }
        }
        Ok(vt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag12() -> DynamicsFunc {
        DynamicsFunc::linear(&Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap()).unwrap()
    }

    #[test]
    fn zero_linear_field() {
        let f = DynamicsFunc::zeros(Architecture::Linear { dim: 3 }).unwrap();
        assert_eq!(f.eval(&[1.0, -2.0, 3.0], 0.3).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn linear_eval_and_vjp() {
        let f = diag12();
        assert_eq!(f.eval(&[1.0, 1.0], 0.0).unwrap(), vec![1.0, 2.0]);
        let v = f.vjp(&[1.0, 1.0], 0.0, &[1.0, 1.0]).unwrap();
        assert_eq!(v.vjp_z, vec![1.0, 2.0]);
        assert_eq!(v.vjp_theta, vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(v.vjp_t, 0.0);
        assert_eq!(f.jacobian_trace(&[5.0, -3.0], 1.0).unwrap(), 3.0);
    }

    #[test]
    fn planar_fixed_point_and_trace() {
        let f = DynamicsFunc::planar(&[1.0, 0.0], &[1.0, 0.0], 0.0).unwrap();
        assert_eq!(f.eval(&[0.0, 0.0], 0.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(f.jacobian_trace(&[0.0, 0.0], 0.0).unwrap(), 1.0);
        assert_eq!(f.basis_vjp_trace(&[0.0, 0.0], 0.0).unwrap(), 1.0);
    }

    #[test]
    fn zero_cotangent_gives_zero_products() {
        let mut rng = RngState::new(5);
        let f = build_gated_planar(2, 3, &mut rng).unwrap();
        let v = f.vjp(&[0.3, -0.7], 0.4, &[0.0, 0.0]).unwrap();
        assert!(v.vjp_z.iter().chain(&v.vjp_theta).all(|&x| x == 0.0));
        assert_eq!(v.vjp_t, 0.0);
    }

    #[test]
    fn mlp_param_count_time_dependent() {
        let mut rng = RngState::new(0);
        let f = build_mlp_dynamics(4, &[20], true, &mut rng).unwrap();
        assert_eq!(f.theta().len(), 204);
        let g = build_mlp_dynamics(4, &[20], true, &mut RngState::new(0)).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn zero_mlp_is_bias_only() {
        let arch = Architecture::Mlp {
            dim: 2,
            hidden: vec![5],
            time_dependent: false,
        };
        let mut f = DynamicsFunc::zeros(arch).unwrap();
        let n = f.theta().len();
        f.theta_mut()[n - 2] = 0.5;
        f.theta_mut()[n - 1] = -1.5;
        assert_eq!(f.eval(&[3.0, 4.0], 0.0).unwrap(), vec![0.5, -1.5]);
    }

    #[test]
    fn hamiltonian_trace_vanishes() {
        let mut rng = RngState::new(9);
        let f = build_hamiltonian(4, 8, &mut rng).unwrap();
        for _ in 0..10 {
            let z = rng.normals(4);
            assert!(f.jacobian_trace(&z, 0.0).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn gated_single_unit_open_gate_is_planar() {
        let u = [0.4, -0.3];
        let w = [1.1, 0.2];
        let planar = DynamicsFunc::planar(&u, &w, 0.1).unwrap();
        let gated = DynamicsFunc::new(
            Architecture::GatedPlanarSum { dim: 2, units: 1 },
            vec![u[0], u[1], w[0], w[1], 0.1, 0.0, 50.0],
        )
        .unwrap();
        let z = [0.7, -1.2];
        assert_eq!(gated.eval(&z, 0.3).unwrap(), planar.eval(&z, 0.3).unwrap());
        assert_eq!(gated.jacobian_trace(&z, 0.3).unwrap(), planar.jacobian_trace(&z, 0.3).unwrap());
    }

    #[test]
    fn closed_gates_silence_the_field() {
        let mut rng = RngState::new(2);
        let mut f = build_gated_planar(2, 4, &mut rng).unwrap();
        for k in 0..4 {
            f.theta_mut()[k * 7 + 5] = 0.0;
            f.theta_mut()[k * 7 + 6] = -800.0;
        }
        assert_eq!(f.eval(&[0.5, 0.5], 0.2).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn shape_errors() {
        let f = diag12();
        assert!(matches!(f.eval(&[1.0], 0.0), Err(Error::Dimension { .. })));
        assert!(matches!(f.vjp(&[1.0, 1.0], 0.0, &[1.0]), Err(Error::Dimension { .. })));
        assert!(f.fd_jacobian(&[1.0, 1.0], 0.0, 0.0).is_err());
        assert!(DynamicsFunc::new(Architecture::Linear { dim: 2 }, vec![0.0; 3]).is_err());
        assert!(build_hamiltonian(3, 4, &mut RngState::new(0)).is_err());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let f = DynamicsFunc::linear(&Tensor::matrix(1, 1, vec![1e308]).unwrap()).unwrap();
        assert!(matches!(f.eval(&[1e10], 0.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn fd_jacobian_of_linear_recovers_matrix() {
        let a = Tensor::matrix(2, 2, vec![0.3, -1.2, 2.5, 0.7]).unwrap();
        let f = DynamicsFunc::linear(&a).unwrap();
        let j = f.fd_jacobian(&[0.4, -0.9], 0.0, 1e-5).unwrap();
        for (x, y) in j.as_slice().iter().zip(a.as_slice()) {
            assert!((x - y).abs() < 1e-8);
        }
        let zero = DynamicsFunc::zeros(Architecture::Linear { dim: 2 }).unwrap();
        assert_eq!(zero.fd_jacobian(&[1.0, 2.0], 0.0, 1e-5).unwrap(), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn batched_sums_parameter_gradients() {
        let mut rng = RngState::new(4);
        let f = build_mlp_dynamics(2, &[6], true, &mut rng).unwrap();
        let b = BatchedDynamics::new(&f, 3);
        let z = rng.normals(6);
        let a = rng.normals(6);
        let mut vz = vec![0.0; 6];
        let mut vth = vec![0.0; f.theta().len()];
        let vt = b.vjp_into(&z, 0.2, &a, &mut vz, &mut vth).unwrap();
        let mut expect_th = vec![0.0; vth.len()];
        let mut expect_t = 0.0;
        for k in 0..3 {
            let r = f.vjp(&z[2 * k..2 * k + 2], 0.2, &a[2 * k..2 * k + 2]).unwrap();
            assert_eq!(&vz[2 * k..2 * k + 2], r.vjp_z.as_slice());
            for (e, g) in expect_th.iter_mut().zip(&r.vjp_theta) {
                *e += g;
            }
            expect_t += r.vjp_t;
        }
        assert_eq!(vth, expect_th);
        assert_eq!(vt, expect_t);
    }
}
