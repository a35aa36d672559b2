//! Small fixed-topology networks with hand-written reverse passes.
//!
//! Parameters live in caller-owned flat slices so that optimizers, finite
//! differences and checkpoints all see one contiguous vector.

use crate::rng::RngState;
use crate::tensor::Activation;

/// Fully connected network. Layer `l` maps `sizes[l] -> sizes[l + 1]`; its
/// parameters are the row-major weight matrix followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
}

/// Per-layer activations recorded by [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    // inputs[l] is the input to layer l; inputs[L] is the network output.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().expect("non-empty cache")
    }
}

impl Mlp {
    pub fn new(sizes: Vec<usize>, hidden: Activation, output: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least an input and an output size");
        Mlp { sizes, hidden, output }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output
        } else {
            self.hidden
        }
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = 0;
        self.sizes.windows(2).map(move |w| {
            let start = off;
            off += (w[0] + 1) * w[1];
            (start, w[0], w[1])
        })
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init(&self, rng: &mut RngState) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.num_params());
        for (_, fan_in, fan_out) in self.layer_offsets() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..(fan_in + 1) * fan_out {
                params.push(rng.uniform(-bound, bound));
            }
        }
        params
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(params.len(), self.num_params());
        debug_assert_eq!(x.len(), self.input_dim());
        let mut cur = x.to_vec();
        for (l, (off, n_in, n_out)) in self.layer_offsets().enumerate() {
            let act = self.activation(l);
            let w = &params[off..off + n_in * n_out];
            let b = &params[off + n_in * n_out..off + (n_in + 1) * n_out];
            let mut next = b.to_vec();
            for (j, nj) in next.iter_mut().enumerate() {
                let row = &w[j * n_in..(j + 1) * n_in];
                *nj += row.iter().zip(&cur).map(|(a, c)| a * c).sum::<f64>();
                *nj = act.apply(*nj);
            }
            cur = next;
        }
        cur
    }

    pub fn forward_cached(&self, params: &[f64], x: &[f64]) -> MlpCache {
        let mut inputs = Vec::with_capacity(self.sizes.len());
        let mut pre = Vec::with_capacity(self.num_layers());
        inputs.push(x.to_vec());
        for (l, (off, n_in, n_out)) in self.layer_offsets().enumerate() {
            let act = self.activation(l);
            let w = &params[off..off + n_in * n_out];
            let b = &params[off + n_in * n_out..off + (n_in + 1) * n_out];
            let cur = &inputs[l];
            let mut p = b.to_vec();
            for (j, pj) in p.iter_mut().enumerate() {
                let row = &w[j * n_in..(j + 1) * n_in];
                *pj += row.iter().zip(cur).map(|(a, c)| a * c).sum::<f64>();
            }
            let out: Vec<f64> = p.iter().map(|&v| act.apply(v)).collect();
            pre.push(p);
            inputs.push(out);
        }
        MlpCache { inputs, pre }
    }

    /// Reverse pass. Accumulates `grad_out^T d(out)/d(params)` into
    /// `grad_params` and, when given, `grad_out^T d(out)/d(x)` into `grad_in`.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        grad_out: &[f64],
        grad_in: Option<&mut [f64]>,
        grad_params: &mut [f64],
    ) {
        let offsets: Vec<_> = self.layer_offsets().collect();
        let mut delta = grad_out.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (off, n_in, n_out) = offsets[l];
            let act = self.activation(l);
            let out = &cache.inputs[l + 1];
            for j in 0..n_out {
                delta[j] *= act.derivative(cache.pre[l][j], out[j]);
            }
            let input = &cache.inputs[l];
            let w = &params[off..off + n_in * n_out];
            {
                let (gw, gb) = grad_params[off..off + (n_in + 1) * n_out].split_at_mut(n_in * n_out);
                for j in 0..n_out {
                    let dj = delta[j];
                    if dj == 0.0 {
                        continue;
                    }
                    gb[j] += dj;
                    let grow = &mut gw[j * n_in..(j + 1) * n_in];
                    for (g, x) in grow.iter_mut().zip(input) {
                        *g += dj * x;
                    }
                }
            }
            if l == 0 && grad_in.is_none() {
                return;
            }
            let mut prev = vec![0.0; n_in];
            for j in 0..n_out {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                let row = &w[j * n_in..(j + 1) * n_in];
                for (p, a) in prev.iter_mut().zip(row) {
                    *p += dj * a;
                }
            }
            delta = prev;
        }
        if let Some(gi) = grad_in {
            for (g, d) in gi.iter_mut().zip(&delta) {
                *g += d;
            }
        }
    }
}

/// Gated recurrent unit. Parameters: `W` (3h x in), `U` (3h x h), `b` (3h),
/// gate blocks ordered reset, update, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    input: usize,
    hidden: usize,
}

#[derive(Debug, Clone)]
pub struct GruStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    u: Vec<f64>,
    n: Vec<f64>,
    un_h: Vec<f64>,
    h: Vec<f64>,
}

impl GruStep {
    pub fn hidden(&self) -> &[f64] {
        &self.h
    }
}

impl Gru {
    pub fn new(input: usize, hidden: usize) -> Self {
        Gru { input, hidden }
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn num_params(&self) -> usize {
        3 * self.hidden * (self.input + self.hidden + 1)
    }

    pub fn init(&self, rng: &mut RngState) -> Vec<f64> {
        let bound = 1.0 / (self.hidden as f64).sqrt();
        (0..self.num_params()).map(|_| rng.uniform(-bound, bound)).collect()
    }

    fn split<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let h = self.hidden;
        let nw = 3 * h * self.input;
        let nu = 3 * h * h;
        (&p[..nw], &p[nw..nw + nu], &p[nw + nu..])
    }

    pub fn step(&self, params: &[f64], x: &[f64], h_prev: &[f64]) -> GruStep {
        let (w, u, b) = self.split(params);
        let (nh, ni) = (self.hidden, self.input);
        let affine = |row: usize, uh: bool| -> f64 {
            let mut s = b[row];
            s += w[row * ni..(row + 1) * ni].iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
            if uh {
                s += u[row * nh..(row + 1) * nh].iter().zip(h_prev).map(|(a, c)| a * c).sum::<f64>();
            }
            s
        };
        let mut r = vec![0.0; nh];
        let mut z = vec![0.0; nh];
        let mut n = vec![0.0; nh];
        let mut un_h = vec![0.0; nh];
        let mut h = vec![0.0; nh];
        for j in 0..nh {
            r[j] = crate::tensor::sigmoid(affine(j, true));
            z[j] = crate::tensor::sigmoid(affine(nh + j, true));
        }
        for j in 0..nh {
            let row = 2 * nh + j;
            un_h[j] = u[row * nh..(row + 1) * nh].iter().zip(h_prev).map(|(a, c)| a * c).sum::<f64>();
            n[j] = (affine(row, false) + r[j] * un_h[j]).tanh();
            h[j] = (1.0 - z[j]) * n[j] + z[j] * h_prev[j];
        }
        GruStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            r,
            u: z,
            n,
            un_h,
            h,
        }
    }

    /// Runs the cell over `inputs` in order starting from a zero state.
    pub fn run(&self, params: &[f64], inputs: &[Vec<f64>]) -> Vec<GruStep> {
        let mut h = vec![0.0; self.hidden];
        let mut steps = Vec::with_capacity(inputs.len());
        for x in inputs {
            let s = self.step(params, x, &h);
            h.clone_from(&s.h);
            steps.push(s);
        }
        steps
    }

    /// Backpropagation through time. `dh[i]` is the loss gradient w.r.t. the
    /// hidden state emitted at step `i` (excluding the recurrent path).
    /// Returns input gradients per step.
    pub fn backward(&self, params: &[f64], steps: &[GruStep], dh: &[Vec<f64>], grad_params: &mut [f64]) -> Vec<Vec<f64>> {
        let (w, u, _) = self.split(params);
        let (nh, ni) = (self.hidden, self.input);
        let nw = 3 * nh * ni;
        let nu = 3 * nh * nh;
        let mut dx_all = vec![vec![0.0; ni]; steps.len()];
        let mut carry = vec![0.0; nh];
        for (i, s) in steps.iter().enumerate().rev() {
            let dhn: Vec<f64> = carry.iter().zip(&dh[i]).map(|(a, b)| a + b).collect();
            let mut dh_prev = vec![0.0; nh];
            let mut dpre = vec![0.0; 3 * nh];
            for j in 0..nh {
                let g = dhn[j];
                let dn = g * (1.0 - s.u[j]);
                let du = g * (s.h_prev[j] - s.n[j]);
                dh_prev[j] += g * s.u[j];
                let dpn = dn * (1.0 - s.n[j] * s.n[j]);
                let dr = dpn * s.un_h[j];
                dpre[j] = dr * s.r[j] * (1.0 - s.r[j]);
                dpre[nh + j] = du * s.u[j] * (1.0 - s.u[j]);
                dpre[2 * nh + j] = dpn;
            }
            let (gw, rest) = grad_params.split_at_mut(nw);
            let (gu, gb) = rest.split_at_mut(nu);
            for row in 0..3 * nh {
                let d = dpre[row];
                gb[row] += d;
                for k in 0..ni {
                    gw[row * ni + k] += d * s.x[k];
                    dx_all[i][k] += d * w[row * ni + k];
                }
                // candidate rows see U_n h through the reset gate
                let du_row = if row >= 2 * nh { d * s.r[row - 2 * nh] } else { d };
                for k in 0..nh {
                    gu[row * nh + k] += du_row * s.h_prev[k];
                    dh_prev[k] += du_row * u[row * nh + k];
                }
            }
            carry = dh_prev;
        }
        dx_all
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], tol: f64) {
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (f(&xp) - f(&xm)) / (2.0 * eps);
            assert!((fd - analytic[i]).abs() <= tol * (1.0 + fd.abs()), "component {i}: fd {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn mlp_param_count() {
        let m = Mlp::new(vec![5, 20, 4], Activation::Tanh, Activation::Identity);
        assert_eq!(m.num_params(), 204);
    }

    #[test]
    fn mlp_backward_matches_fd() {
        let mut rng = RngState::new(3);
        let m = Mlp::new(vec![3, 7, 5, 2], Activation::Tanh, Activation::Softplus);
        let p = m.init(&mut rng);
        let x = rng.normals(3);
        let a = rng.normals(2);
        let cache = m.forward_cached(&p, &x);
        assert_eq!(cache.output(), m.forward(&p, &x).as_slice());
        let mut gp = vec![0.0; p.len()];
        let mut gx = vec![0.0; 3];
        m.backward(&p, &cache, &a, Some(&mut gx), &mut gp);
        let obj = |pp: &[f64], xx: &[f64]| m.forward(pp, xx).iter().zip(&a).map(|(o, w)| o * w).sum::<f64>();
        fd_check(|xx| obj(&p, xx), &x, &gx, 1e-7);
        fd_check(|pp| obj(pp, &x), &p, &gp, 1e-7);
    }

    #[test]
    fn gru_backward_matches_fd() {
        let mut rng = RngState::new(11);
        let g = Gru::new(3, 4);
        let p = g.init(&mut rng);
        let xs: Vec<Vec<f64>> = (0..5).map(|_| rng.normals(3)).collect();
        let weights: Vec<Vec<f64>> = (0..5).map(|_| rng.normals(4)).collect();
        let obj = |pp: &[f64], xs: &[Vec<f64>]| -> f64 {
            g.run(pp, xs)
                .iter()
                .zip(&weights)
                .map(|(s, w)| s.hidden().iter().zip(w).map(|(h, a)| h * a).sum::<f64>())
                .sum()
        };
        let steps = g.run(&p, &xs);
        let mut gp = vec![0.0; p.len()];
        let dx = g.backward(&p, &steps, &weights, &mut gp);
        fd_check(|pp| obj(pp, &xs), &p, &gp, 1e-7);
        for i in 0..xs.len() {
            fd_check(
                |xi| {
                    let mut ys = xs.clone();
                    ys[i] = xi.to_vec();
                    obj(&p, &ys)
                },
                &xs[i],
                &dx[i],
                1e-7,
            );
        }
    }
}
