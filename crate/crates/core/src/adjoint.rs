//! Reverse-mode gradients of ODE solutions.
//!
//! The adjoint `a(t) = dL/dz(t)` is integrated backwards together with the
//! state and the parameter and time sensitivities, so memory does not grow
//! with the number of forward solver steps. `direct_backprop_rk4` is the
//! discrete alternative that stores every stage.

use crate::dynamics::Dynamics;
use crate::error::{check_len, Error, Result};
use crate::solve::{carried_step, check_times, fixed_step_count, integrate, SolveConfig, Trajectory};
use crate::tensor::dot;

/// `[z, a, a_theta, a_t]`, flattened in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub z: Vec<f64>,
    pub a: Vec<f64>,
    pub a_theta: Vec<f64>,
    pub a_t: f64,
}

impl AugmentedState {
    pub fn pack(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.z.len() + self.a_theta.len() + 1);
        v.extend_from_slice(&self.z);
        v.extend_from_slice(&self.a);
        v.extend_from_slice(&self.a_theta);
        v.push(self.a_t);
        v
    }

    pub fn unpack(flat: &[f64], dim: usize, num_params: usize) -> Result<Self> {
        check_len("augmented state", 2 * dim + num_params + 1, flat.len())?;
        Ok(AugmentedState {
            z: flat[..dim].to_vec(),
            a: flat[dim..2 * dim].to_vec(),
            a_theta: flat[2 * dim..2 * dim + num_params].to_vec(),
            a_t: flat[2 * dim + num_params],
        })
    }
}

/// Writes `[f, -a^T df/dz, -a^T df/dtheta, -a^T df/dt]` for the flattened
/// augmented state `s` into `ds`. One field evaluation plus one VJP.
pub fn aug_dynamics_into<D: Dynamics + ?Sized>(f: &D, t: f64, s: &[f64], ds: &mut [f64]) -> Result<()> {
    let d = f.state_dim();
    let p = f.num_params();
    check_len("augmented state", 2 * d + p + 1, s.len())?;
    let (dz, rest) = ds.split_at_mut(d);
    let (da, rest) = rest.split_at_mut(d);
    let (dth, dt) = rest.split_at_mut(p);
    f.eval_into(&s[..d], t, dz)?;
    let vt = f.vjp_into(&s[..d], t, &s[d..2 * d], da, dth)?;
    for v in da.iter_mut().chain(dth.iter_mut()) {
        *v = -*v;
    }
    dt[0] = -vt;
    Ok(())
}

pub fn aug_dynamics<D: Dynamics + ?Sized>(f: &D, s: &AugmentedState, t: f64) -> Result<AugmentedState> {
    let flat = s.pack();
    let mut ds = vec![0.0; flat.len()];
    aug_dynamics_into(f, t, &flat, &mut ds)?;
    AugmentedState::unpack(&ds, f.state_dim(), f.num_params())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub d_z0: Vec<f64>,
    pub d_theta: Vec<f64>,
    pub d_t0: f64,
    pub d_t1: f64,
    /// Gradient with respect to every observation time, first to last. For a
    /// single interval this is `[d_t0, d_t1]`.
    pub d_times: Vec<f64>,
    /// Field evaluations spent in the reverse solve(s).
    pub nfe: usize,
}

impl GradientBundle {
    pub fn scaled(&self, s: f64) -> GradientBundle {
        GradientBundle {
            d_z0: self.d_z0.iter().map(|x| x * s).collect(),
            d_theta: self.d_theta.iter().map(|x| x * s).collect(),
            d_t0: self.d_t0 * s,
            d_t1: self.d_t1 * s,
            d_times: self.d_times.iter().map(|x| x * s).collect(),
            nfe: self.nfe,
        }
    }
}

/// Output of a single-interval adjoint solve.
#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub grads: GradientBundle,
    /// `z(t0)` as reconstructed by the backward integration.
    pub z0_reconstructed: Vec<f64>,
    /// Set when the reconstruction drifts from the known forward `z(t0)`
    /// by more than `100 * (atol + rtol * max|z0|)`.
    pub reversal_warning: Option<String>,
}

/// Gradients of a loss depending on `z(t1)` with respect to `z(t0)`, the
/// parameters and both interval endpoints, from one reverse-time solve.
pub fn backward_gradients<D: Dynamics + ?Sized>(
    f: &D,
    z_t1: &[f64],
    t0: f64,
    t1: f64,
    dl_dz1: &[f64],
    cfg: &SolveConfig,
) -> Result<GradientBundle> {
    Ok(adjoint_solve(f, z_t1, t0, t1, dl_dz1, cfg, None)?.grads)
}

/// [`backward_gradients`] with the forward `z(t0)` supplied for a
/// reversal-consistency check.
pub fn adjoint_solve<D: Dynamics + ?Sized>(
    f: &D,
    z_t1: &[f64],
    t0: f64,
    t1: f64,
    dl_dz1: &[f64],
    cfg: &SolveConfig,
    z0_forward: Option<&[f64]>,
) -> Result<AdjointSolution> {
    let d = f.state_dim();
    let p = f.num_params();
    check_len("z(t1)", d, z_t1.len())?;
    check_len("dL/dz(t1)", d, dl_dz1.len())?;
    let mut f1 = vec![0.0; d];
    f.eval_into(z_t1, t1, &mut f1)?;
    let d_t1 = dot(dl_dz1, &f1);

    let mut s = vec![0.0; 2 * d + p + 1];
    s[..d].copy_from_slice(z_t1);
    s[d..2 * d].copy_from_slice(dl_dz1);
    s[2 * d + p] = -d_t1;
    let stats = integrate(|t, y, dy| aug_dynamics_into(f, t, y, dy), &mut s, t1, t0, cfg, None)?;

    let reversal_warning = z0_forward.and_then(|z0| {
        let scale = z0.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let tol = 100.0 * cfg.tolerance_at(scale);
        let drift = z0.iter().zip(&s[..d]).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        (drift > tol).then(|| {
            format!("backward reconstruction of z(t0) drifted by {drift:.3e} (tolerance {tol:.3e}); gradients may be inaccurate")
        })
    });
    let d_t0 = s[2 * d + p];
    Ok(AdjointSolution {
        grads: GradientBundle {
            d_z0: s[d..2 * d].to_vec(),
            d_theta: s[2 * d..2 * d + p].to_vec(),
            d_t0,
            d_t1,
            d_times: vec![d_t0, d_t1],
            nfe: stats.nfe + 1,
        },
        z0_reconstructed: s[..d].to_vec(),
        reversal_warning,
    })
}

/// Gradients of a loss that reads the state at several times. `times` and
/// `states` are the forward trajectory; `dl_dz[i]` is `dL/dz(times[i])`.
/// The adjoint is integrated interval by interval, restarting from the stored
/// forward state and receiving each observation's gradient at its boundary.
pub fn backward_gradients_multi<D: Dynamics + ?Sized>(
    f: &D,
    times: &[f64],
    states: &[Vec<f64>],
    dl_dz: &[Vec<f64>],
    cfg: &SolveConfig,
) -> Result<GradientBundle> {
    let d = f.state_dim();
    let p = f.num_params();
    let n = times.len();
    check_times(times)?;
    if times[1] < times[0] {
        return Err(Error::Argument("observation times must be ascending".into()));
    }
    if states.len() != n || dl_dz.len() != n {
        return Err(Error::Argument(format!(
            "{} times but {} states and {} loss gradients",
            n,
            states.len(),
            dl_dz.len()
        )));
    }
    for (z, g) in states.iter().zip(dl_dz) {
        check_len("trajectory state", d, z.len())?;
        check_len("loss gradient", d, g.len())?;
    }

    let mut s = vec![0.0; 2 * d + p + 1];
    s[d..2 * d].copy_from_slice(&dl_dz[n - 1]);
    let mut fz = vec![0.0; d];
    let mut time_grads = Vec::with_capacity(n);
    let mut a_t0 = 0.0;
    let mut nfe = 0;
    let mut seg_cfg = cfg.clone();
    for i in (1..n).rev() {
        f.eval_into(&states[i], times[i], &mut fz)?;
        nfe += 1;
        let cur = dot(&fz, &dl_dz[i]);
        time_grads.push(cur);
        a_t0 -= cur;
        s[..d].copy_from_slice(&states[i]);
        s[2 * d + p] = a_t0;
        let stats = integrate(|t, y, dy| aug_dynamics_into(f, t, y, dy), &mut s, times[i], times[i - 1], &seg_cfg, None)?;
        seg_cfg.first_step = carried_step(cfg, &stats);
        nfe += stats.nfe;
        a_t0 = s[2 * d + p];
        for (a, g) in s[d..2 * d].iter_mut().zip(&dl_dz[i - 1]) {
            *a += g;
        }
    }
    time_grads.push(a_t0);
    time_grads.reverse();
    Ok(GradientBundle {
        d_z0: s[d..2 * d].to_vec(),
        d_theta: s[2 * d..2 * d + p].to_vec(),
        d_t0: time_grads[0],
        d_t1: time_grads[n - 1],
        d_times: time_grads,
        nfe,
    })
}

/// [`backward_gradients_multi`] over a forward [`Trajectory`].
pub fn backward_gradients_traj<D: Dynamics + ?Sized>(
    f: &D,
    traj: &Trajectory,
    dl_dz: &[Vec<f64>],
    cfg: &SolveConfig,
) -> Result<GradientBundle> {
    backward_gradients_multi(f, &traj.times, &traj.states, dl_dz, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteGradients {
    pub z1: Vec<f64>,
    pub d_z0: Vec<f64>,
    pub d_theta: Vec<f64>,
    pub steps: usize,
    /// Number of `f64` values retained between the forward and reverse sweep.
    pub stored_values: usize,
}

/// Exact reverse-mode derivative of the fixed-step RK4 recursion from `t0`
/// to `t1`. Every stage input is kept, so memory grows with the step count.
pub fn direct_backprop_rk4<D: Dynamics + ?Sized>(
    f: &D,
    z0: &[f64],
    t0: f64,
    t1: f64,
    h: f64,
    dl_dz1: &[f64],
) -> Result<DiscreteGradients> {
    let d = f.state_dim();
    let p = f.num_params();
    check_len("z0", d, z0.len())?;
    check_len("dL/dz(t1)", d, dl_dz1.len())?;
    if !(h > 0.0) || t0 == t1 {
        return Err(Error::Argument(format!("need h > 0 and t0 != t1, got h {h}, [{t0}, {t1}]")));
    }
    let n = fixed_step_count(t0, t1, h);
    let dt = (t1 - t0) / n as f64;

    // stages[(step * 4 + j) * d ..] is the input of stage j at that step.
    let mut stages = vec![0.0; n * 4 * d];
    let mut y = z0.to_vec();
    let mut k = vec![vec![0.0; d]; 4];
    for step in 0..n {
        let t = t0 + step as f64 * dt;
        let base = step * 4 * d;
        stages[base..base + d].copy_from_slice(&y);
        f.eval_into(&y, t, &mut k[0])?;
        for (j, c) in [(1usize, 0.5), (2, 0.5), (3, 1.0)] {
            let (prev, cur) = k.split_at_mut(j);
            let input = &mut stages[base + j * d..base + (j + 1) * d];
            for i in 0..d {
                input[i] = y[i] + c * dt * prev[j - 1][i];
            }
            f.eval_into(input, t + c * dt, &mut cur[0])?;
        }
        for i in 0..d {
            y[i] += dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
    }

    let mut ybar = dl_dz1.to_vec();
    let mut theta_bar = vec![0.0; p];
    let mut kbar = vec![vec![0.0; d]; 4];
    let mut vz = vec![0.0; d];
    let mut vth = vec![0.0; p];
    for step in (0..n).rev() {
        let t = t0 + step as f64 * dt;
        let base = step * 4 * d;
        for (j, w) in [1.0, 2.0, 2.0, 1.0].into_iter().enumerate() {
            for i in 0..d {
                kbar[j][i] = dt * w / 6.0 * ybar[i];
            }
        }
        // Stage j reads y + c_j dt k_{j-1}; walk the stages backwards.
        for (j, c) in [(3usize, 1.0), (2, 0.5), (1, 0.5), (0, 0.0)] {
            let input = &stages[base + j * d..base + (j + 1) * d];
            f.vjp_into(input, t + c * dt, &kbar[j], &mut vz, &mut vth)?;
            for i in 0..d {
                ybar[i] += vz[i];
            }
            for (g, v) in theta_bar.iter_mut().zip(&vth) {
                *g += v;
            }
            if j > 0 {
                let (prev, _) = kbar.split_at_mut(j);
                for i in 0..d {
                    prev[j - 1][i] += c * dt * vz[i];
                }
            }
        }
    }
    Ok(DiscreteGradients {
        z1: y,
        d_z0: ybar,
        d_theta: theta_bar,
        steps: n,
        stored_values: stages.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NfeReport {
    pub nfe_forward: usize,
    pub nfe_backward: usize,
    pub ratio: f64,
}

/// Raw forward and backward evaluation counts and their ratio.
pub fn nfe_report(nfe_forward: usize, nfe_backward: usize) -> NfeReport {
    NfeReport {
        nfe_forward,
        nfe_backward,
        ratio: if nfe_forward == 0 {
            f64::NAN
        } else {
            nfe_backward as f64 / nfe_forward as f64
        },
    }
}
