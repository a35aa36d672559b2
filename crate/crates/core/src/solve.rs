//! Explicit initial value problem solvers: fixed-step Euler and RK4, and
//! adaptive Dormand-Prince 5(4) with FSAL and Hairer-style step control.
//!
//! Integration direction follows the sign of `t1 - t0`; reverse solves use a
//! negative step rather than a negated field.

use std::io::Write;

use crate::dynamics::Dynamics;
use crate::error::{check_finite, check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Euler,
    Rk4,
    Dopri5,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Method::Euler),
            "rk4" => Ok(Method::Rk4),
            "dopri5" => Ok(Method::Dopri5),
            _ => Err(Error::Argument(format!("unknown solver method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    /// Fixed step size. Required for Euler and RK4; for DOPRI5 it switches
    /// off error control and takes uniform steps.
    pub step_size: Option<f64>,
    pub first_step: Option<f64>,
    pub max_steps: usize,
    pub safety: f64,
    /// Keep a log of every attempted adaptive step.
    pub record_steps: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            method: Method::Dopri5,
            rtol: 1e-7,
            atol: 1e-9,
            step_size: None,
            first_step: None,
            max_steps: 100_000,
            safety: 0.9,
            record_steps: false,
        }
    }
}

impl SolveConfig {
    pub fn dopri5(rtol: f64, atol: f64) -> Self {
        SolveConfig {
            rtol,
            atol,
            ..SolveConfig::default()
        }
    }

    pub fn fixed(method: Method, h: f64) -> Self {
        SolveConfig {
            method,
            step_size: Some(h),
            ..SolveConfig::default()
        }
    }

    pub fn rk4(h: f64) -> Self {
        SolveConfig::fixed(Method::Rk4, h)
    }

    pub fn euler(h: f64) -> Self {
        SolveConfig::fixed(Method::Euler, h)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.max_steps == 0 {
            return bad("max_steps must be >= 1".into());
        }
        match (self.method, self.step_size) {
            (_, Some(h)) if !(h > 0.0 && h.is_finite()) => bad(format!("step size must be positive, got {h}")),
            (Method::Euler | Method::Rk4, None) => bad("fixed-step methods need a step size".into()),
            (Method::Dopri5, None) if !(self.rtol > 0.0 && self.atol > 0.0) => {
                bad(format!("tolerances must be positive, got rtol {} atol {}", self.rtol, self.atol))
            }
            (Method::Dopri5, None) if !(self.safety > 0.0 && self.safety <= 1.0) => {
                bad(format!("safety factor must lie in (0, 1], got {}", self.safety))
            }
            _ => Ok(()),
        }
    }

    /// The consistency scale `atol + rtol * scale` used for round-trip checks.
    pub fn tolerance_at(&self, scale: f64) -> f64 {
        self.atol + self.rtol * scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub h: f64,
    pub err_norm: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub nfe: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().map_or(&[], Vec::as_slice)
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }
}

/// Statistics of one integration segment.
#[derive(Debug, Clone, Default)]
pub struct SegmentStats {
    pub nfe: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Step size the adaptive controller would try next; 0 for fixed steps.
    pub next_step: f64,
}

/// Integrates `dy/dt = rhs(t, y)` from `t0` to `t1`, overwriting `y`.
/// Working storage is a fixed number of `y`-sized buffers.
pub fn integrate<F>(
    mut rhs: F,
    y: &mut [f64],
    t0: f64,
    t1: f64,
    cfg: &SolveConfig,
    mut log: Option<&mut Vec<StepRecord>>,
) -> Result<SegmentStats>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    cfg.validate()?;
    if t0 == t1 || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::Argument(format!("integration interval [{t0}, {t1}] is empty or non-finite")));
    }
    check_finite("initial state", y)?;
    let mut stats = SegmentStats::default();
    match (cfg.method, cfg.step_size) {
        (Method::Dopri5, None) => dopri5_adaptive(&mut rhs, y, t0, t1, cfg, &mut stats, &mut log)?,
        (method, Some(h)) => fixed_steps(&mut rhs, y, t0, t1, h, method, cfg.max_steps, &mut stats)?,
        (_, None) => unreachable!("validated"),
    }
    check_finite("solution", y)?;
    Ok(stats)
}

/// Number of uniform steps used to cover `|t1 - t0|` with steps of at most `h`.
pub fn fixed_step_count(t0: f64, t1: f64, h: f64) -> usize {
    ((t1 - t0).abs() / h - 1e-9).ceil().max(1.0) as usize
}

#[allow(clippy::too_many_arguments)]
fn fixed_steps<F>(
    rhs: &mut F,
    y: &mut [f64],
    t0: f64,
    t1: f64,
    h: f64,
    method: Method,
    max_steps: usize,
    stats: &mut SegmentStats,
) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = fixed_step_count(t0, t1, h);
    if n > max_steps {
        return Err(Error::Divergence { max_steps, t: t0 });
    }
    let dt = (t1 - t0) / n as f64;
    let d = y.len();
    match method {
        Method::Euler => {
            let mut k = vec![0.0; d];
            for i in 0..n {
                let t = t0 + i as f64 * dt;
                rhs(t, y, &mut k)?;
                for (yi, ki) in y.iter_mut().zip(&k) {
                    *yi += dt * ki;
                }
            }
            stats.nfe += n;
        }
        Method::Rk4 => {
            let mut k = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
            let mut tmp = vec![0.0; d];
            for i in 0..n {
                let t = t0 + i as f64 * dt;
                rk4_step(rhs, y, t, dt, &mut k, &mut tmp)?;
            }
            stats.nfe += 4 * n;
        }
        Method::Dopri5 => {
            let mut ws = Dopri5Work::new(d);
            rhs(t0, y, &mut ws.k[0])?;
            stats.nfe += 1;
            for i in 0..n {
                let t = t0 + i as f64 * dt;
                ws.step(rhs, y, t, dt)?;
                y.copy_from_slice(&ws.y_new);
                ws.k.swap(0, 6);
            }
            stats.nfe += 6 * n;
        }
    }
    stats.accepted += n;
    Ok(())
}

fn rk4_step<F>(rhs: &mut F, y: &mut [f64], t: f64, h: f64, k: &mut [Vec<f64>; 4], tmp: &mut [f64]) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    rhs(t, y, &mut k[0])?;
    for i in 0..y.len() {
        tmp[i] = y[i] + 0.5 * h * k[0][i];
    }
    rhs(t + 0.5 * h, tmp, &mut k[1])?;
    for i in 0..y.len() {
        tmp[i] = y[i] + 0.5 * h * k[1][i];
    }
    rhs(t + 0.5 * h, tmp, &mut k[2])?;
    for i in 0..y.len() {
        tmp[i] = y[i] + h * k[2][i];
    }
    rhs(t + h, tmp, &mut k[3])?;
    for i in 0..y.len() {
        y[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
    }
    Ok(())
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [&[f64]; 7] = [
    &[],
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Dopri5Work {
    k: Vec<Vec<f64>>,
    y_new: Vec<f64>,
    tmp: Vec<f64>,
}

impl Dopri5Work {
    fn new(d: usize) -> Self {
        Dopri5Work {
            k: vec![vec![0.0; d]; 7],
            y_new: vec![0.0; d],
            tmp: vec![0.0; d],
        }
    }

    /// Stages 2..7 given `k[0] = f(t, y)`; leaves the fifth-order solution in
    /// `y_new` and `f(t + h, y_new)` in `k[6]`.
    fn step<F>(&mut self, rhs: &mut F, y: &[f64], t: f64, h: f64) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        for s in 1..7 {
            let target = if s == 6 { &mut self.y_new } else { &mut self.tmp };
            for i in 0..y.len() {
                let mut acc = 0.0;
                for (j, a) in A[s].iter().enumerate() {
                    acc += a * self.k[j][i];
                }
                target[i] = y[i] + h * acc;
            }
            let input = if s == 6 { &self.y_new } else { &self.tmp };
            rhs(t + C[s] * h, input, &mut self.k[s])?;
        }
        Ok(())
    }

    fn error_norm(&self, y: &[f64], h: f64, rtol: f64, atol: f64) -> f64 {
        let mut sum = 0.0;
        for i in 0..y.len() {
            let mut e = 0.0;
            for (j, ej) in E.iter().enumerate() {
                e += ej * self.k[j][i];
            }
            let sc = atol + rtol * y[i].abs().max(self.y_new[i].abs());
            let r = h * e / sc;
            sum += r * r;
        }
        let n = (sum / y.len().max(1) as f64).sqrt();
        if n.is_nan() {
            f64::INFINITY
        } else {
            n
        }
    }
}

fn rms_scaled(v: &[f64], y: &[f64], rtol: f64, atol: f64) -> f64 {
    let s: f64 = v
        .iter()
        .zip(y)
        .map(|(x, yi)| {
            let r = x / (atol + rtol * yi.abs());
            r * r
        })
        .sum();
    (s / v.len().max(1) as f64).sqrt()
}

fn dopri5_adaptive<F>(
    rhs: &mut F,
    y: &mut [f64],
    t0: f64,
    t1: f64,
    cfg: &SolveConfig,
    stats: &mut SegmentStats,
    log: &mut Option<&mut Vec<StepRecord>>,
) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let d = y.len();
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let mut ws = Dopri5Work::new(d);
    rhs(t0, y, &mut ws.k[0])?;
    stats.nfe += 1;

    let mut h = match cfg.first_step {
        Some(h0) => h0.abs().min(span),
        None => {
            // Hairer, Norsett & Wanner's starting step heuristic.
            let d0 = rms_scaled(y, y, cfg.rtol, cfg.atol);
            let d1 = rms_scaled(&ws.k[0], y, cfg.rtol, cfg.atol);
            let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 }.min(span);
            for i in 0..d {
                ws.tmp[i] = y[i] + dir * h0 * ws.k[0][i];
            }
            rhs(t0 + dir * h0, &ws.tmp, &mut ws.k[1])?;
            stats.nfe += 1;
            for i in 0..d {
                ws.y_new[i] = ws.k[1][i] - ws.k[0][i];
            }
            let d2 = rms_scaled(&ws.y_new, y, cfg.rtol, cfg.atol) / h0;
            let h1 = if d1.max(d2) <= 1e-15 {
                (h0 * 1e-3).max(1e-6)
            } else {
                (0.01 / d1.max(d2)).powf(0.2)
            };
            (100.0 * h0).min(h1).min(span)
        }
    };

    let mut t = t0;
    let mut attempts = 0usize;
    let mut last_rejected = false;
    loop {
        let remaining = (t1 - t).abs();
        if remaining <= 0.0 {
            break;
        }
        if attempts >= cfg.max_steps {
            return Err(Error::Divergence {
                max_steps: cfg.max_steps,
                t,
            });
        }
        attempts += 1;
        // Avoid a sliver of a final step.
        let last = h >= remaining || remaining - h < 1e-12 * span;
        let proposed = h;
        if last {
            h = remaining;
        }
        let hs = dir * h;
        ws.step(rhs, y, t, hs)?;
        stats.nfe += 6;
        let err = ws.error_norm(y, h, cfg.rtol, cfg.atol);
        if let Some(log) = log.as_deref_mut() {
            log.push(StepRecord {
                t,
                h: hs,
                err_norm: err,
                accepted: err <= 1.0,
            });
        }
        if err <= 1.0 {
            t = if last { t1 } else { t + hs };
            y.copy_from_slice(&ws.y_new);
            ws.k.swap(0, 6);
            stats.accepted += 1;
            let mut factor = if err == 0.0 {
                5.0
            } else {
                (cfg.safety * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if last_rejected {
                factor = factor.min(1.0);
            }
            last_rejected = false;
            h *= factor;
            if last {
                stats.next_step = h.max(proposed);
            }
        } else {
            stats.rejected += 1;
            last_rejected = true;
            let factor = if err.is_finite() {
                (cfg.safety * err.powf(-0.2)).max(0.2)
            } else {
                0.2
            };
            h *= factor;
            if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
                return Err(Error::StepUnderflow { t, h });
            }
        }
    }
    Ok(())
}

fn dynamics_rhs<'a, D: Dynamics + ?Sized>(f: &'a D) -> impl FnMut(f64, &[f64], &mut [f64]) -> Result<()> + 'a {
    move |t, y, dy| f.eval_into(y, t, dy)
}

/// Solves the initial value problem from `t0` to `t1` and returns the two
/// endpoint states.
pub fn solve<D: Dynamics + ?Sized>(f: &D, z0: &[f64], t0: f64, t1: f64, cfg: &SolveConfig) -> Result<Trajectory> {
    solve_at_times(f, z0, &[t0, t1], cfg)
}

/// States at each requested time; the solver restarts at every time point.
pub fn solve_at_times<D: Dynamics + ?Sized>(f: &D, z0: &[f64], times: &[f64], cfg: &SolveConfig) -> Result<Trajectory> {
    check_len("initial state", f.state_dim(), z0.len())?;
    check_times(times)?;
    let mut traj = Trajectory {
        times: times.to_vec(),
        states: Vec::with_capacity(times.len()),
        ..Trajectory::default()
    };
    traj.states.push(z0.to_vec());
    let mut y = z0.to_vec();
    let mut rhs = dynamics_rhs(f);
    let mut seg_cfg = cfg.clone();
    for w in times.windows(2) {
        let log = if cfg.record_steps { Some(&mut traj.steps) } else { None };
        let s = integrate(&mut rhs, &mut y, w[0], w[1], &seg_cfg, log)?;
        seg_cfg.first_step = carried_step(cfg, &s);
        traj.nfe += s.nfe;
        traj.accepted += s.accepted;
        traj.rejected += s.rejected;
        traj.states.push(y.clone());
    }
    Ok(traj)
}

/// First step for the next segment of a multi-segment solve: the user's
/// choice if set, otherwise where the controller left off.
pub(crate) fn carried_step(cfg: &SolveConfig, s: &SegmentStats) -> Option<f64> {
    cfg.first_step.or((s.next_step > 0.0).then_some(s.next_step))
}

pub(crate) fn check_times(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Err(Error::Argument(format!("need at least two time points, got {}", times.len())));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Argument("time points must be finite".into()));
    }
    let up = times[1] > times[0];
    for w in times.windows(2) {
        if w[1] == w[0] || (w[1] > w[0]) != up {
            return Err(Error::Argument(format!(
                "time points must be strictly monotone, found {} then {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Least-squares slope of `log(error)` against `log(h)`, where the error is
/// the max-abs distance of the fixed-step solution from `reference`.
pub fn convergence_order<D: Dynamics + ?Sized>(
    f: &D,
    z0: &[f64],
    t0: f64,
    t1: f64,
    method: Method,
    step_sizes: &[f64],
    reference: &[f64],
) -> Result<f64> {
    if step_sizes.len() < 2 {
        return Err(Error::Argument("need at least two step sizes".into()));
    }
    let mut pts = Vec::with_capacity(step_sizes.len());
    for &h in step_sizes {
        let traj = solve(f, z0, t0, t1, &SolveConfig::fixed(method, h))?;
        let err = traj
            .final_state()
            .iter()
            .zip(reference)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        // Uniform steps may be slightly shorter than requested.
        let used = (t1 - t0).abs() / fixed_step_count(t0, t1, h) as f64;
        pts.push((used.ln(), err.ln()));
    }
    Ok(least_squares_slope(&pts))
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Writes `t,z_0,...,z_{D-1}` with 17 significant digits.
pub fn write_trajectory_csv<W: Write>(w: &mut W, traj: &Trajectory) -> Result<()> {
    let d = traj.dim();
    let mut header = String::from("t");
    for i in 0..d {
        header.push_str(&format!(",z_{i}"));
    }
    writeln!(w, "{header}")?;
    for (t, z) in traj.times.iter().zip(&traj.states) {
        let mut line = format!("{t:.16e}");
        for v in z {
            line.push_str(&format!(",{v:.16e}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}
