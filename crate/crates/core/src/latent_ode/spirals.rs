//! Two-dimensional Archimedean spirals, half clockwise and half
//! counter-clockwise, with noisy and noise-free copies.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};
use crate::rng::RngState;

/// Radius `r = SPIRAL_R0 + SPIRAL_GROWTH * theta`.
pub const SPIRAL_R0: f64 = 0.3;
pub const SPIRAL_GROWTH: f64 = 0.3;
/// Angle swept over one trajectory's time grid.
pub const SPIRAL_SWEEP: f64 = 1.2 * PI;
/// Start angles are uniform on `[0, SPIRAL_START_MAX]`, so the whole set
/// covers two turns of the curve.
pub const SPIRAL_START_MAX: f64 = 4.0 * PI - SPIRAL_SWEEP;
pub const CENTER_JITTER: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Clockwise,
    CounterClockwise,
}

impl Direction {
    pub fn label(self) -> u8 {
        match self {
            Direction::Clockwise => 0,
            Direction::CounterClockwise => 1,
        }
    }
}

/// Spirals on a shared regular grid. Each trajectory starts at a random
/// point of the curve; time equals the angle swept since that point.
#[derive(Debug, Clone, PartialEq)]
pub struct SpiralDataset {
    pub times: Vec<f64>,
    /// `observed[traj][time] = [x0, x1]`, noise added.
    pub observed: Vec<Vec<Vec<f64>>>,
    pub truth: Vec<Vec<Vec<f64>>>,
    pub directions: Vec<Direction>,
    pub noise_std: f64,
}

pub fn generate_spirals(rng: &mut RngState, n_traj: usize, n_time: usize, noise_std: f64) -> Result<SpiralDataset> {
    if n_traj == 0 || n_traj % 2 != 0 {
        return Err(Error::Argument(format!("number of spirals must be even and positive, got {n_traj}")));
    }
    if n_time < 2 {
        return Err(Error::Argument("need at least two time points".into()));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::Argument(format!("noise std must be >= 0, got {noise_std}")));
    }
    let times: Vec<f64> = (0..n_time).map(|j| SPIRAL_SWEEP * j as f64 / (n_time - 1) as f64).collect();
    let mut ds = SpiralDataset {
        times,
        observed: Vec::with_capacity(n_traj),
        truth: Vec::with_capacity(n_traj),
        directions: Vec::with_capacity(n_traj),
        noise_std,
    };
    for k in 0..n_traj {
        let dir = if k % 2 == 0 {
            Direction::CounterClockwise
        } else {
            Direction::Clockwise
        };
        let sign = if dir == Direction::Clockwise { -1.0 } else { 1.0 };
        let start = rng.uniform(0.0, SPIRAL_START_MAX);
        let cx = CENTER_JITTER * rng.normal();
        let cy = CENTER_JITTER * rng.normal();
        let mut truth = Vec::with_capacity(n_time);
        let mut obs = Vec::with_capacity(n_time);
        for &t in &ds.times {
            let theta = start + t;
            let r = SPIRAL_R0 + SPIRAL_GROWTH * theta;
            let a = sign * theta;
            let p = vec![cx + r * a.cos(), cy + r * a.sin()];
            let noisy = if noise_std > 0.0 {
                p.iter().map(|v| v + noise_std * rng.normal()).collect()
            } else {
                p.clone()
            };
            truth.push(p);
            obs.push(noisy);
        }
        ds.truth.push(truth);
        ds.observed.push(obs);
        ds.directions.push(dir);
    }
    Ok(ds)
}

impl SpiralDataset {
    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    /// The sub-dataset on time indices `range`.
    pub fn window(&self, range: std::ops::Range<usize>) -> Result<SpiralDataset> {
        if range.end > self.times.len() || range.len() < 1 {
            return Err(Error::Argument(format!("window {range:?} outside {} times", self.times.len())));
        }
        Ok(SpiralDataset {
            times: self.times[range.clone()].to_vec(),
            observed: self.observed.iter().map(|o| o[range.clone()].to_vec()).collect(),
            truth: self.truth.iter().map(|o| o[range.clone()].to_vec()).collect(),
            directions: self.directions.clone(),
            noise_std: self.noise_std,
        })
    }

    /// First `n` trajectories and the rest.
    pub fn split_at(&self, n: usize) -> (SpiralDataset, SpiralDataset) {
        let take = |lo: usize, hi: usize| SpiralDataset {
            times: self.times.clone(),
            observed: self.observed[lo..hi].to_vec(),
            truth: self.truth[lo..hi].to_vec(),
            directions: self.directions[lo..hi].to_vec(),
            noise_std: self.noise_std,
        };
        (take(0, n), take(n, self.len()))
    }

    /// Writes trajectory `k` as `t,x0,x1,label`.
    pub fn write_csv<W: Write>(&self, w: &mut W, k: usize) -> Result<()> {
        writeln!(w, "t,x0,x1,label")?;
        let label = self.directions[k].label();
        for (t, x) in self.times.iter().zip(&self.observed[k]) {
            writeln!(w, "{t:.16e},{:.16e},{:.16e},{label}", x[0], x[1])?;
        }
        Ok(())
    }
}

/// An irregularly sampled sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub times: Vec<f64>,
    pub obs: Vec<Vec<f64>>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Draws `k` distinct time indices per trajectory (sorted) from the noisy
/// observations.
pub fn subsample(ds: &SpiralDataset, rng: &mut RngState, k: usize) -> Result<Vec<Sequence>> {
    let n = ds.times.len();
    if k == 0 || k > n {
        return Err(Error::Argument(format!("cannot draw {k} of {n} time points")));
    }
    let mut out = Vec::with_capacity(ds.len());
    for obs in &ds.observed {
        // Partial Fisher-Yates over the index set.
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + rng.below(n - i);
            idx.swap(i, j);
        }
        let mut pick = idx[..k].to_vec();
        pick.sort_unstable();
        out.push(Sequence {
            times: pick.iter().map(|&i| ds.times[i]).collect(),
            obs: pick.iter().map(|&i| obs[i].clone()).collect(),
        });
    }
    Ok(out)
}

/// Root mean squared error over trajectories, times and dimensions.
pub fn predictive_rmse(pred: &[Vec<Vec<f64>>], truth: &[Vec<Vec<f64>>]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Argument(format!("{} predictions for {} trajectories", pred.len(), truth.len())));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if p.len() != t.len() {
            return Err(Error::Argument(format!("{} predicted times for {} true times", p.len(), t.len())));
        }
        for (a, b) in p.iter().zip(t) {
            for (x, y) in a.iter().zip(b) {
                sum += (x - y).powi(2);
                count += 1;
            }
        }
    }
    Ok((sum / count as f64).sqrt())
}
