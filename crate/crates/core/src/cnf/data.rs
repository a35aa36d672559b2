//! Toy densities for flow experiments.

use std::f64::consts::PI;

use crate::error::{check_len, Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

use super::LOG_2PI;

/// Isotropic Gaussian component.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    /// Equal mixture of rings of radius 1 and 2.5, radial noise 0.08.
    TwoCircles,
    /// Two interleaved unit half circles with noise 0.08, centred at the origin.
    TwoMoons,
    GaussianMixture(Vec<Component>),
}

pub const CIRCLE_RADII: [f64; 2] = [1.0, 2.5];
pub const SHAPE_NOISE: f64 = 0.08;

impl Dataset {
    pub fn mixture(components: Vec<Component>) -> Result<Dataset> {
        let dim = components.first().map(|c| c.mean.len()).unwrap_or(0);
        if dim == 0 {
            return Err(Error::Argument("mixture needs at least one component of dim >= 1".into()));
        }
        for c in &components {
            check_len("mixture component mean", dim, c.mean.len())?;
            if !(c.weight > 0.0 && c.std > 0.0) {
                return Err(Error::Argument(format!("mixture weight and std must be positive: {c:?}")));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        let components = components
            .into_iter()
            .map(|c| Component {
                weight: c.weight / total,
                ..c
            })
            .collect();
        Ok(Dataset::GaussianMixture(components))
    }

    /// Three equally weighted components (std 0.5) at radius 2 around the origin.
    pub fn three_gaussians() -> Dataset {
        let comps = (0..3)
            .map(|k| {
                let a = PI / 2.0 + 2.0 * PI * k as f64 / 3.0;
                Component {
                    weight: 1.0,
                    mean: vec![2.0 * a.cos(), 2.0 * a.sin()],
                    std: 0.5,
                }
            })
            .collect();
        Dataset::mixture(comps).unwrap()
    }

    pub fn name(&self) -> &'static str {
        match self {
            Dataset::TwoCircles => "two_circles",
            Dataset::TwoMoons => "two_moons",
            Dataset::GaussianMixture(_) => "gaussian_mixture",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Dataset::GaussianMixture(c) => c[0].mean.len(),
            _ => 2,
        }
    }

    pub fn has_density(&self) -> bool {
        matches!(self, Dataset::GaussianMixture(_))
    }

    pub fn sample(&self, rng: &mut RngState, n: usize) -> Tensor {
        let d = self.dim();
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            match self {
                Dataset::TwoCircles => {
                    let r = CIRCLE_RADII[rng.below(2)] + SHAPE_NOISE * rng.normal();
                    let a = rng.uniform(0.0, 2.0 * PI);
                    out.extend([r * a.cos(), r * a.sin()]);
                }
                Dataset::TwoMoons => {
                    let a = rng.uniform(0.0, PI);
                    let (x, y) = if rng.below(2) == 0 {
                        (a.cos(), a.sin())
                    } else {
                        (1.0 - a.cos(), 0.5 - a.sin())
                    };
                    out.extend([
                        x - 0.5 + SHAPE_NOISE * rng.normal(),
                        y - 0.25 + SHAPE_NOISE * rng.normal(),
                    ]);
                }
                Dataset::GaussianMixture(comps) => {
                    let u = rng.uniform(0.0, 1.0);
                    let mut acc = 0.0;
                    let mut pick = &comps[comps.len() - 1];
                    for c in comps {
                        acc += c.weight;
                        if u < acc {
                            pick = c;
                            break;
                        }
                    }
                    for m in &pick.mean {
                        out.push(m + pick.std * rng.normal());
                    }
                }
            }
        }
        Tensor::matrix(n, d, out).expect("sample buffer sized n x d")
    }

    fn components(&self) -> Result<&[Component]> {
        match self {
            Dataset::GaussianMixture(c) => Ok(c),
            other => Err(Error::Unsupported(format!("{} has no closed-form density", other.name()))),
        }
    }

    /// Log density and its gradient at `x`.
    pub fn log_density_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let comps = self.components()?;
        let d = comps[0].mean.len();
        check_len("mixture density point", d, x.len())?;
        let logs: Vec<f64> = comps
            .iter()
            .map(|c| {
                let sq: f64 = x.iter().zip(&c.mean).map(|(a, m)| (a - m).powi(2)).sum();
                c.weight.ln() - 0.5 * d as f64 * (LOG_2PI + 2.0 * c.std.ln()) - 0.5 * sq / (c.std * c.std)
            })
            .collect();
        let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logs.iter().map(|l| (l - mx).exp()).sum();
        let logp = mx + total.ln();
        let mut grad = vec![0.0; d];
        for (c, l) in comps.iter().zip(&logs) {
            let r = (l - logp).exp();
            for i in 0..d {
                grad[i] -= r * (x[i] - c.mean[i]) / (c.std * c.std);
            }
        }
        Ok((logp, grad))
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density_grad(x)?.0)
    }
}

/// Builds a dataset by name and draws `n` samples.
pub fn make_dataset(name: &str, rng: &mut RngState, n: usize) -> Result<(Dataset, Tensor)> {
    if n == 0 {
        return Err(Error::Argument("need at least one sample".into()));
    }
    let ds = dataset_by_name(name)?;
    let x = ds.sample(rng, n);
    Ok((ds, x))
}

pub fn dataset_by_name(name: &str) -> Result<Dataset> {
    match name {
        "two_circles" => Ok(Dataset::TwoCircles),
        "two_moons" => Ok(Dataset::TwoMoons),
        "gaussian_mixture" => Ok(Dataset::three_gaussians()),
        _ => Err(Error::Argument(format!("unknown dataset '{name}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_under_seed() {
        for name in ["two_circles", "two_moons", "gaussian_mixture"] {
            let a = make_dataset(name, &mut RngState::new(4), 50).unwrap().1;
            let b = make_dataset(name, &mut RngState::new(4), 50).unwrap().1;
            assert_eq!(a, b);
        }
        assert!(make_dataset("spirals", &mut RngState::new(0), 5).is_err());
    }

    #[test]
    fn circle_radii_modes() {
        let x = Dataset::TwoCircles.sample(&mut RngState::new(1), 100_000);
        let mut hist = vec![0usize; 70];
        for i in 0..x.rows() {
            let r = x.row(i)[0].hypot(x.row(i)[1]);
            let b = (r / 0.05) as usize;
            if b < hist.len() {
                hist[b] += 1;
            }
        }
        // Tallest bin in each half of the radius range.
        let mode = |lo: usize, hi: usize| {
            let b = (lo..hi).max_by_key(|&b| hist[b]).unwrap();
            (b as f64 + 0.5) * 0.05
        };
        assert!((mode(0, 35) - 1.0).abs() <= 0.05);
        assert!((mode(35, 70) - 2.5).abs() <= 0.05);
    }

    #[test]
    fn single_gaussian_sample_mean() {
        let ds = Dataset::mixture(vec![Component {
            weight: 1.0,
            mean: vec![0.0, 0.0],
            std: 1.0,
        }])
        .unwrap();
        let x = ds.sample(&mut RngState::new(2), 100_000);
        for j in 0..2 {
            let m = (0..x.rows()).map(|i| x.get(i, j)).sum::<f64>() / x.rows() as f64;
            assert!(m.abs() < 0.02);
        }
        let (lp, g) = ds.log_density_grad(&[1.0, 0.0]).unwrap();
        assert!((lp - (-LOG_2PI - 0.5)).abs() < 1e-12);
        assert!((g[0] + 1.0).abs() < 1e-12 && g[1].abs() < 1e-12);
    }

    #[test]
    fn mixture_gradient_matches_fd() {
        let ds = Dataset::three_gaussians();
        let x = [0.3, -0.8];
        let (_, g) = ds.log_density_grad(&x).unwrap();
        let eps = 1e-6;
        for i in 0..2 {
            let mut p = x;
            p[i] += eps;
            let mut m = x;
            m[i] -= eps;
            let fd = (ds.log_density(&p).unwrap() - ds.log_density(&m).unwrap()) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-8);
        }
        assert!(Dataset::TwoMoons.log_density(&x).is_err());
    }
}
