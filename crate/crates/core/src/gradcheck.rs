//! Finite-difference checks of vector-Jacobian products and of adjoint
//! gradients. The field under test and the reference field are passed
//! separately so a deliberately corrupted VJP can be detected.

use std::fmt;

use crate::adjoint::{backward_gradients, GradientBundle};
use crate::dynamics::{Dynamics, DynamicsFunc};
use crate::error::Result;
use crate::solve::{solve, SolveConfig};
use crate::tensor::dot;

/// `|adjoint - reference| <= max(1e-4 |reference|, 1e-7)`.
pub fn gradient_pass(adjoint: f64, reference: f64) -> bool {
    (adjoint - reference).abs() <= (1e-4 * reference.abs()).max(1e-7)
}

pub fn rel_error(adjoint: f64, reference: f64) -> f64 {
    (adjoint - reference).abs() / reference.abs().max(1e-12)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    VjpZ,
    VjpTheta,
    VjpT,
    Z0,
    Theta,
    T0,
    T1,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::VjpZ => "vjp_z",
            Component::VjpTheta => "vjp_theta",
            Component::VjpT => "vjp_t",
            Component::Z0 => "d_z0",
            Component::Theta => "d_theta",
            Component::T0 => "d_t0",
            Component::T1 => "d_t1",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub component: Component,
    pub index: usize,
    pub value: f64,
    pub reference: f64,
}

impl Check {
    pub fn pass(&self) -> bool {
        gradient_pass(self.value, self.reference)
    }

    pub fn rel_error(&self) -> f64 {
        rel_error(self.value, self.reference)
    }
}

/// Components with at least one failing entry, in first-failure order.
pub fn failing_components(checks: &[Check]) -> Vec<Component> {
    let mut out = Vec::new();
    for c in checks.iter().filter(|c| !c.pass()) {
        if !out.contains(&c.component) {
            out.push(c.component);
        }
    }
    out
}

/// Compares the VJPs of `tested` at `(z, t, a)` against central differences
/// of `reference`.
pub fn vjp_checks<T: Dynamics + ?Sized>(
    reference: &DynamicsFunc,
    tested: &T,
    z: &[f64],
    t: f64,
    a: &[f64],
    eps: f64,
) -> Result<Vec<Check>> {
    let d = reference.dim();
    let mut vz = vec![0.0; d];
    let mut vth = vec![0.0; reference.theta().len()];
    let vt = tested.vjp_into(z, t, a, &mut vz, &mut vth)?;
    let mut checks = Vec::new();

    let jac = reference.fd_jacobian(z, t, eps)?;
    for i in 0..d {
        let fd: f64 = (0..d).map(|r| a[r] * jac.get(r, i)).sum();
        checks.push(Check {
            component: Component::VjpZ,
            index: i,
            value: vz[i],
            reference: fd,
        });
    }
    let proj = |f: &DynamicsFunc, t: f64| f.eval(z, t).map(|y| dot(a, &y));
    let theta = reference.theta();
    for k in 0..theta.len() {
        let mut tp = theta.to_vec();
        tp[k] += eps;
        let mut tm = theta.to_vec();
        tm[k] -= eps;
        let fd = (proj(&reference.with_params(tp)?, t)? - proj(&reference.with_params(tm)?, t)?) / (2.0 * eps);
        checks.push(Check {
            component: Component::VjpTheta,
            index: k,
            value: vth[k],
            reference: fd,
        });
    }
    checks.push(Check {
        component: Component::VjpT,
        index: 0,
        value: vt,
        reference: (proj(reference, t + eps)? - proj(reference, t - eps)?) / (2.0 * eps),
    });
    Ok(checks)
}

/// `L = |z(t1)|^2` solved with `f`.
pub fn squared_norm_loss(f: &DynamicsFunc, z0: &[f64], t0: f64, t1: f64, cfg: &SolveConfig) -> Result<f64> {
    let z1 = solve(f, z0, t0, t1, cfg)?;
    Ok(z1.final_state().iter().map(|x| x * x).sum())
}

/// Adjoint gradients of `|z(t1)|^2`, running the reverse pass with `tested`.
pub fn adjoint_squared_norm<T: Dynamics + ?Sized>(
    reference: &DynamicsFunc,
    tested: &T,
    z0: &[f64],
    t0: f64,
    t1: f64,
    cfg: &SolveConfig,
) -> Result<GradientBundle> {
    let fwd = solve(reference, z0, t0, t1, cfg)?;
    let z1 = fwd.final_state();
    let seed: Vec<f64> = z1.iter().map(|x| 2.0 * x).collect();
    backward_gradients(tested, z1, t0, t1, &seed, cfg)
}

/// Central differences of `|z(t1)|^2` with respect to `z0`, every parameter,
/// `t0` and `t1`.
pub fn fd_squared_norm(f: &DynamicsFunc, z0: &[f64], t0: f64, t1: f64, cfg: &SolveConfig, eps: f64) -> Result<GradientBundle> {
    let loss = |f: &DynamicsFunc, z0: &[f64], t0: f64, t1: f64| squared_norm_loss(f, z0, t0, t1, cfg);
    let central = |lp: f64, lm: f64| (lp - lm) / (2.0 * eps);
    let mut d_z0 = Vec::with_capacity(z0.len());
    for i in 0..z0.len() {
        let mut zp = z0.to_vec();
        zp[i] += eps;
        let mut zm = z0.to_vec();
        zm[i] -= eps;
        d_z0.push(central(loss(f, &zp, t0, t1)?, loss(f, &zm, t0, t1)?));
    }
    let theta = f.theta();
    let mut d_theta = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        let mut tp = theta.to_vec();
        tp[k] += eps;
        let mut tm = theta.to_vec();
        tm[k] -= eps;
        d_theta.push(central(
            loss(&f.with_params(tp)?, z0, t0, t1)?,
            loss(&f.with_params(tm)?, z0, t0, t1)?,
        ));
    }
    let d_t0 = central(loss(f, z0, t0 + eps, t1)?, loss(f, z0, t0 - eps, t1)?);
    let d_t1 = central(loss(f, z0, t0, t1 + eps)?, loss(f, z0, t0, t1 - eps)?);
    Ok(GradientBundle {
        d_z0,
        d_theta,
        d_t0,
        d_t1,
        d_times: vec![d_t0, d_t1],
        nfe: 0,
    })
}

/// Entry-by-entry comparison of two bundles.
pub fn compare_bundles(value: &GradientBundle, reference: &GradientBundle) -> Vec<Check> {
    let mut out = Vec::new();
    let mut push = |component, xs: &[f64], rs: &[f64]| {
        for (index, (&v, &r)) in xs.iter().zip(rs).enumerate() {
            out.push(Check {
                component,
                index,
                value: v,
                reference: r,
            });
        }
    };
    push(Component::Z0, &value.d_z0, &reference.d_z0);
    push(Component::Theta, &value.d_theta, &reference.d_theta);
    push(Component::T0, &[value.d_t0], &[reference.d_t0]);
    push(Component::T1, &[value.d_t1], &[reference.d_t1]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_rule_has_relative_and_absolute_parts() {
        assert!(gradient_pass(1.00009, 1.0));
        assert!(!gradient_pass(1.0002, 1.0));
        assert!(gradient_pass(5e-8, 0.0));
        assert!(!gradient_pass(2e-7, 0.0));
    }

    #[test]
    fn failing_components_in_order() {
        let mk = |component, value| Check {
            component,
            index: 0,
            value,
            reference: 1.0,
        };
        let checks = [mk(Component::VjpZ, 1.0), mk(Component::VjpTheta, 2.0), mk(Component::Theta, 3.0), mk(Component::VjpTheta, 0.0)];
        assert_eq!(failing_components(&checks), vec![Component::VjpTheta, Component::Theta]);
    }
}
