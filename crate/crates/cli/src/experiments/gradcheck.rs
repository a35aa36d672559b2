//! Adjoint gradients against central differences for every field
//! architecture, and against exact backpropagation through RK4.

use std::time::Instant;

use odegrad::adjoint::{backward_gradients, direct_backprop_rk4};
use odegrad::dynamics::{build_gated_planar, build_hamiltonian, build_mlp_dynamics, build_planar};
use odegrad::gradcheck::{compare_bundles, failing_components, fd_squared_norm, rel_error, vjp_checks, Check, Component};
use odegrad::solve::solve;
use odegrad::{Dynamics, DynamicsFunc, RngState, Tensor};

use super::{prepare_out_dir, write_metrics, write_table};
use crate::config::Config;
use crate::error::{CliError, Result};
use crate::metrics::{Metrics, MetricsRow};

pub const CHECKS_HEADER: &str = "check,architecture,component,index,adjoint,reference,rel_error,pass";
pub const ARCHITECTURES: [&str; 5] = ["linear", "mlp", "planar", "gated_planar_sum", "hamiltonian_split"];
const RK4_TOL: f64 = 1e-3;

/// Wraps a field and scales its parameter VJP by 1.05. Only used to show the
/// checker catches a broken reverse pass.
pub struct CorruptedVjp<'a> {
    pub inner: &'a DynamicsFunc,
}

impl Dynamics for CorruptedVjp<'_> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn params(&self) -> &[f64] {
        self.inner.theta()
    }

    fn eval_into(&self, z: &[f64], t: f64, out: &mut [f64]) -> odegrad::Result<()> {
        self.inner.eval_into(z, t, out)
    }

    fn vjp_into(&self, z: &[f64], t: f64, a: &[f64], vjp_z: &mut [f64], vjp_theta: &mut [f64]) -> odegrad::Result<f64> {
        let vt = self.inner.vjp_into(z, t, a, vjp_z, vjp_theta)?;
        vjp_theta.iter_mut().for_each(|g| *g *= 1.05);
        Ok(vt)
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub fd_checks: usize,
    pub fd_failures: usize,
    pub rk4_checks: usize,
    pub rk4_failures: usize,
    pub max_fd_rel_error: f64,
    pub max_rk4_rel_error: f64,
    /// Failing components by name, first failure first.
    pub failing: Vec<String>,
    pub fd_seconds: f64,
    pub rk4_seconds: f64,
}

impl GradcheckReport {
    pub fn summary(&self) -> Vec<String> {
        vec![
            format!(
                "finite differences: {} checks, {} failures, max rel error {:.2e} ({:.1} s)",
                self.fd_checks, self.fd_failures, self.max_fd_rel_error, self.fd_seconds
            ),
            format!(
                "direct rk4 backprop: {} checks, {} failures, max rel error {:.2e} ({:.1} s)",
                self.rk4_checks, self.rk4_failures, self.max_rk4_rel_error, self.rk4_seconds
            ),
        ]
    }
}

fn random_field(arch: &str, rng: &mut RngState) -> Result<DynamicsFunc> {
    let f = match arch {
        "linear" => {
            let a: Vec<f64> = rng.normals(4).iter().map(|x| 0.5 * x).collect();
            DynamicsFunc::linear(&Tensor::matrix(2, 2, a)?)?
        }
        "mlp" => build_mlp_dynamics(2, &[16], true, rng)?,
        "planar" => build_planar(2, rng)?,
        "gated_planar_sum" => build_gated_planar(2, 3, rng)?,
        "hamiltonian_split" => build_hamiltonian(4, 6, rng)?,
        other => return Err(CliError::Usage(format!("unknown architecture `{other}`"))),
    };
    Ok(f)
}

fn row(kind: &str, k: usize, arch: &str, c: &Check, pass: bool) -> String {
    format!(
        "{kind}#{k},{arch},{},{},{:e},{:e},{:e},{pass}",
        c.component,
        c.index,
        c.value,
        c.reference,
        rel_error(c.value, c.reference)
    )
}

fn rk4_pass(c: &Check) -> bool {
    (c.value - c.reference).abs() <= (RK4_TOL * c.reference.abs()).max(1e-7)
}

pub fn run(cfg: &Config) -> Result<GradcheckReport> {
    let dir = prepare_out_dir(cfg)?;
    let solver = cfg.solver()?;
    let configs: usize = cfg.get("configs")?;
    let eps: f64 = cfg.get("fd_eps")?;
    let rk4_configs: usize = cfg.get("rk4_configs")?;
    let max_params: usize = cfg.get("max_params")?;
    let corrupt = match cfg.raw("fault") {
        "none" => false,
        "corrupted_vjp" => true,
        other => return Err(CliError::Usage(format!("unknown fault `{other}` (none, corrupted_vjp)"))),
    };
    let mut rng = RngState::new(cfg.seed()?);
    let mut metrics = Metrics::new("gradcheck", cfg.timing()?);
    let mut rows = Vec::new();
    let mut all = Vec::new();
    let mut report = GradcheckReport {
        fd_checks: 0,
        fd_failures: 0,
        rk4_checks: 0,
        rk4_failures: 0,
        max_fd_rel_error: 0.0,
        max_rk4_rel_error: 0.0,
        failing: Vec::new(),
        fd_seconds: 0.0,
        rk4_seconds: 0.0,
    };

    let started = Instant::now();
    for arch in ARCHITECTURES {
        for k in 0..configs {
            let f = random_field(arch, &mut rng)?;
            let wrapped = CorruptedVjp { inner: &f };
            let tested: &dyn Dynamics = if corrupt { &wrapped } else { &f };
            let d = f.dim();
            let z0: Vec<f64> = rng.normals(d).iter().map(|x| 0.5 * x).collect();
            let t0 = rng.uniform(-0.5, 0.5);
            let t1 = t0 + rng.uniform(0.3, 1.0);

            let a = rng.normals(d);
            let mut checks = vjp_checks(&f, tested, &z0, t0, &a, eps)?;
            for c in &checks {
                rows.push(row("vjp", k, arch, c, c.pass()));
            }

            let fwd = solve(&f, &z0, t0, t1, &solver)?;
            let z1 = fwd.final_state();
            let seed: Vec<f64> = z1.iter().map(|x| 2.0 * x).collect();
            let adj = backward_gradients(tested, z1, t0, t1, &seed, &solver)?;
            let fd = fd_squared_norm(&f, &z0, t0, t1, &solver, eps)?;
            let bundle = compare_bundles(&adj, &fd);
            for c in &bundle {
                rows.push(row("fd", k, arch, c, c.pass()));
            }
            checks.extend(bundle);
            report.fd_checks += checks.len();
            report.fd_failures += checks.iter().filter(|c| !c.pass()).count();
            report.max_fd_rel_error = checks.iter().map(Check::rel_error).fold(report.max_fd_rel_error, f64::max);
            all.extend(checks);
            metrics.push_tagged(arch, MetricsRow::new(k).nfe(fwd.nfe, adj.nfe));
        }
    }
    report.fd_seconds = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let mut rk4_fail = Vec::new();
    for k in 0..rk4_configs {
        let f = build_mlp_dynamics(2, &[32], true, &mut rng)?;
        if f.theta().len() > max_params {
            return Err(CliError::Usage(format!("rk4 comparison field has {} > max_params parameters", f.theta().len())));
        }
        let z0: Vec<f64> = rng.normals(2).iter().map(|x| 0.5 * x).collect();
        let (t0, t1) = (0.0, rng.uniform(0.5, 1.0));
        let fwd = solve(&f, &z0, t0, t1, &solver)?;
        let z1 = fwd.final_state();
        let seed: Vec<f64> = z1.iter().map(|x| 2.0 * x).collect();
        let cont = backward_gradients(&f, z1, t0, t1, &seed, &solver)?;
        let disc = direct_backprop_rk4(&f, &z0, t0, t1, 2f64.powi(-10) * (t1 - t0), &seed)?;
        let pairs = [(Component::Z0, &cont.d_z0, &disc.d_z0), (Component::Theta, &cont.d_theta, &disc.d_theta)];
        for (component, xs, rs) in pairs {
            for (index, (&value, &reference)) in xs.iter().zip(rs.iter()).enumerate() {
                let c = Check {
                    component,
                    index,
                    value,
                    reference,
                };
                let pass = rk4_pass(&c);
                rows.push(row("rk4", k, "mlp", &c, pass));
                report.rk4_checks += 1;
                report.max_rk4_rel_error = report.max_rk4_rel_error.max(c.rel_error());
                if !pass {
                    report.rk4_failures += 1;
                    if !rk4_fail.contains(&component) {
                        rk4_fail.push(component);
                    }
                }
            }
        }
        metrics.push_tagged("rk4", MetricsRow::new(k).nfe(fwd.nfe, cont.nfe));
    }
    report.rk4_seconds = started.elapsed().as_secs_f64();

    report.failing = failing_components(&all).iter().map(|c| c.to_string()).collect();
    for c in rk4_fail {
        let name = format!("rk4 {c}");
        report.failing.push(name);
    }
    write_table(&dir.join("checks.csv"), CHECKS_HEADER, &rows)?;
    write_metrics(&dir, &metrics)?;
    Ok(report)
}
