//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//! Pass criterion numbers as arguments to run a subset.

use std::f64::consts::E;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use odegrad::cnf::{log_density, train_cnf, CnfModel, Component, Dataset, Task};
use odegrad::dynamics::{build_gated_planar, build_hamiltonian};
use odegrad::latent_ode::{poisson_loglik, PoissonRateModel};
use odegrad::optim::AdamConfig;
use odegrad::solve::{convergence_order, Method, SolveConfig};
use odegrad::{Architecture, DynamicsFunc, RngState, Tensor};
use odegrad_cli::experiments::{cnf, gradcheck, odenet2d, spirals};
use odegrad_cli::{Config, Experiment};

type Outcome = Result<String, String>;

fn scratch_dir(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("odegrad-acceptance-{}", std::process::id())).join(name)
}

fn config(exp: Experiment, name: &str, overrides: &[(&str, &str)]) -> Config {
    let mut cfg = Config::defaults(exp).with("out_dir", scratch_dir(name).display()).unwrap();
    for (k, v) in overrides {
        cfg = cfg.with(k, v).unwrap();
    }
    cfg
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                c[i * n + j] += a[i * n + k] * b[k * n + j];
            }
        }
    }
    c
}

/// Scaling and squaring of a truncated Taylor series.
fn expm(a: &[f64], n: usize) -> Vec<f64> {
    let norm = a.iter().map(|x| x.abs()).sum::<f64>();
    let s = norm.max(1.0).log2().ceil() as i32 + 4;
    let scaled: Vec<f64> = a.iter().map(|x| x / 2f64.powi(s)).collect();
    let mut result = vec![0.0; n * n];
    let mut term = vec![0.0; n * n];
    for i in 0..n {
        result[i * n + i] = 1.0;
        term[i * n + i] = 1.0;
    }
    for k in 1..20 {
        term = matmul(&term, &scaled, n).iter().map(|x| x / k as f64).collect();
        for (r, t) in result.iter_mut().zip(&term) {
            *r += t;
        }
    }
    for _ in 0..s {
        result = matmul(&result, &result, n);
    }
    result
}

fn det(m: &[f64], n: usize) -> f64 {
    match n {
        2 => m[0] * m[3] - m[1] * m[2],
        3 => m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6]),
        _ => unreachable!(),
    }
}

fn adjoint_vs_fd() -> Outcome {
    let r = gradcheck::run(&config(Experiment::Gradcheck, "c1", &[("rk4_configs", "0")])).map_err(|e| e.to_string())?;
    let archs = gradcheck::ARCHITECTURES.len();
    verdict(
        r.fd_failures == 0 && r.fd_checks > 0,
        format!(
            "{archs} architectures x 20 configs: {} checks, {} failures, max rel error {:.2e}",
            r.fd_checks, r.fd_failures, r.max_fd_rel_error
        ),
    )
}

fn continuous_vs_discrete() -> Outcome {
    let r = gradcheck::run(&config(Experiment::Gradcheck, "c2", &[("configs", "0")])).map_err(|e| e.to_string())?;
    verdict(
        r.rk4_failures == 0 && r.rk4_checks > 0,
        format!("{} entries, {} beyond 1e-3, max rel error {:.2e}", r.rk4_checks, r.rk4_failures, r.max_rk4_rel_error),
    )
}

fn solver_orders() -> Outcome {
    let f = DynamicsFunc::linear(&Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
    let order = |m, hs: &[f64]| convergence_order(&f, &[1.0], 0.0, 1.0, m, hs, &[E]).map_err(|e| e.to_string());
    let euler = order(Method::Euler, &[0.01, 0.005, 0.0025, 0.00125])?;
    let rk4 = order(Method::Rk4, &[0.1, 0.05, 0.025, 0.0125])?;
    let dopri = order(Method::Dopri5, &[0.2, 0.1, 0.05, 0.025])?;
    verdict(
        (0.9..=1.1).contains(&euler) && (3.8..=4.2).contains(&rk4) && (4.7..=5.3).contains(&dopri),
        format!("euler {euler:.3}, rk4 {rk4:.3}, dopri5 {dopri:.3}"),
    )
}

fn error_control() -> Outcome {
    let r = odenet2d::run(&config(Experiment::Odenet2d, "c4", &[])).map_err(|e| e.to_string())?;
    let s = &r.sweep;
    let errors_down = s.windows(2).all(|w| w[1].rel_error <= w[0].rel_error);
    let bounded = s.iter().all(|p| p.rel_error <= 100.0 * p.rtol);
    let nfe_up = s.windows(2).all(|w| w[1].nfe >= w[0].nfe);
    let pts: Vec<String> = s.iter().map(|p| format!("{:.0e}:{:.1e}/{}", p.rtol, p.rel_error, p.nfe)).collect();
    verdict(
        errors_down && bounded && nfe_up,
        format!("rtol:error/nfe {} (error non-increasing {errors_down}, bounded {bounded}, nfe non-decreasing {nfe_up})", pts.join(" ")),
    )
}

fn linear_flow_log_density() -> Outcome {
    let mut rng = RngState::new(5);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let n = 2 + k % 2;
        let a: Vec<f64> = rng.normals(n * n).iter().map(|x| 0.7 * x).collect();
        let dt = rng.uniform(0.2, 1.0);
        let mut model = CnfModel::new(DynamicsFunc::linear(&Tensor::matrix(n, n, a.clone()).unwrap()).unwrap());
        model.t1 = dt;
        model.solver = SolveConfig::dopri5(1e-10, 1e-10);
        let (_, delta, _) = model.push_forward_to(&rng.normals(n), dt).map_err(|e| e.to_string())?;
        let at: Vec<f64> = a.iter().map(|x| x * dt).collect();
        worst = worst.max((delta + det(&expm(&at, n), n).ln()).abs());
    }
    verdict(worst < 1e-6, format!("50 systems, max |delta + log det exp(A dt)| {worst:.2e}"))
}

fn hamiltonian_volume() -> Outcome {
    let mut rng = RngState::new(8);
    let mut model = CnfModel::new(build_hamiltonian(4, 8, &mut rng).unwrap());
    model.solver = SolveConfig::dopri5(1e-10, 1e-10);
    let mut worst = 0.0f64;
    let mut worst_fd = 0.0f64;
    for _ in 0..10 {
        let z0 = rng.normals(4);
        let (_, delta, _) = model.push_forward_to(&z0, 1.0).map_err(|e| e.to_string())?;
        worst = worst.max(delta.abs());
        // The closed-form trace is zero by construction; check the field
        // itself through a finite-difference Jacobian along the path.
        for k in 1..=4 {
            let (z, _, _) = model.push_forward_to(&z0, k as f64 / 4.0).map_err(|e| e.to_string())?;
            let jac = model.dynamics.fd_jacobian(&z, 0.0, 1e-5).map_err(|e| e.to_string())?;
            worst_fd = worst_fd.max(jac.trace().map_err(|e| e.to_string())?.abs());
        }
    }
    verdict(
        worst < 1e-8 && worst_fd < 1e-8,
        format!("max |delta log p| {worst:.2e} over unit time; max |tr J| by finite differences {worst_fd:.2e}"),
    )
}

fn cnf_reversibility() -> Outcome {
    let mut rng = RngState::new(9);
    let mut model = CnfModel::new(build_gated_planar(2, 8, &mut rng).unwrap());
    let before = cnf::round_trip_error(&model, &mut rng, 50).map_err(|e| e.to_string())?;
    let data = Dataset::TwoMoons.sample(&mut rng, 256);
    let adam = AdamConfig {
        lr: 1e-2,
        ..AdamConfig::default()
    };
    train_cnf(&mut model, &Task::Mle { data: &data, batch: 16 }, 100, adam, &mut rng).map_err(|e| e.to_string())?;
    let after = cnf::round_trip_error(&model, &mut rng, 50).map_err(|e| e.to_string())?;
    verdict(
        before < 1e-4 && after < 1e-4,
        format!("max |delta log q| untrained {before:.2e}, trained {after:.2e}"),
    )
}

fn cnf_normalization() -> Outcome {
    let mut rng = RngState::new(10);
    let target = Dataset::mixture(vec![
        Component {
            weight: 1.0,
            mean: vec![-1.0],
            std: 0.5,
        },
        Component {
            weight: 1.0,
            mean: vec![1.5],
            std: 0.4,
        },
    ])
    .map_err(|e| e.to_string())?;
    let mut model = CnfModel::new(build_gated_planar(1, 8, &mut rng).unwrap());
    let adam = AdamConfig {
        lr: 1e-2,
        ..AdamConfig::default()
    };
    train_cnf(&mut model, &Task::DensityMatching { target: &target, batch: 16 }, 100, adam, &mut rng).map_err(|e| e.to_string())?;
    let n = 801;
    let xs: Vec<f64> = (0..n).map(|i| -8.0 + 16.0 * i as f64 / (n - 1) as f64).collect();
    let q: Vec<f64> = log_density(&model, &Tensor::matrix(n, 1, xs.clone()).unwrap())
        .map_err(|e| e.to_string())?
        .iter()
        .map(|l| l.exp())
        .collect();
    let mass = (xs[1] - xs[0]) * (q.iter().sum::<f64>() - 0.5 * (q[0] + q[n - 1]));
    verdict((mass - 1.0).abs() < 0.01, format!("trapezoid mass on [-8, 8] {mass:.5}"))
}

fn width_ordering() -> Outcome {
    let r = cnf::run(&config(Experiment::Cnf, "c9", &[])).map_err(|e| e.to_string())?;
    let losses: Vec<String> = r.final_losses.iter().map(|(m, l)| format!("M={m} {l:.4}")).collect();
    verdict(r.losses_non_increasing(), format!("final losses {}", losses.join(", ")))
}

fn spiral_table() -> Outcome {
    let r = spirals::run(&config(Experiment::Spirals, "c10", &[])).map_err(|e| e.to_string())?;
    let first = r.rows.first().ok_or("no rows")?;
    let beats = first.n_obs == 30 && first.latent_ode < first.rnn.min(first.rnn_time_gaps);
    let trend = r.latent_non_increasing();
    let rows: Vec<String> = r
        .rows
        .iter()
        .map(|x| format!("n={} latent {:.4} rnn {:.4} rnn+gaps {:.4}", x.n_obs, x.latent_ode, x.rnn, x.rnn_time_gaps))
        .collect();
    verdict(
        beats && trend,
        format!("{}; latent < rnn at 30: {beats}; latent non-increasing: {trend}", rows.join("; ")),
    )
}

fn poisson_closed_form() -> Outcome {
    let f = DynamicsFunc::zeros(Architecture::Linear { dim: 1 }).unwrap();
    let mut worst = 0.0f64;
    let cases: [(f64, &[f64], f64); 3] = [(2.0, &[0.25, 0.75], 1.0), (0.5, &[0.1, 0.2, 1.7], 3.0), (3.0, &[], 2.0)];
    let cfg = SolveConfig::dopri5(1e-10, 1e-10);
    for (lam, events, t) in cases {
        let rate = PoissonRateModel::constant(1, 4, lam).map_err(|e| e.to_string())?;
        let ll = poisson_loglik(&f, &rate, &[0.3], events, 0.0, t, &cfg).map_err(|e| e.to_string())?;
        worst = worst.max((ll - (events.len() as f64 * lam.ln() - lam * t)).abs());
    }
    let rate = PoissonRateModel::constant(1, 4, 2.0).map_err(|e| e.to_string())?;
    let example = poisson_loglik(&f, &rate, &[0.3], &[0.25, 0.75], 0.0, 1.0, &cfg).map_err(|e| e.to_string())?;
    verdict(
        worst < 1e-6 && (example + 0.613706).abs() < 1e-6,
        format!("lambda=2 on {{0.25, 0.75}}: {example:.6}; max deviation {worst:.2e}"),
    )
}

fn rings_classifier() -> Outcome {
    let dir = scratch_dir("c12");
    let r = odenet2d::run(&config(Experiment::Odenet2d, "c12", &[])).map_err(|e| e.to_string())?;
    let csv = std::fs::read_to_string(dir.join("metrics.csv")).map_err(|e| e.to_string())?;
    let recorded = csv.lines().skip(1).filter(|l| l.split(',').nth(3).is_some_and(|v| !v.is_empty())).count();
    verdict(
        r.test_accuracy >= 0.95 && recorded == r.nfe_forward.len() && recorded > 0,
        format!(
            "held-out accuracy {:.4}; {recorded} NFE rows recorded, mean backward/forward ratio {:.3}",
            r.test_accuracy,
            r.mean_nfe_ratio()
        ),
    )
}

/// Small configurations: this checks determinism, not results.
fn reproducibility() -> Outcome {
    let runs: [(Experiment, &[(&str, &str)]); 5] = [
        (Experiment::Gradcheck, &[("configs", "2"), ("rk4_configs", "1")]),
        (Experiment::Odenet2d, &[("iters", "10"), ("n_train", "100"), ("n_test", "50")]),
        (
            Experiment::Cnf,
            &[("iters", "5"), ("widths", "2,4"), ("grid", "5"), ("eval_samples", "20"), ("n_data", "50"), ("batch", "8")],
        ),
        (
            Experiment::Spirals,
            &[("n_obs", "10"), ("epochs", "2"), ("n_train", "8"), ("n_test", "4"), ("n_time", "40"), ("batch", "4")],
        ),
        (Experiment::Poisson, &[("iters", "10")]),
    ];
    let mut same = Vec::new();
    for (exp, overrides) in runs {
        let mut csvs = Vec::new();
        for k in 0..2 {
            let name = format!("c13-{exp}-{k}");
            odegrad_cli::experiments::run(&config(exp, &name, overrides)).map_err(|e| format!("{exp}: {e}"))?;
            csvs.push(std::fs::read(scratch_dir(&name).join("metrics.csv")).map_err(|e| e.to_string())?);
        }
        same.push((exp, csvs[0] == csvs[1]));
    }
    let detail: Vec<String> = same.iter().map(|(e, s)| format!("{e} {}", if *s { "identical" } else { "DIFFERENT" })).collect();
    verdict(same.iter().all(|(_, s)| *s), detail.join(", "))
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget_s: Option<f64>,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "adjoint vs finite differences", budget_s: Some(120.0), run: adjoint_vs_fd },
        Criterion { id: 2, name: "continuous vs discrete adjoint", budget_s: Some(60.0), run: continuous_vs_discrete },
        Criterion { id: 3, name: "solver convergence orders", budget_s: Some(10.0), run: solver_orders },
        Criterion { id: 4, name: "tolerance sweep error control", budget_s: Some(30.0), run: error_control },
        Criterion { id: 5, name: "linear flow log density", budget_s: Some(30.0), run: linear_flow_log_density },
        Criterion { id: 6, name: "hamiltonian volume preservation", budget_s: Some(10.0), run: hamiltonian_volume },
        Criterion { id: 7, name: "CNF reversibility", budget_s: Some(60.0), run: cnf_reversibility },
        Criterion { id: 8, name: "CNF normalization", budget_s: Some(60.0), run: cnf_normalization },
        Criterion { id: 9, name: "width-capacity ordering", budget_s: Some(600.0), run: width_ordering },
        Criterion { id: 10, name: "spiral extrapolation table", budget_s: Some(1200.0), run: spiral_table },
        Criterion { id: 11, name: "poisson closed form", budget_s: Some(5.0), run: poisson_closed_form },
        Criterion { id: 12, name: "rings classifier", budget_s: Some(600.0), run: rings_classifier },
        Criterion { id: 13, name: "seeded reproducibility", budget_s: None, run: reproducibility },
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let started = Instant::now();
        let outcome = (c.run)();
        let secs = started.elapsed().as_secs_f64();
        let over = c.budget_s.is_some_and(|b| secs > b);
        let (pass, detail) = match outcome {
            Ok(d) if !over => (true, d),
            Ok(d) => (false, format!("{d}; over the {:.0} s budget", c.budget_s.unwrap())),
            Err(d) => (false, d),
        };
        if !pass {
            failed += 1;
        }
        println!("criterion {:>2} {} {}: {detail} ({secs:.1} s)", c.id, if pass { "PASS" } else { "FAIL" }, c.name);
    }
    let _ = std::fs::remove_dir_all(std::env::temp_dir().join(format!("odegrad-acceptance-{}", std::process::id())));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
