use odegrad::cnf::{forward_sample, log_density, train_cnf, CnfModel, Component, Dataset, Task};
use odegrad::dynamics::{build_gated_planar, build_hamiltonian, DynamicsFunc};
use odegrad::optim::AdamConfig;
use odegrad::solve::SolveConfig;
use odegrad::{RngState, Tensor};

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

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
fn expm(a: &[f64], n: usize) -> Vec<f64> {
    let norm = a.iter().map(|x| x.abs()).sum::<f64>();
    let s = (norm.max(1.0).log2().ceil() as i32 + 4).max(0);
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
        3 => {
            m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6])
        }
        _ => unreachable!(),
    }
}

#[test]
fn log_density_change_of_linear_flow_matches_matrix_exponential() {
    let mut rng = RngState::new(5);
    for k in 0..10 {
        let n = 2 + k % 2;
        let a: Vec<f64> = rng.normals(n * n).iter().map(|x| 0.7 * x).collect();
        let dt = rng.uniform(0.2, 1.0);
        let mut model = CnfModel::new(DynamicsFunc::linear(&Tensor::matrix(n, n, a.clone()).unwrap()).unwrap());
        model.t1 = dt;
        model.solver = SolveConfig::dopri5(1e-10, 1e-10);
        let (_, delta, _) = model.push_forward_to(&rng.normals(n), dt).unwrap();
        let expected = -det(&expm(&a.iter().map(|x| x * dt).collect::<Vec<_>>(), n), n).ln();
        assert!((delta - expected).abs() < 1e-6, "{delta} vs {expected}");
    }
}

#[test]
fn expm_oracle_sanity() {
    let e = expm(&[0.0, 1.0, -1.0, 0.0], 2);
    assert!((e[0] - 1f64.cos()).abs() < 1e-13 && (e[1] - 1f64.sin()).abs() < 1e-13);
}

#[test]
fn hamiltonian_flow_preserves_volume() {
    let mut rng = RngState::new(8);
    let mut model = CnfModel::new(build_hamiltonian(4, 8, &mut rng).unwrap());
    model.solver = SolveConfig::dopri5(1e-10, 1e-10);
    for _ in 0..5 {
        let (_, delta, _) = model.push_forward_to(&rng.normals(4), 1.0).unwrap();
        assert!(delta.abs() < 1e-8, "{delta}");
    }
}

fn round_trip_error(model: &CnfModel, rng: &mut RngState) -> f64 {
    let (x, logq) = forward_sample(model, rng, 20).unwrap();
    let back = log_density(model, &x).unwrap();
    logq.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[test]
fn sampling_and_density_evaluation_agree() {
    let mut rng = RngState::new(9);
    let mut model = CnfModel::new(build_gated_planar(2, 8, &mut rng).unwrap());
    assert!(round_trip_error(&model, &mut rng) < 1e-4);
    let data = Dataset::TwoMoons.sample(&mut rng, 256);
    let task = Task::Mle {
        data: &data,
        batch: 16,
    };
    let adam = AdamConfig {
        lr: 1e-2,
        ..AdamConfig::default()
    };
    train_cnf(&mut model, &task, 30, adam, &mut rng).unwrap();
    assert!(round_trip_error(&model, &mut rng) < 1e-4);
}

#[test]
fn one_dimensional_density_integrates_to_one() {
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
    .unwrap();
    let mut model = CnfModel::new(build_gated_planar(1, 8, &mut rng).unwrap());
    let task = Task::DensityMatching { target: &target, batch: 16 };
    let adam = AdamConfig {
        lr: 1e-2,
        ..AdamConfig::default()
    };
    train_cnf(&mut model, &task, 40, adam, &mut rng).unwrap();
    let n = 801;
    let xs: Vec<f64> = (0..n).map(|i| -8.0 + 16.0 * i as f64 / (n - 1) as f64).collect();
    let q: Vec<f64> = log_density(&model, &Tensor::matrix(n, 1, xs.clone()).unwrap())
        .unwrap()
        .iter()
        .map(|l| l.exp())
        .collect();
    let h = xs[1] - xs[0];
    let mass = h * (q.iter().sum::<f64>() - 0.5 * (q[0] + q[n - 1]));
    assert!((mass - 1.0).abs() < 0.01, "{mass}");
}
