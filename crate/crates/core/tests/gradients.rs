use odegrad::adjoint::{backward_gradients, direct_backprop_rk4};
use odegrad::dynamics::{build_gated_planar, build_hamiltonian, build_mlp_dynamics, build_planar, DynamicsFunc};
use odegrad::gradcheck::{adjoint_squared_norm, compare_bundles, fd_squared_norm, vjp_checks};
use odegrad::solve::{solve, SolveConfig};
use odegrad::{RngState, Tensor};

fn fields(rng: &mut RngState) -> Vec<DynamicsFunc> {
    let a = Tensor::matrix(2, 2, vec![-0.3, 0.8, -0.6, 0.1]).unwrap();
    vec![
        DynamicsFunc::linear(&a).unwrap(),
        build_mlp_dynamics(2, &[20], false, rng).unwrap(),
        build_mlp_dynamics(2, &[20], true, rng).unwrap(),
        build_planar(2, rng).unwrap(),
        build_gated_planar(2, 3, rng).unwrap(),
        build_hamiltonian(4, 6, rng).unwrap(),
    ]
}

#[test]
fn vjps_match_finite_differences() {
    let mut rng = RngState::new(11);
    for f in fields(&mut rng) {
        let d = f.dim();
        for _ in 0..3 {
            let z = rng.normals(d);
            let a = rng.normals(d);
            let t = rng.uniform(-1.0, 1.0);
            for c in vjp_checks(&f, &f, &z, t, &a, 1e-5).unwrap() {
                assert!(c.pass(), "{}: {c:?}", f.architecture().name());
            }
        }
    }
}

#[test]
fn trace_gradients_match_finite_differences() {
    let mut rng = RngState::new(12);
    let eps = 1e-5;
    for f in fields(&mut rng).into_iter().filter(|f| f.architecture().name() != "mlp") {
        let d = f.dim();
        let z = rng.normals(d);
        let t = 0.37;
        let mut gz = vec![0.0; d];
        let mut gth = vec![0.0; f.theta().len()];
        let gt = f.trace_vjp_acc(&z, t, 1.0, &mut gz, &mut gth).unwrap();
        let tr = |f: &DynamicsFunc, z: &[f64], t: f64| f.jacobian_trace(z, t).unwrap();
        for i in 0..d {
            let mut zp = z.clone();
            zp[i] += eps;
            let mut zm = z.clone();
            zm[i] -= eps;
            let fd = (tr(&f, &zp, t) - tr(&f, &zm, t)) / (2.0 * eps);
            assert!((fd - gz[i]).abs() < 1e-7, "{} z{i}: {fd} vs {}", f.architecture().name(), gz[i]);
        }
        for k in 0..gth.len() {
            let mut tp = f.theta().to_vec();
            tp[k] += eps;
            let mut tm = f.theta().to_vec();
            tm[k] -= eps;
            let fd = (tr(&f.with_params(tp).unwrap(), &z, t) - tr(&f.with_params(tm).unwrap(), &z, t)) / (2.0 * eps);
            assert!((fd - gth[k]).abs() < 1e-7, "{} theta{k}: {fd} vs {}", f.architecture().name(), gth[k]);
        }
        let fd = (tr(&f, &z, t + eps) - tr(&f, &z, t - eps)) / (2.0 * eps);
        assert!((fd - gt).abs() < 1e-7);
    }
}

#[test]
fn closed_form_and_basis_traces_agree() {
    let mut rng = RngState::new(13);
    for f in fields(&mut rng) {
        let z = rng.normals(f.dim());
        let a = f.jacobian_trace(&z, 0.2).unwrap();
        let b = f.basis_vjp_trace(&z, 0.2).unwrap();
        let c = f.fd_jacobian(&z, 0.2, 1e-5).unwrap().trace().unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!((a - c).abs() < 1e-7);
    }
}

#[test]
fn adjoint_matches_finite_differences_for_every_architecture() {
    let mut rng = RngState::new(14);
    let cfg = SolveConfig::dopri5(1e-10, 1e-10);
    for f in fields(&mut rng) {
        let z0: Vec<f64> = rng.normals(f.dim()).iter().map(|x| 0.5 * x).collect();
        let (t0, t1) = (0.1, 0.9);
        let adj = adjoint_squared_norm(&f, &f, &z0, t0, t1, &cfg).unwrap();
        let fd = fd_squared_norm(&f, &z0, t0, t1, &cfg, 1e-5).unwrap();
        for c in compare_bundles(&adj, &fd) {
            assert!(c.pass(), "{} {}[{}]: {} vs {}", f.architecture().name(), c.component, c.index, c.value, c.reference);
        }
    }
}

#[test]
fn continuous_and_discrete_adjoints_agree() {
    let mut rng = RngState::new(15);
    let f = build_mlp_dynamics(2, &[20], true, &mut rng).unwrap();
    let z0 = [0.4, -0.8];
    let cfg = SolveConfig::dopri5(1e-10, 1e-10);
    let z1 = solve(&f, &z0, 0.0, 1.0, &cfg).unwrap().final_state().to_vec();
    let seed: Vec<f64> = z1.iter().map(|x| 2.0 * x).collect();
    let cont = backward_gradients(&f, &z1, 0.0, 1.0, &seed, &cfg).unwrap();
    let disc = direct_backprop_rk4(&f, &z0, 0.0, 1.0, 2f64.powi(-10), &seed).unwrap();
    for (a, b) in cont.d_z0.iter().chain(&cont.d_theta).zip(disc.d_z0.iter().chain(&disc.d_theta)) {
        assert!((a - b).abs() <= 1e-3 * b.abs().max(1e-4), "{a} vs {b}");
    }
}
