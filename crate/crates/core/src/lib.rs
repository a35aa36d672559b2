//! Continuous-depth models: vector fields with exact vector-Jacobian
//! products, explicit Runge-Kutta solvers, constant-memory adjoint gradients,
//! continuous normalizing flows and latent ODE sequence models.

pub mod adjoint;
pub mod cnf;
pub mod dynamics;
pub mod error;
pub mod gradcheck;
pub mod latent_ode;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod solve;
pub mod tensor;

pub use dynamics::{Architecture, BatchedDynamics, Dynamics, DynamicsFunc, VjpResult};
pub use error::{Error, Result};
pub use rng::RngState;
pub use tensor::Tensor;
