//! Wasserstein-penalized minimax linear-quadratic control.
//!
//! A controller minimizes a quadratic cost while an opponent picks the
//! disturbance distribution, paying `lambda * W2(mu, nu)^2` for moving away
//! from the empirical distribution `nu` of observed samples. This crate solves
//! the resulting Riccati equations (finite horizon, and infinite horizon by
//! value iteration or by the stable invariant subspace of the symplectic
//! pencil), builds the worst-case distribution, finds the smallest admissible
//! penalty, and simulates the closed loop.
//!
//! Everything is generic over [`Real`] (`f32` or `f64`); the `*64` aliases
//! below fix the scalar to `f64`.

pub mod error;
pub mod export;
pub mod finite_horizon;
pub mod hinf;
pub mod linalg;
pub mod model;
pub mod powergrid;
pub mod scalar;
pub mod simulate;
pub mod steady_state;

pub use error::{Error, Result};
pub use scalar::Real;

pub type SystemModel64 = model::SystemModel<f64>;
pub type DisturbanceModel64 = model::DisturbanceModel<f64>;
pub type FiniteHorizonSolution64 = finite_horizon::FiniteHorizonSolution<f64>;
pub type WorstCasePolicy64 = finite_horizon::WorstCasePolicy<f64>;
pub type SteadyStateSolution64 = steady_state::SteadyStateSolution<f64>;
pub type LambdaStarResult64 = hinf::LambdaStarResult<f64>;
pub type Trajectory64 = simulate::Trajectory<f64>;
