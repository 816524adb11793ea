//! Optimal timer control for two-hop relay routing in delay-tolerant networks.
//!
//! The expected number of relays holding a message copy follows a linear ODE
//! when relays discard copies on timer expiry, so the choice of timer rates is
//! a linear-quadratic control problem. This crate provides:
//!
//! - [`model`]: the two-hop dynamics, delivery functional, constraint checks
//!   and the conversion between an expected discard flow and timer rates.
//! - [`feasibility`]: the terminal weight `R`, its definiteness and the
//!   minimum `c4/c3` frontier.
//! - [`ct_lqr`]: the continuous-time finite-horizon affine-quadratic solver
//!   (Riccati ODE, closed-form Hamiltonian solution, offsets, rollout).
//! - [`inf_lqr`]: decoupled infinite-horizon scalar controllers.
//! - [`dt_lqr`]: sampled-data discretisation, discrete finite-horizon
//!   recursions and the scalar discrete algebraic Riccati solution.
//! - [`mc_sim`]: a stochastic contact-process simulator used to validate the
//!   mean dynamics and the delivery functional.
//! - [`scenario`] and [`table`]: scenario files and CSV output.

pub mod ct_lqr;
pub mod dt_lqr;
pub mod error;
pub mod feasibility;
pub mod inf_lqr;
pub mod mc_sim;
pub mod model;
pub mod ode;
pub mod scenario;
pub mod table;

mod special;

pub use error::{Error, Result};
pub use model::{AugmentedState, ControlledTrajectory, CostWeights, ModelSpec};

/// Reference intermeeting intensity (1/s) of the numerical study: random
/// waypoint nodes on a 1 km square, 4 m/s, 20 m radio range.
pub const LAMBDA_0: f64 = 2.7875e-4;
