//! Policy transfer between a source simulator and a perturbed target
//! simulator through a learned inverse dynamics model, together with the
//! adaptive-MPC baselines it is compared against.

pub mod baselines;
pub mod cli;
pub mod collect;
pub mod control;
pub mod data;
pub mod envs;
pub mod error;
pub mod eval;
pub mod invdyn;
pub mod nn;
pub mod policy;
pub mod rng;
pub mod transfer;

pub use data::{Action, Observation, Trajectory, Window};
pub use error::{Error, Result};
pub use rng::RngStream;
