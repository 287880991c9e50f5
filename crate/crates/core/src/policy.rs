//! Policies map the trajectory so far to the next commanded action.

use crate::data::{Action, Trajectory};
use crate::error::Result;

pub trait Policy {
    /// Called at the start of every episode; clears any internal state.
    fn reset(&mut self) {}

    fn act(&mut self, traj: &Trajectory) -> Result<Action>;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn reset(&mut self) {
        (**self).reset()
    }

    fn act(&mut self, traj: &Trajectory) -> Result<Action> {
        (**self).act(traj)
    }
}

/// Always commands zero; the 0.0 reference for normalized scores.
#[derive(Clone, Debug)]
pub struct ZeroPolicy {
    act_dim: usize,
}

impl ZeroPolicy {
    pub fn new(act_dim: usize) -> Self {
        Self { act_dim }
    }
}

impl Policy for ZeroPolicy {
    fn act(&mut self, _traj: &Trajectory) -> Result<Action> {
        Ok(Action::zeros(self.act_dim))
    }
}

/// Stateless policy from a closure.
pub struct FnPolicy<F> {
    f: F,
}

impl<F: FnMut(&Trajectory) -> Action> FnPolicy<F> {
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F: FnMut(&Trajectory) -> Action> Policy for FnPolicy<F> {
    fn act(&mut self, traj: &Trajectory) -> Result<Action> {
        Ok((self.f)(traj))
    }
}
