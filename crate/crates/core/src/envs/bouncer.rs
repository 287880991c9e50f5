//! Vertical point mass with a thruster, bouncing on a rigid floor.
//!
//! The task is to follow a hopping reference `h * max(0, sin(2 pi t / P))`.
//! Floor contact is an instantaneous restitution impact, which makes the
//! one-step map discontinuous.

use std::f64::consts::TAU;

use crate::data::{Action, Observation};
use crate::error::{Error, Result};

use super::EnvParams;

pub const OBS_DIM: usize = 4;
pub const ACT_DIM: usize = 1;

pub const HOP_HEIGHT: f64 = 0.5;
pub const HOP_PERIOD: f64 = 1.0;

pub const INITIAL_HEIGHT: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BouncerState {
    pub y: f64,
    pub v: f64,
    pub t: f64,
}

impl BouncerState {
    pub fn initial() -> Self {
        Self {
            y: INITIAL_HEIGHT,
            v: 0.0,
            t: 0.0,
        }
    }
}

pub fn reference(t: f64) -> f64 {
    HOP_HEIGHT * (TAU * t / HOP_PERIOD).sin().max(0.0)
}

pub fn thrust(p: &EnvParams, action: &Action) -> f64 {
    p.torque_scale * p.torque_max * action[0].clamp(-1.0, 1.0)
}

/// One semi-implicit Euler substep followed by the contact rule.
pub fn substep(s: &BouncerState, force: f64, p: &EnvParams) -> BouncerState {
    let mut v = s.v + p.dt * (force / p.mass - p.gravity * p.gravity_scale);
    let mut y = s.y + p.dt * v;
    if y < 0.0 {
        y = 0.0;
        if v < 0.0 {
            v = -p.restitution * v;
        }
    }
    BouncerState {
        y,
        v,
        t: s.t + p.dt,
    }
}

/// Advance one control step; the reward is the tracking error at the end of it.
pub fn bouncer_step(s: &BouncerState, action: &Action, p: &EnvParams) -> (BouncerState, f64) {
    let force = thrust(p, action);
    let mut next = *s;
    for _ in 0..p.substeps {
        next = substep(&next, force, p);
    }
    (next, reward(&next))
}

pub fn reward(s: &BouncerState) -> f64 {
    -(s.y - reference(s.t)).abs()
}

pub fn observe(s: &BouncerState, p: &EnvParams) -> Observation {
    Observation::new(vec![
        s.y,
        s.v,
        reference(s.t),
        reference(s.t + p.control_dt()),
    ])
}

/// Height and speed are observed directly; time follows from the control
/// step index since every episode starts at `t = 0`.
pub fn reconstruct(o: &Observation, step_index: usize, p: &EnvParams) -> Result<BouncerState> {
    if o.len() != OBS_DIM {
        return Err(Error::Shape {
            context: "bouncer observation",
            expected: OBS_DIM,
            got: o.len(),
        });
    }
    if !o.is_finite() {
        return Err(Error::Reconstruction("non-finite bouncer observation".into()));
    }
    if o[0] < 0.0 {
        return Err(Error::Reconstruction(format!(
            "height {} is below the floor",
            o[0]
        )));
    }
    Ok(BouncerState {
        y: o[0],
        v: o[1],
        t: step_index as f64 * p.control_dt(),
    })
}
