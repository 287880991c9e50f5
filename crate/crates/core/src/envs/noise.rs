//! Additive actuator noise for target environments.
//!
//! The offset follows an AR(1) process with stationary standard deviation
//! `std`: `eps_t = corr * eps_{t-1} + std * sqrt(1 - corr^2) * nu_t`. With
//! `corr = 1` this degenerates to one constant offset per episode.
//!
//! Draw order: [`NoiseState::reset`] draws one normal per actuator
//! (the stationary start, or the constant offset); each call to
//! [`apply_motor_noise`] draws one normal per actuator when `corr < 1`.
//! Nothing is drawn when `std == 0`.

use serde::{Deserialize, Serialize};

use crate::data::Action;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    #[serde(rename = "noise_std")]
    pub std: f64,
    #[serde(rename = "noise_corr")]
    pub corr: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self::NONE
    }
}

impl NoiseParams {
    pub const NONE: NoiseParams = NoiseParams { std: 0.0, corr: 0.0 };

    pub fn new(std: f64, corr: f64) -> Self {
        Self { std, corr }
    }

    pub fn is_active(&self) -> bool {
        self.std > 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseState {
    pub offset: Vec<f64>,
}

impl NoiseState {
    pub fn zeros(act_dim: usize) -> Self {
        Self {
            offset: vec![0.0; act_dim],
        }
    }

    /// Episode start: the offset is drawn from the stationary distribution.
    pub fn reset(act_dim: usize, np: &NoiseParams, rng: &mut RngStream) -> Self {
        if !np.is_active() {
            return Self::zeros(act_dim);
        }
        Self {
            offset: (0..act_dim).map(|_| np.std * rng.normal()).collect(),
        }
    }
}

/// Perturb a commanded action and advance the noise process.
///
/// Returns the executed (clipped) action and the updated noise state.
pub fn apply_motor_noise(
    action: &Action,
    state: &NoiseState,
    np: &NoiseParams,
    rng: &mut RngStream,
) -> (Action, NoiseState) {
    if !np.is_active() {
        return (action.clone(), state.clone());
    }
    let offset: Vec<f64> = if np.corr >= 1.0 {
        state.offset.clone()
    } else {
        let innovation = np.std * (1.0 - np.corr * np.corr).sqrt();
        state
            .offset
            .iter()
            .map(|e| np.corr * e + innovation * rng.normal())
            .collect()
    };
    let executed = Action::new(
        action
            .iter()
            .zip(&offset)
            .map(|(a, e)| (a + e).clamp(-1.0, 1.0))
            .collect(),
    );
    (executed, NoiseState { offset })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_is_identity() {
        let mut rng = RngStream::new(0, 0);
        let a = Action::new(vec![0.3, -0.9]);
        let np = NoiseParams::NONE;
        let s = NoiseState::reset(2, &np, &mut rng);
        let (out, s2) = apply_motor_noise(&a, &s, &np, &mut rng);
        assert_eq!(out, a);
        assert_eq!(s2.offset, vec![0.0, 0.0]);
    }

    #[test]
    fn uncorrelated_noise_is_scaled_normal() {
        let np = NoiseParams::new(0.2, 0.0);
        let mut rng = RngStream::new(5, 1);
        let mut replay = RngStream::new(5, 1);
        let s = NoiseState::zeros(1);
        for _ in 0..10 {
            let (out, next) = apply_motor_noise(&Action::zeros(1), &s, &np, &mut rng);
            let expected = 0.2 * replay.normal();
            assert_eq!(next.offset[0], expected);
            assert_eq!(out[0], expected.clamp(-1.0, 1.0));
        }
    }

    #[test]
    fn full_correlation_keeps_episode_offset() {
        let np = NoiseParams::new(0.5, 1.0);
        let mut rng = RngStream::new(2, 0);
        let mut s = NoiseState::reset(1, &np, &mut rng);
        let first = s.offset[0];
        for _ in 0..20 {
            s = apply_motor_noise(&Action::zeros(1), &s, &np, &mut rng).1;
            assert_eq!(s.offset[0], first);
        }
    }

    #[test]
    fn ar1_stationary_std() {
        let np = NoiseParams::new(1.0, 0.9);
        let mut rng = RngStream::new(9, 0);
        let mut s = NoiseState::reset(1, &np, &mut rng);
        let n = 1_000_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            s = apply_motor_noise(&Action::zeros(1), &s, &np, &mut rng).1;
            sum += s.offset[0];
            sq += s.offset[0] * s.offset[0];
        }
        let mean = sum / n as f64;
        let std = (sq / n as f64 - mean * mean).sqrt();
        assert!((0.95..=1.05).contains(&std), "std {std}");
    }

    #[test]
    fn executed_action_is_clipped() {
        let np = NoiseParams::new(5.0, 0.0);
        let mut rng = RngStream::new(1, 1);
        let s = NoiseState::zeros(2);
        for _ in 0..100 {
            let (out, _) = apply_motor_noise(&Action::new(vec![0.9, -0.9]), &s, &np, &mut rng);
            assert!(out.is_in_range());
        }
    }
}
