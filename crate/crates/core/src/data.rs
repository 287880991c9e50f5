//! Observations, actions, trajectories and history windows.

use std::io::{BufRead, Write};
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Self {
                Self(values)
            }

            pub fn zeros(dim: usize) -> Self {
                Self(vec![0.0; dim])
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }
        }

        impl Deref for $name {
            type Target = [f64];

            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(values: Vec<f64>) -> Self {
                Self(values)
            }
        }

        impl From<&[f64]> for $name {
            fn from(values: &[f64]) -> Self {
                Self(values.to_vec())
            }
        }
    };
}

real_vector!(
    /// Sensor reading of an environment.
    Observation
);

real_vector!(
    /// Actuator command in normalized units; executed commands live in `[-1, 1]`.
    Action
);

impl Action {
    /// Elementwise clip to the actuator range `[-1, 1]`.
    pub fn clipped(&self) -> Action {
        Action(self.0.iter().map(|v| v.clamp(-1.0, 1.0)).collect())
    }

    pub fn is_in_range(&self) -> bool {
        self.0.iter().all(|v| (-1.0..=1.0).contains(v))
    }
}

/// Alternating observations and actions, `o_0, a_0, o_1, a_1, ..., o_n`,
/// with the reward earned by each action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    #[serde(rename = "obs")]
    pub observations: Vec<Observation>,
    #[serde(rename = "act")]
    pub actions: Vec<Action>,
    #[serde(rename = "rew")]
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn new(first: Observation) -> Self {
        Self {
            observations: vec![first],
            actions: Vec::new(),
            rewards: Vec::new(),
        }
    }

    pub fn push(&mut self, action: Action, reward: f64, next: Observation) {
        self.actions.push(action);
        self.rewards.push(reward);
        self.observations.push(next);
    }

    /// Number of completed control steps.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn last_observation(&self) -> &Observation {
        self.observations
            .last()
            .expect("a trajectory always holds at least one observation")
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn is_consistent(&self) -> bool {
        !self.observations.is_empty()
            && self.observations.len() == self.actions.len() + 1
            && self.rewards.len() == self.actions.len()
    }
}

/// The `w + 1` most recent observations and the `w` actions between them,
/// oldest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub observations: Vec<Observation>,
    pub actions: Vec<Action>,
}

impl Window {
    /// Number of past transitions covered (`W`).
    pub fn size(&self) -> usize {
        self.actions.len()
    }

    pub fn latest(&self) -> &Observation {
        self.observations.last().expect("window is never empty")
    }

    /// Observations then actions, flattened.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for o in &self.observations {
            out.extend_from_slice(o);
        }
        for a in &self.actions {
            out.extend_from_slice(a);
        }
    }
}

/// Last `w + 1` observations and last `w` actions of `traj`.
pub fn tail_window(traj: &Trajectory, w: usize) -> Result<Window> {
    let have = traj.observations.len();
    if have < w + 1 {
        return Err(Error::ShortTrajectory {
            window: w,
            needed: w + 1,
            have,
        });
    }
    Ok(Window {
        observations: traj.observations[have - (w + 1)..].to_vec(),
        actions: traj.actions[traj.actions.len() - w..].to_vec(),
    })
}

/// Like [`tail_window`], but an episode start is padded: missing observations
/// repeat the earliest one and missing actions are zero vectors of `act_dim`.
pub fn pad_window(traj: &Trajectory, w: usize, act_dim: usize) -> Window {
    pad_window_slices(&traj.observations, &traj.actions, w, act_dim)
}

/// [`pad_window`] over a history given as slices, `observations.len() ==
/// actions.len() + 1`.
pub fn pad_window_slices(observations: &[Observation], actions: &[Action], w: usize, act_dim: usize) -> Window {
    let have = observations.len();
    if have >= w + 1 {
        return Window {
            observations: observations[have - (w + 1)..].to_vec(),
            actions: actions[actions.len() - w..].to_vec(),
        };
    }
    let missing = w + 1 - have;
    let mut obs = vec![observations[0].clone(); missing];
    obs.extend(observations.iter().cloned());
    let mut acts = vec![Action::zeros(act_dim); missing];
    acts.extend(actions.iter().cloned());
    Window {
        observations: obs,
        actions: acts,
    }
}

/// Append trajectories to a JSON-lines stream, one record per trajectory.
pub fn write_trajectories<W: Write>(mut out: W, trajs: &[Trajectory]) -> Result<()> {
    for t in trajs {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trajectories<R: BufRead>(input: R) -> Result<Vec<Trajectory>> {
    let mut trajs = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Trajectory = serde_json::from_str(&line)?;
        if !t.is_consistent() {
            return Err(Error::Shape {
                context: "trajectory record",
                expected: t.actions.len() + 1,
                got: t.observations.len(),
            });
        }
        trajs.push(t);
    }
    Ok(trajs)
}
