//! The transfer policy: ask the source policy what to do, simulate that one
//! step in the source environment from the current target observation, and
//! let the inverse model find the target action that reproduces the result.

use crate::data::{pad_window, Action, Observation, Trajectory};
use crate::envs::{EnvParams, SimModel};
use crate::error::{Error, Result};
use crate::invdyn::InverseModel;
use crate::policy::Policy;

#[derive(Clone, Debug, PartialEq)]
pub struct TransferStep {
    pub target: Action,
    pub source: Action,
    /// Source-simulator prediction of the next observation.
    pub predicted: Observation,
}

#[derive(Clone, Debug)]
pub struct TransferPolicy<P> {
    pub source_policy: P,
    pub source: SimModel,
    pub model: InverseModel,
    last: Option<TransferStep>,
}

impl<P: Policy> TransferPolicy<P> {
    pub fn new(source_policy: P, source: &EnvParams, model: InverseModel) -> Result<Self> {
        if model.obs_dim != source.obs_dim() || model.act_dim != source.act_dim() {
            return Err(Error::Shape {
                context: "inverse model vs source environment",
                expected: source.obs_dim(),
                got: model.obs_dim,
            });
        }
        Ok(Self {
            source_policy,
            source: SimModel::new(source),
            model,
            last: None,
        })
    }

    /// Compute target action, source action and the one-step lookahead for
    /// the latest observation of `traj`.
    pub fn target_action(&mut self, traj: &Trajectory) -> Result<TransferStep> {
        let source = self.source_policy.act(traj)?.clipped();
        let latest = traj.last_observation();
        let predicted = self.source.predict(traj.len(), latest, &source)?;
        let window = pad_window(traj, self.model.window, self.model.act_dim);
        let target = self.model.query(&window, &predicted, Some(&source))?;
        let step = TransferStep {
            target,
            source,
            predicted,
        };
        self.last = Some(step.clone());
        Ok(step)
    }

    /// The step computed by the most recent call to [`Self::target_action`].
    pub fn last_step(&self) -> Option<&TransferStep> {
        self.last.as_ref()
    }
}

impl<P: Policy> Policy for TransferPolicy<P> {
    fn reset(&mut self) {
        self.source_policy.reset();
        self.last = None;
    }

    fn act(&mut self, traj: &Trajectory) -> Result<Action> {
        self.target_action(traj).map(|s| s.target)
    }
}

/// Euclidean norm of the per-dimension scaled difference.
pub fn scaled_gap(actual: &[f64], predicted: &[f64], scale: &[f64]) -> f64 {
    actual
        .iter()
        .zip(predicted)
        .zip(scale)
        .map(|((a, p), s)| ((a - p) / s).powi(2))
        .sum::<f64>()
        .sqrt()
}
