//! Source-environment experts and the quadratic task costs used for planning.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::{IlqrConfig, Mpc, QuadCost};
use crate::data::{Action, Observation, Trajectory};
use crate::error::Result;
use crate::policy::Policy;

use super::{EnvKind, EnvParams, SimModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    /// Bouncer PD gains.
    pub kp: f64,
    pub kd: f64,
    /// Reacher cost weight on the tip-to-target error.
    pub tip_weight: f64,
    /// Reacher cost weight on joint speeds.
    pub speed_weight: f64,
    /// Bouncer cost weight on height tracking error.
    pub height_weight: f64,
    /// Action weight `R = action_weight * I` for both tasks.
    pub action_weight: f64,
    pub ilqr: IlqrConfig,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            kp: 100.0,
            kd: 20.0,
            tip_weight: 0.1,
            speed_weight: 1e-3,
            height_weight: 100.0,
            action_weight: 1e-3,
            ilqr: IlqrConfig {
                // Warm-started replanning settles within a few sweeps.
                max_iters: 3,
                ..IlqrConfig::default()
            },
        }
    }
}

/// Quadratic cost realizing the environment's reward as a tracking objective.
///
/// Reacher: penalize the tip-to-target entries of the observation, plus a
/// small speed term. Bouncer: penalize `y - y_ref`, i.e. entry 0 minus entry 2.
pub fn task_cost(kind: EnvKind, cfg: &ExpertConfig) -> QuadCost {
    let n = kind.obs_dim();
    let m = kind.act_dim();
    let mut q = DMatrix::zeros(n, n);
    match kind {
        EnvKind::Reacher2 => {
            q[(8, 8)] = cfg.tip_weight;
            q[(9, 9)] = cfg.tip_weight;
            q[(4, 4)] = cfg.speed_weight;
            q[(5, 5)] = cfg.speed_weight;
        }
        EnvKind::Bouncer1d => {
            let w = cfg.height_weight;
            q[(0, 0)] = w;
            q[(2, 2)] = w;
            q[(0, 2)] = -w;
            q[(2, 0)] = -w;
        }
    }
    QuadCost::new(
        q.clone(),
        DMatrix::identity(m, m) * cfg.action_weight,
        q,
        DVector::zeros(n),
    )
}

/// PD tracking of the hopping reference. The reference velocity is the
/// finite difference of the two reference entries of the observation.
#[derive(Clone, Debug, PartialEq)]
pub struct BouncerExpert {
    pub kp: f64,
    pub kd: f64,
    /// `torque_scale * torque_max` of the source environment.
    pub force_scale: f64,
    pub control_dt: f64,
}

impl BouncerExpert {
    pub fn new(p: &EnvParams, kp: f64, kd: f64) -> Self {
        Self {
            kp,
            kd,
            force_scale: p.torque_scale * p.torque_max,
            control_dt: p.control_dt(),
        }
    }

    pub fn action(&self, o: &Observation) -> Action {
        let (y, v, y_ref, y_ref_next) = (o[0], o[1], o[2], o[3]);
        let v_ref = (y_ref_next - y_ref) / self.control_dt;
        let force = self.kp * (y_ref - y) + self.kd * (v_ref - v);
        Action::new(vec![(force / self.force_scale).clamp(-1.0, 1.0)])
    }
}

impl Policy for BouncerExpert {
    fn act(&mut self, traj: &Trajectory) -> Result<Action> {
        Ok(self.action(traj.last_observation()))
    }
}

/// Receding-horizon iLQR against the exact source dynamics.
#[derive(Clone, Debug)]
pub struct MpcExpert {
    mpc: Mpc<SimModel>,
}

impl MpcExpert {
    pub fn new(p: &EnvParams, cfg: &ExpertConfig) -> Self {
        Self {
            mpc: Mpc::new(SimModel::new(p), task_cost(p.kind, cfg), cfg.ilqr.clone()),
        }
    }
}

impl Policy for MpcExpert {
    fn reset(&mut self) {
        self.mpc.reset();
    }

    fn act(&mut self, traj: &Trajectory) -> Result<Action> {
        self.mpc.act(traj.last_observation(), traj.len())
    }
}

/// The source policy for an environment: PD for the bouncer, MPC for the
/// reacher.
#[derive(Clone, Debug)]
pub enum Expert {
    Bouncer(BouncerExpert),
    Reacher(MpcExpert),
}

impl Expert {
    pub fn for_source(p: &EnvParams, cfg: &ExpertConfig) -> Self {
        match p.kind {
            EnvKind::Bouncer1d => Expert::Bouncer(BouncerExpert::new(p, cfg.kp, cfg.kd)),
            EnvKind::Reacher2 => Expert::Reacher(MpcExpert::new(p, cfg)),
        }
    }
}

impl Policy for Expert {
    fn reset(&mut self) {
        match self {
            Expert::Bouncer(e) => e.reset(),
            Expert::Reacher(e) => e.reset(),
        }
    }

    fn act(&mut self, traj: &Trajectory) -> Result<Action> {
        match self {
            Expert::Bouncer(e) => e.act(traj),
            Expert::Reacher(e) => e.act(traj),
        }
    }
}
