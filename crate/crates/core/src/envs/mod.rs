//! Simulated environments, their parameterization, and episode execution.

pub mod bouncer;
pub mod expert;
pub mod noise;
pub mod reacher;

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::control::DynamicsFn;
use crate::data::{Action, Observation, Trajectory};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rng::RngStream;

pub use bouncer::BouncerState;
pub use expert::{task_cost, BouncerExpert, Expert, ExpertConfig, MpcExpert};
pub use noise::{apply_motor_noise, NoiseParams, NoiseState};
pub use reacher::ReacherState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Reacher2,
    Bouncer1d,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Reacher2 => "reacher2",
            EnvKind::Bouncer1d => "bouncer1d",
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            EnvKind::Reacher2 => reacher::OBS_DIM,
            EnvKind::Bouncer1d => bouncer::OBS_DIM,
        }
    }

    pub fn act_dim(self) -> usize {
        match self {
            EnvKind::Reacher2 => reacher::ACT_DIM,
            EnvKind::Bouncer1d => bouncer::ACT_DIM,
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reacher2" => Ok(EnvKind::Reacher2),
            "bouncer1d" => Ok(EnvKind::Bouncer1d),
            other => Err(Error::Config(format!("unknown environment `{other}`"))),
        }
    }
}

/// Full physical description of one environment instance.
///
/// Fields that do not apply to `kind` are carried along but ignored, so a
/// source and a target description always have the same shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    pub kind: EnvKind,
    /// m/s^2
    pub gravity: f64,
    pub gravity_scale: f64,
    /// Rotation of the reacher's plane away from horizontal, radians.
    pub plane_tilt: f64,
    /// Reacher elbow and tip masses, kg.
    pub mass1: f64,
    pub mass2: f64,
    /// Bouncer mass, kg.
    pub mass: f64,
    /// Reacher link lengths, m.
    pub link1: f64,
    pub link2: f64,
    pub torque_scale: f64,
    /// Actuator limit: N*m per joint for the reacher, N of thrust for the bouncer.
    pub torque_max: f64,
    pub restitution: f64,
    /// Integration substep, s.
    pub dt: f64,
    pub substeps: usize,
    /// Control steps per episode.
    pub episode_len: usize,
    #[serde(flatten)]
    pub noise: NoiseParams,
}

impl EnvParams {
    pub fn reacher() -> Self {
        Self {
            kind: EnvKind::Reacher2,
            gravity: 9.81,
            gravity_scale: 1.0,
            plane_tilt: 0.0,
            mass1: 1.7,
            mass2: 1.7,
            mass: 1.0,
            link1: 0.1,
            link2: 0.1,
            torque_scale: 1.0,
            torque_max: 8.0,
            restitution: 0.8,
            dt: 0.01,
            substeps: 2,
            episode_len: 150,
            noise: NoiseParams::NONE,
        }
    }

    pub fn bouncer() -> Self {
        Self {
            kind: EnvKind::Bouncer1d,
            torque_max: 40.0,
            episode_len: 200,
            ..Self::reacher()
        }
    }

    pub fn for_kind(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Reacher2 => Self::reacher(),
            EnvKind::Bouncer1d => Self::bouncer(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.kind.obs_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.kind.act_dim()
    }

    /// Duration of one control step.
    pub fn control_dt(&self) -> f64 {
        self.dt * self.substeps as f64
    }

    /// Same environment with motor noise switched off.
    pub fn noiseless(&self) -> Self {
        Self {
            noise: NoiseParams::NONE,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, reason: &str| {
            Err(Error::InvalidParam {
                name: name.to_string(),
                reason: reason.to_string(),
            })
        };
        let finite = [
            ("gravity", self.gravity),
            ("gravity_scale", self.gravity_scale),
            ("plane_tilt", self.plane_tilt),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return bad(name, "must be finite");
            }
        }
        let positive = [
            ("dt", self.dt),
            ("torque_scale", self.torque_scale),
            ("torque_max", self.torque_max),
            ("mass1", self.mass1),
            ("mass2", self.mass2),
            ("mass", self.mass),
            ("link1", self.link1),
            ("link2", self.link2),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(name, "must be > 0");
            }
        }
        if !(self.restitution > 0.0 && self.restitution <= 1.0) {
            return bad("restitution", "must lie in (0, 1]");
        }
        if self.substeps == 0 {
            return bad("substeps", "must be >= 1");
        }
        if !(self.noise.std >= 0.0 && self.noise.std.is_finite()) {
            return bad("noise_std", "must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.noise.corr) {
            return bad("noise_corr", "must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnvState {
    Reacher(ReacherState),
    Bouncer(BouncerState),
}

/// Physics of one control step without noise.
///
/// Returns the next state, the reward at it, and the instability flag.
pub fn step(state: &EnvState, action: &Action, p: &EnvParams) -> (EnvState, f64, bool) {
    match state {
        EnvState::Reacher(s) => {
            let (n, r, unstable) = reacher::reacher_step(s, action, p);
            (EnvState::Reacher(n), r, unstable)
        }
        EnvState::Bouncer(s) => {
            let (n, r) = bouncer::bouncer_step(s, action, p);
            (EnvState::Bouncer(n), r, false)
        }
    }
}

pub fn observe(state: &EnvState, p: &EnvParams) -> Observation {
    match state {
        EnvState::Reacher(s) => reacher::observe(s, p),
        EnvState::Bouncer(s) => bouncer::observe(s, p),
    }
}

/// Simulator state consistent with an observation taken at control step
/// `step_index` of an episode.
pub fn reconstruct(o: &Observation, step_index: usize, p: &EnvParams) -> Result<EnvState> {
    match p.kind {
        EnvKind::Reacher2 => reacher::reconstruct(o).map(EnvState::Reacher),
        EnvKind::Bouncer1d => bouncer::reconstruct(o, step_index, p).map(EnvState::Bouncer),
    }
}

/// Initial state. The reacher draws its target (radius, then angle); the
/// bouncer draws nothing.
pub fn initial_state(p: &EnvParams, rng: &mut RngStream) -> EnvState {
    match p.kind {
        EnvKind::Reacher2 => {
            let (r0, r1) = reacher::TARGET_RADIUS;
            let r = rng.uniform(r0 * r0, r1 * r1).sqrt();
            let phi = rng.uniform(0.0, TAU);
            EnvState::Reacher(ReacherState::at_rest([r * phi.cos(), r * phi.sin()]))
        }
        EnvKind::Bouncer1d => EnvState::Bouncer(BouncerState::initial()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    /// Action that reached the actuators after motor noise.
    pub executed: Action,
    pub unstable: bool,
}

/// A running episode: physical state, motor-noise state and step counter.
#[derive(Clone, Debug)]
pub struct Env {
    params: EnvParams,
    state: EnvState,
    noise: NoiseState,
    steps: usize,
}

impl Env {
    /// Start an episode. Draw order: initial state, then the noise offset.
    pub fn reset(params: &EnvParams, rng: &mut RngStream) -> Self {
        let state = initial_state(params, rng);
        let noise = NoiseState::reset(params.act_dim(), &params.noise, rng);
        Self {
            params: params.clone(),
            state,
            noise,
            steps: 0,
        }
    }

    pub fn from_state(params: &EnvParams, state: EnvState) -> Self {
        Self {
            params: params.clone(),
            state,
            noise: NoiseState::zeros(params.act_dim()),
            steps: 0,
        }
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn observe(&self) -> Observation {
        observe(&self.state, &self.params)
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.steps >= self.params.episode_len
    }

    /// Apply motor noise to the commanded action, then integrate.
    pub fn step(&mut self, command: &Action, rng: &mut RngStream) -> StepOutcome {
        let (executed, noise) = apply_motor_noise(&command.clipped(), &self.noise, &self.params.noise, rng);
        self.noise = noise;
        let (next, reward, unstable) = step(&self.state, &executed, &self.params);
        self.state = next;
        self.steps += 1;
        StepOutcome {
            observation: self.observe(),
            reward,
            executed,
            unstable,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub trajectory: Trajectory,
    /// Ended early on the instability flag.
    pub truncated: bool,
}

impl Episode {
    /// Return used for scoring. A truncated episode is charged its last
    /// reward for every step it did not complete.
    pub fn scored_return(&self, episode_len: usize) -> f64 {
        let traj = &self.trajectory;
        let mut total = traj.total_reward();
        if self.truncated {
            let last = traj.rewards.last().copied().unwrap_or(0.0);
            total += last * episode_len.saturating_sub(traj.len()) as f64;
        }
        total
    }
}

/// Run `episode_len` control steps of `policy`. The trajectory records the
/// commanded (pre-noise) actions.
pub fn run_episode(p: &EnvParams, policy: &mut dyn Policy, rng: &mut RngStream) -> Result<Episode> {
    let mut env = Env::reset(p, rng);
    policy.reset();
    let mut traj = Trajectory::new(env.observe());
    let mut truncated = false;
    while !env.is_done() {
        let command = policy.act(&traj)?.clipped();
        let out = env.step(&command, rng);
        traj.push(command, out.reward, out.observation);
        if out.unstable {
            truncated = true;
            break;
        }
    }
    Ok(Episode {
        trajectory: traj,
        truncated,
    })
}

pub fn rollout(p: &EnvParams, policy: &mut dyn Policy, rng: &mut RngStream) -> Result<Trajectory> {
    run_episode(p, policy, rng).map(|e| e.trajectory)
}

/// Noise-free one-step map of an environment in observation space, used as
/// the forward model for planning and for the transfer lookahead.
#[derive(Clone, Debug)]
pub struct SimModel {
    params: EnvParams,
}

impl SimModel {
    pub fn new(params: &EnvParams) -> Self {
        Self {
            params: params.noiseless(),
        }
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    /// Next observation from a reconstructed state; fails only when the
    /// observation cannot be mapped back to a state.
    pub fn predict(&self, step_index: usize, o: &Observation, a: &Action) -> Result<Observation> {
        let state = reconstruct(o, step_index, &self.params)?;
        let (next, _, _) = step(&state, a, &self.params);
        Ok(observe(&next, &self.params))
    }
}

impl DynamicsFn for SimModel {
    fn obs_dim(&self) -> usize {
        self.params.obs_dim()
    }

    fn act_dim(&self) -> usize {
        self.params.act_dim()
    }

    fn next(&self, step: usize, obs: &[f64], action: &[f64]) -> Vec<f64> {
        // Planning perturbs observations off the physical set (heights below
        // the floor under finite differences); project instead of failing.
        let mut o = obs.to_vec();
        if self.params.kind == EnvKind::Bouncer1d {
            o[0] = o[0].max(0.0);
        }
        match self.predict(step, &Observation::new(o), &Action::from(action)) {
            Ok(next) => next.into_inner(),
            Err(_) => vec![f64::NAN; obs.len()],
        }
    }
}
