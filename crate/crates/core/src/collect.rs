//! Interleaved data collection and training.
//!
//! Each iteration runs the current transfer policy in the target
//! environment, occasionally perturbs the commanded action, and cuts an
//! episode short once it drifts far from what the source policy does in the
//! source environment from the same start. All steps become training samples
//! for the inverse model, which is then refit on everything gathered so far.

use serde::{Deserialize, Serialize};

use crate::data::{pad_window, Action, Observation, Trajectory, Window};
use crate::envs::{Env, EnvParams};
use crate::error::{Error, Result};
use crate::eval::{normalized_score, EvalSeeds, References, ScoreCurve};
use crate::invdyn::{self, InvSample, InverseModel, Mode, TrainConfig, TrainReport};
use crate::policy::Policy;
use crate::rng::RngStream;
use crate::transfer::{scaled_gap, TransferPolicy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub p_inject: f64,
    pub inject_std: f64,
    /// Deviation threshold in per-dimension z units.
    pub deviation_threshold: f64,
    /// Consecutive over-threshold steps before an episode is cut.
    pub patience: usize,
    pub samples_per_iter: usize,
    pub iterations: usize,
    pub eval_episodes: usize,
    /// Continue from the previous iteration's network instead of
    /// reinitializing it.
    pub warm_start: bool,
    /// Epochs per iteration when warm starting.
    pub refit_epochs: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            p_inject: 0.1,
            inject_std: 0.3,
            deviation_threshold: 2.0,
            patience: 5,
            samples_per_iter: 5000,
            iterations: 30,
            eval_episodes: 10,
            warm_start: true,
            refit_epochs: 10,
        }
    }
}

impl CollectConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, reason: &str| {
            Err(Error::InvalidParam {
                name: name.into(),
                reason: reason.into(),
            })
        };
        if !(0.0..=1.0).contains(&self.p_inject) {
            return bad("p_inject", "must lie in [0, 1]");
        }
        if !(self.inject_std >= 0.0) {
            return bad("inject_std", "must be >= 0");
        }
        if !(self.deviation_threshold > 0.0) {
            return bad("deviation_threshold", "must be > 0");
        }
        if self.patience == 0 {
            return bad("patience", "must be >= 1");
        }
        if self.samples_per_iter == 0 {
            return bad("samples_per_iter", "must be >= 1");
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes", "must be >= 1");
        }
        Ok(())
    }
}

/// One executed target-environment step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledStep {
    pub window: Window,
    /// Commanded action, including any injected perturbation; this is what
    /// reached the motor-noise stage.
    pub action: Action,
    pub next: Observation,
    pub source: Action,
}

impl LabeledStep {
    pub fn to_sample(&self, mode: Mode) -> InvSample {
        let label = match mode {
            Mode::Direct => self.action.to_vec(),
            Mode::Correction => self
                .action
                .iter()
                .zip(self.source.iter())
                .map(|(a, s)| a - s)
                .collect(),
        };
        InvSample {
            input: invdyn::sample_input(&self.window, &self.next),
            label,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStat {
    pub steps: usize,
    /// Cut short by the deviation rule.
    pub reset: bool,
    pub unstable: bool,
    /// Median scaled gap between the lookahead and the actual observation.
    pub median_gap: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Collected {
    pub steps: Vec<LabeledStep>,
    pub episodes: Vec<EpisodeStat>,
}

impl Collected {
    pub fn mean_episode_len(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(|e| e.steps as f64).sum::<f64>() / self.episodes.len() as f64
    }

    pub fn median_gap(&self) -> f64 {
        median(self.episodes.iter().map(|e| e.median_gap).collect())
    }
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Fraction of label entries sitting on the actuator limits.
pub fn saturated_fraction(steps: &[LabeledStep]) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for s in steps {
        for a in s.action.iter() {
            total += 1;
            if a.abs() >= 1.0 - 1e-9 {
                hit += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Run the transfer policy in `target` until `cfg.samples_per_iter` steps
/// are gathered.
///
/// Episode `k` draws from `rng.split(k)`: the environment (initial state,
/// motor noise) consumes that stream, injection uses its child stream 1.
pub fn collect_iteration<P: Policy, R: Policy>(
    source: &EnvParams,
    target: &EnvParams,
    tp: &mut TransferPolicy<P>,
    reference_policy: &mut R,
    obs_scale: &[f64],
    cfg: &CollectConfig,
    rng: &RngStream,
) -> Result<Collected> {
    cfg.validate()?;
    let act_dim = target.act_dim();
    let window = tp.model.window;
    let mut out = Collected::default();
    let mut episode = 0u64;
    while out.steps.len() < cfg.samples_per_iter {
        let mut env_rng = rng.split(episode);
        let mut inject_rng = env_rng.split(1);
        episode += 1;

        let mut env = Env::reset(target, &mut env_rng);
        let mut reference = Env::from_state(source, *env.state());
        tp.reset();
        reference_policy.reset();
        let mut traj = Trajectory::new(env.observe());
        let mut ref_traj = Trajectory::new(reference.observe());
        let mut over = 0usize;
        let mut gaps = Vec::new();
        let mut stat = EpisodeStat {
            steps: 0,
            reset: false,
            unstable: false,
            median_gap: f64::NAN,
        };
        // Reference rollouts never draw: the source has no motor noise.
        let mut no_draws = RngStream::new(0, 0);
        while !env.is_done() && out.steps.len() < cfg.samples_per_iter {
            let w = pad_window(&traj, window, act_dim);
            let step = tp.target_action(&traj)?;
            let mut action = step.target.clone();
            if inject_rng.chance(cfg.p_inject) {
                action = Action::new(
                    action
                        .iter()
                        .map(|a| a + cfg.inject_std * inject_rng.normal())
                        .collect(),
                )
                .clipped();
            }
            let outcome = env.step(&action, &mut env_rng);
            gaps.push(scaled_gap(&outcome.observation, &step.predicted, obs_scale));
            out.steps.push(LabeledStep {
                window: w,
                action: action.clone(),
                next: outcome.observation.clone(),
                source: step.source,
            });
            traj.push(action, outcome.reward, outcome.observation);
            stat.steps += 1;
            if outcome.unstable {
                stat.unstable = true;
                break;
            }

            let ref_action = reference_policy.act(&ref_traj)?.clipped();
            let ref_out = reference.step(&ref_action, &mut no_draws);
            ref_traj.push(ref_action, ref_out.reward, ref_out.observation);

            let deviation = traj
                .last_observation()
                .iter()
                .zip(ref_traj.last_observation().iter())
                .zip(obs_scale)
                .map(|((a, b), s)| (a - b).abs() / s)
                .fold(0.0, f64::max);
            over = if deviation > cfg.deviation_threshold { over + 1 } else { 0 };
            if over >= cfg.patience {
                stat.reset = true;
                break;
            }
        }
        stat.median_gap = median(gaps);
        out.episodes.push(stat);
    }
    let saturated = saturated_fraction(&out.steps);
    if saturated > 0.5 {
        log::warn!(
            "{:.0}% of collected labels sit on the actuator limits; the dataset carries little information",
            100.0 * saturated
        );
    }
    Ok(out)
}

/// Everything the loop needs besides the environments and source policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub window: usize,
    pub mode: Mode,
    pub collect: CollectConfig,
    pub train: TrainConfig,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            window: 2,
            mode: Mode::Correction,
            collect: CollectConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub samples: usize,
    pub score: f64,
    pub mean_return: f64,
    pub episodes: usize,
    pub resets: usize,
    pub mean_episode_len: f64,
    pub median_gap: f64,
    pub saturated_fraction: f64,
    pub train: TrainReport,
}

#[derive(Clone, Debug)]
pub struct LoopOutcome {
    pub model: InverseModel,
    pub curve: ScoreCurve,
    pub records: Vec<IterationRecord>,
    pub references: References,
}

/// Stream ids under the master seed.
pub const COLLECT_STREAM: u64 = 1;
pub const TRAIN_STREAM: u64 = 2;
pub const EVAL_STREAM: u64 = 3;
pub const INIT_STREAM: u64 = 4;

/// Alternate collection and training; evaluate the transfer policy after
/// every iteration. `on_iteration` sees each iteration's steps and record,
/// e.g. to persist them.
pub fn train_loop<P: Policy + Clone>(
    source: &EnvParams,
    target: &EnvParams,
    source_policy: &P,
    cfg: &LoopConfig,
    seed: u64,
    mut on_iteration: impl FnMut(&[LabeledStep], &IterationRecord) -> Result<()>,
) -> Result<LoopOutcome> {
    cfg.collect.validate()?;
    cfg.train.validate()?;
    let seeds = EvalSeeds::new(seed, EVAL_STREAM, cfg.collect.eval_episodes);
    let references = References::compute(source, source_policy, &seeds)?;

    let mut init_rng = RngStream::new(seed, INIT_STREAM);
    let mut model = InverseModel::untrained(
        cfg.mode,
        cfg.window,
        source.obs_dim(),
        source.act_dim(),
        &cfg.train.hidden,
        &mut init_rng,
    )?;
    let collect_root = RngStream::new(seed, COLLECT_STREAM);
    let train_root = RngStream::new(seed, TRAIN_STREAM);

    let mut dataset: Vec<InvSample> = Vec::new();
    let mut curve = ScoreCurve::default();
    let mut records = Vec::new();
    for it in 0..cfg.collect.iterations {
        let mut tp = TransferPolicy::new(source_policy.clone(), source, model.clone())?;
        let mut reference = source_policy.clone();
        let collected = collect_iteration(
            source,
            target,
            &mut tp,
            &mut reference,
            &references.obs_scale,
            &cfg.collect,
            &collect_root.split(it as u64),
        )?;
        dataset.extend(collected.steps.iter().map(|s| s.to_sample(cfg.mode)));

        let mut train_rng = train_root.split(it as u64);
        let (next, report) = if cfg.collect.warm_start && it > 0 {
            let tc = TrainConfig {
                epochs: cfg.collect.refit_epochs,
                ..cfg.train.clone()
            };
            invdyn::train_from(model, &dataset, &tc, &mut train_rng)?
        } else {
            let fresh = InverseModel::untrained(
                cfg.mode,
                cfg.window,
                source.obs_dim(),
                source.act_dim(),
                &cfg.train.hidden,
                &mut train_rng,
            )?;
            invdyn::train_from(fresh, &dataset, &cfg.train, &mut train_rng)?
        };
        model = next;

        let mut tp = TransferPolicy::new(source_policy.clone(), source, model.clone())?;
        let returns = seeds.returns(target, &mut tp)?;
        let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
        let score = normalized_score(mean_return, references.expert, references.zero)?;
        curve.push(dataset.len(), score)?;

        let record = IterationRecord {
            iteration: it,
            samples: dataset.len(),
            score,
            mean_return,
            episodes: collected.episodes.len(),
            resets: collected.episodes.iter().filter(|e| e.reset).count(),
            mean_episode_len: collected.mean_episode_len(),
            median_gap: collected.median_gap(),
            saturated_fraction: saturated_fraction(&collected.steps),
            train: report,
        };
        log::info!(
            "iteration {it}: {} samples, score {score:.3}, mean episode {:.1} steps",
            record.samples,
            record.mean_episode_len
        );
        on_iteration(&collected.steps, &record)?;
        records.push(record);
    }
    Ok(LoopOutcome {
        model,
        curve,
        records,
        references,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvParams, Expert, ExpertConfig};

    fn small_loop(iterations: usize) -> LoopConfig {
        LoopConfig {
            window: 1,
            mode: Mode::Correction,
            collect: CollectConfig {
                samples_per_iter: 300,
                iterations,
                eval_episodes: 2,
                ..CollectConfig::default()
            },
            train: TrainConfig {
                hidden: vec![16, 16],
                epochs: 3,
                ..TrainConfig::default()
            },
        }
    }

    #[test]
    fn zero_iterations_leave_model_untrained() {
        let p = EnvParams::bouncer();
        let expert = Expert::for_source(&p, &ExpertConfig::default());
        let out = train_loop(&p, &p, &expert, &small_loop(0), 1, |_, _| Ok(())).unwrap();
        assert!(out.curve.points.is_empty());
        assert_eq!(out.model.mlp.weights.last().unwrap().amax(), 0.0);
    }

    #[test]
    fn curve_grows_by_iteration_size() {
        let p = EnvParams::bouncer();
        let target = EnvParams {
            gravity_scale: 1.2,
            ..p.clone()
        };
        let expert = Expert::for_source(&p, &ExpertConfig::default());
        let mut seen = 0;
        let out = train_loop(&p, &target, &expert, &small_loop(3), 1, |steps, rec| {
            seen += 1;
            assert_eq!(steps.len(), 300);
            assert!(steps.iter().all(|s| s.action.is_in_range()));
            assert!(rec.train.train_samples > 0);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, 3);
        let samples: Vec<usize> = out.curve.points.iter().map(|p| p.samples).collect();
        assert_eq!(samples, vec![300, 600, 900]);
    }

    #[test]
    fn no_gap_collection_matches_source_policy() {
        let p = EnvParams::bouncer();
        let expert = Expert::for_source(&p, &ExpertConfig::default());
        let mut rng = RngStream::new(0, 0);
        let model = InverseModel::untrained(Mode::Correction, 0, 4, 1, &[8], &mut rng).unwrap();
        let mut tp = TransferPolicy::new(expert.clone(), &p, model).unwrap();
        let cfg = CollectConfig {
            p_inject: 0.0,
            samples_per_iter: 450,
            ..CollectConfig::default()
        };
        let out = collect_iteration(&p, &p, &mut tp, &mut expert.clone(), &[1.0; 4], &cfg, &rng).unwrap();
        assert!(out.episodes.iter().all(|e| !e.reset));
        assert!(out.steps.iter().all(|s| s.action == s.source));
        assert!(out.episodes.iter().all(|e| e.median_gap == 0.0));
    }

    #[test]
    fn labels_replay_the_executed_episode() {
        // Replaying the logged actions through a fresh environment with the
        // same stream reproduces every logged next observation.
        let source = EnvParams::bouncer();
        let target = EnvParams {
            restitution: 0.5,
            noise: crate::envs::NoiseParams::new(0.2, 0.9),
            ..source.clone()
        };
        let expert = Expert::for_source(&source, &ExpertConfig::default());
        let mut rng = RngStream::new(0, 0);
        let model = InverseModel::untrained(Mode::Correction, 1, 4, 1, &[8], &mut rng).unwrap();
        let mut tp = TransferPolicy::new(expert.clone(), &source, model).unwrap();
        let cfg = CollectConfig {
            p_inject: 0.5,
            samples_per_iter: 200,
            ..CollectConfig::default()
        };
        let root = RngStream::new(9, 9);
        let out = collect_iteration(&source, &target, &mut tp, &mut expert.clone(), &[1.0; 4], &cfg, &root).unwrap();
        let first = &out.episodes[0];
        let mut env_rng = root.split(0);
        let mut env = Env::reset(&target, &mut env_rng);
        for s in &out.steps[..first.steps] {
            let o = env.step(&s.action, &mut env_rng).observation;
            assert_eq!(o, s.next);
        }
    }

    #[test]
    fn saturation_is_detected() {
        let step = |a: f64| LabeledStep {
            window: Window {
                observations: vec![Observation::zeros(1)],
                actions: vec![],
            },
            action: Action::new(vec![a]),
            next: Observation::zeros(1),
            source: Action::zeros(1),
        };
        let steps = vec![step(1.0), step(-1.0), step(1.0), step(0.2)];
        assert_eq!(saturated_fraction(&steps), 0.75);
    }
}
