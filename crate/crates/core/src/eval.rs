//! Scoring and experiment sweeps.
//!
//! Returns are normalized so the source expert in the source environment
//! scores 1 and the zero-action policy scores 0, both measured on the same
//! evaluation seeds as the policy being scored.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, GdaPolicy, OecPolicy};
use crate::collect::{median, train_loop, LoopConfig, EVAL_STREAM};
use crate::envs::{run_episode, EnvKind, EnvParams, Episode, Expert, ExpertConfig, NoiseParams};
use crate::error::{Error, Result};
use crate::invdyn::Mode;
use crate::policy::{Policy, ZeroPolicy};
use crate::rng::RngStream;

/// Stream for the GDA prior samples.
pub const BASELINE_STREAM: u64 = 5;

pub const SCORE_MIN: f64 = -0.5;
pub const SCORE_MAX: f64 = 1.5;

/// `(R - R_zero) / (R_expert - R_zero)`, clipped to `[-0.5, 1.5]`.
pub fn normalized_score(r: f64, expert: f64, zero: f64) -> Result<f64> {
    if !(expert > zero) || !(expert - zero).is_finite() {
        return Err(Error::DegenerateScore { expert, zero });
    }
    let s = (r - zero) / (expert - zero);
    if s.is_nan() {
        return Err(Error::NonFinite("normalized score"));
    }
    Ok(s.clamp(SCORE_MIN, SCORE_MAX))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub samples: usize,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreCurve {
    pub points: Vec<CurvePoint>,
}

impl ScoreCurve {
    pub fn push(&mut self, samples: usize, score: f64) -> Result<()> {
        if let Some(last) = self.points.last() {
            if samples <= last.samples {
                return Err(Error::InvalidParam {
                    name: "samples".into(),
                    reason: format!("curve sample counts must increase ({} after {})", samples, last.samples),
                });
            }
        }
        self.points.push(CurvePoint { samples, score });
        Ok(())
    }

    pub fn last_score(&self) -> Option<f64> {
        self.points.last().map(|p| p.score)
    }
}

/// Median of the score at `i` and its immediate neighbours that exist.
fn moving_median(scores: &[f64], i: usize) -> f64 {
    let lo = i.saturating_sub(1);
    let hi = (i + 2).min(scores.len());
    median(scores[lo..hi].to_vec())
}

/// Smallest cumulative sample count from which the 3-point moving median of
/// the score stays at or above `threshold` to the end of the curve.
pub fn sample_complexity(curve: &ScoreCurve, threshold: f64) -> Option<usize> {
    let scores: Vec<f64> = curve.points.iter().map(|p| p.score).collect();
    let mut first = None;
    for i in (0..scores.len()).rev() {
        if moving_median(&scores, i) >= threshold {
            first = Some(i);
        } else {
            break;
        }
    }
    first.map(|i| curve.points[i].samples)
}

/// A fixed set of evaluation episodes: episode `j` draws from
/// `RngStream::new(seed, stream).split(j)`.
#[derive(Clone, Debug)]
pub struct EvalSeeds {
    root: RngStream,
    pub episodes: usize,
}

impl EvalSeeds {
    pub fn new(seed: u64, stream: u64, episodes: usize) -> Self {
        Self {
            root: RngStream::new(seed, stream),
            episodes,
        }
    }

    pub fn rng(&self, j: usize) -> RngStream {
        self.root.split(j as u64)
    }

    pub fn run(&self, p: &EnvParams, policy: &mut dyn Policy) -> Result<Vec<Episode>> {
        (0..self.episodes).map(|j| run_episode(p, policy, &mut self.rng(j))).collect()
    }

    /// Scored return of every episode.
    pub fn returns(&self, p: &EnvParams, policy: &mut dyn Policy) -> Result<Vec<f64>> {
        Ok(self
            .run(p, policy)?
            .iter()
            .map(|e| e.scored_return(p.episode_len))
            .collect())
    }

    pub fn mean_return(&self, p: &EnvParams, policy: &mut dyn Policy) -> Result<f64> {
        let r = self.returns(p, policy)?;
        Ok(r.iter().sum::<f64>() / r.len().max(1) as f64)
    }
}

/// Lower bound on per-dimension observation scales.
pub const SCALE_FLOOR: f64 = 1e-3;

/// Normalization anchors for one source environment and evaluation seed set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct References {
    /// Mean scored return of the source policy in the source environment.
    pub expert: f64,
    /// Mean scored return of the zero-action policy in the source environment.
    pub zero: f64,
    /// Per-dimension std of the source policy's observations.
    pub obs_scale: Vec<f64>,
}

impl References {
    pub fn compute<P: Policy + Clone>(source: &EnvParams, policy: &P, seeds: &EvalSeeds) -> Result<Self> {
        let episodes = seeds.run(source, &mut policy.clone())?;
        let expert = episodes.iter().map(|e| e.scored_return(source.episode_len)).sum::<f64>()
            / episodes.len().max(1) as f64;
        let zero = seeds.mean_return(source, &mut ZeroPolicy::new(source.act_dim()))?;

        let d = source.obs_dim();
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut n = 0usize;
        for o in episodes.iter().flat_map(|e| e.trajectory.observations.iter()) {
            for (k, v) in o.iter().enumerate() {
                sum[k] += v;
                sq[k] += v * v;
            }
            n += 1;
        }
        let obs_scale = (0..d)
            .map(|k| {
                let mean = sum[k] / n.max(1) as f64;
                (sq[k] / n.max(1) as f64 - mean * mean).max(0.0).sqrt().max(SCALE_FLOOR)
            })
            .collect();
        let refs = Self { expert, zero, obs_scale };
        normalized_score(expert, expert, zero)?;
        Ok(refs)
    }

    pub fn score(&self, r: f64) -> Result<f64> {
        normalized_score(r, self.expert, self.zero)
    }
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Expert,
    Oec,
    Gda,
    OursDirect,
    OursCorrection,
    OursCorrectionHistory,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Expert,
        Method::Oec,
        Method::Gda,
        Method::OursDirect,
        Method::OursCorrection,
        Method::OursCorrectionHistory,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Expert => "expert",
            Method::Oec => "oec",
            Method::Gda => "gda",
            Method::OursDirect => "ours-direct",
            Method::OursCorrection => "ours-correction",
            Method::OursCorrectionHistory => "ours-correction-history",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(
            self,
            Method::OursDirect | Method::OursCorrection | Method::OursCorrectionHistory
        )
    }

    /// Inverse-model mode and window for the learned methods. Only the
    /// history variant looks past the current observation.
    pub fn learner(self, history: usize) -> Option<(Mode, usize)> {
        match self {
            Method::OursDirect => Some((Mode::Direct, 0)),
            Method::OursCorrection => Some((Mode::Correction, 0)),
            Method::OursCorrectionHistory => Some((Mode::Correction, history)),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Tilt,
    GravityScale,
    Noise,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Tilt => "tilt",
            Axis::GravityScale => "gravity-scale",
            Axis::Noise => "noise",
        }
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Axis::Tilt, Axis::GravityScale, Axis::Noise]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown axis `{s}`")))
    }
}

/// One perturbation applied on top of the source parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridPoint {
    /// Plane tilt in degrees.
    Tilt(f64),
    GravityScale(f64),
    Noise { std: f64, corr: f64 },
}

impl GridPoint {
    pub fn axis(&self) -> Axis {
        match self {
            GridPoint::Tilt(_) => Axis::Tilt,
            GridPoint::GravityScale(_) => Axis::GravityScale,
            GridPoint::Noise { .. } => Axis::Noise,
        }
    }

    /// Value column of the results table.
    pub fn label(&self) -> String {
        match self {
            GridPoint::Tilt(d) => format!("{d}"),
            GridPoint::GravityScale(g) => format!("{g}"),
            GridPoint::Noise { std, corr } => format!("{std}x{corr}"),
        }
    }

    pub fn apply(&self, base: &EnvParams) -> EnvParams {
        let mut p = base.clone();
        match *self {
            GridPoint::Tilt(deg) => p.plane_tilt = deg.to_radians(),
            GridPoint::GravityScale(g) => p.gravity_scale = g,
            GridPoint::Noise { std, corr } => p.noise = NoiseParams::new(std, corr),
        }
        p
    }
}

/// The standard grid for an axis.
pub fn default_grid(axis: Axis) -> Vec<GridPoint> {
    match axis {
        Axis::Tilt => (0..=6).map(|k| GridPoint::Tilt(15.0 * k as f64)).collect(),
        Axis::GravityScale => [0.8, 0.9, 1.0, 1.1, 1.2].into_iter().map(GridPoint::GravityScale).collect(),
        Axis::Noise => {
            let mut g = Vec::new();
            for std in [0.2, 1.0] {
                for corr in [0.0, 0.9, 1.0] {
                    g.push(GridPoint::Noise { std, corr });
                }
            }
            g
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub env: EnvKind,
    pub method: Method,
    pub grid: Vec<GridPoint>,
    pub seeds: usize,
}

impl SweepSpec {
    pub fn new(env: EnvKind, method: Method, axis: Axis) -> Self {
        Self {
            env,
            method,
            grid: default_grid(axis),
            seeds: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidParam {
                name: "grid".into(),
                reason: "must not be empty".into(),
            });
        }
        if self.seeds == 0 {
            return Err(Error::InvalidParam {
                name: "seeds".into(),
                reason: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// Everything a sweep needs besides the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    pub expert: ExpertConfig,
    pub baseline: BaselineConfig,
    /// Baseline hyperparameters to try; the best median per grid point is
    /// reported. Empty means use `baseline` as is.
    pub oec_gammas: Vec<f64>,
    pub gda_forgets: Vec<f64>,
    #[serde(rename = "loop")]
    pub learn: LoopConfig,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            expert: ExpertConfig::default(),
            baseline: BaselineConfig::default(),
            oec_gammas: vec![0.1, 0.2, 0.5],
            gda_forgets: vec![0.02, 0.05, 0.2],
            learn: LoopConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub env: String,
    pub method: String,
    pub axis: String,
    pub value: String,
    pub seed: u64,
    pub score: f64,
    pub samples_to_75: Option<usize>,
}

/// Outcome of one method on one target for one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodResult {
    pub score: f64,
    pub curve: Option<ScoreCurve>,
}

/// Candidate baseline configurations for `method`.
pub fn baseline_candidates(method: Method, cfg: &MethodConfig) -> Vec<BaselineConfig> {
    let base = cfg.baseline.clone();
    match method {
        Method::Oec if !cfg.oec_gammas.is_empty() => cfg
            .oec_gammas
            .iter()
            .map(|&gamma| BaselineConfig { gamma, ..base.clone() })
            .collect(),
        Method::Gda if !cfg.gda_forgets.is_empty() => cfg
            .gda_forgets
            .iter()
            .map(|&forget| BaselineConfig { forget, ..base.clone() })
            .collect(),
        _ => vec![base],
    }
}

/// Score one method on `target` for one seed. Baselines use `baseline`
/// as given; see [`baseline_candidates`] for the grid.
pub fn run_method(
    method: Method,
    source: &EnvParams,
    target: &EnvParams,
    cfg: &MethodConfig,
    baseline: &BaselineConfig,
    seed: u64,
) -> Result<MethodResult> {
    let expert = Expert::for_source(source, &cfg.expert);
    let seeds = EvalSeeds::new(seed, EVAL_STREAM, cfg.learn.collect.eval_episodes);
    if let Some((mode, window)) = method.learner(cfg.learn.window) {
        let lc = LoopConfig {
            mode,
            window,
            ..cfg.learn.clone()
        };
        let out = train_loop(source, target, &expert, &lc, seed, |_, _| Ok(()))?;
        let score = out.curve.last_score().ok_or(Error::Empty("learning curve"))?;
        return Ok(MethodResult {
            score,
            curve: Some(out.curve),
        });
    }
    let refs = References::compute(source, &expert, &seeds)?;
    let mean = match method {
        Method::Expert => seeds.mean_return(target, &mut expert.clone())?,
        Method::Oec => seeds.mean_return(target, &mut OecPolicy::new(source, &cfg.expert, baseline))?,
        Method::Gda => {
            let rng = RngStream::new(seed, BASELINE_STREAM);
            seeds.mean_return(target, &mut GdaPolicy::new(source, &cfg.expert, baseline, rng))?
        }
        _ => unreachable!("learned methods handled above"),
    };
    Ok(MethodResult {
        score: refs.score(mean)?,
        curve: None,
    })
}

/// Per-grid-point summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub value: String,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Median samples-to-0.75 over the seeds that reached it.
    pub median_samples_to_75: Option<f64>,
    pub reached: usize,
    /// Index into the baseline candidates that was reported.
    pub candidate: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub env: EnvKind,
    pub method: Method,
    pub axis: Axis,
    pub seeds: usize,
    pub points: Vec<PointSummary>,
}

/// Linear-interpolation quantile of an unsorted sample.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Seed used for the `j`-th repetition. The same seeds are reused at every
/// grid point, so differences across the grid are paired.
pub fn job_seed(master: u64, j: usize) -> u64 {
    master.wrapping_add(j as u64)
}

/// Run every grid point for every seed. Rows are handed to `on_row` as soon
/// as a grid point finishes.
pub fn run_sweep(
    spec: &SweepSpec,
    source: &EnvParams,
    cfg: &MethodConfig,
    master_seed: u64,
    mut on_row: impl FnMut(&SweepRow) -> Result<()>,
) -> Result<SweepSummary> {
    spec.validate()?;
    if source.kind != spec.env {
        return Err(Error::Config(format!(
            "sweep is for `{}` but the source environment is `{}`",
            spec.env.name(),
            source.kind.name()
        )));
    }
    let candidates = baseline_candidates(spec.method, cfg);
    let mut points = Vec::new();
    for point in &spec.grid {
        let target = point.apply(source);
        target.validate()?;
        // results[c][j]
        let mut results: Vec<Vec<MethodResult>> = Vec::new();
        for cand in &candidates {
            let mut per_seed = Vec::with_capacity(spec.seeds);
            for j in 0..spec.seeds {
                per_seed.push(run_method(spec.method, source, &target, cfg, cand, job_seed(master_seed, j))?);
            }
            results.push(per_seed);
        }
        let medians: Vec<f64> = results
            .iter()
            .map(|r| median(r.iter().map(|m| m.score).collect()))
            .collect();
        // First candidate wins ties, so the choice is deterministic.
        let best = (0..medians.len()).fold(0, |b, c| if medians[c] > medians[b] { c } else { b });
        let chosen = &results[best];

        let mut reached = Vec::new();
        for (j, r) in chosen.iter().enumerate() {
            let s75 = r.curve.as_ref().and_then(|c| sample_complexity(c, 0.75));
            if let Some(n) = s75 {
                reached.push(n as f64);
            }
            on_row(&SweepRow {
                env: spec.env.name().into(),
                method: spec.method.name().into(),
                axis: point.axis().name().into(),
                value: point.label(),
                seed: job_seed(master_seed, j),
                score: r.score,
                samples_to_75: s75,
            })?;
        }
        let scores: Vec<f64> = chosen.iter().map(|r| r.score).collect();
        points.push(PointSummary {
            value: point.label(),
            median: median(scores.clone()),
            q1: quantile(&scores, 0.25),
            q3: quantile(&scores, 0.75),
            median_samples_to_75: (!reached.is_empty()).then(|| median(reached.clone())),
            reached: reached.len(),
            candidate: (candidates.len() > 1).then_some(best),
        });
    }
    Ok(SweepSummary {
        env: spec.env,
        method: spec.method,
        axis: spec.grid[0].axis(),
        seeds: spec.seeds,
        points,
    })
}

/// Rows grouped by grid value, in first-seen order of values.
pub fn scores_by_value(rows: &[SweepRow]) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        out.entry(r.value.clone()).or_default().push(r.score);
    }
    out
}
