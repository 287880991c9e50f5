//! Inverse dynamics model: from a history window and a desired next
//! observation, predict the action that produces it.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{pad_window_slices, Action, Observation, Trajectory, Window};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Mlp, Normalizer};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// The network outputs the target action.
    Direct,
    /// The network outputs a correction added to the source action.
    Correction,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Mode::Direct),
            "correction" => Ok(Mode::Correction),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvSample {
    pub input: Vec<f64>,
    pub label: Vec<f64>,
}

pub fn input_dim(window: usize, obs_dim: usize, act_dim: usize) -> usize {
    (window + 2) * obs_dim + window * act_dim
}

/// Flattened network input: window observations, window actions, target.
pub fn sample_input(w: &Window, next: &Observation) -> Vec<f64> {
    let mut x = Vec::with_capacity(w.observations.len() * (next.len() + 1) + next.len());
    w.flatten_into(&mut x);
    x.extend_from_slice(next);
    x
}

/// One sample per action; windows are repeat-padded at episode starts.
///
/// `sources`, when given, holds the source action for every step and turns
/// labels into corrections `a_t - a_source,t`.
pub fn build_dataset(
    trajs: &[Trajectory],
    window: usize,
    sources: Option<&[Vec<Action>]>,
) -> Result<Vec<InvSample>> {
    if let Some(src) = sources {
        if src.len() != trajs.len() {
            return Err(Error::Shape {
                context: "source action lists",
                expected: trajs.len(),
                got: src.len(),
            });
        }
    }
    let mut out = Vec::new();
    for (i, traj) in trajs.iter().enumerate() {
        let Some(first) = traj.actions.first() else {
            continue;
        };
        let act_dim = first.len();
        let src = sources.map(|s| &s[i]);
        if let Some(src) = src {
            if src.len() != traj.actions.len() {
                return Err(Error::Shape {
                    context: "source actions of a trajectory",
                    expected: traj.actions.len(),
                    got: src.len(),
                });
            }
        }
        for t in 0..traj.actions.len() {
            let w = pad_window_slices(&traj.observations[..=t], &traj.actions[..t], window, act_dim);
            let input = sample_input(&w, &traj.observations[t + 1]);
            let label = match src {
                None => traj.actions[t].to_vec(),
                Some(src) => traj.actions[t]
                    .iter()
                    .zip(src[t].iter())
                    .map(|(a, s)| a - s)
                    .collect(),
            };
            out.push(InvSample { input, label });
        }
    }
    Ok(out)
}

pub fn write_samples<W: Write>(mut out: W, samples: &[InvSample]) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_samples<R: BufRead>(input: R) -> Result<Vec<InvSample>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    /// Trailing fraction of the dataset held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            epochs: 40,
            batch: 128,
            adam: AdamConfig::default(),
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, reason: &str| {
            Err(Error::InvalidParam {
                name: name.into(),
                reason: reason.into(),
            })
        };
        if self.batch == 0 {
            return bad("batch", "must be >= 1");
        }
        if self.hidden.contains(&0) {
            return bad("hidden", "layer sizes must be >= 1");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction", "must lie in [0, 1)");
        }
        if !(self.adam.lr > 0.0) {
            return bad("lr", "must be > 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseModel {
    pub mlp: Mlp,
    pub normalizer: Normalizer,
    pub window: usize,
    pub mode: Mode,
    pub obs_dim: usize,
    pub act_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch (`0.5 * squared error` per sample).
    pub epoch_loss: Vec<f64>,
    /// Mean squared error per label entry on the training part.
    pub train_mse: f64,
    /// Same on the held-out tail; `None` when nothing was held out.
    pub val_mse: Option<f64>,
    /// Mean per-dimension label variance of the training part.
    pub label_variance: f64,
    pub train_samples: usize,
}

impl InverseModel {
    /// Freshly initialized model whose output layer is zero, so it predicts
    /// the zero action (direct) or no correction (correction mode).
    pub fn untrained(
        mode: Mode,
        window: usize,
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        rng: &mut RngStream,
    ) -> Result<Self> {
        let d_in = input_dim(window, obs_dim, act_dim);
        let mut dims = vec![d_in];
        dims.extend_from_slice(hidden);
        dims.push(act_dim);
        let mut mlp = Mlp::new(&dims, rng)?;
        mlp.zero_output_layer();
        Ok(Self {
            mlp,
            normalizer: Normalizer::identity(d_in),
            window,
            mode,
            obs_dim,
            act_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        input_dim(self.window, self.obs_dim, self.act_dim)
    }

    /// Raw network output for one flattened input.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "inverse model input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        self.mlp.forward(&self.normalizer.normalize(input))
    }

    /// Action that should take the system from the window's latest
    /// observation to `next`, clipped to the actuator range.
    pub fn query(&self, w: &Window, next: &Observation, a_source: Option<&Action>) -> Result<Action> {
        if w.size() != self.window {
            return Err(Error::Shape {
                context: "query window",
                expected: self.window,
                got: w.size(),
            });
        }
        let out = self.predict(&sample_input(w, next))?;
        let raw: Vec<f64> = match self.mode {
            Mode::Direct => out,
            Mode::Correction => {
                let src = a_source.ok_or(Error::InvalidParam {
                    name: "a_source".into(),
                    reason: "required in correction mode".into(),
                })?;
                if src.len() != self.act_dim {
                    return Err(Error::Shape {
                        context: "source action",
                        expected: self.act_dim,
                        got: src.len(),
                    });
                }
                src.iter().zip(&out).map(|(s, c)| s + c).collect()
            }
        };
        Ok(Action::new(raw).clipped())
    }

    pub fn save_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    pub fn load_json<R: std::io::Read>(input: R) -> Result<Self> {
        let m: Self = serde_json::from_reader(input)?;
        if m.mlp.input_dim() != m.input_dim() || m.mlp.output_dim() != m.act_dim {
            return Err(Error::Config("checkpoint network shape disagrees with its window".into()));
        }
        Ok(m)
    }
}

fn columns(samples: &[InvSample], f: impl Fn(&InvSample) -> Vec<f64>, rows: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, samples.len());
    for (c, s) in samples.iter().enumerate() {
        m.set_column(c, &nalgebra::DVector::from_vec(f(s)));
    }
    m
}

fn gather(src: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let rows = src.nrows();
    let mut out = DMatrix::zeros(rows, idx.len());
    for (c, &i) in idx.iter().enumerate() {
        out.column_mut(c).copy_from(&src.column(i));
    }
    out
}

/// Fit a fresh model: the normalizer on all inputs, then Adam on
/// shuffled minibatches of the training part.
pub fn train(
    dataset: &[InvSample],
    mode: Mode,
    window: usize,
    obs_dim: usize,
    act_dim: usize,
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<(InverseModel, TrainReport)> {
    let model = InverseModel::untrained(mode, window, obs_dim, act_dim, &cfg.hidden, rng)?;
    train_from(model, dataset, cfg, rng)
}

/// Continue training `model` on `dataset`. The normalizer is refit on the
/// dataset's inputs before any gradient step.
pub fn train_from(
    mut model: InverseModel,
    dataset: &[InvSample],
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<(InverseModel, TrainReport)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    let d_in = model.input_dim();
    let d_out = model.act_dim;
    for s in dataset {
        if s.input.len() != d_in {
            return Err(Error::Shape {
                context: "sample input",
                expected: d_in,
                got: s.input.len(),
            });
        }
        if s.label.len() != d_out {
            return Err(Error::Shape {
                context: "sample label",
                expected: d_out,
                got: s.label.len(),
            });
        }
    }
    let inputs: Vec<&[f64]> = dataset.iter().map(|s| s.input.as_slice()).collect();
    model.normalizer = Normalizer::fit(&inputs)?;

    let n_val = ((dataset.len() as f64) * cfg.val_fraction).floor() as usize;
    let n_val = if n_val >= dataset.len() { 0 } else { n_val };
    let (train_part, val_part) = dataset.split_at(dataset.len() - n_val);

    let norm = &model.normalizer;
    let xs = columns(train_part, |s| norm.normalize(&s.input), d_in);
    let ys = columns(train_part, |s| s.label.clone(), d_out);

    let mut adam = AdamState::new(&model.mlp, cfg.adam);
    let mut order: Vec<usize> = (0..train_part.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let bx = gather(&xs, chunk);
            let by = gather(&ys, chunk);
            let (loss, g) = model.mlp.grad_mse(&bx, &by)?;
            adam_step(&mut model.mlp, &g, &mut adam);
            total += loss * chunk.len() as f64;
        }
        epoch_loss.push(total / train_part.len() as f64);
    }
    if !model.mlp.is_finite() {
        return Err(Error::NonFinite("inverse model training"));
    }

    let per_entry = |x: &DMatrix<f64>, y: &DMatrix<f64>| {
        2.0 * model.mlp.mse(x, y) / d_out as f64
    };
    let train_mse = per_entry(&xs, &ys);
    let val_mse = (!val_part.is_empty()).then(|| {
        let vx = columns(val_part, |s| norm.normalize(&s.input), d_in);
        let vy = columns(val_part, |s| s.label.clone(), d_out);
        per_entry(&vx, &vy)
    });
    let label_variance = label_variance(train_part);
    let report = TrainReport {
        epoch_loss,
        train_mse,
        val_mse,
        label_variance,
        train_samples: train_part.len(),
    };
    Ok((model, report))
}

/// Mean over label dimensions of the population variance.
pub fn label_variance(samples: &[InvSample]) -> f64 {
    let Some(first) = samples.first() else {
        return 0.0;
    };
    let d = first.label.len();
    let n = samples.len() as f64;
    let mut total = 0.0;
    for k in 0..d {
        let mean = samples.iter().map(|s| s.label[k]).sum::<f64>() / n;
        total += samples.iter().map(|s| (s.label[k] - mean).powi(2)).sum::<f64>() / n;
    }
    total / d as f64
}
