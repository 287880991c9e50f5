//! Dense ReLU networks with exact gradients, Adam, and input z-scoring.
//!
//! Batches are stored one sample per column, so a layer is a single GEMM.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const STD_FLOOR: f64 = 1e-6;

/// Fully connected network; ReLU on hidden layers, identity on the output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "MlpRecord", try_from = "MlpRecord")]
pub struct Mlp {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

/// Checkpoint layout: dims plus row-major weights.
#[derive(Serialize, Deserialize)]
struct MlpRecord {
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl From<Mlp> for MlpRecord {
    fn from(m: Mlp) -> Self {
        MlpRecord {
            dims: m.dims(),
            weights: m
                .weights
                .iter()
                .map(|w| w.transpose().as_slice().to_vec())
                .collect(),
            biases: m.biases.iter().map(|b| b.as_slice().to_vec()).collect(),
        }
    }
}

impl TryFrom<MlpRecord> for Mlp {
    type Error = Error;

    fn try_from(r: MlpRecord) -> Result<Self> {
        let layers = r.dims.len().saturating_sub(1);
        if layers == 0 || r.weights.len() != layers || r.biases.len() != layers {
            return Err(Error::Config("checkpoint layer count does not match dims".into()));
        }
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for (i, (w, b)) in r.weights.iter().zip(&r.biases).enumerate() {
            let (rows, cols) = (r.dims[i + 1], r.dims[i]);
            if w.len() != rows * cols || b.len() != rows {
                return Err(Error::Config(format!("checkpoint layer {i} has wrong size")));
            }
            weights.push(DMatrix::from_row_slice(rows, cols, w));
            biases.push(DVector::from_column_slice(b));
        }
        Ok(Mlp { weights, biases })
    }
}

/// Gradients (or any other per-parameter quantity) shaped like an [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Grads {
    pub fn zeros_like(m: &Mlp) -> Self {
        Self {
            weights: m.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            biases: m.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| w.amax())
            .chain(self.biases.iter().map(|b| b.amax()))
            .fold(0.0, f64::max)
    }
}

impl Mlp {
    /// Uniform Glorot initialization, zero biases.
    pub fn new(dims: &[usize], rng: &mut RngStream) -> Result<Self> {
        let mut m = Self::zeros(dims)?;
        for w in &mut m.weights {
            let limit = (6.0 / (w.nrows() + w.ncols()) as f64).sqrt();
            // Row-major fill so the draw order matches the checkpoint layout.
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    w[(r, c)] = rng.uniform(-limit, limit);
                }
            }
        }
        Ok(m)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidParam {
                name: "layer sizes".into(),
                reason: format!("need at least two positive sizes, got {dims:?}"),
            });
        }
        Ok(Self {
            weights: dims.windows(2).map(|d| DMatrix::zeros(d[1], d[0])).collect(),
            biases: dims[1..].iter().map(|&d| DVector::zeros(d)).collect(),
        })
    }

    /// Set the last layer to zero so the network outputs zero everywhere.
    pub fn zero_output_layer(&mut self) {
        self.weights.last_mut().unwrap().fill(0.0);
        self.biases.last_mut().unwrap().fill(0.0);
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.weights[0].ncols()];
        d.extend(self.weights.iter().map(|w| w.nrows()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().unwrap().nrows()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "network input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let xs = DMatrix::from_column_slice(x.len(), 1, x);
        Ok(self.forward_batch(&xs).as_slice().to_vec())
    }

    /// Forward pass over a batch, one sample per column.
    pub fn forward_batch(&self, xs: &DMatrix<f64>) -> DMatrix<f64> {
        let last = self.weights.len() - 1;
        let mut h = xs.clone();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * &h;
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if i < last {
                z.apply(|v| *v = v.max(0.0));
            }
            h = z;
        }
        h
    }

    /// Loss `mean_b 0.5 * |f(x_b) - y_b|^2` and its exact gradient.
    pub fn grad_mse(&self, xs: &DMatrix<f64>, ys: &DMatrix<f64>) -> Result<(f64, Grads)> {
        let batch = xs.ncols();
        if batch == 0 {
            return Err(Error::Empty("gradient batch"));
        }
        if xs.nrows() != self.input_dim() {
            return Err(Error::Shape {
                context: "batch inputs",
                expected: self.input_dim(),
                got: xs.nrows(),
            });
        }
        if ys.nrows() != self.output_dim() || ys.ncols() != batch {
            return Err(Error::Shape {
                context: "batch targets",
                expected: self.output_dim(),
                got: ys.nrows(),
            });
        }
        let layers = self.weights.len();
        // activations[i] is the input to layer i; the last entry is the output.
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(xs.clone());
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * &activations[i];
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if i + 1 < layers {
                z.apply(|v| *v = v.max(0.0));
            }
            activations.push(z);
        }
        let inv_b = 1.0 / batch as f64;
        let mut delta = (&activations[layers] - ys) * inv_b;
        let loss = 0.5 * delta.norm_squared() / inv_b;

        let mut g = Grads::zeros_like(self);
        for i in (0..layers).rev() {
            g.weights[i] = &delta * activations[i].transpose();
            g.biases[i] = delta.column_sum();
            if i > 0 {
                let mut back = self.weights[i].transpose() * &delta;
                // ReLU derivative from the post-activation: positive iff active.
                back.zip_apply(&activations[i], |d, a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        Ok((loss, g))
    }

    /// Mean loss over a batch without gradients.
    pub fn mse(&self, xs: &DMatrix<f64>, ys: &DMatrix<f64>) -> f64 {
        let out = self.forward_batch(xs);
        0.5 * (out - ys).norm_squared() / xs.ncols().max(1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub m: Grads,
    pub v: Grads,
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &Mlp, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: Grads::zeros_like(model),
            v: Grads::zeros_like(model),
            t: 0,
        }
    }
}

/// Bias-corrected Adam update of one parameter tensor. `t` is the step
/// count after incrementing (starts at 1).
pub fn adam_update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &AdamConfig) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

pub fn adam_step(model: &mut Mlp, g: &Grads, s: &mut AdamState) {
    s.t += 1;
    let t = s.t;
    for i in 0..model.weights.len() {
        adam_update(
            model.weights[i].as_mut_slice(),
            g.weights[i].as_slice(),
            s.m.weights[i].as_mut_slice(),
            s.v.weights[i].as_mut_slice(),
            t,
            &s.cfg,
        );
        adam_update(
            model.biases[i].as_mut_slice(),
            g.biases[i].as_slice(),
            s.m.biases[i].as_mut_slice(),
            s.v.biases[i].as_mut_slice(),
            t,
            &s.cfg,
        );
    }
}

/// Per-dimension z-scoring with population statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit<V: AsRef<[f64]>>(inputs: &[V]) -> Result<Self> {
        let first = inputs.first().ok_or(Error::Empty("normalizer inputs"))?;
        let dim = first.as_ref().len();
        let n = inputs.len() as f64;
        let mut mean = vec![0.0; dim];
        for x in inputs {
            let x = x.as_ref();
            if x.len() != dim {
                return Err(Error::Shape {
                    context: "normalizer input",
                    expected: dim,
                    got: x.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for x in inputs {
            for ((s, v), m) in var.iter_mut().zip(x.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (x[i] - self.mean[i]) / self.std[i];
        }
    }
}
