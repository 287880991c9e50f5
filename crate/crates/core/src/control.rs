//! Iterative LQR with finite-difference linearization, and a receding-horizon
//! wrapper around it.
//!
//! Dynamics are time-indexed: `next(t, o, a)` maps the observation at control
//! step `t` to the one at `t + 1`. Most models ignore `t`; the bouncer needs it
//! because its reference signal is a function of time.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Action, Observation};
use crate::error::{Error, Result};

pub trait DynamicsFn {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn next(&self, t: usize, obs: &[f64], action: &[f64]) -> Vec<f64>;
}

impl<D: DynamicsFn + ?Sized> DynamicsFn for &D {
    fn obs_dim(&self) -> usize {
        (**self).obs_dim()
    }
    fn act_dim(&self) -> usize {
        (**self).act_dim()
    }
    fn next(&self, t: usize, obs: &[f64], action: &[f64]) -> Vec<f64> {
        (**self).next(t, obs, action)
    }
}

/// `o' = A o + B a + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl LinearDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        let n = a.nrows();
        Self {
            a,
            b,
            c: DVector::zeros(n),
        }
    }
}

impl DynamicsFn for LinearDynamics {
    fn obs_dim(&self) -> usize {
        self.a.nrows()
    }
    fn act_dim(&self) -> usize {
        self.b.ncols()
    }
    fn next(&self, _t: usize, obs: &[f64], action: &[f64]) -> Vec<f64> {
        let o = DVector::from_column_slice(obs);
        let a = DVector::from_column_slice(action);
        (&self.a * o + &self.b * a + &self.c).as_slice().to_vec()
    }
}

/// `c(o, a) = (o - o*)' Q (o - o*) + a' R a` per step, `(o - o*)' Qf (o - o*)`
/// at the end of the horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    pub target: DVector<f64>,
}

impl QuadCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, qf: DMatrix<f64>, target: DVector<f64>) -> Self {
        Self { q, r, qf, target }
    }

    pub fn stage(&self, o: &DVector<f64>, a: &DVector<f64>) -> f64 {
        let e = o - &self.target;
        e.dot(&(&self.q * &e)) + a.dot(&(&self.r * a))
    }

    pub fn terminal(&self, o: &DVector<f64>) -> f64 {
        let e = o - &self.target;
        e.dot(&(&self.qf * &e))
    }

    pub fn validate(&self, obs_dim: usize, act_dim: usize) -> Result<()> {
        let shapes = [
            ("cost Q", self.q.shape(), (obs_dim, obs_dim)),
            ("cost Qf", self.qf.shape(), (obs_dim, obs_dim)),
            ("cost R", self.r.shape(), (act_dim, act_dim)),
        ];
        for (context, got, want) in shapes {
            if got != want {
                return Err(Error::Shape {
                    context,
                    expected: want.0,
                    got: got.0,
                });
            }
        }
        if self.target.len() != obs_dim {
            return Err(Error::Shape {
                context: "cost target",
                expected: obs_dim,
                got: self.target.len(),
            });
        }
        if self.r.clone().cholesky().is_none() {
            return Err(Error::InvalidParam {
                name: "R".into(),
                reason: "must be positive definite".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IlqrConfig {
    pub horizon: usize,
    pub max_iters: usize,
    pub mu_init: f64,
    pub mu_factor: f64,
    pub mu_max: f64,
    /// Line search tries `alpha = 1, 1/2, ..., 2^-line_search_steps`.
    pub line_search_steps: u32,
    /// Relative cost decrease below which iteration stops.
    pub tol: f64,
    pub fd_step: f64,
}

impl Default for IlqrConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            max_iters: 50,
            mu_init: 1e-6,
            mu_factor: 10.0,
            mu_max: 1e10,
            line_search_steps: 10,
            tol: 1e-6,
            fd_step: 1e-5,
        }
    }
}

impl IlqrConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, reason: &str| {
            Err(Error::InvalidParam {
                name: name.into(),
                reason: reason.into(),
            })
        };
        if self.horizon == 0 {
            return bad("horizon", "must be >= 1");
        }
        if !(self.fd_step > 0.0) {
            return bad("fd_step", "must be > 0");
        }
        if !(self.mu_factor > 1.0) {
            return bad("mu_factor", "must be > 1");
        }
        Ok(())
    }
}

/// Central-difference Jacobians `(A, B)` of `f` at `(o, a)`.
pub fn linearize<D: DynamicsFn + ?Sized>(
    f: &D,
    t: usize,
    o: &[f64],
    a: &[f64],
    h: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = o.len();
    let m = a.len();
    let mut jac_a = DMatrix::zeros(n, n);
    let mut jac_b = DMatrix::zeros(n, m);
    let mut x = o.to_vec();
    for i in 0..n {
        x[i] = o[i] + h;
        let plus = f.next(t, &x, a);
        x[i] = o[i] - h;
        let minus = f.next(t, &x, a);
        x[i] = o[i];
        fill_column(&mut jac_a, i, &plus, &minus, h)?;
    }
    let mut u = a.to_vec();
    for j in 0..m {
        u[j] = a[j] + h;
        let plus = f.next(t, o, &u);
        u[j] = a[j] - h;
        let minus = f.next(t, o, &u);
        u[j] = a[j];
        fill_column(&mut jac_b, j, &plus, &minus, h)?;
    }
    Ok((jac_a, jac_b))
}

fn fill_column(m: &mut DMatrix<f64>, col: usize, plus: &[f64], minus: &[f64], h: f64) -> Result<()> {
    if plus.len() != m.nrows() || minus.len() != m.nrows() {
        return Err(Error::Shape {
            context: "dynamics output",
            expected: m.nrows(),
            got: plus.len(),
        });
    }
    for r in 0..m.nrows() {
        let d = (plus[r] - minus[r]) / (2.0 * h);
        if !d.is_finite() {
            return Err(Error::NonFinite("dynamics during linearization"));
        }
        m[(r, col)] = d;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct IlqrResult {
    pub actions: Vec<Action>,
    /// Feedback gains `K_k`, applied as `u = u*_k + K_k (o - o*_k)`.
    pub gains: Vec<DMatrix<f64>>,
    /// Nominal observations `o*_0 ..= o*_N` under `actions`.
    pub states: Vec<DVector<f64>>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after initialization and after every accepted step.
    pub cost_history: Vec<f64>,
}

fn clip(u: &DVector<f64>) -> DVector<f64> {
    u.map(|x| x.clamp(-1.0, 1.0))
}

fn step<D: DynamicsFn + ?Sized>(f: &D, t: usize, o: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(f.next(t, o.as_slice(), u.as_slice()))
}

/// Open-loop rollout with clipped actions; returns states and total cost.
fn rollout<D: DynamicsFn + ?Sized>(
    f: &D,
    c: &QuadCost,
    t0: usize,
    o0: &DVector<f64>,
    us: &[DVector<f64>],
) -> (Vec<DVector<f64>>, f64) {
    let mut xs = Vec::with_capacity(us.len() + 1);
    xs.push(o0.clone());
    let mut cost = 0.0;
    for (k, u) in us.iter().enumerate() {
        let x = &xs[k];
        cost += c.stage(x, u);
        let next = step(f, t0 + k, x, u);
        xs.push(next);
    }
    cost += c.terminal(xs.last().unwrap());
    (xs, cost)
}

struct Backward {
    ff: Vec<DVector<f64>>,
    gains: Vec<DMatrix<f64>>,
    /// Expected decrease model `d1 * alpha + d2 * alpha^2 / 2`.
    d1: f64,
    d2: f64,
}

fn backward_pass(
    c: &QuadCost,
    xs: &[DVector<f64>],
    us: &[DVector<f64>],
    jac: &[(DMatrix<f64>, DMatrix<f64>)],
    mu: f64,
) -> Option<Backward> {
    let n_steps = us.len();
    let m = us[0].len();
    let mut vx = 2.0 * &c.qf * (&xs[n_steps] - &c.target);
    let mut vxx = 2.0 * &c.qf;
    let mut ff = vec![DVector::zeros(m); n_steps];
    let mut gains = vec![DMatrix::zeros(m, xs[0].len()); n_steps];
    let (mut d1, mut d2) = (0.0, 0.0);
    for k in (0..n_steps).rev() {
        let (a, b) = &jac[k];
        let at = a.transpose();
        let bt = b.transpose();
        let lx = 2.0 * &c.q * (&xs[k] - &c.target);
        let lu = 2.0 * &c.r * &us[k];
        let qx = lx + &at * &vx;
        let qu = lu + &bt * &vx;
        let bt_vxx = &bt * &vxx;
        let qxx = 2.0 * &c.q + &at * &vxx * a;
        let mut quu = 2.0 * &c.r + &bt_vxx * b;
        let qux = &bt_vxx * a;
        for i in 0..m {
            quu[(i, i)] += mu;
        }
        let chol = quu.clone().cholesky()?;
        let k_ff = -chol.solve(&qu);
        let k_fb = -chol.solve(&qux);
        d1 += k_ff.dot(&qu);
        d2 += k_ff.dot(&(&quu * &k_ff));
        let kt = k_fb.transpose();
        vx = &qx + &kt * &quu * &k_ff + &kt * &qu + qux.transpose() * &k_ff;
        vxx = &qxx + &kt * &quu * &k_fb + &kt * &qux + qux.transpose() * &k_fb;
        vxx = 0.5 * (&vxx + vxx.transpose());
        ff[k] = k_ff;
        gains[k] = k_fb;
    }
    Some(Backward { ff, gains, d1, d2 })
}

/// Optimize an action sequence of length `cfg.horizon` from `o0`, which is
/// the observation at control step `t0`.
pub fn ilqr<D: DynamicsFn + ?Sized>(
    f: &D,
    c: &QuadCost,
    o0: &Observation,
    t0: usize,
    u_init: &[Action],
    cfg: &IlqrConfig,
) -> Result<IlqrResult> {
    cfg.validate()?;
    let n = f.obs_dim();
    let m = f.act_dim();
    if o0.len() != n {
        return Err(Error::Shape {
            context: "iLQR initial observation",
            expected: n,
            got: o0.len(),
        });
    }
    if u_init.len() != cfg.horizon {
        return Err(Error::Shape {
            context: "iLQR initial action sequence",
            expected: cfg.horizon,
            got: u_init.len(),
        });
    }
    if let Some(bad) = u_init.iter().find(|u| u.len() != m) {
        return Err(Error::Shape {
            context: "iLQR action",
            expected: m,
            got: bad.len(),
        });
    }
    c.validate(n, m)?;

    let x0 = DVector::from_column_slice(o0.as_slice());
    let mut us: Vec<DVector<f64>> = u_init
        .iter()
        .map(|u| clip(&DVector::from_column_slice(u.as_slice())))
        .collect();
    let (mut xs, mut cost) = rollout(f, c, t0, &x0, &us);
    if !cost.is_finite() {
        return Err(Error::NonFinite("iLQR initial rollout"));
    }
    let mut history = vec![cost];
    let mut mu = cfg.mu_init;
    let mut gains = vec![DMatrix::zeros(m, n); cfg.horizon];
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < cfg.max_iters {
        iterations += 1;
        let jac = xs[..cfg.horizon]
            .iter()
            .zip(&us)
            .enumerate()
            .map(|(k, (x, u))| linearize(f, t0 + k, x.as_slice(), u.as_slice(), cfg.fd_step))
            .collect::<Result<Vec<_>>>()?;

        let bw = loop {
            match backward_pass(c, &xs, &us, &jac, mu) {
                Some(bw) => break bw,
                None => {
                    mu *= cfg.mu_factor;
                    if mu > cfg.mu_max {
                        break 'outer;
                    }
                }
            }
        };
        gains.clone_from(&bw.gains);

        let expected_full = -(bw.d1 + 0.5 * bw.d2);
        let negligible = expected_full <= cfg.tol * cost.abs() + 1e-14;
        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..=cfg.line_search_steps {
            let mut x = x0.clone();
            let mut new_xs = Vec::with_capacity(cfg.horizon + 1);
            let mut new_us = Vec::with_capacity(cfg.horizon);
            let mut new_cost = 0.0;
            for k in 0..cfg.horizon {
                let dx = &x - &xs[k];
                let u = clip(&(&us[k] + alpha * &bw.ff[k] + &bw.gains[k] * dx));
                new_cost += c.stage(&x, &u);
                let next = step(f, t0 + k, &x, &u);
                new_xs.push(std::mem::replace(&mut x, next));
                new_us.push(u);
            }
            new_cost += c.terminal(&x);
            new_xs.push(x);
            let improves = if negligible {
                new_cost <= cost
            } else {
                new_cost < cost
            };
            if new_cost.is_finite() && improves {
                accepted = Some((new_xs, new_us, new_cost));
                break;
            }
            if negligible {
                break;
            }
            alpha *= 0.5;
        }

        match accepted {
            Some((new_xs, new_us, new_cost)) => {
                let rel = (cost - new_cost) / cost.abs().max(1e-300);
                xs = new_xs;
                us = new_us;
                cost = new_cost;
                history.push(cost);
                mu = (mu / cfg.mu_factor).max(cfg.mu_init);
                if negligible || rel < cfg.tol {
                    converged = true;
                    break;
                }
            }
            None if negligible => {
                converged = true;
                break;
            }
            None => {
                mu *= cfg.mu_factor;
                if mu > cfg.mu_max {
                    break;
                }
            }
        }
    }

    Ok(IlqrResult {
        actions: us.into_iter().map(|u| Action::new(u.as_slice().to_vec())).collect(),
        gains,
        states: xs,
        cost,
        iterations,
        converged,
        cost_history: history,
    })
}

#[derive(Clone, Debug)]
pub struct MpcStep {
    pub action: Action,
    /// Shifted plan for the next call, last action repeated.
    pub warm: Vec<Action>,
    pub converged: bool,
}

/// One receding-horizon step from observation `o` at control step `t`.
pub fn mpc_action<D: DynamicsFn + ?Sized>(
    f: &D,
    c: &QuadCost,
    o: &Observation,
    t: usize,
    warm: &[Action],
    cfg: &IlqrConfig,
) -> Result<MpcStep> {
    let res = ilqr(f, c, o, t, warm, cfg)?;
    let action = res.actions[0].clone();
    let mut next_warm: Vec<Action> = res.actions[1..].to_vec();
    next_warm.push(res.actions.last().unwrap().clone());
    Ok(MpcStep {
        action,
        warm: next_warm,
        converged: res.converged,
    })
}

/// Stateful receding-horizon controller over a fixed model and cost.
#[derive(Clone, Debug)]
pub struct Mpc<D> {
    pub model: D,
    pub cost: QuadCost,
    pub cfg: IlqrConfig,
    warm: Vec<Action>,
}

impl<D: DynamicsFn> Mpc<D> {
    pub fn new(model: D, cost: QuadCost, cfg: IlqrConfig) -> Self {
        let warm = vec![Action::zeros(model.act_dim()); cfg.horizon];
        Self {
            model,
            cost,
            cfg,
            warm,
        }
    }

    pub fn reset(&mut self) {
        self.warm = vec![Action::zeros(self.model.act_dim()); self.cfg.horizon];
    }

    pub fn act(&mut self, o: &Observation, t: usize) -> Result<Action> {
        let out = mpc_action(&self.model, &self.cost, o, t, &self.warm, &self.cfg)?;
        if !out.converged {
            log::debug!("MPC step {t}: iLQR stopped before convergence");
        }
        self.warm = out.warm;
        Ok(out.action)
    }
}
