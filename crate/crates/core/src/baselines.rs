//! Adaptive-MPC comparison policies.
//!
//! Output Error Control adds a decayed running estimate of the one-step
//! prediction error to the source model. Gaussian Dynamics Adaptation keeps
//! a joint Gaussian over `(o, a, o')`, seeded from the source simulator and
//! updated from observed target transitions, and plans against its
//! conditional linear model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::{mpc_action, DynamicsFn, IlqrConfig, QuadCost};
use crate::data::{Action, Observation, Trajectory};
use crate::envs::{task_cost, EnvParams, ExpertConfig, SimModel};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// OEC error decay weight.
    pub gamma: f64,
    /// GDA forgetting weight.
    pub forget: f64,
    /// Ridge added to joint covariances.
    pub lambda: f64,
    pub prior_samples: usize,
    /// Std of the observation perturbations used to build the prior.
    pub prior_std: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            gamma: 0.2,
            forget: 0.05,
            lambda: 1e-6,
            prior_samples: 200,
            prior_std: 0.1,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, reason: &str| {
            Err(Error::InvalidParam {
                name: name.into(),
                reason: reason.into(),
            })
        };
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", "must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.forget) {
            return bad("forget", "must lie in [0, 1]");
        }
        if !(self.lambda > 0.0) {
            return bad("lambda", "must be > 0");
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Output Error Control

#[derive(Clone, Debug, PartialEq)]
pub struct OecState {
    pub e: Vec<f64>,
    pub gamma: f64,
}

impl OecState {
    pub fn new(obs_dim: usize, gamma: f64) -> Self {
        Self {
            e: vec![0.0; obs_dim],
            gamma,
        }
    }
}

/// `e <- (1 - gamma) e + gamma (o_t - T_source(o_{t-1}, a_{t-1}))`, where
/// `t_prev` is the control step of `o_prev`.
pub fn oec_update<D: DynamicsFn + ?Sized>(
    s: &OecState,
    o_t: &[f64],
    o_prev: &[f64],
    a_prev: &[f64],
    t_prev: usize,
    source: &D,
) -> OecState {
    let predicted = source.next(t_prev, o_prev, a_prev);
    let e = s
        .e
        .iter()
        .zip(o_t.iter().zip(&predicted))
        .map(|(e, (o, p))| (1.0 - s.gamma) * e + s.gamma * (o - p))
        .collect();
    OecState { e, gamma: s.gamma }
}

/// Source model shifted by a constant offset.
#[derive(Clone, Debug)]
pub struct OffsetDynamics<'a, D> {
    pub base: &'a D,
    pub offset: &'a [f64],
}

impl<D: DynamicsFn> DynamicsFn for OffsetDynamics<'_, D> {
    fn obs_dim(&self) -> usize {
        self.base.obs_dim()
    }
    fn act_dim(&self) -> usize {
        self.base.act_dim()
    }
    fn next(&self, t: usize, obs: &[f64], action: &[f64]) -> Vec<f64> {
        let mut o = self.base.next(t, obs, action);
        for (x, e) in o.iter_mut().zip(self.offset) {
            *x += e;
        }
        o
    }
}

#[derive(Clone, Debug)]
pub struct OecPolicy {
    source: SimModel,
    cost: QuadCost,
    ilqr: IlqrConfig,
    state: OecState,
    warm: Vec<Action>,
}

impl OecPolicy {
    pub fn new(source: &EnvParams, expert: &ExpertConfig, cfg: &BaselineConfig) -> Self {
        Self {
            source: SimModel::new(source),
            cost: task_cost(source.kind, expert),
            ilqr: expert.ilqr.clone(),
            state: OecState::new(source.obs_dim(), cfg.gamma),
            warm: vec![Action::zeros(source.act_dim()); expert.ilqr.horizon],
        }
    }

    pub fn error(&self) -> &[f64] {
        &self.state.e
    }
}

impl Policy for OecPolicy {
    fn reset(&mut self) {
        self.state = OecState::new(self.source.obs_dim(), self.state.gamma);
        self.warm = vec![Action::zeros(self.source.act_dim()); self.ilqr.horizon];
    }

    fn act(&mut self, traj: &Trajectory) -> Result<Action> {
        let t = traj.len();
        if t > 0 {
            self.state = oec_update(
                &self.state,
                &traj.observations[t],
                &traj.observations[t - 1],
                &traj.actions[t - 1],
                t - 1,
                &self.source,
            );
        }
        let adapted = OffsetDynamics {
            base: &self.source,
            offset: &self.state.e,
        };
        let out = mpc_action(&adapted, &self.cost, traj.last_observation(), t, &self.warm, &self.ilqr)?;
        self.warm = out.warm;
        Ok(out.action)
    }
}

// ---------------------------------------------------------------------------
// Gaussian Dynamics Adaptation

/// Gaussian over `z = (o_t, a_t, o_{t+1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub forget: f64,
    pub lambda: f64,
}

/// `o' = F [o; a] + f` with residual covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianDynamics {
    pub f: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub residual: DMatrix<f64>,
}

impl DynamicsFn for LinearGaussianDynamics {
    fn obs_dim(&self) -> usize {
        self.f.nrows()
    }
    fn act_dim(&self) -> usize {
        self.f.ncols() - self.f.nrows()
    }
    fn next(&self, _t: usize, obs: &[f64], action: &[f64]) -> Vec<f64> {
        let x = DVector::from_iterator(obs.len() + action.len(), obs.iter().chain(action).copied());
        (&self.f * x + &self.offset).as_slice().to_vec()
    }
}

/// Empirical Gaussian of source transitions around `center`: observations
/// `~ N(center, prior_std^2 I)`, actions uniform on `[-1, 1]`.
pub fn gda_prior<D: DynamicsFn + ?Sized>(
    source: &D,
    t: usize,
    center: &[f64],
    cfg: &BaselineConfig,
    rng: &mut RngStream,
) -> Result<JointGaussian> {
    let n = source.obs_dim();
    let m = source.act_dim();
    let dim = 2 * n + m;
    if cfg.prior_samples < dim + 2 {
        return Err(Error::InvalidParam {
            name: "prior_samples".into(),
            reason: format!("need at least {} for a {dim}-dimensional joint", dim + 2),
        });
    }
    let mut zs = DMatrix::zeros(dim, cfg.prior_samples);
    for k in 0..cfg.prior_samples {
        let o: Vec<f64> = center.iter().map(|c| c + cfg.prior_std * rng.normal()).collect();
        let a: Vec<f64> = (0..m).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let next = source.next(t, &o, &a);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("source model while sampling the prior"));
        }
        for (r, v) in o.iter().chain(&a).chain(&next).enumerate() {
            zs[(r, k)] = *v;
        }
    }
    let mean = zs.column_mean();
    let mut centered = zs;
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let mut cov = &centered * centered.transpose() / cfg.prior_samples as f64;
    for i in 0..dim {
        cov[(i, i)] += cfg.lambda;
    }
    Ok(JointGaussian {
        mean,
        cov,
        forget: cfg.forget,
        lambda: cfg.lambda,
    })
}

/// Exponentially weighted update with one observed transition.
pub fn gda_update(g: &JointGaussian, z: &[f64]) -> JointGaussian {
    let w = g.forget;
    let z = DVector::from_column_slice(z);
    let mean = (1.0 - w) * &g.mean + w * &z;
    let d = &z - &mean;
    let mut cov = (1.0 - w) * &g.cov + w * &d * d.transpose();
    for i in 0..cov.nrows() {
        cov[(i, i)] += g.lambda;
    }
    let cov = 0.5 * (&cov + cov.transpose());
    JointGaussian {
        mean,
        cov,
        forget: g.forget,
        lambda: g.lambda,
    }
}

/// Condition on `(o, a)` to get the linear-Gaussian model of `o'`.
pub fn gda_condition(g: &JointGaussian, obs_dim: usize, act_dim: usize) -> Result<LinearGaussianDynamics> {
    let nx = obs_dim + act_dim;
    let dim = nx + obs_dim;
    if g.mean.len() != dim || g.cov.shape() != (dim, dim) {
        return Err(Error::Shape {
            context: "joint Gaussian",
            expected: dim,
            got: g.mean.len(),
        });
    }
    let sxx = g.cov.view((0, 0), (nx, nx)).into_owned();
    let sxy = g.cov.view((0, nx), (nx, obs_dim)).into_owned();
    let syy = g.cov.view((nx, nx), (obs_dim, obs_dim)).into_owned();
    let chol = match sxx.clone().cholesky() {
        Some(c) => c,
        None => {
            let ridge = 10.0 * g.lambda;
            let mut reg = sxx;
            for i in 0..nx {
                reg[(i, i)] += ridge;
            }
            reg.cholesky().ok_or(Error::NotPositiveDefinite(ridge))?
        }
    };
    // F' = Sxx^-1 Sxy
    let f = chol.solve(&sxy).transpose();
    let mu_x = g.mean.rows(0, nx).into_owned();
    let mu_y = g.mean.rows(nx, obs_dim).into_owned();
    let offset = mu_y - &f * mu_x;
    let residual = syy - &f * &sxy;
    Ok(LinearGaussianDynamics {
        f,
        offset,
        residual: 0.5 * (&residual + residual.transpose()),
    })
}

#[derive(Clone, Debug)]
pub struct GdaPolicy {
    source: SimModel,
    cost: QuadCost,
    ilqr: IlqrConfig,
    cfg: BaselineConfig,
    joint: Option<JointGaussian>,
    warm: Vec<Action>,
    rng: RngStream,
    episode: u64,
}

impl GdaPolicy {
    /// `rng` feeds the prior sampling; episode `k` draws from `rng.split(k)`.
    pub fn new(source: &EnvParams, expert: &ExpertConfig, cfg: &BaselineConfig, rng: RngStream) -> Self {
        Self {
            source: SimModel::new(source),
            cost: task_cost(source.kind, expert),
            ilqr: expert.ilqr.clone(),
            cfg: cfg.clone(),
            joint: None,
            warm: vec![Action::zeros(source.act_dim()); expert.ilqr.horizon],
            rng,
            episode: 0,
        }
    }
}

impl Policy for GdaPolicy {
    fn reset(&mut self) {
        self.joint = None;
        self.warm = vec![Action::zeros(self.source.act_dim()); self.ilqr.horizon];
    }

    fn act(&mut self, traj: &Trajectory) -> Result<Action> {
        let t = traj.len();
        let n = self.source.obs_dim();
        let m = self.source.act_dim();
        let joint = match self.joint.take() {
            Some(g) if t > 0 => {
                let z: Vec<f64> = traj.observations[t - 1]
                    .iter()
                    .chain(traj.actions[t - 1].iter())
                    .chain(traj.observations[t].iter())
                    .copied()
                    .collect();
                gda_update(&g, &z)
            }
            Some(g) => g,
            None => {
                let mut rng = self.rng.split(self.episode);
                self.episode += 1;
                gda_prior(&self.source, t, traj.last_observation(), &self.cfg, &mut rng)?
            }
        };
        let model = gda_condition(&joint, n, m)?;
        self.joint = Some(joint);
        let out = mpc_action(&model, &self.cost, traj.last_observation(), t, &self.warm, &self.ilqr)?;
        self.warm = out.warm;
        Ok(out.action)
    }
}

/// Observation of a `JointGaussian`'s conditional mean, for diagnostics.
pub fn predict_mean(model: &LinearGaussianDynamics, o: &Observation, a: &Action) -> Observation {
    Observation::new(model.next(0, o, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::LinearDynamics;
    use approx::assert_abs_diff_eq;

    fn spectral_rel_err(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
        let diff = (got - want).singular_values().max();
        diff / want.singular_values().max()
    }

    fn linear_plant(shift: f64) -> LinearDynamics {
        LinearDynamics {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 0.1 + shift, -0.2, 0.9 - shift]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 0.5 + shift]),
            c: DVector::from_vec(vec![shift, -shift]),
        }
    }

    fn stacked(sys: &LinearDynamics) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(2, 3);
        f.view_mut((0, 0), (2, 2)).copy_from(&sys.a);
        f.view_mut((0, 2), (2, 1)).copy_from(&sys.b);
        f
    }

    #[test]
    fn oec_full_gain_learns_offset_in_one_step() {
        let source = linear_plant(0.0);
        let c = [0.3, -0.1];
        let o_prev = [0.5, 0.2];
        let a_prev = [0.4];
        let mut o_t = source.next(0, &o_prev, &a_prev);
        o_t[0] += c[0];
        o_t[1] += c[1];
        let s = oec_update(&OecState::new(2, 1.0), &o_t, &o_prev, &a_prev, 0, &source);
        assert_abs_diff_eq!(s.e[0], c[0], epsilon = 1e-15);
        assert_abs_diff_eq!(s.e[1], c[1], epsilon = 1e-15);
        let adapted = OffsetDynamics {
            base: &source,
            offset: &s.e,
        };
        let probe = adapted.next(0, &[1.0, 1.0], &[0.0]);
        let truth = source.next(0, &[1.0, 1.0], &[0.0]);
        assert_abs_diff_eq!(probe[0], truth[0] + c[0], epsilon = 1e-15);
    }

    #[test]
    fn oec_geometric_convergence() {
        let source = linear_plant(0.0);
        let c = 0.7;
        let mut s = OecState::new(2, 0.2);
        let (o_prev, a_prev) = ([0.1, 0.1], [0.0]);
        let mut o_t = source.next(0, &o_prev, &a_prev);
        o_t.iter_mut().for_each(|v| *v += c);
        for _ in 0..10 {
            s = oec_update(&s, &o_t, &o_prev, &a_prev, 0, &source);
        }
        assert_abs_diff_eq!(s.e[0], (1.0 - 0.8f64.powi(10)) * c, epsilon = 1e-12);
        assert_abs_diff_eq!(1.0 - 0.8f64.powi(10), 0.8926, epsilon = 1e-4);
    }

    #[test]
    fn oec_matched_model_keeps_zero_error() {
        let source = linear_plant(0.0);
        let mut s = OecState::new(2, 0.2);
        let mut o = vec![0.3, -0.3];
        for k in 0..20 {
            let a = [(k as f64).sin()];
            let next = source.next(k, &o, &a);
            s = oec_update(&s, &next, &o, &a, k, &source);
            o = next;
        }
        assert!(s.e.iter().all(|e| *e == 0.0));
    }

    #[test]
    fn oec_error_is_a_convex_combination() {
        let source = linear_plant(0.0);
        let target = linear_plant(0.2);
        let mut s = OecState::new(2, 0.3);
        let mut o = vec![0.2, 0.1];
        let mut worst: f64 = 0.0;
        for k in 0..50 {
            let a = [(0.3 * k as f64).cos()];
            let next = target.next(k, &o, &a);
            let err = source.next(k, &o, &a);
            let n = next.iter().zip(&err).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(n);
            s = oec_update(&s, &next, &o, &a, k, &source);
            let e_norm = s.e.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(e_norm <= worst + 1e-12);
            o = next;
        }
    }

    #[test]
    fn textbook_conditioning() {
        let g = JointGaussian {
            mean: DVector::zeros(2),
            cov: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
            forget: 0.0,
            lambda: 1e-6,
        };
        // One "observation" dimension split as x = o (scalar), no action, y = o'.
        let lg = gda_condition(&g, 1, 0).unwrap();
        assert_eq!(lg.f[(0, 0)], 0.5);
        assert_eq!(lg.offset[0], 0.0);
        assert_eq!(lg.residual[(0, 0)], 0.75);
    }

    #[test]
    fn independent_blocks_give_constant_model() {
        let mut cov = DMatrix::identity(5, 5);
        cov[(0, 1)] = 0.3;
        cov[(1, 0)] = 0.3;
        let g = JointGaussian {
            mean: DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]),
            cov,
            forget: 0.0,
            lambda: 1e-6,
        };
        let lg = gda_condition(&g, 2, 1).unwrap();
        assert_eq!(lg.f.amax(), 0.0);
        assert_eq!(lg.offset.as_slice(), &[4.0, 5.0]);
    }

    #[test]
    fn conditioning_matches_normal_equations() {
        let mut rng = RngStream::new(8, 0);
        for _ in 0..10 {
            let (n, m) = (3, 2);
            let dim = 2 * n + m;
            let l = DMatrix::from_fn(dim, dim, |_, _| rng.normal());
            let cov = &l * l.transpose() + DMatrix::identity(dim, dim) * 0.1;
            let mean = DVector::from_fn(dim, |_, _| rng.normal());
            let g = JointGaussian {
                mean: mean.clone(),
                cov: cov.clone(),
                forget: 0.0,
                lambda: 1e-6,
            };
            let lg = gda_condition(&g, n, m).unwrap();
            // Normal equations Sxx F' = Sxy solved by LU.
            let nx = n + m;
            let sxx = cov.view((0, 0), (nx, nx)).into_owned();
            let sxy = cov.view((0, nx), (nx, n)).into_owned();
            let f = sxx.lu().solve(&sxy).unwrap().transpose();
            assert!((&lg.f - &f).amax() <= 1e-10);
            let offset = mean.rows(nx, n) - &f * mean.rows(0, nx);
            assert!((&lg.offset - offset).amax() <= 1e-10);
        }
    }

    #[test]
    fn singular_block_is_ridged() {
        let mut cov = DMatrix::zeros(3, 3);
        cov[(2, 2)] = 1.0;
        let g = JointGaussian {
            mean: DVector::zeros(3),
            cov,
            forget: 0.0,
            lambda: 1e-6,
        };
        assert!(gda_condition(&g, 1, 1).is_ok());
    }

    #[test]
    fn prior_recovers_linear_source() {
        let sys = linear_plant(0.0);
        let cfg = BaselineConfig {
            prior_samples: 10_000,
            ..BaselineConfig::default()
        };
        let g = gda_prior(&sys, 0, &[0.2, -0.4], &cfg, &mut RngStream::new(0, 0)).unwrap();
        assert!(g.cov.clone().cholesky().is_some());
        let lg = gda_condition(&g, 2, 1).unwrap();
        assert!(spectral_rel_err(&lg.f, &stacked(&sys)) <= 0.05);
    }

    #[test]
    fn prior_of_constant_source_has_ridge_output_block() {
        let sys = LinearDynamics {
            a: DMatrix::zeros(2, 2),
            b: DMatrix::zeros(2, 1),
            c: DVector::from_vec(vec![1.0, 2.0]),
        };
        let cfg = BaselineConfig::default();
        let g = gda_prior(&sys, 0, &[0.0, 0.0], &cfg, &mut RngStream::new(0, 0)).unwrap();
        let block = g.cov.view((3, 3), (2, 2)).into_owned();
        assert!((block - DMatrix::identity(2, 2) * cfg.lambda).amax() <= 1e-15);
    }

    #[test]
    fn update_extremes() {
        let g = JointGaussian {
            mean: DVector::from_vec(vec![1.0, 2.0]),
            cov: DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 3.0]),
            forget: 0.0,
            lambda: 0.0,
        };
        assert_eq!(gda_update(&g, &[5.0, 5.0]), g);
        let full = JointGaussian {
            forget: 1.0,
            lambda: 1e-6,
            ..g
        };
        let u = gda_update(&full, &[5.0, 5.0]);
        assert_eq!(u.mean.as_slice(), &[5.0, 5.0]);
        assert_eq!(u.cov, DMatrix::identity(2, 2) * 1e-6);
    }

    #[test]
    fn updates_track_shifted_target() {
        let source = linear_plant(0.0);
        let target = linear_plant(0.15);
        let cfg = BaselineConfig::default();
        let mut rng = RngStream::new(1, 0);
        let mut g = gda_prior(&source, 0, &[0.0, 0.0], &cfg, &mut rng).unwrap();
        for _ in 0..10_000 {
            let o = [rng.normal(), rng.normal()];
            let a = [rng.uniform(-1.0, 1.0)];
            let next = target.next(0, &o, &a);
            let z: Vec<f64> = o.iter().chain(&a).chain(&next).copied().collect();
            g = gda_update(&g, &z);
        }
        let lg = gda_condition(&g, 2, 1).unwrap();
        let truth = stacked(&target);
        let rel = (&lg.f - &truth).norm() / truth.norm();
        assert!(rel <= 0.1, "relative error {rel}");
    }

    #[test]
    fn policies_run_on_bouncer() {
        let p = EnvParams::bouncer();
        let expert = ExpertConfig::default();
        let cfg = BaselineConfig::default();
        let short = EnvParams {
            episode_len: 20,
            ..p.clone()
        };
        let mut oec = OecPolicy::new(&p, &expert, &cfg);
        let mut gda = GdaPolicy::new(&p, &expert, &cfg, RngStream::new(0, 5));
        for policy in [&mut oec as &mut dyn Policy, &mut gda] {
            let t = crate::envs::rollout(&short, policy, &mut RngStream::new(0, 0)).unwrap();
            assert_eq!(t.len(), 20);
            assert!(t.actions.iter().all(|a| a.is_in_range()));
        }
    }
}
